//! Limiting moments from ordered-tree homomorphism densities, moments of a
//! computed density, and the Hankel positivity test.
//!
//! Even moments of the symmetrized law are sums over ordered trees:
//! `m_{2k} = sum_{T in T_k} t(T, W)`; odd moments vanish.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::limitlaw::{SpectralDensity, StepGraphon};

/// Largest edge count for which trees are enumerated (`C_12 = 208012`).
pub const MAX_TREE_EDGES: usize = 12;

/// Default cap on the number of block labelings in [`hom_density`].
pub const DEFAULT_LABELING_BUDGET: u64 = 50_000_000;

/// Rooted ordered tree with vertices labeled in depth-first order; vertex 0
/// is the root and `parent[v] < v` for every other vertex.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct OrderedTree {
    parent: Vec<Option<usize>>,
}

impl OrderedTree {
    /// Tree from a Dyck word (`true` = step down to a new child).
    pub fn from_dyck(word: &[bool]) -> Result<Self> {
        let mut parent = vec![None];
        let mut stack = vec![0usize];
        for &down in word {
            if down {
                let v = parent.len();
                parent.push(Some(*stack.last().expect("stack holds the root")));
                stack.push(v);
            } else {
                if stack.len() == 1 {
                    return Err(Error::InvalidArgument("unbalanced Dyck word".into()));
                }
                stack.pop();
            }
        }
        if stack.len() != 1 {
            return Err(Error::InvalidArgument("unbalanced Dyck word".into()));
        }
        Ok(Self { parent })
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parent
    }

    pub fn vertices(&self) -> usize {
        self.parent.len()
    }

    /// `(parent, child)` pairs.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.parent
            .iter()
            .enumerate()
            .filter_map(|(v, p)| p.map(|p| (p, v)))
            .collect()
    }
}

/// All ordered trees with `m` edges, one per Dyck word of length `2m`.
pub fn enumerate_ordered_trees(m: usize) -> Result<Vec<OrderedTree>> {
    if m > MAX_TREE_EDGES {
        return Err(Error::ResourceLimit(format!(
            "ordered trees with {m} edges exceed the enumeration limit of {MAX_TREE_EDGES}"
        )));
    }
    let mut out = Vec::new();
    let mut word = Vec::with_capacity(2 * m);
    dyck_words(m, 0, 0, &mut word, &mut out);
    Ok(out)
}

fn dyck_words(
    m: usize,
    opened: usize,
    closed: usize,
    word: &mut Vec<bool>,
    out: &mut Vec<OrderedTree>,
) {
    if closed == m {
        out.push(OrderedTree::from_dyck(word).expect("generated words are balanced"));
        return;
    }
    if opened < m {
        word.push(true);
        dyck_words(m, opened + 1, closed, word, out);
        word.pop();
    }
    if closed < opened {
        word.push(false);
        dyck_words(m, opened, closed + 1, word, out);
        word.pop();
    }
}

/// `t(F, W)` for a graph given by its edge list on `vertices` vertices,
/// summed exactly over all block labelings.
pub fn hom_density_edges(
    vertices: usize,
    edges: &[(usize, usize)],
    graphon: &StepGraphon,
    budget: u64,
) -> Result<f64> {
    let b = graphon.blocks();
    let labelings = (b as u64)
        .checked_pow(vertices as u32)
        .filter(|&c| c <= budget);
    if labelings.is_none() {
        return Err(Error::ResourceLimit(format!(
            "{b}^{vertices} block labelings exceed the budget of {budget}"
        )));
    }
    if edges.iter().any(|&(u, v)| u >= vertices || v >= vertices) {
        return Err(Error::InvalidArgument("edge endpoint out of range".into()));
    }
    let widths = graphon.widths();
    let values = graphon.values();
    let mut label = vec![0usize; vertices];
    let mut total = 0.0;
    loop {
        let mut term: f64 = label.iter().map(|&l| widths[l]).product();
        for &(u, v) in edges {
            if term == 0.0 {
                break;
            }
            term *= values[(label[u], label[v])];
        }
        total += term;

        // odometer increment
        let mut pos = 0;
        loop {
            if pos == vertices {
                return Ok(total);
            }
            label[pos] += 1;
            if label[pos] < b {
                break;
            }
            label[pos] = 0;
            pos += 1;
        }
    }
}

/// Homomorphism density of an ordered tree into a step graphon.
pub fn hom_density(tree: &OrderedTree, graphon: &StepGraphon) -> Result<f64> {
    hom_density_edges(
        tree.vertices(),
        &tree.edges(),
        graphon,
        DEFAULT_LABELING_BUDGET,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    TreeSum,
    Quadrature,
}

/// Moments `m_0, ..., m_{2M}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentSequence {
    pub values: Vec<f64>,
    pub provenance: Provenance,
}

impl MomentSequence {
    pub fn order(&self, k: usize) -> Option<f64> {
        self.values.get(k).copied()
    }

    pub fn highest_order(&self) -> usize {
        self.values.len() - 1
    }
}

/// Tree-sum moments up to order `2 * max_edges`.
pub fn tree_moments(graphon: &StepGraphon, max_edges: usize) -> Result<MomentSequence> {
    let mut values = vec![0.0; 2 * max_edges + 1];
    values[0] = 1.0;
    for m in 1..=max_edges {
        let mut sum = 0.0;
        for tree in enumerate_ordered_trees(m)? {
            sum += hom_density(&tree, graphon)?;
        }
        values[2 * m] = sum;
    }
    Ok(MomentSequence {
        values,
        provenance: Provenance::TreeSum,
    })
}

/// Trapezoidal moments `int x^k rho(x) dx` of the symmetrized density, for
/// `k = 0, ..., 2 * max_edges`. Folded densities are mirrored first.
pub fn quadrature_moments(density: &SpectralDensity, max_edges: usize) -> Result<MomentSequence> {
    let sym = density.unfold()?;
    let (x, rho) = (&sym.grid, &sym.density);
    let values = (0..=2 * max_edges)
        .map(|k| {
            (1..x.len())
                .map(|i| {
                    let f0 = x[i - 1].powi(k as i32) * rho[i - 1];
                    let f1 = x[i].powi(k as i32) * rho[i];
                    0.5 * (f0 + f1) * (x[i] - x[i - 1])
                })
                .sum()
        })
        .collect();
    Ok(MomentSequence {
        values,
        provenance: Provenance::Quadrature,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HankelReport {
    pub order: usize,
    pub min_eigenvalue: f64,
    pub psd: bool,
}

/// Tolerance on the smallest Hankel eigenvalue.
pub const HANKEL_TOL: f64 = 1e-9;

/// Positive semi-definiteness of `(m_{i+j})_{i,j=0..k}`.
pub fn hankel_psd(moments: &MomentSequence, k: usize) -> Result<HankelReport> {
    if 2 * k > moments.highest_order() {
        return Err(Error::InvalidArgument(format!(
            "order {k} needs moments up to {} but only {} are available",
            2 * k,
            moments.highest_order()
        )));
    }
    let h = DMatrix::from_fn(k + 1, k + 1, |i, j| moments.values[i + j]);
    let min_eigenvalue = h.symmetric_eigenvalues().min();
    Ok(HankelReport {
        order: k,
        min_eigenvalue,
        psd: min_eigenvalue >= -HANKEL_TOL,
    })
}

/// Catalan number `C_m`.
pub fn catalan(m: usize) -> u64 {
    let mut c: u64 = 1;
    for i in 0..m as u64 {
        c = c * 2 * (2 * i + 1) / (i + 2);
    }
    c
}
