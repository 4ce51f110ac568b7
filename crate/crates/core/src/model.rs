//! Block Markov chain parameters and the quantities derived from them.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const STOCHASTIC_TOL: f64 = 1e-12;

/// Cluster-level description of a block Markov chain.
///
/// Holds the cluster transition matrix `p`, the asymptotic cluster
/// fractions `alpha`, the path-length coefficient `lambda` (so that a path
/// has `ell = lambda * n^2` steps) and the equilibrium distribution `pi` of
/// `p`, which is computed on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockModel {
    p: DMatrix<f64>,
    alpha: Vec<f64>,
    lambda: f64,
    pi: Vec<f64>,
}

impl BlockModel {
    /// Validates the parameters and computes the equilibrium distribution.
    pub fn new(p: DMatrix<f64>, alpha: Vec<f64>, lambda: f64) -> Result<Self> {
        let k = p.nrows();
        if k == 0 {
            return Err(Error::RejectedModel("K must be positive".into()));
        }
        if alpha.len() != k {
            return Err(Error::RejectedModel(format!(
                "alpha has {} entries but K = {k}",
                alpha.len()
            )));
        }
        if alpha.iter().any(|a| !a.is_finite() || *a <= 0.0) {
            return Err(Error::RejectedModel(
                "alpha entries must be strictly positive".into(),
            ));
        }
        let total: f64 = alpha.iter().sum();
        if (total - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::RejectedModel(format!(
                "alpha sums to {total}, not 1"
            )));
        }
        if !lambda.is_finite() || lambda <= 0.0 {
            return Err(Error::RejectedModel(format!(
                "lambda must be positive, got {lambda}"
            )));
        }
        let pi = stationary_distribution(&p)?;
        Ok(Self {
            p,
            alpha,
            lambda,
            pi,
        })
    }

    /// Builds a model from nested rows of `p`.
    pub fn from_rows(rows: &[Vec<f64>], alpha: Vec<f64>, lambda: f64) -> Result<Self> {
        Self::new(matrix_from_rows(rows)?, alpha, lambda)
    }

    /// Three-cluster reference example:
    /// `p = [[0.9,0.1,0],[0,0.1,0.9],[0.3,0.7,0]]`, `alpha = (0.5,0.4,0.1)`.
    pub fn figure_example(lambda: f64) -> Result<Self> {
        Self::from_rows(
            &[
                vec![0.9, 0.1, 0.0],
                vec![0.0, 0.1, 0.9],
                vec![0.3, 0.7, 0.0],
            ],
            vec![0.5, 0.4, 0.1],
            lambda,
        )
    }

    /// Single-cluster model, whose singular value law is the quarter circle.
    pub fn single_cluster(lambda: f64) -> Result<Self> {
        Self::new(DMatrix::from_element(1, 1, 1.0), vec![1.0], lambda)
    }

    pub fn k(&self) -> usize {
        self.alpha.len()
    }

    pub fn p(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn p_entry(&self, k1: usize, k2: usize) -> f64 {
        self.p[(k1, k2)]
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    /// Same chain with a different path-length coefficient.
    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        if !lambda.is_finite() || lambda <= 0.0 {
            return Err(Error::RejectedModel(format!(
                "lambda must be positive, got {lambda}"
            )));
        }
        Ok(Self {
            lambda,
            ..self.clone()
        })
    }

    /// Limiting Poisson rate `lambda pi(k1) p[k1][k2] / (alpha[k1] alpha[k2])`
    /// of the traversal count of a single edge from cluster `k1` to `k2`.
    pub fn edge_rate(&self, k1: usize, k2: usize) -> f64 {
        self.lambda * self.pi[k1] * self.p[(k1, k2)] / (self.alpha[k1] * self.alpha[k2])
    }

    /// Equilibrium distribution over the `n` states of `layout`:
    /// `pi(sigma(v)) / #cluster(sigma(v))`.
    pub fn equilibrium_over_states(&self, layout: &ClusterLayout) -> Vec<f64> {
        layout
            .sigma()
            .iter()
            .map(|&k| self.pi[k] / layout.sizes()[k] as f64)
            .collect()
    }

    /// Largest-remainder cluster sizes for `n` states with every cluster
    /// forced nonempty; states are assigned to clusters in contiguous blocks.
    pub fn build_layout(&self, n: usize) -> Result<ClusterLayout> {
        ClusterLayout::from_fractions(&self.alpha, n)
    }

    pub fn to_spec(&self) -> ModelSpec {
        ModelSpec {
            k: self.k(),
            p: PMatrix::Rows(
                (0..self.k())
                    .map(|i| self.p.row(i).iter().copied().collect())
                    .collect(),
            ),
            alpha: self.alpha.clone(),
            lambda: self.lambda,
        }
    }
}

/// On-disk model description: `{"K": .., "p": .., "alpha": .., "lambda": ..}`.
///
/// `p` may be given as nested rows or as a flat row-major list of `K^2`
/// numbers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSpec {
    #[serde(rename = "K")]
    pub k: usize,
    pub p: PMatrix,
    pub alpha: Vec<f64>,
    pub lambda: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PMatrix {
    Rows(Vec<Vec<f64>>),
    Flat(Vec<f64>),
}

impl ModelSpec {
    pub fn into_model(self) -> Result<BlockModel> {
        let p = match self.p {
            PMatrix::Rows(rows) => {
                if rows.len() != self.k {
                    return Err(Error::RejectedModel(format!(
                        "p has {} rows but K = {}",
                        rows.len(),
                        self.k
                    )));
                }
                matrix_from_rows(&rows)?
            }
            PMatrix::Flat(values) => {
                if values.len() != self.k * self.k {
                    return Err(Error::RejectedModel(format!(
                        "p has {} entries but K^2 = {}",
                        values.len(),
                        self.k * self.k
                    )));
                }
                DMatrix::from_row_slice(self.k, self.k, &values)
            }
        };
        BlockModel::new(p, self.alpha, self.lambda)
    }
}

fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let k = rows.len();
    if let Some(bad) = rows.iter().position(|r| r.len() != k) {
        return Err(Error::RejectedModel(format!(
            "p must be square: row {} has {} entries, expected {k}",
            bad + 1,
            rows[bad].len()
        )));
    }
    Ok(DMatrix::from_fn(k, k, |i, j| rows[i][j]))
}

/// Equilibrium distribution of an irreducible aperiodic stochastic matrix.
///
/// Irreducibility is checked as strong connectivity of the positive-entry
/// digraph and aperiodicity as the gcd of its cycle lengths being 1. The
/// distribution is then obtained from a direct solve of `pi (p - I) = 0`
/// with one equation replaced by `sum(pi) = 1`.
pub fn stationary_distribution(p: &DMatrix<f64>) -> Result<Vec<f64>> {
    let k = p.nrows();
    if k == 0 || p.ncols() != k {
        return Err(Error::RejectedModel(
            "p must be a nonempty square matrix".into(),
        ));
    }
    for i in 0..k {
        let mut sum = 0.0;
        for j in 0..k {
            let v = p[(i, j)];
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::RejectedModel(format!(
                    "p[{}][{}] = {v} is not a probability",
                    i + 1,
                    j + 1
                )));
            }
            sum += v;
        }
        if (sum - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::RejectedModel(format!(
                "row {} of p sums to {sum}",
                i + 1
            )));
        }
    }

    let adj: Vec<Vec<usize>> = (0..k)
        .map(|i| (0..k).filter(|&j| p[(i, j)] > 0.0).collect())
        .collect();
    if !strongly_connected(&adj) {
        return Err(Error::RejectedModel("p is reducible".into()));
    }
    let period = period(&adj);
    if period != 1 {
        return Err(Error::RejectedModel(format!(
            "p is periodic with period {period}"
        )));
    }

    let mut a = (p - DMatrix::identity(k, k)).transpose();
    a.row_mut(k - 1).fill(1.0);
    let mut rhs = DVector::zeros(k);
    rhs[k - 1] = 1.0;
    let pi = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::NumericalFailure("singular equilibrium system".into()))?;
    if pi.iter().any(|v| !v.is_finite() || *v <= 0.0) {
        return Err(Error::NumericalFailure(format!(
            "equilibrium solve produced a nonpositive entry: {:?}",
            pi.as_slice()
        )));
    }
    let total: f64 = pi.iter().sum();
    Ok(pi.iter().map(|v| v / total).collect())
}

fn reachable(adj: &[Vec<usize>], start: usize) -> Vec<bool> {
    let mut seen = vec![false; adj.len()];
    let mut stack = vec![start];
    seen[start] = true;
    while let Some(u) = stack.pop() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                stack.push(v);
            }
        }
    }
    seen
}

fn strongly_connected(adj: &[Vec<usize>]) -> bool {
    let k = adj.len();
    let mut rev = vec![Vec::new(); k];
    for (u, out) in adj.iter().enumerate() {
        for &v in out {
            rev[v].push(u);
        }
    }
    reachable(adj, 0).into_iter().all(|b| b) && reachable(&rev, 0).into_iter().all(|b| b)
}

/// Period of a strongly connected digraph: gcd over edges `u -> v` of
/// `level(u) + 1 - level(v)` for BFS levels from vertex 0.
fn period(adj: &[Vec<usize>]) -> usize {
    let k = adj.len();
    let mut level = vec![usize::MAX; k];
    level[0] = 0;
    let mut queue = std::collections::VecDeque::from([0]);
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if level[v] == usize::MAX {
                level[v] = level[u] + 1;
                queue.push_back(v);
            }
        }
    }
    let mut g = 0usize;
    for (u, out) in adj.iter().enumerate() {
        for &v in out {
            let d = (level[u] as i64 + 1 - level[v] as i64).unsigned_abs() as usize;
            g = gcd(g, d);
        }
    }
    g
}

fn gcd(mut a: usize, mut b: usize) -> usize {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Assignment of `n` states to `K` clusters in contiguous blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterLayout {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
    sigma: Vec<usize>,
}

impl ClusterLayout {
    /// Contiguous layout with the given cluster sizes.
    pub fn from_sizes(sizes: Vec<usize>) -> Result<Self> {
        if sizes.is_empty() {
            return Err(Error::RejectedModel(
                "layout needs at least one cluster".into(),
            ));
        }
        if let Some(k) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::EmptyCluster(k + 1));
        }
        let mut offsets = Vec::with_capacity(sizes.len() + 1);
        let mut acc = 0;
        offsets.push(0);
        for &s in &sizes {
            acc += s;
            offsets.push(acc);
        }
        let sigma = sizes
            .iter()
            .enumerate()
            .flat_map(|(k, &s)| std::iter::repeat_n(k, s))
            .collect();
        Ok(Self {
            sizes,
            offsets,
            sigma,
        })
    }

    /// Largest-remainder rounding of `fractions[k] * n`, ties broken towards
    /// lower cluster index, followed by moving single states from the
    /// largest cluster into any empty one.
    pub fn from_fractions(fractions: &[f64], n: usize) -> Result<Self> {
        let k = fractions.len();
        if n < k {
            return Err(Error::RejectedModel(format!(
                "n = {n} is smaller than K = {k}"
            )));
        }
        let quotas: Vec<f64> = fractions.iter().map(|a| a * n as f64).collect();
        let mut sizes: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
        let assigned: usize = sizes.iter().sum();
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| {
            let ra = quotas[a] - quotas[a].floor();
            let rb = quotas[b] - quotas[b].floor();
            rb.total_cmp(&ra).then(a.cmp(&b))
        });
        for &c in order.iter().take(n.saturating_sub(assigned)) {
            sizes[c] += 1;
        }
        for c in 0..k {
            if sizes[c] == 0 {
                let donor = (0..k)
                    .max_by(|&a, &b| sizes[a].cmp(&sizes[b]).then(b.cmp(&a)))
                    .expect("k > 0");
                sizes[donor] -= 1;
                sizes[c] = 1;
            }
        }
        Self::from_sizes(sizes)
    }

    pub fn n(&self) -> usize {
        self.sigma.len()
    }

    pub fn k(&self) -> usize {
        self.sizes.len()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// Cluster of every state.
    pub fn sigma(&self) -> &[usize] {
        &self.sigma
    }

    pub fn cluster_of(&self, state: usize) -> usize {
        self.sigma[state]
    }

    /// States of cluster `k` as a half-open range.
    pub fn states(&self, k: usize) -> std::ops::Range<usize> {
        self.offsets[k]..self.offsets[k + 1]
    }
}
