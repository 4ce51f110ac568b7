//! Transition data ingestion, preprocessing and cluster-level parameter
//! estimation.
//!
//! Data is a bag of `(from, to)` transitions; nothing assumes they were
//! read off a single path. Every estimator depends on the frequency matrix
//! alone.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::matrices::EdgeCounts;
use crate::model::{stationary_distribution, BlockModel, ClusterLayout};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    /// `from,to` rows, with an optional `from,to` header.
    CsvPairs,
    /// One state per line; consecutive lines form transitions.
    StateSequence,
}

/// Transitions between states relabeled densely by first appearance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransitionDataset {
    /// Zero-based `(from, to)` pairs.
    pub transitions: Vec<(usize, usize)>,
    /// Original name of each state.
    pub labels: Vec<String>,
    pub provenance: String,
}

impl TransitionDataset {
    /// Dataset from labeled pairs; states are numbered in order of first
    /// appearance.
    pub fn from_labeled_pairs<S: AsRef<str>>(
        pairs: impl IntoIterator<Item = (S, S)>,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut labels = Vec::new();
        let mut id = |s: &str| -> usize {
            *index.entry(s.to_owned()).or_insert_with(|| {
                labels.push(s.to_owned());
                labels.len() - 1
            })
        };
        let transitions: Vec<(usize, usize)> = pairs
            .into_iter()
            .map(|(a, b)| (id(a.as_ref()), id(b.as_ref())))
            .collect();
        if transitions.is_empty() {
            return Err(Error::EmptyInput);
        }
        Ok(Self {
            transitions,
            labels,
            provenance: provenance.into(),
        })
    }

    pub fn n_states(&self) -> usize {
        self.labels.len()
    }

    pub fn ell(&self) -> usize {
        self.transitions.len()
    }

    pub fn counts(&self) -> EdgeCounts {
        let mut counts = EdgeCounts::new(self.n_states());
        for &(i, j) in &self.transitions {
            counts.add(i, j, 1);
        }
        counts
    }

    /// Position of each label in the dense numbering.
    pub fn label_index(&self) -> HashMap<&str, usize> {
        self.labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.as_str(), i))
            .collect()
    }
}

pub fn read_transitions(path: &Path, format: Format) -> Result<TransitionDataset> {
    let mut data = read_transitions_from(File::open(path)?, format)?;
    data.provenance = path.display().to_string();
    Ok(data)
}

pub fn read_transitions_from(reader: impl Read, format: Format) -> Result<TransitionDataset> {
    let lines = numbered_lines(reader)?;
    match format {
        Format::CsvPairs => {
            let mut pairs = Vec::new();
            for (k, (line_no, line)) in lines.iter().enumerate() {
                let (a, b) = two_fields(line, *line_no)?;
                if k == 0 && a.eq_ignore_ascii_case("from") && b.eq_ignore_ascii_case("to") {
                    continue;
                }
                pairs.push((a, b));
            }
            TransitionDataset::from_labeled_pairs(pairs, "csv-pairs")
        }
        Format::StateSequence => {
            let mut states = Vec::with_capacity(lines.len());
            for (line_no, line) in &lines {
                if line.contains(',') || line.split_whitespace().count() != 1 {
                    return Err(Error::ParseError {
                        line: *line_no,
                        message: format!("expected a single state, found {line:?}"),
                    });
                }
                states.push(line.as_str());
            }
            TransitionDataset::from_labeled_pairs(
                states.windows(2).map(|w| (w[0], w[1])),
                "state-sequence",
            )
        }
    }
}

/// Trimmed nonblank lines with one-based line numbers.
fn numbered_lines(reader: impl Read) -> Result<Vec<(usize, String)>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if !trimmed.is_empty() {
            out.push((i + 1, trimmed.to_owned()));
        }
    }
    Ok(out)
}

fn two_fields(line: &str, line_no: usize) -> Result<(&str, &str)> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    match fields.as_slice() {
        [a, b] if !a.is_empty() && !b.is_empty() => Ok((a, b)),
        _ => Err(Error::ParseError {
            line: line_no,
            message: format!("expected two fields, found {line:?}"),
        }),
    }
}

/// Number of transitions touching each state; a self-transition counts once.
fn visits(data: &TransitionDataset) -> Vec<usize> {
    let mut v = vec![0; data.n_states()];
    for &(i, j) in &data.transitions {
        v[i] += 1;
        if j != i {
            v[j] += 1;
        }
    }
    v
}

/// Drops self-transitions (optionally), then repeatedly removes states
/// touched by fewer than `min_visits` transitions until none remain, and
/// renumbers the survivors in their original order.
pub fn preprocess(
    data: &TransitionDataset,
    min_visits: usize,
    drop_self_loops: bool,
) -> Result<TransitionDataset> {
    let mut transitions = data.transitions.clone();
    if drop_self_loops {
        transitions.retain(|&(i, j)| i != j);
    }
    let mut current = TransitionDataset {
        transitions,
        ..data.clone()
    };
    loop {
        let v = visits(&current);
        let before = current.transitions.len();
        current
            .transitions
            .retain(|&(i, j)| v[i] >= min_visits && v[j] >= min_visits);
        if current.transitions.len() == before {
            break;
        }
    }
    if current.transitions.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut used = vec![false; current.n_states()];
    for &(i, j) in &current.transitions {
        used[i] = true;
        used[j] = true;
    }
    let mut new_id = vec![usize::MAX; used.len()];
    let mut labels = Vec::new();
    for (old, _) in used.iter().enumerate().filter(|(_, &u)| u) {
        new_id[old] = labels.len();
        labels.push(current.labels[old].clone());
    }
    Ok(TransitionDataset {
        transitions: current
            .transitions
            .iter()
            .map(|&(i, j)| (new_id[i], new_id[j]))
            .collect(),
        labels,
        provenance: current.provenance,
    })
}

/// `state,cluster` rows (optional header) mapping state labels to
/// one-based clusters.
pub fn read_clustering(path: &Path) -> Result<HashMap<String, usize>> {
    read_clustering_from(File::open(path)?)
}

pub fn read_clustering_from(reader: impl Read) -> Result<HashMap<String, usize>> {
    let mut out = HashMap::new();
    for (k, (line_no, line)) in numbered_lines(reader)?.iter().enumerate() {
        let (state, cluster) = two_fields(line, *line_no)?;
        if k == 0 && state.eq_ignore_ascii_case("state") && cluster.eq_ignore_ascii_case("cluster")
        {
            continue;
        }
        let c: usize =
            cluster
                .parse()
                .ok()
                .filter(|&c| c >= 1)
                .ok_or_else(|| Error::ParseError {
                    line: *line_no,
                    message: format!("cluster must be a positive integer, found {cluster:?}"),
                })?;
        if out.insert(state.to_owned(), c).is_some() {
            return Err(Error::ParseError {
                line: *line_no,
                message: format!("state {state:?} assigned twice"),
            });
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(out)
}

/// Cluster-level parameters estimated from transition counts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatedModel {
    pub lambda: f64,
    pub alpha: Vec<f64>,
    /// Destination-cluster mass of the counts.
    pub pi: Vec<f64>,
    pub p: Vec<Vec<f64>>,
    /// Zero-based cluster of each state.
    #[serde(skip)]
    pub clustering: Vec<usize>,
    pub n: usize,
    pub ell: u64,
}

impl EstimatedModel {
    pub fn k(&self) -> usize {
        self.alpha.len()
    }

    pub fn p_matrix(&self) -> DMatrix<f64> {
        let k = self.k();
        DMatrix::from_fn(k, k, |i, j| self.p[i][j])
    }

    /// The estimate as a block model. Fails when the estimated cluster
    /// chain is reducible or periodic.
    pub fn to_block_model(&self) -> Result<BlockModel> {
        BlockModel::new(self.p_matrix(), self.alpha.clone(), self.lambda)
    }

    /// Equilibrium of the estimated cluster chain, for comparison with the
    /// destination-mass estimate `pi`.
    pub fn chain_equilibrium(&self) -> Result<Vec<f64>> {
        stationary_distribution(&self.p_matrix())
    }
}

/// Estimates with the clustering given by state label.
pub fn estimate_parameters(
    data: &TransitionDataset,
    clustering: &HashMap<String, usize>,
) -> Result<EstimatedModel> {
    let mut sigma = Vec::with_capacity(data.n_states());
    for label in &data.labels {
        let c = clustering
            .get(label)
            .ok_or_else(|| Error::InvalidArgument(format!("state {label:?} has no cluster")))?;
        sigma.push(c - 1);
    }
    let k = sigma.iter().max().map_or(0, |m| m + 1);
    estimate_from_counts(&data.counts(), &sigma, k)
}

/// Estimates from a frequency matrix and zero-based cluster assignment
/// `sigma` with `k` clusters.
pub fn estimate_from_counts(
    counts: &EdgeCounts,
    sigma: &[usize],
    k: usize,
) -> Result<EstimatedModel> {
    let n = counts.n();
    if sigma.len() != n {
        return Err(Error::InvalidArgument(format!(
            "clustering covers {} of {n} states",
            sigma.len()
        )));
    }
    if k == 0 || sigma.iter().any(|&c| c >= k) {
        return Err(Error::InvalidArgument("cluster index out of range".into()));
    }
    let ell = counts.total();
    if ell == 0 {
        return Err(Error::EmptyInput);
    }
    let mut sizes = vec![0usize; k];
    for &c in sigma {
        sizes[c] += 1;
    }
    if let Some(c) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::EmptyCluster(c + 1));
    }
    let mut block = vec![vec![0u64; k]; k];
    for (i, j, v) in counts.iter() {
        block[sigma[i]][sigma[j]] += v;
    }
    let mut p = Vec::with_capacity(k);
    for (c, row) in block.iter().enumerate() {
        let out: u64 = row.iter().sum();
        if out == 0 {
            return Err(Error::ZeroClusterRow(c + 1));
        }
        p.push(row.iter().map(|&v| v as f64 / out as f64).collect());
    }
    let pi = (0..k)
        .map(|c| block.iter().map(|row| row[c]).sum::<u64>() as f64 / ell as f64)
        .collect();
    Ok(EstimatedModel {
        lambda: ell as f64 / (n as f64 * n as f64),
        alpha: sizes.iter().map(|&s| s as f64 / n as f64).collect(),
        pi,
        p,
        clustering: sigma.to_vec(),
        n,
        ell,
    })
}

/// Zero-based cluster assignment of a contiguous layout.
pub fn layout_clustering(layout: &ClusterLayout) -> Vec<usize> {
    layout.sigma().to_vec()
}
