//! Matrices built from edge counts: the frequency matrix, its row sums,
//! the empirical transition matrix, the equilibrium expectation, the
//! centered and rescaled variants, and Hermitian dilations.

use std::collections::BTreeMap;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{BlockModel, ClusterLayout};
use crate::sampler::SamplePath;

/// Sparse directed-edge traversal counts `N[i][j]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeCounts {
    n: usize,
    entries: BTreeMap<(usize, usize), u64>,
    total: u64,
}

impl EdgeCounts {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            entries: BTreeMap::new(),
            total: 0,
        }
    }

    /// Builds counts from `(from, to, count)` triplets.
    pub fn from_triplets(
        n: usize,
        triplets: impl IntoIterator<Item = (usize, usize, u64)>,
    ) -> Result<Self> {
        let mut counts = Self::new(n);
        for (i, j, c) in triplets {
            if i >= n || j >= n {
                return Err(Error::InvalidArgument(format!(
                    "edge ({}, {}) outside 1..{n}",
                    i + 1,
                    j + 1
                )));
            }
            counts.add(i, j, c);
        }
        Ok(counts)
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, count: u64) {
        debug_assert!(i < self.n && j < self.n);
        if count == 0 {
            return;
        }
        *self.entries.entry((i, j)).or_insert(0) += count;
        self.total += count;
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn get(&self, i: usize, j: usize) -> u64 {
        self.entries.get(&(i, j)).copied().unwrap_or(0)
    }

    /// Nonzero entries in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, u64)> + '_ {
        self.entries.iter().map(|(&(i, j), &c)| (i, j, c))
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for (i, j, c) in self.iter() {
            m[(i, j)] = c as f64;
        }
        m
    }
}

/// Traversal counts of a materialized path.
pub fn frequency_matrix(path: &SamplePath) -> EdgeCounts {
    let mut counts = EdgeCounts::new(path.n);
    for w in path.states.windows(2) {
        counts.add(w[0], w[1], 1);
    }
    counts
}

/// Diagonal of `D`: the number of departures from each state.
pub fn row_sums(counts: &EdgeCounts) -> Vec<u64> {
    let mut rows = vec![0u64; counts.n()];
    for (i, _, c) in counts.iter() {
        rows[i] += c;
    }
    rows
}

/// Row-stochastic sparse matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n: usize,
    entries: BTreeMap<(usize, usize), f64>,
}

impl SparseMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries.get(&(i, j)).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.entries.iter().map(|(&(i, j), &v)| (i, j, v))
    }

    pub fn row_totals(&self) -> Vec<f64> {
        let mut rows = vec![0.0; self.n];
        for (i, _, v) in self.iter() {
            rows[i] += v;
        }
        rows
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for (i, j, v) in self.iter() {
            m[(i, j)] = v;
        }
        m
    }
}

/// Empirical transition matrix `P = D^{-1} N`. Fails with
/// [`Error::ZeroRow`] at the first state that was never departed from.
pub fn transition_matrix(counts: &EdgeCounts) -> Result<SparseMatrix> {
    let rows = row_sums(counts);
    if let Some(i) = rows.iter().position(|&r| r == 0) {
        return Err(Error::ZeroRow(i));
    }
    let entries = counts
        .iter()
        .map(|(i, j, c)| ((i, j), c as f64 / rows[i] as f64))
        .collect();
    Ok(SparseMatrix {
        n: counts.n(),
        entries,
    })
}

/// Matrix constant on each `cluster(k1) x cluster(k2)` block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockConstantMatrix {
    layout: ClusterLayout,
    values: DMatrix<f64>,
}

impl BlockConstantMatrix {
    pub fn new(layout: ClusterLayout, values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() != layout.k() || values.ncols() != layout.k() {
            return Err(Error::InvalidArgument(format!(
                "block values are {}x{} but layout has {} clusters",
                values.nrows(),
                values.ncols(),
                layout.k()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("block values must be finite".into()));
        }
        Ok(Self { layout, values })
    }

    pub fn layout(&self) -> &ClusterLayout {
        &self.layout
    }

    /// The `K x K` core.
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(self.layout.cluster_of(i), self.layout.cluster_of(j))]
    }

    /// Sum over all `n^2` entries.
    pub fn total(&self) -> f64 {
        let sizes = self.layout.sizes();
        let mut sum = 0.0;
        for k1 in 0..sizes.len() {
            for k2 in 0..sizes.len() {
                sum += self.values[(k1, k2)] * (sizes[k1] * sizes[k2]) as f64;
            }
        }
        sum
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.layout.n();
        DMatrix::from_fn(n, n, |i, j| self.get(i, j))
    }
}

/// `E[N]` for an equilibrium-start path of `ell` transitions:
/// `ell pi(k1) p[k1][k2] / (#cluster(k1) #cluster(k2))` on each block.
pub fn expected_frequency(
    model: &BlockModel,
    layout: &ClusterLayout,
    ell: usize,
) -> Result<BlockConstantMatrix> {
    let k = model.k();
    if layout.k() != k {
        return Err(Error::InvalidArgument(
            "model and layout disagree on K".into(),
        ));
    }
    let sizes = layout.sizes();
    let values = DMatrix::from_fn(k, k, |k1, k2| {
        ell as f64 * model.pi()[k1] * model.p_entry(k1, k2) / (sizes[k1] * sizes[k2]) as f64
    });
    BlockConstantMatrix::new(layout.clone(), values)
}

/// Dense `N - E[N]`.
pub fn centered(counts: &EdgeCounts, expected: &BlockConstantMatrix) -> Result<DMatrix<f64>> {
    let n = counts.n();
    if expected.layout().n() != n {
        return Err(Error::InvalidArgument(format!(
            "counts have n = {n} but expectation has n = {}",
            expected.layout().n()
        )));
    }
    let mut m = expected.to_dense();
    m.neg_mut();
    for (i, j, c) in counts.iter() {
        m[(i, j)] += c as f64;
    }
    Ok(m)
}

/// `diag((ell + 1) Pi)^{-1} M`, with `Pi` the equilibrium over states.
pub fn q_transform(
    m: &DMatrix<f64>,
    model: &BlockModel,
    layout: &ClusterLayout,
    ell: usize,
) -> Result<DMatrix<f64>> {
    if m.nrows() != layout.n() {
        return Err(Error::InvalidArgument(format!(
            "matrix has {} rows but layout has n = {}",
            m.nrows(),
            layout.n()
        )));
    }
    let pi_x = model.equilibrium_over_states(layout);
    let mut q = m.clone();
    for (i, mut row) in q.row_iter_mut().enumerate() {
        row /= (ell as f64 + 1.0) * pi_x[i];
    }
    Ok(q)
}

/// Real symmetric dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseSymmetric(DMatrix<f64>);

impl DenseSymmetric {
    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        let ev = self.0.symmetric_eigenvalues();
        if ev.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalFailure(
                "symmetric eigensolver produced non-finite values".into(),
            ));
        }
        let mut v: Vec<f64> = ev.iter().copied().collect();
        v.sort_by(f64::total_cmp);
        Ok(v)
    }
}

/// `[[0, M], [M^T, 0]]`, whose eigenvalues are `+-` the singular values of `M`.
pub fn hermitian_dilation(m: &DMatrix<f64>) -> DenseSymmetric {
    let (r, c) = m.shape();
    let mut h = DMatrix::zeros(r + c, r + c);
    h.view_mut((0, r), (r, c)).copy_from(m);
    h.view_mut((r, 0), (c, r)).copy_from(&m.transpose());
    DenseSymmetric(h)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::sampler::{stream_edge_counts, InitialDistribution};

    fn path(states: &[usize], n: usize) -> SamplePath {
        SamplePath {
            states: states.to_vec(),
            n,
            seed: 0,
        }
    }

    #[test]
    fn frequency_of_short_path() {
        let c = frequency_matrix(&path(&[0, 1, 0, 1], 2));
        assert_eq!(
            (c.get(0, 1), c.get(1, 0), c.get(0, 0), c.total()),
            (2, 1, 0, 3)
        );
        let c = frequency_matrix(&path(&[0, 0, 0], 1));
        assert_eq!(c.get(0, 0), 2);
    }

    #[test]
    fn row_sums_examples() {
        let c = frequency_matrix(&path(&[0, 1, 0, 1], 3));
        assert_eq!(row_sums(&c), vec![2, 1, 0]);
        assert_eq!(row_sums(&c).iter().sum::<u64>(), c.total());
    }

    #[test]
    fn transition_of_short_path() {
        let c = frequency_matrix(&path(&[0, 1, 0, 1], 2));
        let p = transition_matrix(&c).unwrap();
        assert_eq!(
            p.to_dense(),
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])
        );
        let c = frequency_matrix(&path(&[0, 1, 0, 1], 3));
        assert!(matches!(transition_matrix(&c), Err(Error::ZeroRow(2))));
    }

    #[test]
    fn transition_rows_sum_to_one_on_simulation() {
        let m = BlockModel::figure_example(2.0).unwrap();
        let l = m.build_layout(300).unwrap();
        let c =
            stream_edge_counts(&m, &l, 2 * 300 * 300, InitialDistribution::Equilibrium, 1).unwrap();
        let p = transition_matrix(&c).unwrap();
        for r in p.row_totals() {
            assert!((r - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn expected_frequency_examples() {
        let m = BlockModel::figure_example(2.0).unwrap();
        let l = m.build_layout(1000).unwrap();
        let e = expected_frequency(&m, &l, 2_000_000).unwrap();
        let want = 2e6 * (27.0 / 46.0) * 0.1 / (500.0 * 400.0);
        assert!((e.values()[(0, 1)] - want).abs() < 1e-12);
        assert!((e.get(0, 500) - 0.58696).abs() < 1e-5);
        assert_eq!(e.values()[(0, 2)], 0.0);
        assert!((e.total() - 2e6).abs() < 1e-8);

        let one = BlockModel::single_cluster(1.0).unwrap();
        let l = one.build_layout(10).unwrap();
        let e = expected_frequency(&one, &l, 300).unwrap();
        assert!(e.to_dense().iter().all(|&v| (v - 3.0).abs() < 1e-15));
    }

    #[test]
    fn centered_examples() {
        let l = ClusterLayout::from_sizes(vec![1, 2]).unwrap();
        let c = EdgeCounts::from_triplets(3, [(0, 1, 2), (2, 0, 1), (1, 1, 5)]).unwrap();
        let zero = BlockConstantMatrix::new(l.clone(), DMatrix::zeros(2, 2)).unwrap();
        assert_eq!(centered(&c, &zero).unwrap(), c.to_dense());

        let blocks = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let e = BlockConstantMatrix::new(l.clone(), blocks).unwrap();
        let mut synthetic = EdgeCounts::new(3);
        for i in 0..3 {
            for j in 0..3 {
                synthetic.add(i, j, e.get(i, j) as u64);
            }
        }
        assert!(centered(&synthetic, &e).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn centered_block_means_vanish() {
        let m = BlockModel::figure_example(2.0).unwrap();
        let n = 400;
        let l = m.build_layout(n).unwrap();
        let ell = 2 * n * n;
        let c = stream_edge_counts(&m, &l, ell, InitialDistribution::Equilibrium, 3).unwrap();
        let e = expected_frequency(&m, &l, ell).unwrap();
        let mc = centered(&c, &e).unwrap();
        for k1 in 0..3 {
            for k2 in 0..3 {
                if m.p_entry(k1, k2) == 0.0 {
                    continue;
                }
                let vals: Vec<f64> = l
                    .states(k1)
                    .flat_map(|i| l.states(k2).map(move |j| (i, j)))
                    .map(|(i, j)| mc[(i, j)])
                    .collect();
                let cnt = vals.len() as f64;
                let mean = vals.iter().sum::<f64>() / cnt;
                let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (cnt - 1.0);
                // entries are nearly independent Poisson counts, so the iid standard error applies
                let se = (var / cnt).sqrt();
                assert!(
                    mean.abs() < 5.0 * se,
                    "block ({k1},{k2}) mean {mean} se {se}"
                );
            }
        }
    }

    #[test]
    fn q_transform_examples() {
        let m = BlockModel::single_cluster(1.0).unwrap();
        let l = m.build_layout(2).unwrap();
        let id = DMatrix::<f64>::identity(2, 2);
        // (ell + 1) Pi = 4 * 1/2 = 2
        let q = q_transform(&id, &m, &l, 3).unwrap();
        assert_eq!(q, DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.5]));
        assert!(q_transform(&DMatrix::zeros(2, 2), &m, &l, 3)
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));

        let fig = BlockModel::figure_example(1.0).unwrap();
        let l = ClusterLayout::from_sizes(vec![2, 1, 1]).unwrap();
        let a = DMatrix::from_fn(4, 4, |i, j| (i * 4 + j) as f64 - 5.0);
        let perm = [2, 0, 3, 1];
        let permuted = DMatrix::from_fn(4, 4, |i, j| a[(i, perm[j])]);
        let qa = q_transform(&a, &fig, &l, 9).unwrap();
        let qp = q_transform(&permuted, &fig, &l, 9).unwrap();
        assert_eq!(qp, DMatrix::from_fn(4, 4, |i, j| qa[(i, perm[j])]));
    }

    #[test]
    fn dilation_examples() {
        let h = hermitian_dilation(&DMatrix::from_element(1, 1, 3.0));
        assert_eq!(h.eigenvalues().unwrap(), vec![-3.0, 3.0]);
        let z = hermitian_dilation(&DMatrix::zeros(3, 3));
        assert!(z.eigenvalues().unwrap().iter().all(|&v| v == 0.0));
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let h = hermitian_dilation(&m);
        assert_eq!(h.matrix()[(0, 3)], 2.0);
        assert_eq!(h.matrix()[(3, 0)], 2.0);
        assert_eq!(h.matrix(), &h.matrix().transpose());
    }

    proptest! {
        #[test]
        fn dilation_spectrum_is_symmetric(raw in prop::collection::vec(-5.0f64..5.0, 25)) {
            let m = DMatrix::from_row_slice(5, 5, &raw);
            let ev = hermitian_dilation(&m).eigenvalues().unwrap();
            for i in 0..ev.len() {
                prop_assert!((ev[i] + ev[ev.len() - 1 - i]).abs() < 1e-10);
            }
            let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
            sv.sort_by(|a, b| b.total_cmp(a));
            for (i, s) in sv.iter().enumerate() {
                prop_assert!((ev[ev.len() - 1 - i] - s).abs() < 1e-10);
            }
        }

        #[test]
        fn stream_total_is_ell(seed in 0u64..1000, ell in 1usize..3000) {
            let m = BlockModel::figure_example(1.0).unwrap();
            let l = m.build_layout(12).unwrap();
            let c = stream_edge_counts(&m, &l, ell, InitialDistribution::UniformState, seed).unwrap();
            prop_assert_eq!(c.total(), ell as u64);
            prop_assert_eq!(row_sums(&c).iter().sum::<u64>(), ell as u64);
        }
    }
}
