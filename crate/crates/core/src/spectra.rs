//! Singular values, empirical distributions and distances between them.

use nalgebra::{DMatrix, SVD};

use crate::error::{Error, Result};
use crate::matrices::hermitian_dilation;

/// Roundoff allowance, relative to the spectral norm, below which negative
/// dilation eigenvalues are clamped to zero.
const CLAMP_TOL: f64 = 1e-10;

/// Singular values `s_1 >= ... >= s_n >= 0` of an `n x n` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SingularSpectrum {
    pub values: Vec<f64>,
    pub dim: usize,
}

impl SingularSpectrum {
    /// Empirical distribution of `s_i / scale`.
    pub fn esd(&self, scale: f64) -> Result<EmpiricalDistribution> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "scale must be positive, got {scale}"
            )));
        }
        EmpiricalDistribution::new(self.values.iter().map(|s| s / scale).collect())
    }
}

/// Singular values from the eigenvalues of the Hermitian dilation: the
/// upper half of its spectrum, sorted descending.
pub fn singular_values(m: &DMatrix<f64>) -> Result<SingularSpectrum> {
    if !m.is_square() {
        return Err(Error::InvalidArgument(
            "singular_values expects a square matrix".into(),
        ));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "matrix has non-finite entries".into(),
        ));
    }
    let n = m.nrows();
    let ev = hermitian_dilation(m).eigenvalues()?;
    let top = ev.last().copied().unwrap_or(0.0).abs().max(1.0);
    let mut values = Vec::with_capacity(n);
    for &v in ev.iter().rev().take(n) {
        if v < -CLAMP_TOL * top {
            return Err(Error::NumericalFailure(format!(
                "dilation eigenvalue {v} in the nonnegative half"
            )));
        }
        values.push(v.max(0.0));
    }
    Ok(SingularSpectrum { values, dim: n })
}

/// Singular values from a direct SVD (bidiagonalization route).
pub fn singular_values_svd(m: &DMatrix<f64>) -> Result<SingularSpectrum> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "matrix has non-finite entries".into(),
        ));
    }
    let svd = SVD::try_new(m.clone(), false, false, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::NumericalFailure("SVD did not converge".into()))?;
    let mut values: Vec<f64> = svd.singular_values.iter().copied().collect();
    values.sort_by(|a, b| b.total_cmp(a));
    Ok(SingularSpectrum {
        values,
        dim: m.nrows().min(m.ncols()),
    })
}

/// Distribution of `s_i(M) / scale`.
pub fn esd_scaled(m: &DMatrix<f64>, scale: f64) -> Result<EmpiricalDistribution> {
    singular_values(m)?.esd(scale)
}

/// Uniformly weighted point sample, stored sorted ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalDistribution {
    points: Vec<f64>,
}

impl EmpiricalDistribution {
    pub fn new(mut points: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyInput);
        }
        if points.iter().any(|v| v.is_nan()) {
            return Err(Error::InvalidArgument("sample contains NaN".into()));
        }
        points.sort_by(f64::total_cmp);
        Ok(Self { points })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn weight(&self) -> f64 {
        1.0 / self.points.len() as f64
    }

    /// `F(x) = #{points <= x} / len`.
    pub fn cdf(&self, x: f64) -> f64 {
        self.points.partition_point(|&p| p <= x) as f64 * self.weight()
    }

    pub fn shifted(&self, by: f64) -> Self {
        Self {
            points: self.points.iter().map(|p| p + by).collect(),
        }
    }
}

/// Drops the `k` largest points.
pub fn trim_top(dist: &EmpiricalDistribution, k: usize) -> Result<EmpiricalDistribution> {
    if k >= dist.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot trim {k} of {} points",
            dist.len()
        )));
    }
    Ok(EmpiricalDistribution {
        points: dist.points[..dist.len() - k].to_vec(),
    })
}

/// Kolmogorov-Smirnov distance `sup_x |F_emp(x) - F(x)|` between a sample
/// and a monotone CDF. Both one-sided limits are compared at every distinct
/// sample point; the left limit of `cdf` is taken at the preceding float.
pub fn ks_distance(dist: &EmpiricalDistribution, cdf: impl Fn(f64) -> f64) -> f64 {
    let pts = dist.points();
    let n = pts.len() as f64;
    let mut worst: f64 = 0.0;
    let mut i = 0;
    while i < pts.len() {
        let x = pts[i];
        let mut j = i;
        while j < pts.len() && pts[j] == x {
            j += 1;
        }
        let below = i as f64 / n;
        let at = j as f64 / n;
        worst = worst
            .max((at - cdf(x)).abs())
            .max((below - cdf(x.next_down())).abs());
        i = j;
    }
    worst.min(1.0)
}

/// Two-sample Kolmogorov-Smirnov distance.
pub fn ks_distance_between(a: &EmpiricalDistribution, b: &EmpiricalDistribution) -> f64 {
    let (pa, pb) = (a.points(), b.points());
    let (na, nb) = (pa.len() as f64, pb.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut worst: f64 = 0.0;
    while i < pa.len() || j < pb.len() {
        let x = match (pa.get(i), pb.get(j)) {
            (Some(&u), Some(&v)) => u.min(v),
            (Some(&u), None) => u,
            (None, Some(&v)) => v,
            (None, None) => unreachable!(),
        };
        while i < pa.len() && pa[i] <= x {
            i += 1;
        }
        while j < pb.len() && pb[j] <= x {
            j += 1;
        }
        worst = worst.max((i as f64 / na - j as f64 / nb).abs());
    }
    worst
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub mass: f64,
}

/// Mass in each bin `[lo, hi)`; the final bin also includes its right edge.
pub fn histogram(dist: &EmpiricalDistribution, edges: &[f64]) -> Result<Vec<HistogramBin>> {
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidArgument(
            "bin edges must be strictly increasing".into(),
        ));
    }
    let pts = dist.points();
    let w = dist.weight();
    let last = edges.len() - 2;
    Ok(edges
        .windows(2)
        .enumerate()
        .map(|(b, e)| {
            let start = pts.partition_point(|&p| p < e[0]);
            let end = if b == last {
                pts.partition_point(|&p| p <= e[1])
            } else {
                pts.partition_point(|&p| p < e[1])
            };
            HistogramBin {
                lo: e[0],
                hi: e[1],
                mass: (end - start) as f64 * w,
            }
        })
        .collect())
}

/// `count + 1` equally spaced edges covering `[lo, hi]`.
pub fn uniform_edges(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    (0..=count)
        .map(|i| lo + (hi - lo) * i as f64 / count as f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn diagonal_singular_values() {
        let m = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 1.0]);
        let s = singular_values(&m).unwrap().values;
        assert!((s[0] - 3.0).abs() < 1e-14 && (s[1] - 1.0).abs() < 1e-14);
        let m = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 3.0, 0.0]);
        let s = singular_values(&m).unwrap().values;
        assert!((s[0] - 3.0).abs() < 1e-14 && (s[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn orthogonal_matrix_has_unit_singular_values() {
        let (c, s) = (0.3f64.cos(), 0.3f64.sin());
        let rot = DMatrix::from_row_slice(3, 3, &[c, -s, 0.0, s, c, 0.0, 0.0, 0.0, -1.0]);
        for v in singular_values(&rot).unwrap().values {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rank_deficient_clamps_to_zero() {
        let m = DMatrix::from_fn(4, 4, |i, j| ((i + 1) * (j + 1)) as f64);
        let s = singular_values(&m).unwrap().values;
        assert!(s[1..].iter().all(|v| (0.0..1e-9).contains(v)));
    }

    #[test]
    fn esd_scaling() {
        let spec = SingularSpectrum {
            values: vec![4.0, 2.0, 1.0],
            dim: 3,
        };
        assert_eq!(spec.esd(1.0).unwrap().points(), &[1.0, 2.0, 4.0]);
        assert_eq!(spec.esd(2.0).unwrap().points(), &[0.5, 1.0, 2.0]);
        assert!(spec.esd(0.0).is_err());
    }

    #[test]
    fn trim_examples() {
        let d = EmpiricalDistribution::new(vec![3.0, 1.0, 2.0, 5.0]).unwrap();
        assert_eq!(trim_top(&d, 0).unwrap(), d);
        assert_eq!(trim_top(&d, 3).unwrap().points(), &[1.0]);
        assert_eq!(trim_top(&d, 1).unwrap().weight(), 1.0 / 3.0);
        assert!(trim_top(&d, 4).is_err());
    }

    #[test]
    fn ks_examples() {
        let n = 10;
        let d = EmpiricalDistribution::new((1..=n).map(|i| i as f64).collect()).unwrap();
        let staircase = |x: f64| ((x - 0.5) / n as f64).clamp(0.0, 1.0);
        assert!(ks_distance(&d, staircase) <= 0.5 / n as f64 + 1e-15);

        let zeros = EmpiricalDistribution::new(vec![0.0; 5]).unwrap();
        let point_mass = |x: f64| if x >= 0.0 { 1.0 } else { 0.0 };
        assert_eq!(ks_distance(&zeros, point_mass), 0.0);

        let u = EmpiricalDistribution::new(vec![0.25, 0.75]).unwrap();
        assert!((ks_distance(&u, |x: f64| x.clamp(0.0, 1.0)) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn two_sample_ks() {
        let a = EmpiricalDistribution::new(vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(ks_distance_between(&a, &a), 0.0);
        let b = EmpiricalDistribution::new(vec![3.5, 4.5]).unwrap();
        assert!((ks_distance_between(&a, &b) - 0.75).abs() < 1e-15);
        let c = EmpiricalDistribution::new(vec![10.0]).unwrap();
        assert_eq!(ks_distance_between(&a, &c), 1.0);
    }

    #[test]
    fn histogram_examples() {
        let d = EmpiricalDistribution::new(vec![0.1, 0.2, 0.8, 0.9]).unwrap();
        let all = histogram(&d, &[0.0, 1.0]).unwrap();
        assert_eq!(all[0].mass, 1.0);
        let none = histogram(&d, &[2.0, 3.0, 4.0]).unwrap();
        assert!(none.iter().all(|b| b.mass == 0.0));
        let halves = histogram(&d, &[0.0, 0.5, 1.0]).unwrap();
        assert_eq!(halves[0].mass, halves[1].mass);
        let closed =
            histogram(&EmpiricalDistribution::new(vec![1.0]).unwrap(), &[0.0, 1.0]).unwrap();
        assert_eq!(closed[0].mass, 1.0);
        assert!(histogram(&d, &[1.0, 1.0]).is_err());
    }

    proptest! {
        #[test]
        fn svd_and_dilation_agree(n in 1usize..20, raw in prop::collection::vec(-3.0f64..3.0, 400)) {
            let m = DMatrix::from_fn(n, n, |i, j| raw[i * 20 + j]);
            let a = singular_values(&m).unwrap().values;
            let b = singular_values_svd(&m).unwrap().values;
            let top = a[0].max(1.0);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() / top < 1e-9, "{x} vs {y}");
            }
        }

        #[test]
        fn ks_shift_equivariant(pts in prop::collection::vec(-5.0f64..5.0, 1..50), shift in -3.0f64..3.0) {
            let d = EmpiricalDistribution::new(pts).unwrap();
            let cdf = |x: f64| 1.0 / (1.0 + (-x).exp());
            let base = ks_distance(&d, cdf);
            let moved = ks_distance(&d.shifted(shift), |x| cdf(x - shift));
            prop_assert!((base - moved).abs() < 1e-9);
        }

        #[test]
        fn trimmed_weights_sum_to_one(pts in prop::collection::vec(0.0f64..5.0, 2..50), k in 0usize..50) {
            let d = EmpiricalDistribution::new(pts).unwrap();
            prop_assume!(k < d.len());
            let t = trim_top(&d, k).unwrap();
            prop_assert!((t.weight() * t.len() as f64 - 1.0).abs() < 1e-12);
            prop_assert!(t.points().last() <= d.points().last());
        }
    }
}
