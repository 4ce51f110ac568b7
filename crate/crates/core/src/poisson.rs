//! Poisson limit of single-edge traversal counts: reference pmf, total
//! variation distance, mixing of the cluster chain and the nonasymptotic
//! certificate.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{BlockModel, ClusterLayout};
use crate::sampler::{replicate_edge_count, value_histogram};

pub const DEFAULT_EPSILON: f64 = 1e-4;
pub const DEFAULT_R0_CAP: usize = 10_000;

/// `exp(-rate) rate^k / k!`, evaluated in log space.
pub fn poisson_pmf(rate: f64, k: u64) -> f64 {
    if rate == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    let k = k as f64;
    (k * rate.ln() - rate - ln_factorial(k)).exp()
}

fn ln_factorial(k: f64) -> f64 {
    // exact summation is cheap for the counts seen here
    if k < 1024.0 {
        (2..=k as u64).map(|i| (i as f64).ln()).sum()
    } else {
        // Stirling series
        k * k.ln() - k + 0.5 * (2.0 * std::f64::consts::PI * k).ln() + 1.0 / (12.0 * k)
            - 1.0 / (360.0 * k.powi(3))
    }
}

/// Total variation distance between the normalized histogram `hist[k]` and
/// Poisson(`rate`). Poisson mass beyond the last histogram index counts
/// fully as mismatch.
pub fn tv_distance(hist: &[u64], rate: f64) -> Result<f64> {
    let total: u64 = hist.iter().sum();
    if total == 0 {
        return Err(Error::EmptyInput);
    }
    if !(rate >= 0.0 && rate.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "rate must be nonnegative, got {rate}"
        )));
    }
    let mut diff = 0.0;
    let mut covered = 0.0;
    for (k, &c) in hist.iter().enumerate() {
        let q = poisson_pmf(rate, k as u64);
        covered += q;
        diff += (c as f64 / total as f64 - q).abs();
    }
    let tail = (1.0 - covered).max(0.0);
    Ok((0.5 * (diff + tail)).clamp(0.0, 1.0))
}

/// `max_{x,y} |p^r(x,y) - pi(y)| / pi(y)`.
pub fn relative_pointwise_distance(p: &DMatrix<f64>, pi: &[f64], r: usize) -> Result<f64> {
    if r == 0 {
        return Err(Error::InvalidArgument("r must be at least 1".into()));
    }
    Ok(*relative_pointwise_profile(p, pi, r)?
        .last()
        .expect("r >= 1"))
}

/// `Delta(1), ..., Delta(r_max)` from successive matrix products.
pub fn relative_pointwise_profile(p: &DMatrix<f64>, pi: &[f64], r_max: usize) -> Result<Vec<f64>> {
    let k = p.nrows();
    if !p.is_square() || pi.len() != k || pi.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::InvalidArgument(
            "p must be square and pi positive".into(),
        ));
    }
    let mut power = p.clone();
    let mut out = Vec::with_capacity(r_max);
    for r in 1..=r_max {
        if r > 1 {
            power = &power * p;
        }
        out.push(delta_of(&power, pi));
    }
    Ok(out)
}

fn delta_of(power: &DMatrix<f64>, pi: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for x in 0..power.nrows() {
        for (y, &py) in pi.iter().enumerate() {
            worst = worst.max((power[(x, y)] - py).abs() / py);
        }
    }
    worst
}

/// Upper bound on the total variation distance between the traversal count
/// of one edge and its finite-`n` Poisson approximation, with its three
/// reported pieces (`bound = local + self_loop_term + mixing`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PoissonCertificate {
    pub epsilon: f64,
    pub r0: usize,
    pub bound: f64,
    pub self_loop: bool,
    /// `b1`: pairs of nearby times both hitting the edge independently.
    pub b1: f64,
    /// `b2`: nearby times hitting the edge jointly.
    pub b2: f64,
    /// `b3`: long-range dependence through the cluster chain.
    pub b3: f64,
}

/// Smallest `r` with `Delta(r) <= epsilon` such that the next `r` values
/// also stay below `epsilon`.
pub fn mixing_index(p: &DMatrix<f64>, pi: &[f64], epsilon: f64, cap: usize) -> Result<usize> {
    let mut power = DMatrix::identity(p.nrows(), p.ncols());
    let mut profile = Vec::new();
    let mut candidate: Option<usize> = None;
    let horizon = 2 * cap;
    for r in 1..=horizon {
        power = &power * p;
        let d = delta_of(&power, pi);
        profile.push(d);
        match candidate {
            None if d <= epsilon => {
                if r > cap {
                    break;
                }
                candidate = Some(r);
            }
            Some(_) if d > epsilon => candidate = None,
            _ => {}
        }
        if let Some(c) = candidate {
            if r >= 2 * c {
                return Ok(c);
            }
        }
    }
    Err(Error::CapExceeded { cap, epsilon })
}

#[allow(clippy::too_many_arguments)]
pub fn poisson_certificate(
    model: &BlockModel,
    layout: &ClusterLayout,
    ell: usize,
    k1: usize,
    k2: usize,
    self_loop: bool,
    epsilon: f64,
    cap: usize,
) -> Result<PoissonCertificate> {
    let k = model.k();
    if k1 >= k || k2 >= k || layout.k() != k {
        return Err(Error::InvalidArgument(format!(
            "clusters ({}, {}) outside 1..{k}",
            k1 + 1,
            k2 + 1
        )));
    }
    if !(epsilon > 0.0 && epsilon <= 0.5) {
        return Err(Error::InvalidArgument(format!(
            "epsilon must lie in (0, 1/2], got {epsilon}"
        )));
    }
    if self_loop && k1 != k2 {
        return Err(Error::InvalidArgument(
            "a self-loop lies within one cluster".into(),
        ));
    }
    let p12 = model.p_entry(k1, k2);
    if !(p12 > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "p[{}][{}] is zero, so the edge is never traversed",
            k1 + 1,
            k2 + 1
        )));
    }
    let r0 = mixing_index(model.p(), model.pi(), epsilon, cap)?;
    let v1 = layout.sizes()[k1] as f64;
    let v2 = layout.sizes()[k2] as f64;
    let scale = ell as f64 * model.pi()[k1] * p12;
    let r0f = r0 as f64;
    let b1 = scale * (2.0 * r0f + 1.0) / (v1 * v1 * v2 * v2);
    let b2 = if self_loop {
        scale * (2.0 / v1.powi(3) + (2.0 * r0f - 2.0) / v1.powi(4))
    } else {
        scale * (2.0 * r0f - 2.0) / (v1 * v1 * v2 * v2)
    };
    let b3 = scale * 12.0 * epsilon / (v1 * v2);
    Ok(PoissonCertificate {
        epsilon,
        r0,
        bound: b1 + b2 + b3,
        self_loop,
        b1,
        b2,
        b3,
    })
}

/// Empirical check of one edge count against its Poisson limit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TVReport {
    /// One-based states of the edge.
    pub edge: (usize, usize),
    /// One-based clusters of the edge.
    pub clusters: (usize, usize),
    /// Limiting rate `lambda pi(k1) p / (alpha_k1 alpha_k2)`.
    pub rate: f64,
    /// Exact mean `ell pi(k1) p / (#V_k1 #V_k2)` at this `n`.
    pub finite_rate: f64,
    pub histogram: Vec<u64>,
    pub tv: f64,
    /// Distance to Poisson(`finite_rate`).
    pub tv_finite: f64,
    /// Delta-method Monte Carlo standard error of `tv`.
    pub tv_standard_error: f64,
    pub mean: f64,
    pub mean_standard_error: f64,
    pub variance: f64,
    pub replicas: usize,
}

/// Zero-based representative edge between clusters `k1` and `k2`: the
/// first state of each cluster, or the first two states of `k1` when the
/// clusters coincide and a self-loop is not wanted.
pub fn representative_edge(
    layout: &ClusterLayout,
    k1: usize,
    k2: usize,
    self_loop: bool,
) -> Result<(usize, usize)> {
    if k1 >= layout.k() || k2 >= layout.k() {
        return Err(Error::InvalidArgument("cluster index out of range".into()));
    }
    let from = layout.states(k1).start;
    if self_loop {
        if k1 != k2 {
            return Err(Error::InvalidArgument(
                "a self-loop lies within one cluster".into(),
            ));
        }
        return Ok((from, from));
    }
    let mut to = layout.states(k2);
    let to = if k1 == k2 { to.nth(1) } else { to.next() };
    to.map(|t| (from, t))
        .ok_or_else(|| Error::InvalidArgument(format!("cluster {} has a single state", k2 + 1)))
}

pub fn poisson_check(
    model: &BlockModel,
    layout: &ClusterLayout,
    ell: usize,
    edge: (usize, usize),
    replicas: usize,
    seed: u64,
) -> Result<TVReport> {
    let counts = replicate_edge_count(model, layout, ell, edge, replicas, seed)?;
    let (k1, k2) = (layout.cluster_of(edge.0), layout.cluster_of(edge.1));
    let rate = model.edge_rate(k1, k2);
    let finite_rate = ell as f64 * model.pi()[k1] * model.p_entry(k1, k2)
        / (layout.sizes()[k1] as f64 * layout.sizes()[k2] as f64);
    let histogram = value_histogram(&counts);
    let r = replicas as f64;
    let mean = counts.iter().sum::<u64>() as f64 / r;
    let variance = if replicas > 1 {
        counts
            .iter()
            .map(|&c| (c as f64 - mean).powi(2))
            .sum::<f64>()
            / (r - 1.0)
    } else {
        0.0
    };
    Ok(TVReport {
        edge: (edge.0 + 1, edge.1 + 1),
        clusters: (k1 + 1, k2 + 1),
        rate,
        finite_rate,
        tv: tv_distance(&histogram, rate)?,
        tv_finite: tv_distance(&histogram, finite_rate)?,
        tv_standard_error: tv_standard_error(&histogram, rate),
        mean,
        mean_standard_error: (variance / r).sqrt(),
        variance,
        histogram,
        replicas,
    })
}

/// The histogram-dependent part of the distance is `(1/2) sum_k s_k f_k`
/// with `s_k = sign(f_k - q_k)`; its standard error is half the standard
/// deviation of `s_X` over one replica, divided by `sqrt(replicas)`.
fn tv_standard_error(hist: &[u64], rate: f64) -> f64 {
    let total: u64 = hist.iter().sum();
    let r = total as f64;
    let (mut m1, mut m2) = (0.0, 0.0);
    for (k, &c) in hist.iter().enumerate() {
        let f = c as f64 / r;
        let s = (f - poisson_pmf(rate, k as u64)).signum();
        let s = if f == poisson_pmf(rate, k as u64) {
            0.0
        } else {
            s
        };
        m1 += f * s;
        m2 += f * s * s;
    }
    0.5 * ((m2 - m1 * m1).max(0.0) / r).sqrt()
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn pmf_examples() {
        assert_eq!(poisson_pmf(0.0, 0), 1.0);
        assert_eq!(poisson_pmf(0.0, 3), 0.0);
        assert!((poisson_pmf(1.0, 1) - (-1f64).exp()).abs() < 1e-15);
        let s: f64 = (0..=50).map(|k| poisson_pmf(2.0, k)).sum();
        assert!((s - 1.0).abs() < 1e-12);
        // Stirling branch against the exact sum at the switch point
        let exact: f64 = (2..=1500u64).map(|i| (i as f64).ln()).sum();
        assert!((ln_factorial(1500.0) - exact).abs() / exact < 1e-13);
    }

    #[test]
    fn tv_examples() {
        let v = tv_distance(&[1, 1], 1.0).unwrap();
        assert!((v - 0.264_241_117_657_115_3).abs() < 1e-12, "{v}");
        assert!(tv_distance(&[1], 1e3).unwrap() > 0.999);
        // exact truncated pmf, scaled to integers
        let rate = 1.5;
        let hist: Vec<u64> = (0..30)
            .map(|k| (poisson_pmf(rate, k) * 1e15).round() as u64)
            .collect();
        assert!(tv_distance(&hist, rate).unwrap() < 1e-12);
        assert!(matches!(tv_distance(&[0, 0], 1.0), Err(Error::EmptyInput)));
    }

    #[test]
    fn delta_examples() {
        let pi = [0.2, 0.3, 0.5];
        let p = DMatrix::from_fn(3, 3, |_, j| pi[j]);
        for r in 1..5 {
            assert!(relative_pointwise_distance(&p, &pi, r).unwrap() < 1e-15);
        }
        let fig = BlockModel::figure_example(2.0).unwrap();
        let profile = relative_pointwise_profile(fig.p(), fig.pi(), 60).unwrap();
        assert!((profile[0] - 3.6).abs() < 1e-12);
        assert!(profile.windows(2).all(|w| w[1] < w[0]));
        assert_eq!(profile.iter().position(|&d| d < 1e-6).unwrap() + 1, 50);
        assert_eq!(
            mixing_index(fig.p(), fig.pi(), 1e-4, DEFAULT_R0_CAP).unwrap(),
            36
        );
    }

    #[test]
    fn single_cluster_certificate() {
        let m = BlockModel::single_cluster(2.0).unwrap();
        for n in [50usize, 100, 200] {
            let layout = m.build_layout(n).unwrap();
            let ell = 2 * n * n;
            let c = poisson_certificate(
                &m,
                &layout,
                ell,
                0,
                0,
                false,
                DEFAULT_EPSILON,
                DEFAULT_R0_CAP,
            )
            .unwrap();
            let nf = n as f64;
            let expected =
                3.0 * ell as f64 / nf.powi(4) + 12.0 * DEFAULT_EPSILON * ell as f64 / (nf * nf);
            assert_eq!(c.r0, 1);
            assert!((c.bound - expected).abs() <= 1e-12 * expected);
            let tiny = poisson_certificate(&m, &layout, ell, 0, 0, false, 1e-12, 10).unwrap();
            // the epsilon term is negligible: 12 * 1e-12 * lambda = 2.4e-11
            assert!((tiny.bound - 3.0 * ell as f64 / nf.powi(4)).abs() <= 2.4e-11 * (1.0 + 1e-9));
            let sl = poisson_certificate(
                &m,
                &layout,
                ell,
                0,
                0,
                true,
                DEFAULT_EPSILON,
                DEFAULT_R0_CAP,
            )
            .unwrap();
            assert!(sl.bound > c.bound);
        }
    }

    #[test]
    fn certificate_decreases_with_n() {
        let m = BlockModel::figure_example(2.0).unwrap();
        let bounds: Vec<f64> = [100usize, 200, 400, 800]
            .iter()
            .map(|&n| {
                let layout = m.build_layout(n).unwrap();
                poisson_certificate(
                    &m,
                    &layout,
                    2 * n * n,
                    0,
                    1,
                    false,
                    DEFAULT_EPSILON,
                    DEFAULT_R0_CAP,
                )
                .unwrap()
                .bound
            })
            .collect();
        assert!(bounds.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn certificate_errors() {
        let m = BlockModel::figure_example(2.0).unwrap();
        let layout = m.build_layout(100).unwrap();
        assert!(poisson_certificate(&m, &layout, 100, 0, 2, false, 1e-4, 100).is_err());
        assert!(poisson_certificate(&m, &layout, 100, 0, 1, true, 1e-4, 100).is_err());
        assert!(poisson_certificate(&m, &layout, 100, 0, 1, false, 0.0, 100).is_err());
        assert!(matches!(
            poisson_certificate(&m, &layout, 100, 0, 1, false, 1e-4, 10),
            Err(Error::CapExceeded { cap: 10, .. })
        ));
    }

    #[test]
    fn representative_edges() {
        let layout = ClusterLayout::from_sizes(vec![3, 2]).unwrap();
        assert_eq!(representative_edge(&layout, 0, 1, false).unwrap(), (0, 3));
        assert_eq!(representative_edge(&layout, 1, 1, false).unwrap(), (3, 4));
        assert_eq!(representative_edge(&layout, 1, 1, true).unwrap(), (3, 3));
        assert!(representative_edge(&layout, 0, 1, true).is_err());
    }

    #[test]
    fn small_poisson_check() {
        let m = BlockModel::figure_example(2.0).unwrap();
        let layout = m.build_layout(60).unwrap();
        let edge = representative_edge(&layout, 0, 1, false).unwrap();
        let r = poisson_check(&m, &layout, 2 * 60 * 60, edge, 400, 5).unwrap();
        assert_eq!(r.histogram.iter().sum::<u64>(), 400);
        assert!((r.rate - 0.586_956_521_739_130_4).abs() < 1e-12);
        assert!((0.0..=1.0).contains(&r.tv));
        assert!((r.mean - r.finite_rate).abs() < 5.0 * r.mean_standard_error.max(0.01));
        assert_eq!(
            r,
            poisson_check(&m, &layout, 2 * 60 * 60, edge, 400, 5).unwrap()
        );
    }

    proptest! {
        #[test]
        fn tv_in_unit_interval(hist in prop::collection::vec(0u64..50, 1..20), rate in 0.0f64..20.0) {
            prop_assume!(hist.iter().sum::<u64>() > 0);
            let v = tv_distance(&hist, rate).unwrap();
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }
}
