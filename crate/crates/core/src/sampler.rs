//! Seeded simulation of block Markov chain paths.
//!
//! Every step is drawn in two stages: the next cluster from the row of `p`
//! belonging to the current cluster, then a uniform state inside that
//! cluster. Paths are driven by ChaCha8 so a `(seed, stream)` pair fully
//! determines the output; replica `r` of a batch uses stream `r` of the
//! master seed, which keeps replicas independent of evaluation order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matrices::EdgeCounts;
use crate::model::{BlockModel, ClusterLayout};

/// Distribution of the first state `X_0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialDistribution {
    /// `P(X_0 = v) = pi(sigma(v)) / #cluster(sigma(v))`.
    Equilibrium,
    UniformState,
    PointMass(usize),
    /// Uniform over the states of one cluster.
    ClusterMass(usize),
}

impl InitialDistribution {
    fn validate(&self, layout: &ClusterLayout) -> Result<()> {
        match *self {
            Self::PointMass(v) if v >= layout.n() => Err(Error::InvalidArgument(format!(
                "initial state {} outside 1..{}",
                v + 1,
                layout.n()
            ))),
            Self::ClusterMass(k) if k >= layout.k() => Err(Error::InvalidArgument(format!(
                "initial cluster {} outside 1..{}",
                k + 1,
                layout.k()
            ))),
            _ => Ok(()),
        }
    }
}

/// A materialized trajectory `X_0, ..., X_ell`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplePath {
    pub states: Vec<usize>,
    pub n: usize,
    pub seed: u64,
}

impl SamplePath {
    /// Number of transitions.
    pub fn ell(&self) -> usize {
        self.states.len().saturating_sub(1)
    }

    /// Checks that every transition has positive cluster probability.
    pub fn respects(&self, model: &BlockModel, layout: &ClusterLayout) -> bool {
        self.states
            .windows(2)
            .all(|w| model.p_entry(layout.cluster_of(w[0]), layout.cluster_of(w[1])) > 0.0)
    }
}

/// Precomputed cumulative tables for two-stage sampling.
#[derive(Debug, Clone)]
pub struct ChainSampler<'a> {
    layout: &'a ClusterLayout,
    rows: Vec<Categorical>,
    equilibrium: Categorical,
}

#[derive(Debug, Clone)]
struct Categorical {
    cumulative: Vec<f64>,
    last_positive: usize,
}

impl Categorical {
    fn new(weights: impl IntoIterator<Item = f64>) -> Self {
        let mut acc = 0.0;
        let mut last_positive = 0;
        let cumulative = weights
            .into_iter()
            .enumerate()
            .map(|(i, w)| {
                if w > 0.0 {
                    last_positive = i;
                }
                acc += w;
                acc
            })
            .collect();
        Self {
            cumulative,
            last_positive,
        }
    }

    #[inline]
    fn draw<R: Rng>(&self, rng: &mut R) -> usize {
        if self.cumulative.len() == 1 {
            return 0;
        }
        let u: f64 = rng.random();
        // zero-weight categories share their predecessor's cumulative value and are never hit
        self.cumulative
            .iter()
            .position(|&c| u < c)
            .unwrap_or(self.last_positive)
    }
}

impl<'a> ChainSampler<'a> {
    pub fn new(model: &BlockModel, layout: &'a ClusterLayout) -> Result<Self> {
        if model.k() != layout.k() {
            return Err(Error::InvalidArgument(format!(
                "model has K = {} but layout has {} clusters",
                model.k(),
                layout.k()
            )));
        }
        let rows = (0..model.k())
            .map(|k| Categorical::new(model.p().row(k).iter().copied()))
            .collect();
        let equilibrium = Categorical::new(model.pi().iter().copied());
        Ok(Self {
            layout,
            rows,
            equilibrium,
        })
    }

    #[inline]
    fn uniform_in<R: Rng>(&self, k: usize, rng: &mut R) -> usize {
        let range = self.layout.states(k);
        if range.len() == 1 {
            range.start
        } else {
            rng.random_range(range)
        }
    }

    pub fn initial<R: Rng>(&self, init: InitialDistribution, rng: &mut R) -> usize {
        match init {
            InitialDistribution::Equilibrium => {
                let k = self.equilibrium.draw(rng);
                self.uniform_in(k, rng)
            }
            InitialDistribution::UniformState => rng.random_range(0..self.layout.n()),
            InitialDistribution::PointMass(v) => v,
            InitialDistribution::ClusterMass(k) => self.uniform_in(k, rng),
        }
    }

    #[inline]
    pub fn step<R: Rng>(&self, state: usize, rng: &mut R) -> usize {
        let k = self.rows[self.layout.cluster_of(state)].draw(rng);
        self.uniform_in(k, rng)
    }

    /// Visits `X_0, ..., X_ell` in order without storing them.
    pub fn walk<R: Rng>(
        &self,
        ell: usize,
        init: InitialDistribution,
        rng: &mut R,
        mut visit: impl FnMut(usize),
    ) {
        let mut x = self.initial(init, rng);
        visit(x);
        for _ in 0..ell {
            x = self.step(x, rng);
            visit(x);
        }
    }
}

fn check_inputs<'a>(
    model: &BlockModel,
    layout: &'a ClusterLayout,
    ell: usize,
    init: InitialDistribution,
) -> Result<ChainSampler<'a>> {
    if ell == 0 {
        return Err(Error::InvalidArgument("ell must be at least 1".into()));
    }
    init.validate(layout)?;
    ChainSampler::new(model, layout)
}

/// Generator for a single path with the given seed.
pub fn path_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Generator for replica `replica` of a batch with master seed `seed`.
pub fn replica_rng(seed: u64, replica: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replica);
    rng
}

/// Simulates and stores a path of `ell` transitions.
pub fn sample_path(
    model: &BlockModel,
    layout: &ClusterLayout,
    ell: usize,
    init: InitialDistribution,
    seed: u64,
) -> Result<SamplePath> {
    let sampler = check_inputs(model, layout, ell, init)?;
    let mut states = Vec::with_capacity(ell + 1);
    sampler.walk(ell, init, &mut path_rng(seed), |x| states.push(x));
    Ok(SamplePath {
        states,
        n: layout.n(),
        seed,
    })
}

/// Edge counts of the path `sample_path` would produce for the same
/// arguments, accumulated on the fly.
pub fn stream_edge_counts(
    model: &BlockModel,
    layout: &ClusterLayout,
    ell: usize,
    init: InitialDistribution,
    seed: u64,
) -> Result<EdgeCounts> {
    let sampler = check_inputs(model, layout, ell, init)?;
    let mut counts = EdgeCounts::new(layout.n());
    let mut prev = None;
    sampler.walk(ell, init, &mut path_rng(seed), |x| {
        if let Some(p) = prev {
            counts.add(p, x, 1);
        }
        prev = Some(x);
    });
    Ok(counts)
}

/// Traversal counts of one directed edge over `replicas` independent
/// equilibrium-start paths. Entry `r` comes from replica stream `r`.
pub fn replicate_edge_count(
    model: &BlockModel,
    layout: &ClusterLayout,
    ell: usize,
    edge: (usize, usize),
    replicas: usize,
    seed: u64,
) -> Result<Vec<u64>> {
    let init = InitialDistribution::Equilibrium;
    let sampler = check_inputs(model, layout, ell, init)?;
    if replicas == 0 {
        return Err(Error::InvalidArgument("replicas must be at least 1".into()));
    }
    let (from, to) = edge;
    if from >= layout.n() || to >= layout.n() {
        return Err(Error::InvalidArgument(format!(
            "edge ({}, {}) outside 1..{}",
            from + 1,
            to + 1,
            layout.n()
        )));
    }
    Ok((0..replicas as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = replica_rng(seed, r);
            let mut count = 0u64;
            let mut prev = usize::MAX;
            sampler.walk(ell, init, &mut rng, |x| {
                if prev == from && x == to {
                    count += 1;
                }
                prev = x;
            });
            count
        })
        .collect())
}

/// Frequency table of integer observations, indexed by value.
pub fn value_histogram(values: &[u64]) -> Vec<u64> {
    let max = values.iter().copied().max().unwrap_or(0) as usize;
    let mut hist = vec![0u64; max + 1];
    for &v in values {
        hist[v as usize] += 1;
    }
    hist
}
