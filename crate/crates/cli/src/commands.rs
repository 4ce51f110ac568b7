use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use bmc_core::io::{
    load_counts, load_dense, load_density, load_spectrum, save_counts, save_dense, save_density,
    save_json, save_spectrum, write_histogram, write_path, write_value_histogram, PathFormat,
};
use bmc_core::limitlaw::{
    graphon_wm, graphon_wq, law_cdf, singular_value_density, Inversion, ResolventSystem,
    SolverConfig,
};
use bmc_core::matrices::{
    centered, expected_frequency, frequency_matrix, q_transform, transition_matrix, EdgeCounts,
};
use bmc_core::model::ModelSpec;
use bmc_core::moments::{hankel_psd, quadrature_moments, tree_moments};
use bmc_core::pipeline::{
    estimate_parameters, preprocess, read_clustering, read_transitions, Format,
};
use bmc_core::poisson::{poisson_certificate, poisson_check, representative_edge};
use bmc_core::sampler::{sample_path, stream_edge_counts, InitialDistribution};
use bmc_core::spectra::{
    histogram, ks_distance, singular_values, trim_top, uniform_edges, EmpiricalDistribution,
};
use bmc_core::{BlockModel, Error, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::{json, Value};

/// Block Markov chain simulation, empirical spectra and limiting laws.
#[derive(Debug, Parser)]
#[command(name = "bmc", version)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a path and export its frequency matrix.
    Simulate(SimulateArgs),
    /// Singular values of a frequency-derived matrix.
    Spectrum(SpectrumArgs),
    /// Limiting singular value density of a model.
    Law(LawArgs),
    /// Limiting moments from tree sums and from the density.
    Moments(MomentsArgs),
    /// Empirical Poisson check of one edge count with its certificate.
    Poisson(PoissonArgs),
    /// Estimate cluster-level parameters from transition data.
    Estimate(EstimateArgs),
    /// Kolmogorov-Smirnov distance between a spectrum and a density.
    Compare(CompareArgs),
}

#[derive(Debug, Clone, Copy, Serialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
enum Example {
    /// Three clusters, alpha = (0.5, 0.4, 0.1).
    Figure,
    /// One cluster.
    Single,
}

#[derive(Debug, Args, Serialize)]
struct ModelArgs {
    /// Model JSON file `{"K", "p", "alpha", "lambda"}`.
    #[arg(long, conflicts_with = "example", required_unless_present = "example")]
    model: Option<PathBuf>,
    /// Built-in model instead of a file.
    #[arg(long, value_enum)]
    example: Option<Example>,
    /// Override the model's lambda.
    #[arg(long)]
    lambda: Option<f64>,
}

impl ModelArgs {
    fn load(&self) -> Result<BlockModel> {
        let lambda = self.lambda.unwrap_or(2.0);
        let model = match (&self.model, self.example) {
            (Some(path), _) => {
                let spec: ModelSpec = serde_json::from_str(&at(
                    path,
                    fs::read_to_string(path).map_err(Error::from),
                )?)?;
                spec.into_model()?
            }
            (None, Some(Example::Figure)) => BlockModel::figure_example(lambda)?,
            (None, Some(Example::Single)) => BlockModel::single_cluster(lambda)?,
            (None, None) => return Err(Error::InvalidArgument("no model given".into())),
        };
        match self.lambda {
            Some(l) => model.with_lambda(l),
            None => Ok(model),
        }
    }
}

#[derive(Debug, Args, Serialize)]
struct ScaleArgs {
    /// Number of states.
    #[arg(long)]
    n: usize,
    /// Path length.
    #[arg(long, conflicts_with = "ell_coef")]
    ell: Option<usize>,
    /// Path length as a multiple of n^2; defaults to the model's lambda.
    #[arg(long)]
    ell_coef: Option<f64>,
}

impl ScaleArgs {
    fn ell(&self, model: &BlockModel) -> Result<usize> {
        if let Some(ell) = self.ell {
            return Ok(ell);
        }
        let coef = self.ell_coef.unwrap_or(model.lambda());
        if !(coef > 0.0 && coef.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "ell coefficient must be positive, got {coef}"
            )));
        }
        Ok((coef * (self.n * self.n) as f64).round() as usize)
    }
}

#[derive(Debug, Clone, Copy, Serialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
enum InitArg {
    Equilibrium,
    Uniform,
}

#[derive(Debug, Clone, Copy, Serialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
enum PathFormatArg {
    Csv,
    Binary,
}

#[derive(Debug, Args, Serialize)]
struct SimulateArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    scale: ScaleArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = InitArg::Equilibrium)]
    init: InitArg,
    /// Frequency matrix as `i,j,value` triplets.
    #[arg(long)]
    out: PathBuf,
    /// Also write the dense transformed matrix here.
    #[arg(long)]
    matrix_out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Transform::Nhat, requires = "matrix_out")]
    transform: Transform,
    /// Also write the visited states here.
    #[arg(long)]
    path_out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = PathFormatArg::Csv)]
    path_format: PathFormatArg,
    /// Also write the true `state,cluster` assignment here.
    #[arg(long)]
    clustering_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
enum Transform {
    /// Frequency matrix N.
    Nhat,
    /// Empirical transition matrix P.
    Phat,
    /// Centered frequency matrix N - E[N].
    M,
    /// Centered matrix rescaled by the equilibrium, diag((ell+1) Pi)^-1 M.
    Q,
}

#[derive(Debug, Args, Serialize)]
struct SpectrumArgs {
    /// Frequency matrix as triplets.
    #[arg(long, conflicts_with = "matrix", required_unless_present = "matrix")]
    counts: Option<PathBuf>,
    /// Frequency matrix as dense CSV.
    #[arg(long)]
    matrix: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Transform::Nhat)]
    transform: Transform,
    /// Divide singular values by this; defaults to sqrt(n) for nhat and m
    /// and 1/sqrt(n) for phat and q.
    #[arg(long)]
    scale: Option<f64>,
    /// Model needed by the m and q transforms.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, value_enum)]
    example: Option<Example>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    out: PathBuf,
    /// Histogram of the scaled spectrum with this many bins.
    #[arg(long, requires = "histogram_out")]
    bins: Option<usize>,
    #[arg(long)]
    histogram_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Serialize, ValueEnum)]
enum Target {
    /// Singular values of N / sqrt(n).
    N,
    /// Singular values of sqrt(n) P.
    P,
}

#[derive(Debug, Args, Serialize)]
struct LawArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, value_enum, default_value_t = Target::N)]
    target: Target,
    #[arg(long, default_value_t = 2001)]
    points: usize,
    /// Right end of the grid; defaults to 1.1 times the support bound.
    #[arg(long)]
    xmax: Option<f64>,
    /// Offsets from the real axis; several values are extrapolated to zero.
    #[arg(long, value_delimiter = ',', default_values_t = vec![4e-3, 2e-3, 1e-3])]
    epsilon: Vec<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct MomentsArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, value_enum, default_value_t = Target::N)]
    target: Target,
    /// Highest even order computed.
    #[arg(long, default_value_t = 8)]
    max_order: usize,
    /// Grid size for the quadrature moments; 0 skips them.
    #[arg(long, default_value_t = 2001)]
    points: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct PoissonArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    scale: ScaleArgs,
    /// Source cluster (one-based).
    #[arg(long, default_value_t = 1)]
    from_cluster: usize,
    /// Destination cluster (one-based).
    #[arg(long, default_value_t = 2)]
    to_cluster: usize,
    #[arg(long)]
    self_loop: bool,
    #[arg(long, default_value_t = 2000)]
    replicas: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = bmc_core::poisson::DEFAULT_EPSILON)]
    epsilon: f64,
    #[arg(long, default_value_t = bmc_core::poisson::DEFAULT_R0_CAP)]
    cap: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Frequency table of the replica counts.
    #[arg(long)]
    histogram_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Serialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
enum FormatArg {
    CsvPairs,
    StateSequence,
}

#[derive(Debug, Args, Serialize)]
struct EstimateArgs {
    #[arg(long)]
    transitions: PathBuf,
    #[arg(long, value_enum, default_value_t = FormatArg::CsvPairs)]
    format: FormatArg,
    /// `state,cluster` file.
    #[arg(long)]
    clustering: PathBuf,
    #[arg(long, default_value_t = 0)]
    min_visits: usize,
    #[arg(long)]
    drop_self_loops: bool,
    /// Estimated model JSON.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct CompareArgs {
    #[arg(long)]
    spectrum: PathBuf,
    #[arg(long)]
    density: PathBuf,
    /// Number of largest values dropped before comparing.
    #[arg(long, default_value_t = 0)]
    trim: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Prefixes I/O failures with the offending path.
fn at<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Io(io) => Error::InvalidArgument(format!("{}: {io}", path.display())),
        other => other,
    })
}

fn echo_config(command: &str, args: &impl Serialize, resolved: Value) -> Result<()> {
    let config = json!({ "command": command, "args": args, "resolved": resolved });
    println!("{}", serde_json::to_string(&config)?);
    Ok(())
}

fn emit_report(report: &Value, out: Option<&Path>) -> Result<()> {
    if let Some(path) = out {
        save_json(path, report)?;
    }
    println!("{}", serde_json::to_string_pretty(report)?);
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Spectrum(a) => spectrum(a),
        Command::Law(a) => law(a),
        Command::Moments(a) => moments(a),
        Command::Poisson(a) => poisson(a),
        Command::Estimate(a) => estimate(a),
        Command::Compare(a) => compare(a),
    }
}

fn transformed(
    counts: &EdgeCounts,
    transform: Transform,
    model: Option<&BlockModel>,
) -> Result<DMatrix<f64>> {
    match transform {
        Transform::Nhat => Ok(counts.to_dense()),
        Transform::Phat => Ok(transition_matrix(counts)?.to_dense()),
        Transform::M | Transform::Q => {
            let model = model.ok_or_else(|| {
                Error::InvalidArgument("the m and q transforms need --model or --example".into())
            })?;
            let layout = model.build_layout(counts.n())?;
            let ell = counts.total() as usize;
            let m = centered(counts, &expected_frequency(model, &layout, ell)?)?;
            if transform == Transform::M {
                Ok(m)
            } else {
                q_transform(&m, model, &layout, ell)
            }
        }
    }
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let model = a.model.load()?;
    let layout = model.build_layout(a.scale.n)?;
    let ell = a.scale.ell(&model)?;
    let init = match a.init {
        InitArg::Equilibrium => InitialDistribution::Equilibrium,
        InitArg::Uniform => InitialDistribution::UniformState,
    };
    echo_config(
        "simulate",
        &a,
        json!({ "model": model.to_spec(), "n": layout.n(), "ell": ell, "cluster_sizes": layout.sizes() }),
    )?;
    let counts = match &a.path_out {
        Some(path_out) => {
            let path = sample_path(&model, &layout, ell, init, a.seed)?;
            let format = match a.path_format {
                PathFormatArg::Csv => PathFormat::Csv,
                PathFormatArg::Binary => PathFormat::Binary,
            };
            let mut w = std::io::BufWriter::new(fs::File::create(path_out)?);
            write_path(&mut w, &path, format)?;
            frequency_matrix(&path)
        }
        None => stream_edge_counts(&model, &layout, ell, init, a.seed)?,
    };
    save_counts(&a.out, &counts)?;
    if let Some(path) = &a.clustering_out {
        let mut w = std::io::BufWriter::new(fs::File::create(path)?);
        writeln!(w, "state,cluster")?;
        for (i, k) in layout.sigma().iter().enumerate() {
            writeln!(w, "{},{}", i + 1, k + 1)?;
        }
        w.flush()?;
    }
    if let Some(matrix_out) = &a.matrix_out {
        save_dense(
            matrix_out,
            &transformed(&counts, a.transform, Some(&model))?,
        )?;
    }
    eprintln!(
        "wrote {} transitions over {} states ({} distinct edges)",
        counts.total(),
        counts.n(),
        counts.nnz()
    );
    Ok(())
}

fn dense_to_counts(m: &DMatrix<f64>) -> Result<EdgeCounts> {
    if !m.is_square() {
        return Err(Error::InvalidArgument(
            "frequency matrix must be square".into(),
        ));
    }
    let mut counts = EdgeCounts::new(m.nrows());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            let v = m[(i, j)];
            if v < 0.0 || v.fract() != 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "entry ({}, {}) = {v} is not a count",
                    i + 1,
                    j + 1
                )));
            }
            if v > 0.0 {
                counts.add(i, j, v as u64);
            }
        }
    }
    Ok(counts)
}

fn spectrum(a: SpectrumArgs) -> Result<()> {
    let counts = match (&a.counts, &a.matrix) {
        (Some(path), _) => at(path, load_counts(path))?,
        (None, Some(path)) => dense_to_counts(&at(path, load_dense(path))?)?,
        (None, None) => return Err(Error::InvalidArgument("no input matrix".into())),
    };
    let model = if a.model.is_some() || a.example.is_some() {
        let args = ModelArgs {
            model: a.model.clone(),
            example: a.example,
            lambda: a.lambda,
        };
        Some(args.load()?)
    } else {
        None
    };
    let rt = (counts.n() as f64).sqrt();
    let scale = a.scale.unwrap_or(match a.transform {
        Transform::Nhat | Transform::M => rt,
        Transform::Phat | Transform::Q => 1.0 / rt,
    });
    echo_config(
        "spectrum",
        &a,
        json!({ "n": counts.n(), "ell": counts.total(), "scale": scale }),
    )?;
    let m = transformed(&counts, a.transform, model.as_ref())?;
    let spec = singular_values(&m)?;
    let values: Vec<f64> = spec.values.iter().map(|s| s / scale).collect();
    save_spectrum(&a.out, &values)?;
    if let (Some(bins), Some(path)) = (a.bins, &a.histogram_out) {
        let dist = EmpiricalDistribution::new(values.clone())?;
        let top = values[0].max(f64::MIN_POSITIVE);
        let hist = histogram(&dist, &uniform_edges(0.0, top, bins.max(1)))?;
        let mut w = std::io::BufWriter::new(fs::File::create(path)?);
        write_histogram(&mut w, &hist)?;
    }
    eprintln!(
        "largest scaled singular values: {:?}",
        &values[..values.len().min(5)]
    );
    Ok(())
}

fn system_for(model: &BlockModel, target: Target) -> ResolventSystem {
    match target {
        Target::N => ResolventSystem::theorem_n(model),
        Target::P => ResolventSystem::theorem_p(model),
    }
}

fn inversion_for(eps: &[f64]) -> Inversion {
    match eps {
        [e] => Inversion::Fixed(*e),
        es => Inversion::Richardson(es.to_vec()),
    }
}

fn law(a: LawArgs) -> Result<()> {
    let model = a.model.load()?;
    let sys = system_for(&model, a.target);
    let inversion = inversion_for(&a.epsilon);
    let cfg = SolverConfig::default();
    echo_config(
        "law",
        &a,
        json!({
            "model": model.to_spec(),
            "xmax": a.xmax.unwrap_or(1.1 * sys.support_bound()),
            "inversion": inversion,
            "solver": cfg,
        }),
    )?;
    let d = singular_value_density(&sys, a.xmax, a.points, &inversion, &cfg)?;
    save_density(&a.out, &d)?;
    let worst = d.diagnostics.iter().map(|p| p.residual).fold(0.0, f64::max);
    eprintln!("mass {:.6}, worst residual {worst:.2e}", d.mass());
    Ok(())
}

fn moments(a: MomentsArgs) -> Result<()> {
    let model = a.model.load()?;
    let edges = a.max_order / 2;
    echo_config(
        "moments",
        &a,
        json!({ "model": model.to_spec(), "tree_edges": edges }),
    )?;
    let graphon = match a.target {
        Target::N => graphon_wm(&model),
        Target::P => graphon_wq(&model),
    };
    let tree = tree_moments(&graphon, edges)?;
    let by_order = |values: &[f64]| -> Value {
        values
            .iter()
            .enumerate()
            .map(|(k, v)| (k.to_string(), json!(v)))
            .collect::<serde_json::Map<_, _>>()
            .into()
    };
    let hankel = hankel_psd(&tree, edges)?;
    let mut report = json!({
        "target": a.target,
        "tree_sum": by_order(&tree.values),
        "hankel": hankel,
    });
    if a.points > 0 {
        let d = singular_value_density(
            &system_for(&model, a.target),
            None,
            a.points,
            &Inversion::default(),
            &SolverConfig::default(),
        )?;
        let quad = quadrature_moments(&d, edges)?;
        report["quadrature"] = by_order(&quad.values);
        report["quadrature_hankel"] = json!(hankel_psd(&quad, edges)?);
    }
    emit_report(&report, a.out.as_deref())
}

fn one_based(k: usize, model: &BlockModel) -> Result<usize> {
    if k == 0 || k > model.k() {
        return Err(Error::InvalidArgument(format!(
            "cluster {k} outside 1..{}",
            model.k()
        )));
    }
    Ok(k - 1)
}

fn poisson(a: PoissonArgs) -> Result<()> {
    let model = a.model.load()?;
    let layout = model.build_layout(a.scale.n)?;
    let ell = a.scale.ell(&model)?;
    let (k1, k2) = (
        one_based(a.from_cluster, &model)?,
        one_based(a.to_cluster, &model)?,
    );
    let edge = representative_edge(&layout, k1, k2, a.self_loop)?;
    echo_config(
        "poisson",
        &a,
        json!({ "model": model.to_spec(), "n": layout.n(), "ell": ell, "edge": [edge.0 + 1, edge.1 + 1] }),
    )?;
    let report = poisson_check(&model, &layout, ell, edge, a.replicas, a.seed)?;
    let certificate =
        poisson_certificate(&model, &layout, ell, k1, k2, a.self_loop, a.epsilon, a.cap)?;
    if let Some(path) = &a.histogram_out {
        let mut w = std::io::BufWriter::new(fs::File::create(path)?);
        write_value_histogram(&mut w, &report.histogram)?;
    }
    let mut value = serde_json::to_value(&report)?;
    value["certificate"] = serde_json::to_value(certificate)?;
    emit_report(&value, a.out.as_deref())
}

fn estimate(a: EstimateArgs) -> Result<()> {
    let format = match a.format {
        FormatArg::CsvPairs => Format::CsvPairs,
        FormatArg::StateSequence => Format::StateSequence,
    };
    let raw = at(&a.transitions, read_transitions(&a.transitions, format))?;
    let data = preprocess(&raw, a.min_visits, a.drop_self_loops)?;
    echo_config(
        "estimate",
        &a,
        json!({ "states_read": raw.n_states(), "transitions_read": raw.ell(), "states": data.n_states(), "transitions": data.ell() }),
    )?;
    let clustering = at(&a.clustering, read_clustering(&a.clustering))?;
    let est = estimate_parameters(&data, &clustering)?;
    // the model fields come first so the output loads as a model file
    let report = json!({
        "K": est.k(),
        "p": est.p,
        "alpha": est.alpha,
        "lambda": est.lambda,
        "pi": est.pi,
        "n": est.n,
        "ell": est.ell,
    });
    save_json(&a.out, &report)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn compare(a: CompareArgs) -> Result<()> {
    let values = at(&a.spectrum, load_spectrum(&a.spectrum))?;
    let density = at(&a.density, load_density(&a.density))?;
    let density = if density.folded {
        density
    } else {
        density.fold()?
    };
    echo_config(
        "compare",
        &a,
        json!({ "points": values.len(), "law_mass": density.mass() }),
    )?;
    let dist = trim_top(&EmpiricalDistribution::new(values)?, a.trim)?;
    let ks = ks_distance(&dist, law_cdf(&density));
    let report =
        json!({ "ks": ks, "trim": a.trim, "points": dist.len(), "law_mass": density.mass() });
    emit_report(&report, a.out.as_deref())
}
