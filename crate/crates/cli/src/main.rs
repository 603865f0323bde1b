use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pnp_core::bench::{
    complexity_box_closed_form, complexity_monte_carlo, scaling_experiment_cosine,
    scaling_experiment_marginals, stability_experiment, stability_experiment_vector_box, BoxShape,
    ComplexityTarget, MarginalGrid, NoiseModel, ScalingReport,
};
use pnp_core::engine::EngineConfig;
use pnp_core::io::{
    read_dataset, read_unit_vectors, write_json, write_matrix_csv, write_tensor_bin, SimilaritySidecar,
    TensorSidecar,
};
use pnp_core::marginals::{
    avg_query_sq_error, parity_tensor, release_even_k_with, release_gaussian_only_with,
    release_threshold_baseline_with, MarginalRelease, TensorScale,
};
use pnp_core::mechanism::{sample_symmetric_gaussian, CountingNoise, StreamNoise};
use pnp_core::similarity::{release_with, SimilarityMode};
use pnp_core::{ConvexSet, Error, NoiseSpec, PrivacyParams, RandomStream, SymMatrix};
use serde_json::json;

#[derive(Parser)]
#[command(name = "pnp", version, about = "Differentially private matrix and tensor releases by perturb-and-project")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Release pairwise cosine similarities of unit vectors.
    Similarity(SimilarityArgs),
    /// Release a k-way parity-marginal tensor of a binary dataset.
    Marginals(MarginalArgs),
    /// Run a validation experiment.
    Bench {
        #[command(subcommand)]
        experiment: Experiment,
    },
    /// Estimate the Gaussian complexity of a set.
    Complexity(ComplexityArgs),
}

#[derive(Args)]
struct Privacy {
    #[arg(long)]
    epsilon: f64,
    #[arg(long)]
    delta: f64,
}

#[derive(Args)]
struct SimilarityArgs {
    #[arg(long)]
    input: PathBuf,
    /// Skip a header row in the input.
    #[arg(long)]
    header: bool,
    #[command(flatten)]
    privacy: Privacy,
    /// Bound on the Frobenius change of the Gram matrix between neighbours.
    #[arg(long, default_value_t = 1.0)]
    sensitivity: f64,
    #[arg(long, value_enum, default_value_t = Mode::Exact)]
    mode: Mode,
    /// Averaged-projection iterations (default ceil(12·log2 n)).
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    seed: u64,
    /// Released matrix CSV; the sidecar goes to `<out>.json`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Exact,
    Practical,
}

#[derive(Args)]
struct MarginalArgs {
    #[arg(long)]
    input: PathBuf,
    /// First row names the columns; a `count` column holds multiplicities.
    #[arg(long)]
    header: bool,
    #[arg(long)]
    k: usize,
    #[arg(long, value_enum)]
    method: Method,
    /// Maximum nonzeros per record.
    #[arg(long)]
    sparsity: Option<usize>,
    #[command(flatten)]
    privacy: Privacy,
    #[arg(long)]
    seed: u64,
    /// Tensor as little-endian f64; the sidecar goes to `<out>.json`.
    #[arg(long)]
    out: PathBuf,
    /// Print the average query-wise squared error against the true tensor.
    #[arg(long)]
    report_error: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    EvenFlatten,
    Threshold,
    Gaussian,
}

#[derive(Args)]
struct ReportOut {
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Record wall-clock time in the report (makes it non-reproducible).
    #[arg(long)]
    timing: bool,
}

#[derive(Subcommand)]
enum Experiment {
    /// Error of the exact cosine release and the noise+clip baseline against n.
    CosineScaling {
        #[arg(long, value_delimiter = ',', default_values_t = [16usize, 32, 64, 128])]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 30)]
        trials: usize,
        #[arg(long, default_value_t = 1.0)]
        epsilon: f64,
        #[arg(long, default_value_t = 1e-6)]
        delta: f64,
        #[arg(long, default_value_t = 1.0)]
        sensitivity: f64,
        #[arg(long)]
        seed: u64,
        /// Per-trial errors as CSV.
        #[arg(long)]
        raw_csv: Option<PathBuf>,
        #[command(flatten)]
        report: ReportOut,
    },
    /// Marginal release error for the even-k, Gaussian and threshold methods.
    MarginalScaling {
        #[arg(long, value_delimiter = ',', default_values_t = [8usize, 16, 32])]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 2)]
        k: usize,
        #[arg(long, default_value_t = 100)]
        records: usize,
        #[arg(long)]
        sparsity: Option<usize>,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value_t = 1.0)]
        epsilon: f64,
        #[arg(long, default_value_t = 1e-6)]
        delta: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        raw_csv: Option<PathBuf>,
        #[command(flatten)]
        report: ReportOut,
    },
    /// Mean squared projection displacement under unit noise against (4/3)·G.
    Stability {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        #[arg(long)]
        seed: u64,
        /// Use the vector box [-1,1]^n instead of the symmetric-matrix box.
        #[arg(long)]
        vector: bool,
        /// Centre point: zero, or a random one drawn from the seed.
        #[arg(long, value_enum, default_value_t = Anchor::Zero)]
        anchor: Anchor,
        #[command(flatten)]
        report: ReportOut,
    },
    /// Same as the top-level `complexity` command.
    Complexity(ComplexityArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Anchor {
    Zero,
    Random,
}

#[derive(Args)]
struct ComplexityArgs {
    #[arg(long, value_enum)]
    set: SetKind,
    #[arg(long)]
    n: usize,
    /// Box bound or ball/trace radius.
    #[arg(long, default_value_t = 1.0)]
    radius: f64,
    #[arg(long, value_enum, default_value_t = Noise::Symmetric)]
    noise: Noise,
    #[arg(long, default_value_t = 10_000)]
    trials: usize,
    #[arg(long)]
    seed: u64,
    #[command(flatten)]
    report: ReportOut,
}

#[derive(Clone, Copy, ValueEnum)]
enum SetKind {
    VectorBox,
    Box,
    FrobeniusBall,
    PsdTrace,
    PsdBall,
}

#[derive(Clone, Copy, ValueEnum)]
enum Noise {
    Symmetric,
    Dense,
}

/// Library errors, plus failures that happen in the front end itself.
enum Failure {
    Core(Error),
    Usage(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Core(Error::Io(e))
    }
}

type Outcome = Result<(), Failure>;

fn sidecar_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn emit_json<T: serde::Serialize>(value: &T, out: &Option<PathBuf>) -> Outcome {
    match out {
        Some(path) => write_json(File::create(path)?, value)?,
        None => write_json(std::io::stdout().lock(), value)?,
    }
    Ok(())
}

fn run_similarity(a: SimilarityArgs) -> Outcome {
    let params = PrivacyParams::new(a.privacy.epsilon, a.privacy.delta, a.sensitivity)?;
    if a.iters == Some(0) {
        return Err(Failure::Usage("--iters must be at least 1".into()));
    }
    let v = read_unit_vectors(&a.input, a.header)?;
    let stream = RandomStream::new(a.seed);
    let config = match a.iters {
        Some(t) => EngineConfig::new(t, stream)?,
        None => EngineConfig::for_order(v.count(), stream),
    };
    let mode = match a.mode {
        Mode::Exact => SimilarityMode::ExactSet,
        Mode::Practical => SimilarityMode::Practical,
    };
    let mut noise = CountingNoise::new(StreamNoise::new(stream));
    let release = release_with(&v, &params, &config, mode, &mut noise)?;
    write_matrix_csv(File::create(&a.out)?, &release.matrix)?;
    let sidecar = SimilaritySidecar {
        count: v.count(),
        dim: v.dim(),
        mode,
        epsilon: params.epsilon(),
        delta: params.delta(),
        sensitivity: params.sensitivity(),
        sigma: release.sigma,
        seed: a.seed,
        iterations: release.iterations,
        polish_iterations: release.polish_iterations,
        final_residuals: release.final_residuals,
        noise_draws: Some(noise.draws()),
    };
    write_json(File::create(sidecar_path(&a.out))?, &sidecar)?;
    Ok(())
}

fn run_marginals(a: MarginalArgs) -> Outcome {
    // Δ is derived per method; the placeholder only carries ε and δ.
    let params = PrivacyParams::new(a.privacy.epsilon, a.privacy.delta, 1.0)?;
    if a.k == 0 {
        return Err(Failure::Usage("--k must be at least 1".into()));
    }
    match a.method {
        Method::EvenFlatten if !a.k.is_multiple_of(2) => return Err(Error::OddOrder(a.k).into()),
        Method::Threshold if a.sparsity.is_none() => {
            return Err(Failure::Usage(
                "method threshold needs --sparsity (maximum nonzeros per record)".into(),
            ))
        }
        _ => {}
    }
    let data = read_dataset(&a.input, a.header, a.sparsity)?;
    let mut noise = CountingNoise::new(StreamNoise::new(RandomStream::new(a.seed)));
    let release: MarginalRelease = match a.method {
        Method::EvenFlatten => release_even_k_with(&data, a.k, &params, &mut noise)?,
        Method::Threshold => release_threshold_baseline_with(&data, a.k, a.sparsity.unwrap(), &params, &mut noise)?,
        Method::Gaussian => release_gaussian_only_with(&data, a.k, &params, &mut noise)?,
    };
    write_tensor_bin(File::create(&a.out)?, &release.tensor)?;
    let sidecar = TensorSidecar {
        order: release.tensor.order,
        side: release.tensor.side,
        scale: TensorScale::Identity,
        method: release.method,
        epsilon: release.params.epsilon(),
        delta: release.params.delta(),
        sensitivity: release.params.sensitivity(),
        sigma: release.sigma,
        sigma_raw: release.sigma_raw,
        seed: a.seed,
        noise_draws: Some(noise.draws()),
    };
    write_json(File::create(sidecar_path(&a.out))?, &sidecar)?;
    if a.report_error {
        let truth = parity_tensor(&data, a.k)?;
        println!("avg_query_sq_error {}", avg_query_sq_error(&release, &truth)?);
    }
    Ok(())
}

fn write_raw_csv(path: &Path, report: &ScalingReport) -> Outcome {
    let mut out = std::io::BufWriter::new(File::create(path)?);
    writeln!(out, "method,n,trial,error")?;
    for e in &report.trial_errors {
        writeln!(out, "{},{},{},{}", e.method, e.n, e.trial, e.error)?;
    }
    out.flush()?;
    Ok(())
}

fn finish_report(mut report: ScalingReport, started: Instant, out: &ReportOut, raw: &Option<PathBuf>) -> Outcome {
    if out.timing {
        report.wall_time_s = Some(started.elapsed().as_secs_f64());
    }
    if let Some(path) = raw {
        write_raw_csv(path, &report)?;
    }
    emit_json(&report, &out.out)
}

fn set_for(kind: SetKind, radius: f64) -> Option<ConvexSet> {
    match kind {
        SetKind::VectorBox => None,
        SetKind::Box => Some(ConvexSet::EntryClip(radius)),
        SetKind::FrobeniusBall => Some(ConvexSet::FrobeniusBall(radius)),
        SetKind::PsdTrace => Some(ConvexSet::PsdTrace(radius)),
        SetKind::PsdBall => Some(ConvexSet::PsdBall(radius)),
    }
}

fn run_complexity(a: ComplexityArgs) -> Outcome {
    if a.n == 0 {
        return Err(Failure::Usage("--n must be at least 1".into()));
    }
    let started = Instant::now();
    let target = match set_for(a.set, a.radius) {
        None => ComplexityTarget::VectorBox { dim: a.n, bound: a.radius },
        Some(set) => ComplexityTarget::Matrix {
            set,
            order: a.n,
            noise: match a.noise {
                Noise::Symmetric => NoiseModel::Symmetric,
                Noise::Dense => NoiseModel::Dense,
            },
        },
    };
    let closed_form = match a.set {
        SetKind::VectorBox => Some(a.radius * complexity_box_closed_form(BoxShape::Vector(a.n))),
        SetKind::Box => Some(a.radius * complexity_box_closed_form(BoxShape::SymMatrix(a.n))),
        _ => None,
    };
    let estimate = complexity_monte_carlo(&target, a.trials, RandomStream::new(a.seed))?;
    let report = json!({
        "experiment": "complexity",
        "estimate": estimate,
        "closed_form": closed_form,
        "seed": a.seed,
        "wall_time_s": a.report.timing.then(|| started.elapsed().as_secs_f64()),
    });
    emit_json(&report, &a.report.out)
}

fn run_bench(experiment: Experiment) -> Outcome {
    let started = Instant::now();
    match experiment {
        Experiment::CosineScaling { sizes, trials, epsilon, delta, sensitivity, seed, raw_csv, report } => {
            let params = PrivacyParams::new(epsilon, delta, sensitivity)?;
            let r = scaling_experiment_cosine(&sizes, &params, trials, RandomStream::new(seed))?;
            finish_report(r, started, &report, &raw_csv)
        }
        Experiment::MarginalScaling { sizes, k, records, sparsity, trials, epsilon, delta, seed, raw_csv, report } => {
            let params = PrivacyParams::new(epsilon, delta, 1.0)?;
            let grid = MarginalGrid { sizes, k, records, sparsity };
            let r = scaling_experiment_marginals(&grid, &params, trials, RandomStream::new(seed))?;
            finish_report(r, started, &report, &raw_csv)
        }
        Experiment::Stability { n, trials, seed, vector, anchor, report } => {
            if n == 0 {
                return Err(Failure::Usage("--n must be at least 1".into()));
            }
            let stream = RandomStream::new(seed);
            let anchor_stream = stream.substream(u64::MAX);
            let (estimate, g) = if vector {
                let a = match anchor {
                    Anchor::Zero => vec![0.0; n],
                    Anchor::Random => pnp_core::mechanism::sample_gaussian(n, NoiseSpec::new(1.0)?, anchor_stream),
                };
                (stability_experiment_vector_box(&a, 1.0, trials, stream)?, complexity_box_closed_form(BoxShape::Vector(n)))
            } else {
                let a = match anchor {
                    Anchor::Zero => SymMatrix::zeros(n),
                    Anchor::Random => sample_symmetric_gaussian(n, NoiseSpec::new(1.0)?, anchor_stream),
                };
                (
                    stability_experiment(&ConvexSet::EntryClip(1.0), &a, trials, stream)?,
                    complexity_box_closed_form(BoxShape::SymMatrix(n)),
                )
            };
            let bound = 4.0 / 3.0 * g;
            let value = json!({
                "experiment": "stability",
                "set": if vector { "vector_box" } else { "box" },
                "n": n,
                "anchor": match anchor { Anchor::Zero => "zero", Anchor::Random => "random" },
                "estimate": estimate,
                "complexity": g,
                "bound": bound,
                "within_bound": estimate.mean <= bound + 3.0 * estimate.std_error,
                "seed": seed,
                "wall_time_s": report.timing.then(|| started.elapsed().as_secs_f64()),
            });
            emit_json(&value, &report.out)
        }
        Experiment::Complexity(a) => run_complexity(a),
    }
}

fn configure_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("PP_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| format!("PP_THREADS must be a positive integer, got `{raw}`"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(2);
    }
    let outcome = match cli.command {
        Command::Similarity(a) => run_similarity(a),
        Command::Marginals(a) => run_marginals(a),
        Command::Bench { experiment } => run_bench(experiment),
        Command::Complexity(a) => run_complexity(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}
