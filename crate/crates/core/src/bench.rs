//! Empirical validation harness.
//!
//! Monte Carlo estimators for Gaussian complexity and projection stability,
//! error-scaling experiments for the cosine and marginal releases, and a
//! log-log power-law fit. Trials run in parallel on per-trial sub-streams and
//! are reduced in trial order, so every report is a pure function of its
//! configuration and seed.

use std::f64::consts::PI;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::EngineConfig;
use crate::error::{Error, Result};
use crate::marginals::{
    avg_query_sq_error, parity_tensor, release_even_k, release_gaussian_only,
    release_threshold_baseline, BinaryDataset, BinaryRecord,
};
use crate::matrix::SymMatrix;
use crate::mechanism::{sample_gaussian, sample_symmetric_gaussian, NoiseSpec, PrivacyParams, RandomStream};
use crate::projections::ConvexSet;
use crate::similarity::{gaussian_clip_baseline, release_cosine_exact, squared_error, UnitVectorSet};

/// `E|g|` for a standard normal `g`.
pub fn mean_abs_normal() -> f64 {
    (2.0 / PI).sqrt()
}

/// How the standard Gaussian `W` of a complexity estimate is drawn.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseModel {
    /// Symmetric: i.i.d. unit entries on and above the diagonal, mirrored.
    /// This is the noise the release engines add.
    Symmetric,
    /// All `n²` entries i.i.d.; the set is viewed inside `R^{n×n}`.
    Dense,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoxShape {
    /// `[-1, 1]^n`.
    Vector(usize),
    /// `{X ∈ Sym(n) : |X_ij| ≤ 1}`.
    SymMatrix(usize),
}

/// Closed-form Gaussian complexity of the unit box.
///
/// For the vector box this is `n·√(2/π)`. For the matrix box the supremum of
/// `⟨X, W⟩` is `Σ_ij |W_ij|`, whose mean is `n²·√(2/π)` under either noise
/// model: a mirrored off-diagonal coordinate contributes through both of its
/// entries.
pub fn complexity_box_closed_form(shape: BoxShape) -> f64 {
    match shape {
        BoxShape::Vector(n) => n as f64 * mean_abs_normal(),
        BoxShape::SymMatrix(n) => (n * n) as f64 * mean_abs_normal(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "ambient")]
pub enum ComplexityTarget {
    VectorBox { dim: usize, bound: f64 },
    Matrix { set: ConvexSet, order: usize, noise: NoiseModel },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexityEstimate {
    pub target: ComplexityTarget,
    pub value: f64,
    pub std_error: f64,
    pub trials: usize,
}

/// Sample mean and standard error, summed in index order.
fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn check_trials(trials: usize) -> Result<()> {
    if trials < 2 {
        return Err(Error::InvalidInput("at least 2 trials are needed".into()));
    }
    Ok(())
}

/// `sup_{X ∈ S} ⟨X, W⟩` for a symmetric `W`.
fn support_symmetric(set: &ConvexSet, w: &SymMatrix) -> Result<f64> {
    match set {
        ConvexSet::EntryClip(b) => Ok(b * w.as_slice().iter().map(|v| v.abs()).sum::<f64>()),
        ConvexSet::FrobeniusBall(r) => Ok(r * w.frobenius_norm()),
        ConvexSet::PsdTrace(tau) => Ok(tau * w.max_eigenvalue()?.max(0.0)),
        ConvexSet::PsdBall(r) => {
            let s = w.spectrum()?;
            Ok(r * s.values.iter().map(|l| l.max(0.0).powi(2)).sum::<f64>().sqrt())
        }
        other => Err(Error::UnsupportedSet(format!(
            "{other:?} is unbounded or has no computable support function"
        ))),
    }
}

/// Same, for a dense `W` stored row-major.
fn support_dense(set: &ConvexSet, order: usize, w: &[f64]) -> Result<f64> {
    match set {
        ConvexSet::EntryClip(b) => Ok(b * w.iter().map(|v| v.abs()).sum::<f64>()),
        ConvexSet::FrobeniusBall(r) => Ok(r * w.iter().map(|v| v * v).sum::<f64>().sqrt()),
        // Symmetric members only see the symmetric part of W.
        ConvexSet::PsdTrace(_) | ConvexSet::PsdBall(_) => {
            let sym = SymMatrix::from_fn(order, |i, j| 0.5 * (w[i * order + j] + w[j * order + i]));
            support_symmetric(set, &sym)
        }
        other => Err(Error::UnsupportedSet(format!(
            "{other:?} is unbounded or has no computable support function"
        ))),
    }
}

/// Monte Carlo estimate of `E sup_{X ∈ S} ⟨X, W⟩`.
pub fn complexity_monte_carlo(
    target: &ComplexityTarget,
    trials: usize,
    stream: RandomStream,
) -> Result<ComplexityEstimate> {
    check_trials(trials)?;
    let unit = NoiseSpec::new(1.0)?;
    // Fail fast on unsupported sets before spawning trials.
    if let ComplexityTarget::Matrix { set, .. } = target {
        set.validate()?;
        support_symmetric(set, &SymMatrix::zeros(1))?;
    }
    let values: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let s = stream.substream(trial as u64);
            match target {
                ComplexityTarget::VectorBox { dim, bound } => {
                    Ok(bound * sample_gaussian(*dim, unit, s).iter().map(|v| v.abs()).sum::<f64>())
                }
                ComplexityTarget::Matrix { set, order, noise } => match noise {
                    NoiseModel::Symmetric => support_symmetric(set, &sample_symmetric_gaussian(*order, unit, s)),
                    NoiseModel::Dense => support_dense(set, *order, &sample_gaussian(order * order, unit, s)),
                },
            }
        })
        .collect::<Result<_>>()?;
    let (value, std_error) = mean_and_se(&values);
    Ok(ComplexityEstimate {
        target: target.clone(),
        value,
        std_error,
        trials,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityEstimate {
    /// Estimate of `E‖Π(A+W) − Π(A)‖²`.
    pub mean: f64,
    pub std_error: f64,
    pub trials: usize,
}

/// Monte Carlo `E‖Π_S(A+W) − Π_S(A)‖_F²` with unit symmetric noise `W`.
pub fn stability_experiment(
    set: &ConvexSet,
    a: &SymMatrix,
    trials: usize,
    stream: RandomStream,
) -> Result<StabilityEstimate> {
    check_trials(trials)?;
    if !set.is_closed_form() {
        return Err(Error::UnsupportedSet("stability needs a closed-form projection".into()));
    }
    let unit = NoiseSpec::new(1.0)?;
    let anchor = set.project(a)?;
    let values: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let w = sample_symmetric_gaussian(a.order(), unit, stream.substream(trial as u64));
            Ok(set.project(&(a + &w))?.distance(&anchor).powi(2))
        })
        .collect::<Result<_>>()?;
    let (mean, std_error) = mean_and_se(&values);
    Ok(StabilityEstimate { mean, std_error, trials })
}

/// The same estimate for the vector box `[-bound, bound]^n`.
pub fn stability_experiment_vector_box(
    a: &[f64],
    bound: f64,
    trials: usize,
    stream: RandomStream,
) -> Result<StabilityEstimate> {
    check_trials(trials)?;
    if bound.is_nan() || bound <= 0.0 {
        return Err(Error::InvalidInput("box bound must be > 0".into()));
    }
    let unit = NoiseSpec::new(1.0)?;
    let clip = |v: f64| v.clamp(-bound, bound);
    let values: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let w = sample_gaussian(a.len(), unit, stream.substream(trial as u64));
            a.iter()
                .zip(&w)
                .map(|(x, z)| (clip(x + z) - clip(*x)).powi(2))
                .sum()
        })
        .collect();
    let (mean, std_error) = mean_and_se(&values);
    Ok(StabilityEstimate { mean, std_error, trials })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub exponent: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Least squares of `ln y` on `ln x`.
pub fn fit_power_law(points: &[(f64, f64)]) -> Result<PowerLawFit> {
    if points.len() < 2 {
        return Err(Error::DegenerateFit("need at least two points".into()));
    }
    if points.iter().any(|&(x, y)| !(x > 0.0 && y > 0.0)) {
        return Err(Error::DegenerateFit("coordinates must be positive".into()));
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::DegenerateFit("all x values are equal".into()));
    }
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let exponent = sxy / sxx;
    let intercept = my - exponent * mx;
    let ss_tot: f64 = logs.iter().map(|p| (p.1 - my).powi(2)).sum();
    let ss_res: f64 = logs
        .iter()
        .map(|p| (p.1 - intercept - exponent * p.0).powi(2))
        .sum();
    let r2 = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok(PowerLawFit { exponent, intercept, r2 })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub n: usize,
    pub mean_sq_error: f64,
    pub std_error: f64,
    pub trials: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingSeries {
    pub method: String,
    pub points: Vec<ScalingPoint>,
    pub fitted_exponent: Option<f64>,
    pub fit_r2: Option<f64>,
}

impl ScalingSeries {
    fn from_points(method: &str, points: Vec<ScalingPoint>) -> Self {
        let xy: Vec<(f64, f64)> = points.iter().map(|p| (p.n as f64, p.mean_sq_error)).collect();
        let fit = fit_power_law(&xy).ok();
        ScalingSeries {
            method: method.to_string(),
            points,
            fitted_exponent: fit.map(|f| f.exponent),
            fit_r2: fit.map(|f| f.r2),
        }
    }
}

/// How often the primary method was at least as accurate as a baseline on
/// the same trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedWins {
    pub n: usize,
    pub baseline: String,
    pub wins: usize,
    pub trials: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialError {
    pub method: String,
    pub n: usize,
    pub trial: usize,
    pub error: f64,
}

/// Result of a scaling experiment. `points`/`fitted_exponent`/`fit_r2`
/// describe the primary method; `baselines` hold the comparison curves.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub experiment: String,
    pub config: serde_json::Value,
    pub points: Vec<ScalingPoint>,
    pub fitted_exponent: Option<f64>,
    pub fit_r2: Option<f64>,
    pub baselines: Vec<ScalingSeries>,
    pub paired_wins: Vec<PairedWins>,
    pub seed: u64,
    /// Left empty by the library so reports stay byte-deterministic.
    pub wall_time_s: Option<f64>,
    #[serde(skip)]
    pub trial_errors: Vec<TrialError>,
}

impl ScalingReport {
    pub fn series(&self, method: &str) -> Option<&ScalingSeries> {
        self.baselines.iter().find(|s| s.method == method)
    }
}

/// `count` rows drawn uniformly from the unit sphere in `R^dim`.
pub fn random_unit_vectors(count: usize, dim: usize, stream: RandomStream) -> Result<UnitVectorSet> {
    let mut rng = stream.rng();
    let rows = (0..count)
        .map(|_| loop {
            let g: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                break g.into_iter().map(|v| v / norm).collect();
            }
        })
        .collect();
    UnitVectorSet::new(rows)
}

/// `records` users with features set independently with probability 1/2,
/// or, when `sparsity = Some(t)`, with exactly `t` features chosen uniformly.
pub fn random_dataset(
    n_features: usize,
    records: usize,
    sparsity: Option<usize>,
    stream: RandomStream,
) -> Result<BinaryDataset> {
    let mut rng = stream.rng();
    let recs = (0..records)
        .map(|_| {
            let support = match sparsity {
                Some(t) => {
                    let mut s = sample(&mut rng, n_features, t.min(n_features)).into_vec();
                    s.sort_unstable();
                    s
                }
                None => (0..n_features).filter(|_| rng.random_bool(0.5)).collect(),
            };
            BinaryRecord {
                support,
                multiplicity: 1,
            }
        })
        .collect();
    BinaryDataset::from_records(n_features, recs, sparsity)
}

fn collect_series(sizes: &[usize], per_size: &[Vec<f64>]) -> Vec<ScalingPoint> {
    sizes
        .iter()
        .zip(per_size)
        .map(|(&n, errs)| {
            let (mean, se) = mean_and_se(errs);
            ScalingPoint {
                n,
                mean_sq_error: mean,
                std_error: se,
                trials: errs.len(),
            }
        })
        .collect()
}

fn wins(n: usize, baseline: &str, primary: &[f64], other: &[f64]) -> PairedWins {
    PairedWins {
        n,
        baseline: baseline.to_string(),
        wins: primary.iter().zip(other).filter(|(p, o)| p <= o).count(),
        trials: primary.len(),
    }
}

fn check_sizes(sizes: &[usize], max: usize) -> Result<()> {
    if sizes.is_empty() || sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidInput("sizes must be nonempty and strictly ascending".into()));
    }
    if sizes[0] == 0 || *sizes.last().unwrap() > max {
        return Err(Error::InvalidInput(format!("sizes must lie in [1, {max}]")));
    }
    Ok(())
}

/// Largest `n` accepted by [`scaling_experiment_cosine`].
pub const MAX_COSINE_SIZE: usize = 256;

/// Mean squared error `‖VVᵀ − X̂‖_F²` of the exact-set release and of the
/// noise-plus-clip baseline for each `n`. Each trial draws `n` uniform unit
/// vectors in `R^n`; both methods share the trial's noise draw.
pub fn scaling_experiment_cosine(
    sizes: &[usize],
    params: &PrivacyParams,
    trials: usize,
    stream: RandomStream,
) -> Result<ScalingReport> {
    check_sizes(sizes, MAX_COSINE_SIZE)?;
    check_trials(trials)?;
    let mut exact = Vec::new();
    let mut clip = Vec::new();
    let mut trial_errors = Vec::new();
    let mut paired = Vec::new();
    for &n in sizes {
        let size_stream = stream.substream(n as u64);
        let results: Vec<(f64, f64)> = (0..trials)
            .into_par_iter()
            .map(|trial| {
                let ts = size_stream.substream(trial as u64);
                let v = random_unit_vectors(n, n, ts.substream(0))?;
                let config = EngineConfig::for_order(n, ts.substream(1));
                let released = release_cosine_exact(&v, params, &config)?;
                let baseline = gaussian_clip_baseline(&v, params, config.stream);
                Ok((squared_error(&v, &released.matrix), squared_error(&v, &baseline)))
            })
            .collect::<Result<_>>()?;
        let (e, c): (Vec<f64>, Vec<f64>) = results.into_iter().unzip();
        for (trial, (a, b)) in e.iter().zip(&c).enumerate() {
            trial_errors.push(TrialError { method: "exact".into(), n, trial, error: *a });
            trial_errors.push(TrialError { method: "gaussian_clip".into(), n, trial, error: *b });
        }
        paired.push(wins(n, "gaussian_clip", &e, &c));
        exact.push(e);
        clip.push(c);
    }
    let primary = ScalingSeries::from_points("exact", collect_series(sizes, &exact));
    let baseline = ScalingSeries::from_points("gaussian_clip", collect_series(sizes, &clip));
    Ok(ScalingReport {
        experiment: "cosine-scaling".into(),
        config: serde_json::json!({
            "sizes": sizes,
            "trials": trials,
            "epsilon": params.epsilon(),
            "delta": params.delta(),
            "sensitivity": params.sensitivity(),
            "vector_dim": "n",
            "vector_distribution": "uniform_sphere",
            "exponent_band_primary": [1.2, 1.8],
            "exponent_band_baseline": [1.7, 2.3],
        }),
        points: primary.points,
        fitted_exponent: primary.fitted_exponent,
        fit_r2: primary.fit_r2,
        baselines: vec![baseline],
        paired_wins: paired,
        seed: stream.seed,
        wall_time_s: None,
        trial_errors,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginalGrid {
    pub sizes: Vec<usize>,
    pub k: usize,
    pub records: usize,
    /// Declared sparsity; enables the threshold baseline.
    pub sparsity: Option<usize>,
}

/// Average query-wise squared error of the even-k release against the
/// Gaussian-only release (and the threshold baseline when sparsity is
/// declared) over a grid of feature counts. All methods share each trial's
/// dataset and noise stream.
pub fn scaling_experiment_marginals(
    grid: &MarginalGrid,
    params: &PrivacyParams,
    trials: usize,
    stream: RandomStream,
) -> Result<ScalingReport> {
    if grid.k == 0 || !grid.k.is_multiple_of(2) {
        return Err(Error::OddOrder(grid.k));
    }
    check_sizes(&grid.sizes, usize::MAX)?;
    check_trials(trials)?;
    if grid.records == 0 {
        return Err(Error::InvalidInput("records must be >= 1".into()));
    }
    let mut even = Vec::new();
    let mut gauss = Vec::new();
    let mut thresh = Vec::new();
    let mut paired = Vec::new();
    let mut trial_errors = Vec::new();
    for &n in &grid.sizes {
        let size_stream = stream.substream(n as u64);
        let results: Vec<(f64, f64, Option<f64>)> = (0..trials)
            .into_par_iter()
            .map(|trial| {
                let ts = size_stream.substream(trial as u64);
                let data = random_dataset(n, grid.records, grid.sparsity, ts.substream(0))?;
                let truth = parity_tensor(&data, grid.k)?;
                let noise = ts.substream(1);
                let e = avg_query_sq_error(&release_even_k(&data, grid.k, params, noise)?, &truth)?;
                let g = avg_query_sq_error(&release_gaussian_only(&data, grid.k, params, noise)?, &truth)?;
                let t = match grid.sparsity {
                    Some(t) => Some(avg_query_sq_error(
                        &release_threshold_baseline(&data, grid.k, t, params, noise)?,
                        &truth,
                    )?),
                    None => None,
                };
                Ok((e, g, t))
            })
            .collect::<Result<_>>()?;
        let e: Vec<f64> = results.iter().map(|r| r.0).collect();
        let g: Vec<f64> = results.iter().map(|r| r.1).collect();
        let t: Vec<f64> = results.iter().filter_map(|r| r.2).collect();
        for trial in 0..trials {
            trial_errors.push(TrialError { method: "even-flatten".into(), n, trial, error: e[trial] });
            trial_errors.push(TrialError { method: "gaussian".into(), n, trial, error: g[trial] });
            if let Some(&x) = t.get(trial) {
                trial_errors.push(TrialError { method: "threshold".into(), n, trial, error: x });
            }
        }
        paired.push(wins(n, "gaussian", &e, &g));
        if !t.is_empty() {
            paired.push(wins(n, "threshold", &e, &t));
        }
        even.push(e);
        gauss.push(g);
        thresh.push(t);
    }
    let primary = ScalingSeries::from_points("even-flatten", collect_series(&grid.sizes, &even));
    let mut baselines = vec![ScalingSeries::from_points(
        "gaussian",
        collect_series(&grid.sizes, &gauss),
    )];
    if grid.sparsity.is_some() {
        baselines.push(ScalingSeries::from_points(
            "threshold",
            collect_series(&grid.sizes, &thresh),
        ));
    }
    Ok(ScalingReport {
        experiment: "marginal-scaling".into(),
        config: serde_json::json!({
            "grid": grid,
            "trials": trials,
            "epsilon": params.epsilon(),
            "delta": params.delta(),
            "dataset_distribution": if grid.sparsity.is_some() { "uniform_t_subsets" } else { "bernoulli_half" },
        }),
        points: primary.points,
        fitted_exponent: primary.fitted_exponent,
        fit_r2: primary.fit_r2,
        baselines,
        paired_wins: paired,
        seed: stream.seed,
        wall_time_s: None,
        trial_errors,
    })
}
