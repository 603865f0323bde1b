//! Private release of pairwise cosine similarities.
//!
//! The target is the Gram matrix `VVᵀ` of a set of unit vectors. It lies in
//! `{X ⪰ 0, X_ii ≤ 1}`, a set with small Gaussian complexity, so noise plus
//! projection beats noise plus entry clipping by roughly a `√n` factor.
//!
//! `params.sensitivity` bounds the unsquared Frobenius distance
//! `‖VVᵀ − V′V′ᵀ‖_F` between adjacent inputs (see [`gram_sensitivity`]).

use serde::{Deserialize, Serialize};

use crate::engine::{
    alternate, dykstra_reference, EngineConfig, DYKSTRA_MAX_ITER, DYKSTRA_TOL,
};
use crate::error::{Error, Result};
use crate::matrix::SymMatrix;
use crate::mechanism::{calibrate_sigma, NoiseSource, PrivacyParams, RandomStream, StreamNoise};
use crate::projections::{project_entry_clip, ConvexSet};

/// Allowed deviation of a row norm from 1.
pub const UNIT_NORM_TOL: f64 = 1e-6;

/// `count` unit vectors of dimension `dim`, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct UnitVectorSet {
    count: usize,
    dim: usize,
    data: Vec<f64>,
}

impl UnitVectorSet {
    /// Rejects ragged input, non-finite values and rows whose norm is off by
    /// more than [`UNIT_NORM_TOL`]. Rows are never renormalised.
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let count = rows.len();
        if count == 0 {
            return Err(Error::InvalidInput("no vectors".into()));
        }
        let dim = rows[0].len();
        if dim == 0 {
            return Err(Error::InvalidRow {
                row: 0,
                message: "empty vector".into(),
            });
        }
        let mut data = Vec::with_capacity(count * dim);
        for (row, values) in rows.into_iter().enumerate() {
            if values.len() != dim {
                return Err(Error::InvalidRow {
                    row,
                    message: format!("has {} values, expected {dim}", values.len()),
                });
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidRow {
                    row,
                    message: "non-finite value".into(),
                });
            }
            let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::InvalidRow {
                    row,
                    message: format!("norm {norm} is not within {UNIT_NORM_TOL} of 1"),
                });
            }
            data.extend(values);
        }
        Ok(UnitVectorSet { count, dim, data })
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityMode {
    /// Projection onto `{X ⪰ 0, X_ii ≤ 1}`.
    ExactSet,
    /// Averaged projections onto `{X ⪰ 0, ‖X‖_F ≤ n}` and `{|X_ij| ≤ 1}`.
    Practical,
}

#[derive(Clone, Debug)]
pub struct SimilarityRelease {
    pub matrix: SymMatrix,
    pub params: PrivacyParams,
    pub mode: SimilarityMode,
    pub iterations: usize,
    pub sigma: f64,
    /// Per-set residuals of `matrix`, in the order of [`release_sets`].
    pub final_residuals: Vec<f64>,
    /// Dykstra iterations spent polishing, when a polish ran.
    pub polish_iterations: Option<usize>,
}

/// `VVᵀ`.
pub fn gram(v: &UnitVectorSet) -> SymMatrix {
    SymMatrix::from_fn(v.count, |i, j| {
        v.row(i).iter().zip(v.row(j)).map(|(a, b)| a * b).sum()
    })
}

/// `‖VVᵀ − V′V′ᵀ‖_F`, the quantity `params.sensitivity` must bound for every
/// adjacent pair.
pub fn gram_sensitivity(v: &UnitVectorSet, other: &UnitVectorSet) -> Result<f64> {
    if v.count != other.count || v.dim != other.dim {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} vs {}x{}",
            v.count, v.dim, other.count, other.dim
        )));
    }
    Ok(gram(v).distance(&gram(other)))
}

/// The projection pieces used by each mode.
pub fn release_sets(mode: SimilarityMode, count: usize) -> Vec<ConvexSet> {
    match mode {
        // PSD matrices have a nonnegative diagonal, so clipping it to [0, 1]
        // leaves the intersection unchanged.
        SimilarityMode::ExactSet => vec![ConvexSet::PsdCone, ConvexSet::DiagonalClip(1.0)],
        SimilarityMode::Practical => {
            vec![ConvexSet::PsdBall(count as f64), ConvexSet::EntryClip(1.0)]
        }
    }
}

pub fn release_cosine_exact(
    v: &UnitVectorSet,
    params: &PrivacyParams,
    config: &EngineConfig,
) -> Result<SimilarityRelease> {
    release_with(v, params, config, SimilarityMode::ExactSet, &mut StreamNoise::new(config.stream))
}

pub fn release_cosine_practical(
    v: &UnitVectorSet,
    params: &PrivacyParams,
    config: &EngineConfig,
) -> Result<SimilarityRelease> {
    release_with(v, params, config, SimilarityMode::Practical, &mut StreamNoise::new(config.stream))
}

/// Shared release path. In exact mode, unless a trajectory is being recorded,
/// the averaged iterate is finished with a Dykstra projection onto the
/// intersection so the output is a member of the set.
pub fn release_with<N: NoiseSource>(
    v: &UnitVectorSet,
    params: &PrivacyParams,
    config: &EngineConfig,
    mode: SimilarityMode,
    noise: &mut N,
) -> Result<SimilarityRelease> {
    if config.iterations == 0 {
        return Err(Error::InvalidInput("iterations must be >= 1".into()));
    }
    let target = gram(v);
    let sets = release_sets(mode, v.count);
    let spec = calibrate_sigma(params);
    let start = &target + &noise.symmetric(v.count, spec);
    let (mut point, mut final_residuals, _) = alternate(&start, &sets, config.iterations, false)?;

    let mut polish_iterations = None;
    if mode == SimilarityMode::ExactSet && !config.record_trajectory {
        let polished = dykstra_reference(&point, &sets, DYKSTRA_MAX_ITER, DYKSTRA_TOL)?;
        polish_iterations = Some(polished.iterations);
        point = polished.point;
        final_residuals = sets
            .iter()
            .map(|s| Ok(point.distance(&s.project(&point)?)))
            .collect::<Result<_>>()?;
    }

    Ok(SimilarityRelease {
        matrix: point,
        params: *params,
        mode,
        iterations: config.iterations,
        sigma: spec.sigma(),
        final_residuals,
        polish_iterations,
    })
}

/// The plain Gaussian mechanism followed by clipping entries to `[-1, 1]`.
/// With the same stream it uses the same noise matrix as the releases.
pub fn gaussian_clip_baseline(
    v: &UnitVectorSet,
    params: &PrivacyParams,
    stream: RandomStream,
) -> SymMatrix {
    let spec = calibrate_sigma(params);
    let noisy = &gram(v) + &StreamNoise::new(stream).symmetric(v.count, spec);
    project_entry_clip(&noisy, 1.0)
}

/// `‖VVᵀ − X̂‖_F²`.
pub fn squared_error(v: &UnitVectorSet, released: &SymMatrix) -> f64 {
    gram(v).distance(released).powi(2)
}
