//! Release engines.
//!
//! [`perturb_and_project`] adds one Gaussian draw and projects onto a set with
//! a closed-form projection. [`perturb_and_alternately_project`] handles sets
//! given as an intersection of closed-form pieces by iterating the uniform
//! average of the piece projections. Both consume their noise source exactly
//! once; every later step is deterministic post-processing.
//!
//! [`dykstra_reference`] computes the exact projection onto an intersection
//! and serves as the test oracle for the averaged scheme.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::SymMatrix;
use crate::mechanism::{calibrate_sigma, NoiseSource, PrivacyParams, RandomStream, StreamNoise};
use crate::projections::ConvexSet;

pub const DYKSTRA_TOL: f64 = 1e-10;
pub const DYKSTRA_MAX_ITER: usize = 100_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub iterations: usize,
    pub stream: RandomStream,
    /// Keep per-iteration residuals in [`ReleaseOutput::trajectory`].
    pub record_trajectory: bool,
}

impl EngineConfig {
    pub fn new(iterations: usize, stream: RandomStream) -> Result<Self> {
        if iterations == 0 {
            return Err(Error::InvalidInput("iterations must be >= 1".into()));
        }
        Ok(EngineConfig {
            iterations,
            stream,
            record_trajectory: false,
        })
    }

    /// [`default_iterations`] for matrices of the given order.
    pub fn for_order(order: usize, stream: RandomStream) -> Self {
        EngineConfig {
            iterations: default_iterations(order),
            stream,
            record_trajectory: false,
        }
    }

    pub fn recording(mut self) -> Self {
        self.record_trajectory = true;
        self
    }
}

/// `ceil(12·log2(n))`, at least 1.
pub fn default_iterations(order: usize) -> usize {
    ((12.0 * (order.max(1) as f64).log2()).ceil() as usize).max(1)
}

#[derive(Clone, Debug)]
pub struct ReleaseOutput {
    pub point: SymMatrix,
    pub sigma_used: f64,
    pub iterations_used: usize,
    /// `‖X − Π_ℓ(X)‖_F` for each set ℓ at the returned point.
    pub final_residuals: Vec<f64>,
    /// Row `i` holds the per-set residuals of iterate `i`; empty unless
    /// recording was requested.
    pub trajectory: Vec<Vec<f64>>,
}

pub fn perturb_and_project(
    a: &SymMatrix,
    set: &ConvexSet,
    params: &PrivacyParams,
    stream: RandomStream,
) -> Result<ReleaseOutput> {
    perturb_and_project_with(a, set, params, &mut StreamNoise::new(stream))
}

pub fn perturb_and_project_with<N: NoiseSource>(
    a: &SymMatrix,
    set: &ConvexSet,
    params: &PrivacyParams,
    noise: &mut N,
) -> Result<ReleaseOutput> {
    if !set.is_closed_form() {
        return Err(Error::UnsupportedSet(
            "intersections need perturb_and_alternately_project".into(),
        ));
    }
    set.validate()?;
    let spec = calibrate_sigma(params);
    let w = noise.symmetric(a.order(), spec);
    let point = set.project(&(a + &w))?;
    let residual = point.distance(&set.project(&point)?);
    Ok(ReleaseOutput {
        point,
        sigma_used: spec.sigma(),
        iterations_used: 1,
        final_residuals: vec![residual],
        trajectory: Vec::new(),
    })
}

fn check_pieces(sets: &[ConvexSet]) -> Result<()> {
    if sets.is_empty() {
        return Err(Error::InvalidInput("at least one set is required".into()));
    }
    for s in sets {
        if !s.is_closed_form() {
            return Err(Error::UnsupportedSet("nested intersections are not supported".into()));
        }
        s.validate()?;
    }
    Ok(())
}

/// Projections of `x` onto each set, computed in parallel, returned in set order.
fn project_all(x: &SymMatrix, sets: &[ConvexSet]) -> Result<Vec<SymMatrix>> {
    sets.par_iter().map(|s| s.project(x)).collect()
}

fn average(points: &[SymMatrix]) -> SymMatrix {
    let mut sum = points[0].clone();
    for p in &points[1..] {
        sum = &sum + p;
    }
    sum.scale(1.0 / points.len() as f64)
}

/// `(1/q)·Σ_ℓ Π_ℓ(X)`, summed in set order.
pub fn averaged_projection_step(x: &SymMatrix, sets: &[ConvexSet]) -> Result<SymMatrix> {
    check_pieces(sets)?;
    Ok(average(&project_all(x, sets)?))
}

/// The deterministic part of the alternating engine: `iterations` averaged
/// projection steps from `start`.
pub fn alternate(
    start: &SymMatrix,
    sets: &[ConvexSet],
    iterations: usize,
    record_trajectory: bool,
) -> Result<(SymMatrix, Vec<f64>, Vec<Vec<f64>>)> {
    check_pieces(sets)?;
    let mut x = start.clone();
    let mut trajectory = Vec::new();
    for _ in 0..iterations {
        let projections = project_all(&x, sets)?;
        if record_trajectory {
            trajectory.push(projections.iter().map(|p| x.distance(p)).collect());
        }
        x = average(&projections);
    }
    let final_residuals: Vec<f64> = project_all(&x, sets)?
        .iter()
        .map(|p| x.distance(p))
        .collect();
    if record_trajectory {
        trajectory.push(final_residuals.clone());
    }
    Ok((x, final_residuals, trajectory))
}

pub fn perturb_and_alternately_project(
    a: &SymMatrix,
    sets: &[ConvexSet],
    params: &PrivacyParams,
    config: &EngineConfig,
) -> Result<ReleaseOutput> {
    perturb_and_alternately_project_with(a, sets, params, config, &mut StreamNoise::new(config.stream))
}

/// `X₀ = A + W`, then `config.iterations` averaged projection steps. The
/// result need not lie exactly in the intersection; the reported residuals
/// say how far off it is.
pub fn perturb_and_alternately_project_with<N: NoiseSource>(
    a: &SymMatrix,
    sets: &[ConvexSet],
    params: &PrivacyParams,
    config: &EngineConfig,
    noise: &mut N,
) -> Result<ReleaseOutput> {
    check_pieces(sets)?;
    if config.iterations == 0 {
        return Err(Error::InvalidInput("iterations must be >= 1".into()));
    }
    let spec = calibrate_sigma(params);
    let w = noise.symmetric(a.order(), spec);
    let start = a + &w;
    let (point, final_residuals, trajectory) =
        alternate(&start, sets, config.iterations, config.record_trajectory)?;
    Ok(ReleaseOutput {
        point,
        sigma_used: spec.sigma(),
        iterations_used: config.iterations,
        final_residuals,
        trajectory,
    })
}

#[derive(Clone, Debug)]
pub struct DykstraOutcome {
    pub point: SymMatrix,
    pub iterations: usize,
    /// False when `max_iter` ran out before successive iterates came within
    /// `tol` of each other.
    pub converged: bool,
}

/// Dykstra's alternating projections with correction terms; the limit is the
/// exact projection of `a` onto the intersection of `sets`.
pub fn dykstra_reference(
    a: &SymMatrix,
    sets: &[ConvexSet],
    max_iter: usize,
    tol: f64,
) -> Result<DykstraOutcome> {
    check_pieces(sets)?;
    let mut x = a.clone();
    let mut corrections = vec![SymMatrix::zeros(a.order()); sets.len()];
    for iter in 1..=max_iter {
        let previous = x.clone();
        for (set, p) in sets.iter().zip(corrections.iter_mut()) {
            let shifted = &x + p;
            let y = set.project(&shifted)?;
            *p = &shifted - &y;
            x = y;
        }
        if x.distance(&previous) < tol {
            return Ok(DykstraOutcome {
                point: x,
                iterations: iter,
                converged: true,
            });
        }
    }
    Ok(DykstraOutcome {
        point: x,
        iterations: max_iter,
        converged: false,
    })
}
