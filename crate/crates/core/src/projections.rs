//! Exact Euclidean projections onto the convex sets used by the releases.
//!
//! Every closed-form kind maps a symmetric matrix to the nearest member of its
//! set in Frobenius distance. [`ConvexSet::Intersection`] has no closed form;
//! the release engines handle it by alternating over its parts.

use serde::{Deserialize, Serialize};

use crate::engine::{dykstra_reference, DYKSTRA_MAX_ITER, DYKSTRA_TOL};
use crate::error::{Error, Result};
use crate::matrix::SymMatrix;

/// Frobenius tolerance for fixed-point and membership checks.
pub const TOL_PROJ: f64 = 1e-8;

/// A projection target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "param")]
pub enum ConvexSet {
    /// `{X ⪰ 0}`.
    PsdCone,
    /// `{X : |X_ij| ≤ bound}`.
    EntryClip(f64),
    /// `{X : 0 ≤ X_ii ≤ upper}`, off-diagonal entries free.
    DiagonalClip(f64),
    /// `{X : ‖X‖_F ≤ radius}`.
    FrobeniusBall(f64),
    /// `{X ⪰ 0, Tr X ≤ trace_bound}`.
    PsdTrace(f64),
    /// `{X ⪰ 0, ‖X‖_F ≤ radius}`.
    PsdBall(f64),
    Intersection(Vec<ConvexSet>),
}

impl ConvexSet {
    /// Checks that every parameter is finite and strictly positive.
    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidInput(format!("{name} parameter must be > 0, got {v}")))
            }
        };
        match self {
            ConvexSet::PsdCone => Ok(()),
            ConvexSet::EntryClip(b) => check("entry_clip", *b),
            ConvexSet::DiagonalClip(b) => check("diagonal_clip", *b),
            ConvexSet::FrobeniusBall(r) => check("frobenius_ball", *r),
            ConvexSet::PsdTrace(t) => check("psd_trace", *t),
            ConvexSet::PsdBall(r) => check("psd_ball", *r),
            ConvexSet::Intersection(parts) => {
                if parts.is_empty() {
                    return Err(Error::InvalidInput("empty intersection".into()));
                }
                parts.iter().try_for_each(ConvexSet::validate)
            }
        }
    }

    pub fn is_closed_form(&self) -> bool {
        !matches!(self, ConvexSet::Intersection(_))
    }

    /// Exact projection for closed-form kinds.
    pub fn project(&self, m: &SymMatrix) -> Result<SymMatrix> {
        self.validate()?;
        match self {
            ConvexSet::PsdCone => project_psd(m),
            ConvexSet::EntryClip(b) => Ok(project_entry_clip(m, *b)),
            ConvexSet::DiagonalClip(b) => Ok(project_diagonal_clip(m, *b)),
            ConvexSet::FrobeniusBall(r) => Ok(project_frobenius_ball(m, *r)),
            ConvexSet::PsdTrace(t) => project_psd_trace(m, *t),
            ConvexSet::PsdBall(r) => project_psd_ball(m, *r),
            ConvexSet::Intersection(_) => Err(Error::UnsupportedSet(
                "intersection has no closed-form projection".into(),
            )),
        }
    }

    /// Projection together with the distance moved.
    pub fn project_detailed(&self, m: &SymMatrix) -> Result<ProjectionResult> {
        match self {
            ConvexSet::Intersection(parts) => {
                let out = dykstra_reference(m, parts, DYKSTRA_MAX_ITER, DYKSTRA_TOL)?;
                Ok(ProjectionResult {
                    residual_before: m.distance(&out.point),
                    point: out.point,
                    iterations_used: out.iterations,
                })
            }
            _ => {
                let point = self.project(m)?;
                Ok(ProjectionResult {
                    residual_before: m.distance(&point),
                    point,
                    iterations_used: 1,
                })
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct ProjectionResult {
    pub point: SymMatrix,
    pub residual_before: f64,
    pub iterations_used: usize,
}

/// `‖M − Π(M)‖_F`. Intersections are projected with the Dykstra reference.
pub fn residual(set: &ConvexSet, m: &SymMatrix) -> Result<f64> {
    Ok(set.project_detailed(m)?.residual_before)
}

/// Zeroes the negative eigenvalues.
pub fn project_psd(m: &SymMatrix) -> Result<SymMatrix> {
    let s = m.spectrum()?;
    // Members come back untouched rather than through a rounding round trip.
    if s.values.iter().all(|&l| l >= 0.0) {
        return Ok(m.clone());
    }
    let clipped: Vec<f64> = s.values.iter().map(|&l| l.max(0.0)).collect();
    Ok(SymMatrix::from_spectrum(&clipped, &s.vectors))
}

pub fn project_entry_clip(m: &SymMatrix, bound: f64) -> SymMatrix {
    m.map(|v| v.clamp(-bound, bound))
}

/// Clamps the diagonal to `[0, upper]`.
pub fn project_diagonal_clip(m: &SymMatrix, upper: f64) -> SymMatrix {
    m.map_diagonal(|v| v.clamp(0.0, upper))
}

pub fn project_frobenius_ball(m: &SymMatrix, radius: f64) -> SymMatrix {
    let norm = m.frobenius_norm();
    if norm <= radius {
        m.clone()
    } else {
        m.scale(radius / norm)
    }
}

/// Projection onto `{λ : λ_i ≥ 0, Σ λ_i ≤ budget}`.
///
/// Coordinates become `max(v_i − θ, 0)`, with `θ = 0` when the nonnegative
/// part already fits the budget and otherwise the unique `θ > 0` making the
/// sum equal to `budget`.
pub fn project_simplex(v: &[f64], budget: f64) -> Vec<f64> {
    let positive_sum: f64 = v.iter().map(|x| x.max(0.0)).sum();
    if positive_sum <= budget {
        return v.iter().map(|x| x.max(0.0)).collect();
    }
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (i, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let candidate = (cumulative - budget) / (i + 1) as f64;
        if u - candidate > 0.0 {
            theta = candidate;
        } else {
            break;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

/// Projection onto `{X ⪰ 0, Tr X ≤ trace_bound}`: the eigenvalues are
/// projected onto the capped simplex.
pub fn project_psd_trace(m: &SymMatrix, trace_bound: f64) -> Result<SymMatrix> {
    let s = m.spectrum()?;
    if s.values.iter().all(|&l| l >= 0.0) && s.values.iter().sum::<f64>() <= trace_bound {
        return Ok(m.clone());
    }
    let projected = project_simplex(&s.values, trace_bound);
    Ok(SymMatrix::from_spectrum(&projected, &s.vectors))
}

/// Projection onto `{X ⪰ 0, ‖X‖_F ≤ radius}`. The ball is centred at the
/// apex of the cone, so projecting onto the cone and then the ball is exact.
pub fn project_psd_ball(m: &SymMatrix, radius: f64) -> Result<SymMatrix> {
    Ok(project_frobenius_ball(&project_psd(m)?, radius))
}
