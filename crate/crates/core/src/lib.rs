//! Perturb-and-project releases for differential privacy.
//!
//! A release adds calibrated Gaussian noise to the input once, then maps the
//! noisy point onto a convex set known to contain the true answer. Everything
//! after the noise draw is post-processing, so the projection costs no extra
//! privacy budget while it can remove most of the noise.
//!
//! Modules:
//! - [`mechanism`]: privacy parameters, noise calibration, seeded streams.
//! - [`matrix`]: the dense symmetric matrix carrier.
//! - [`projections`]: exact Euclidean projections onto the convex sets.
//! - [`engine`]: one-shot and averaged alternating release engines, plus a
//!   Dykstra reference projector.
//! - [`similarity`]: private pairwise cosine similarities.
//! - [`marginals`]: private k-way marginal (parity) tensors.
//! - [`bench`]: Gaussian-complexity estimators and scaling experiments.
//! - [`io`]: CSV ingestion and release file formats.

pub mod bench;
pub mod engine;
pub mod error;
pub mod io;
pub mod marginals;
pub mod matrix;
pub mod mechanism;
pub mod projections;
pub mod similarity;

pub use error::{Error, Result};
pub use matrix::SymMatrix;
pub use mechanism::{calibrate_sigma, NoiseSpec, PrivacyParams, RandomStream};
pub use projections::ConvexSet;
