//! Volterra-Laguerre system identification.
//!
//! Finite-memory Volterra models are linear in their coefficients but the
//! coefficient count explodes with memory length and nonlinearity degree.
//! Expanding each kernel over an orthonormal Laguerre basis compresses the
//! parameterization to a handful of coefficients per term while keeping the
//! least-squares structure intact. This crate provides the pieces of that
//! pipeline:
//!
//! * [`laguerre`] — orthonormal Laguerre functions: evaluation, sampled basis
//!   matrices, and projections of signals onto a basis.
//! * [`model`] — model structure declarations, coefficient bookkeeping,
//!   reduced Kronecker products, and parameter-count arithmetic.
//! * [`regressor`] — lag-embedding, design-matrix assembly, least-squares
//!   fitting, and prediction.
//! * [`tuner`] — derivative-free multistart search over basis time scales.
//! * [`simulate`] — synthetic plants, excitation generators, prediction
//!   metrics, and first-difference transforms for integrating outputs.
//! * [`experiment`] — randomized structure-selection studies comparing
//!   per-term parameterizations against uniform ones.
//! * [`io`] — CSV datasets and JSON model/structure/plant files with
//!   deterministic, round-trip-exact float formatting.
//!
//! Time is measured in samples throughout: a basis time scale `a` is in units
//! of inverse samples, and continuous-time quantities only appear inside
//! quadrature helpers that take an explicit step.

pub mod error;
pub mod experiment;
pub mod io;
pub mod laguerre;
mod lstsq;
pub mod model;
pub mod regressor;
pub mod simulate;
pub mod tuner;

pub use error::{Result, VlError};
pub use laguerre::{BasisMatrix, LaguerreSeriesSpec};
pub use model::{CoefficientIndex, FitStats, FittedModel, InputSpec, ModelStructure};
pub use regressor::{Dataset, DesignMatrix};

/// Identifier of the pseudo-random generator used everywhere randomness is
/// needed (noise, excitation, structure sampling, multistart jitter).
/// Recorded in output files so runs can be reproduced byte-for-byte.
pub const RNG_ALGORITHM: &str = "chacha12";
