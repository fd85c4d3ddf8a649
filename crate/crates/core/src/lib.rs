//! Belief-propagation multiuser detection for spread-spectrum channels with
//! Gaussian symbols.
//!
//! The received vector is `y = (1/√N) S x + w`, with `S` an `N × K` matrix of
//! chip signatures, `x` the `K` user symbols and `w` white Gaussian noise of
//! standard deviation `σ`. The crate provides:
//!
//! - [`sysmodel`]: random system instances and the matched filter.
//! - [`fixedpoint`]: the scalar variance recursion, the Tse–Hanly fixed point
//!   `Λ` and the convergence-time constant `t*`.
//! - [`bp`]: full edge-message belief propagation on the user/chip graph.
//! - [`approx_bp`]: the vertex-level reduction of BP with `O(NK)` work per
//!   iteration.
//! - [`spectral`]: the exact MMSE posterior, the interference operator `Ω`,
//!   and diagnostics built on them.
//! - [`harness`]: seeded Monte-Carlo sweeps with CSV/JSON output.
//!
//! All numerical code is generic over [`Scalar`] (`f32` or `f64`). The
//! aliases below fix the scalar to `f64`, which is what the harness uses.

// `!(x > 0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod approx_bp;
pub mod bp;
pub mod error;
pub mod fixedpoint;
pub mod harness;
pub mod linalg;
pub mod opcount;
pub mod rng;
pub mod scalar;
pub mod spectral;
pub mod sysmodel;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use sysmodel::SignatureDistribution;

pub type SignatureMatrixF64 = sysmodel::SignatureMatrix<f64>;
pub type SystemInstanceF64 = sysmodel::SystemInstance<f64>;
pub type EdgeMessagesF64 = bp::EdgeMessages<f64>;
pub type MarginalEstimateF64 = bp::MarginalEstimate<f64>;
pub type BpRunReportF64 = bp::BpRunReport<f64>;
pub type VertexStateF64 = approx_bp::VertexState<f64>;
pub type FixedPointReportF64 = fixedpoint::FixedPointReport<f64>;
pub type PosteriorOracleF64 = spectral::PosteriorOracle<f64>;

pub type SignatureMatrixF32 = sysmodel::SignatureMatrix<f32>;
pub type SystemInstanceF32 = sysmodel::SystemInstance<f32>;
pub type EdgeMessagesF32 = bp::EdgeMessages<f32>;
pub type MarginalEstimateF32 = bp::MarginalEstimate<f32>;
pub type BpRunReportF32 = bp::BpRunReport<f32>;
pub type VertexStateF32 = approx_bp::VertexState<f32>;
pub type FixedPointReportF32 = fixedpoint::FixedPointReport<f32>;
pub type PosteriorOracleF32 = spectral::PosteriorOracle<f32>;
