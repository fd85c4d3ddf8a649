//! Exact posterior oracle and diagnostics of the BP interference operator.
//!
//! The mean messages of BP evolve linearly through the `NK × NK` matrix
//!
//! ```text
//! Ω_{ia,kb} = 0             if i = k or a = b
//!           = s_{ib} s_{kb}  otherwise
//! ```
//!
//! divided by `N λ(t) λ̂(t)` at each step. This module measures the growth
//! rate of `Ω`, the traces `Tr{(Ωᵗ)ᵀ Ωᵗ}`, and the gap between BP's variance
//! estimates and the exact posterior variances.
//!
//! Edge vectors are indexed row-major by user: `(i, a) → i·N + a`.

mod omega;
mod oracle;
mod survey;

pub use omega::{
    omega_power_trace, spectral_growth_rate, trace_check, GrowthEstimate, OmegaOperator, TraceStats,
    MAX_TRACE_DIM, MAX_TRACE_POWER,
};
pub use oracle::{discrepancy_d, mmse_solve, DiscrepancyStat, PosteriorOracle};
pub use survey::{spectral_survey, spectral_trial, SpectralRow, SurveyConfig};
