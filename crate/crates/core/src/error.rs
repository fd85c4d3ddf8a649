use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimensions: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// `σ = 0` leaves the Tse–Hanly equation without a finite positive root.
    #[error("fixed point diverges for alpha={alpha}, sigma={sigma}")]
    Diverged { alpha: f64, sigma: f64 },

    #[error("contraction factor {factor} >= 1 (alpha={alpha}, sigma={sigma})")]
    NonContractive { alpha: f64, sigma: f64, factor: f64 },

    #[error("non-finite message on edge user={user} chip={chip} at iteration {iteration}")]
    NumericalDivergence {
        user: usize,
        chip: usize,
        iteration: usize,
    },

    #[error("operation requires binary (+1/-1) signatures")]
    UnsupportedDistribution,

    #[error("linear system is singular or not positive definite (pivot {pivot})")]
    Singular { pivot: usize },

    #[error("resource limit exceeded: {0}")]
    ResourceLimit(String),

    #[error("instance data inconsistent: {0}")]
    Inconsistent(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
