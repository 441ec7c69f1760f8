use alloc::string::String;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("validation error at row {row}: {reason}")]
    Validation { row: usize, reason: String },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("ill-conditioned design: {0}")]
    Conditioning(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("infeasible partitioning: adjacency graph has {components} connected components, more than K = {k}")]
    Infeasible { components: usize, k: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("poisson mean overflow at row {row}: eta = {eta:.3} exceeds 30; rescale the field or covariates")]
    PoissonOverflow { row: usize, eta: f64 },
}

pub type Result<T> = core::result::Result<T, Error>;
