use std::path::PathBuf;

/// Errors of the IO, configuration and orchestration layer.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] patchwork_core::Error),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("schema error in {path}: {message}")]
    Schema { path: PathBuf, message: String },

    #[error("cannot read {path}: {message}")]
    Input { path: PathBuf, message: String },

    #[error("cannot write {path}: {source}")]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("stage `{stage}` failed: {message}")]
    Stage { stage: String, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn input(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Input { path: path.into(), message: message.to_string() }
    }

    pub(crate) fn output(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Output { path: path.into(), source }
    }

    /// Bad configuration or bad input data, as opposed to a failure while
    /// computing.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Config(_) | Error::Schema { .. } | Error::Input { .. } => true,
            Error::Core(e) => matches!(
                e,
                patchwork_core::Error::Validation { .. }
                    | patchwork_core::Error::Argument(_)
                    | patchwork_core::Error::Config(_)
            ),
            Error::Output { .. } | Error::Stage { .. } => false,
        }
    }

    /// Attribute an error raised while computing `stage`. Bad input data
    /// and configuration stay validation errors; anything else becomes a
    /// stage failure.
    pub fn in_stage(self, stage: &str) -> Self {
        match self {
            Error::Core(patchwork_core::Error::Validation { .. })
            | Error::Config(_)
            | Error::Schema { .. }
            | Error::Input { .. }
            | Error::Output { .. }
            | Error::Stage { .. } => self,
            other => Error::Stage { stage: stage.into(), message: other.to_string() },
        }
    }

    /// Process exit code: 2 for validation errors, 3 for stage failures.
    pub fn exit_code(&self) -> i32 {
        if self.is_validation() {
            2
        } else {
            3
        }
    }

    /// Short machine-readable category for error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Core(e) => match e {
                patchwork_core::Error::Validation { .. } => "validation",
                patchwork_core::Error::Argument(_) => "argument",
                patchwork_core::Error::Dimension(_) => "dimension",
                patchwork_core::Error::Conditioning(_) => "conditioning",
                patchwork_core::Error::DegenerateGeometry(_) => "degenerate_geometry",
                patchwork_core::Error::Infeasible { .. } => "infeasible",
                patchwork_core::Error::Config(_) => "config",
                patchwork_core::Error::PoissonOverflow { .. } => "poisson_overflow",
            },
            Error::Config(_) => "config",
            Error::Schema { .. } => "schema",
            Error::Input { .. } => "input",
            Error::Output { .. } => "output",
            Error::Stage { .. } => "stage",
        }
    }
}
