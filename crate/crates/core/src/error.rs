use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{format}: line {line}: {message}")]
    Parse {
        format: &'static str,
        line: usize,
        message: String,
    },

    #[error("{format}: unsupported header {found:?} (expected {expected:?})")]
    Version {
        format: &'static str,
        found: String,
        expected: &'static str,
    },

    #[error("{format}: line {line}: expected {expected} {what}, found {found}")]
    Count {
        format: &'static str,
        line: usize,
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("zero-norm vector in {0}")]
    ZeroNorm(String),

    #[error("invalid value: {0}")]
    Invalid(String),

    #[error("missing entry: {0}")]
    Missing(String),

    #[error("duplicate entry: {0}")]
    Duplicate(String),

    #[error("degenerate fused feature (anti-parallel views) at points {points:?}")]
    DegenerateFusion { points: Vec<usize> },

    #[error("non-finite gradient at parameter {index}")]
    NonFiniteGradient { index: usize },

    #[error("training diverged at iteration {iteration}: total loss {loss}")]
    Diverged { iteration: usize, loss: f64 },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Numerical failures (divergence, non-finite gradients) as opposed to
    /// malformed inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Diverged { .. } | Error::NonFiniteGradient { .. } | Error::DegenerateFusion { .. }
        )
    }

    pub(crate) fn parse(format: &'static str, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            format,
            line,
            message: message.into(),
        }
    }

    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
