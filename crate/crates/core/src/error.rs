use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual} ({context})")]
    DimensionMismatch {
        expected: usize,
        actual: usize,
        context: &'static str,
    },

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("matrix is singular or not positive definite: {0}")]
    Singular(String),

    #[error("matrix is indefinite: smallest eigenvalue {min_eigenvalue:e} ({context})")]
    Indefinite {
        min_eigenvalue: f64,
        context: &'static str,
    },

    #[error("degenerate distribution: {0}")]
    Degenerate(String),

    #[error("singular part unsupported: {0}")]
    SingularPart(String),

    #[error("sinkhorn did not converge after {iterations} iterations (marginal violation {violation:e})")]
    SinkhornNonConvergence { iterations: usize, violation: f64 },

    #[error("transport LP failed: {0}")]
    Lp(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("training diverged at epoch {epoch}: objective {value}")]
    Diverged {
        epoch: usize,
        value: f64,
        trace: Vec<f64>,
    },

    #[error("{path}: line {line}, column '{column}': {message}")]
    Data {
        path: String,
        line: usize,
        column: String,
        message: String,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short machine-readable tag, used in structured error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::InvalidDistribution(_) => "invalid_distribution",
            Error::Singular(_) => "singular",
            Error::Indefinite { .. } => "indefinite",
            Error::Degenerate(_) => "degenerate",
            Error::SingularPart(_) => "singular_part",
            Error::SinkhornNonConvergence { .. } => "sinkhorn_non_convergence",
            Error::Lp(_) => "lp",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Unsupported(_) => "unsupported",
            Error::Diverged { .. } => "diverged",
            Error::Data { .. } => "data",
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}

pub(crate) fn check_dim(expected: usize, actual: usize, context: &'static str) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch {
            expected,
            actual,
            context,
        });
    }
    Ok(())
}
