use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, HdspError>;

#[derive(Debug, Error)]
pub enum HdspError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("undefined moment: {0}")]
    UndefinedMoment(String),

    #[error("undefined statistic: {0}")]
    UndefinedStatistic(String),

    #[error("exponent saturated: |w.r| = {0} exceeds 700")]
    Saturation(f64),

    #[error("newton solve did not converge within {iterations} iterations (|grad|_inf = {grad_norm:e})")]
    Convergence {
        iterations: usize,
        grad_norm: f64,
        /// Last iterate; never worse than the starting point.
        last: Vec<f64>,
    },

    #[error("non-finite value in {path} at iteration {iteration}")]
    NonFinite { iteration: usize, path: String },

    #[error("non-finite ELBO term `{0}`")]
    Numerical(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("unseen word id {word} (vocabulary size {vocab})")]
    UnseenWord { word: usize, vocab: usize },

    #[error("incompatible snapshot: {0}")]
    Incompatible(String),

    #[error("corrupt snapshot: {0}")]
    Corrupt(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl HdspError {
    /// Short machine-readable category used by the command line front end.
    pub fn category(&self) -> &'static str {
        match self {
            HdspError::Domain(_) => "domain",
            HdspError::UndefinedMoment(_) => "undefined-moment",
            HdspError::UndefinedStatistic(_) => "undefined-statistic",
            HdspError::Saturation(_) => "saturation",
            HdspError::Convergence { .. } => "convergence",
            HdspError::NonFinite { .. } => "non-finite",
            HdspError::Numerical(_) => "numerical",
            HdspError::Config(_) => "config",
            HdspError::Dimension(_) => "dimension",
            HdspError::Parse { .. } => "parse",
            HdspError::Validation(_) => "validation",
            HdspError::UnseenWord { .. } => "unseen-word",
            HdspError::Incompatible(_) => "incompatible",
            HdspError::Corrupt(_) => "corrupt",
            HdspError::Io { .. } => "io",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HdspError::Io {
            path: path.into(),
            source,
        }
    }
}
