use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A model parameter or input value is outside its valid domain.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("{model}: no convergence after {iterations} iterations (ssr = {ssr:.6e}, last iterate = {last:?})")]
    NonConvergence {
        model: String,
        iterations: usize,
        ssr: f64,
        last: Vec<f64>,
    },

    #[error("no resonance found near {0:.6e} Hz")]
    NoResonance(f64),

    #[error("no peak: {0}")]
    NoPeak(String),

    #[error("no decay detected: {0}")]
    NoDecay(String),

    #[error("channel {0} has no events")]
    EmptyChannel(u8),

    #[error("not enough data: {0}")]
    InsufficientData(String),

    #[error("{}:{line}{}: {msg}", path.display(), column.map(|c| format!(":{c}")).unwrap_or_default())]
    Parse {
        path: PathBuf,
        line: usize,
        column: Option<usize>,
        msg: String,
    },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
