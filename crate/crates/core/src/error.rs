use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("unsupported: {0}")]
    Capability(String),

    #[error("peak at window edge (bin {bin}, window {lo}..={hi})")]
    PeakOnEdge { bin: usize, lo: usize, hi: usize },

    #[error("B0 alignment failed: NAA prominence {naa:.4e}, Cr prominence {cr:.4e}")]
    Alignment { naa: f64, cr: f64 },

    #[error("normalisation failed: {0}")]
    Normalisation(String),

    #[error("export failed: {0}")]
    Export(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("training failed at epoch {epoch}, batch {batch}: {reason}")]
    Training { epoch: usize, batch: usize, reason: String },

    #[error("state error: {0}")]
    State(String),

    #[error("ill-conditioned problem (condition number {condition:.3e}): {what}")]
    Conditioning { what: String, condition: f64 },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("test undefined: {0}")]
    UndefinedTest(String),

    #[error("archive corrupted: {0}")]
    Corruption(String),

    #[error("archive version {found} not supported (expected {expected})")]
    Migration { found: u32, expected: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Errors caused by bad user input rather than a failing computation.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Domain(_) | Error::Json(_) | Error::Contract(_)
        )
    }
}

pub(crate) fn dim(msg: impl Into<String>) -> Error {
    Error::Dimension(msg.into())
}

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
