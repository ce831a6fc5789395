use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter or configuration value is out of its legal domain.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A configuration file or key could not be parsed.
    #[error("config error: {0}")]
    Config(String),

    /// Carrier frequency outside the absorption table and no override given.
    #[error("frequency {freq_ghz} GHz outside absorption table ({min_ghz}-{max_ghz} GHz); set a kappa override")]
    FrequencyOutOfRange {
        freq_ghz: f64,
        min_ghz: f64,
        max_ghz: f64,
    },

    /// Vector or network shape does not match what the operation expects.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A computation produced NaN or infinity where a finite value is required.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// Training loss became non-finite.
    #[error("training diverged at round {round}: loss {loss}")]
    TrainingDiverged { round: usize, loss: f64 },

    /// Checkpoint or constellation file does not parse.
    #[error("malformed file {path}: {reason}")]
    MalformedFile { path: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
