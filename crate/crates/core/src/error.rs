use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: dimension {dim} expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        dim: usize,
        expected: usize,
        actual: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{name} = {value} is outside [{lo}, {hi}]")]
    OutOfRange {
        name: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("singular step at t = {t}: {what}")]
    Singular { t: f64, what: &'static str },

    #[error("alpha_t = {alpha:e} is at or below the eps-to-x conversion floor")]
    AlphaBelowFloor { alpha: f64 },

    #[error("degenerate target denominator {denominator:e} at t = {t}, N = {steps}")]
    DegenerateTarget { t: f64, steps: usize, denominator: f64 },

    #[error("gradient requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("non-finite loss {loss} (t = {t}, weight = {weight})")]
    NonFiniteLoss { t: f64, weight: f64, loss: f64 },

    #[error("training diverged at update {update}: loss {loss}")]
    Diverged { update: usize, loss: f64 },

    #[error("unknown weight strategy '{0}' (expected one of eps-snr, trunc-snr, snr-plus-one, min-snr, bsa)")]
    UnknownStrategy(String),

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("checkpoint parse error at byte {offset}: {message}")]
    Checkpoint { offset: usize, message: String },

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
