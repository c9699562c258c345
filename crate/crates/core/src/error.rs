//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the lab.
///
/// Configuration problems (bad schedules, invalid budgets, malformed
/// configs) are kept distinct from contract violations (caller passed
/// something the operation's precondition forbids) and from runtime
/// failures such as divergence or checkpoint-file corruption, because the
/// CLI maps them to different exit codes.
#[derive(Debug, Error)]
pub enum Error {
    /// A precondition of an operation was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Invalid configuration value.
    #[error("configuration error: {0}")]
    Config(String),

    /// A checkpointed segment did not recompute to its recorded forward
    /// values, i.e. it consumed randomness that was not an explicit input.
    #[error(
        "nondeterministic segment: recomputed forward pass diverged from recorded values ({0})"
    )]
    Nondeterminism(String),

    /// The unbiased MMD² estimator needs at least two samples per side.
    #[error("estimator undefined: batch size {0} < 2")]
    EstimatorUndefined(usize),

    /// Training produced a non-finite loss.
    #[error("non-finite loss {loss} at iteration {iteration}")]
    NonFiniteLoss { iteration: usize, loss: f64 },

    /// Finetuning loss stayed above 10x its initial value for too long.
    #[error(
        "diverged at iteration {iteration}: loss {loss} above 10x initial {initial} \
         for {window} consecutive iterations"
    )]
    Diverged {
        iteration: usize,
        loss: f64,
        initial: f64,
        window: usize,
        /// Per-iteration losses recorded up to the abort point.
        history: Vec<f64>,
    },

    /// Checkpoint file does not start with the expected magic string.
    #[error("bad checkpoint magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },

    /// Checkpoint format version is not supported.
    #[error("unsupported checkpoint version {found}, this build reads version {supported}")]
    UnsupportedVersion { found: u32, supported: u32 },

    /// Tensor manifest and payload disagree on length.
    #[error("checkpoint payload length mismatch: manifest expects {expected} floats, payload holds {actual}")]
    PayloadLength { expected: usize, actual: usize },

    /// Malformed checkpoint header line.
    #[error("malformed checkpoint header: {0}")]
    MalformedHeader(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
