use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// An input lies outside the domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),
    #[error("configuration error: {0}")]
    Config(String),
    /// Non-finite values showed up during a gradient step.
    #[error("training step error: {0}")]
    Training(String),
    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),
    #[error("replay buffer not ready: {0}")]
    NotReady(String),
    #[error("rollout aborted: {0}")]
    Rollout(String),
    #[error("malformed data: {0}")]
    Format(String),
    #[error("not applicable: {0}")]
    NotApplicable(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn ensure_finite(value: f64, what: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Domain(format!("{what} must be finite, got {value}")))
    }
}
