use thiserror::Error;

/// Errors surfaced by instance construction, configuration parsing, and the
/// simulation harness.
///
/// The split matters to callers: everything except [`UssError::Invariant`]
/// is a problem with the inputs, while `Invariant` means a runtime check
/// inside an otherwise valid run failed.
#[derive(Debug, Error)]
pub enum UssError {
    /// A joint distribution or cost profile violates its constraints.
    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    /// An argument is outside its documented domain (indices, horizons, ...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A run configuration, preset, or schedule cannot be realized.
    #[error("configuration error: {0}")]
    Config(String),

    /// The instance exceeds the enumerable-size limit.
    #[error("capacity exceeded: {0}")]
    Capacity(String),

    /// A runtime invariant was violated during simulation.
    #[error("invariant violation: {0}")]
    Invariant(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, UssError>;

impl UssError {
    /// True when the error stems from user-supplied input rather than a
    /// failed runtime check. Drives the CLI exit-code split.
    pub fn is_config_error(&self) -> bool {
        !matches!(self, UssError::Invariant(_))
    }
}
