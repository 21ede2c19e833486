use thiserror::Error;

/// Errors raised by the library.
///
/// The variants track the failure classes the command line maps onto exit
/// codes: usage and configuration problems, malformed input data, and I/O.
#[derive(Debug, Error)]
pub enum Error {
    /// A precondition of an operation was violated by the caller.
    #[error("usage error: {0}")]
    Usage(String),

    /// A configuration value is out of range or inconsistent.
    #[error("config error: {field}: {message}")]
    Config { field: String, message: String },

    /// Input values are unusable (NaN, negative loss, ...).
    #[error("input error: {0}")]
    Input(String),

    /// A binary or text file does not follow its format.
    #[error("format error in {field} at byte offset {offset}: {message}")]
    Format {
        field: String,
        offset: u64,
        message: String,
    },

    /// An exhaustive search would exceed its enumeration cap.
    #[error("enumeration cap exceeded: {required} candidates required, cap is {cap}; {hint}")]
    CapExceeded {
        required: u128,
        cap: u128,
        hint: String,
    },

    /// A failure inside one training batch.
    #[error("batch {index}: {source}")]
    Batch {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn format(field: impl Into<String>, offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            field: field.into(),
            offset,
            message: message.into(),
        }
    }

    /// The error with any batch context stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::Batch { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
