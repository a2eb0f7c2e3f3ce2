use thiserror::Error;

/// Errors raised across the compression pipeline.
#[derive(Debug, Error)]
pub enum WingsError {
    /// A caller broke an operation's preconditions (shapes, ranges, empty inputs).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A serialized model or artifact could not be decoded.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },

    /// The input carries no usable variance (e.g. all rows identical).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Training produced a non-finite loss.
    #[error("training diverged in epoch {epoch} (loss = {loss})")]
    Diverged { epoch: usize, loss: f32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, WingsError>;

impl WingsError {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        WingsError::Contract(msg.into())
    }

    pub(crate) fn format(offset: usize, msg: impl Into<String>) -> Self {
        WingsError::Format {
            offset,
            message: msg.into(),
        }
    }
}

macro_rules! ensure {
    ($cond:expr, $($arg:tt)+) => {
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !$cond {
            return Err($crate::error::WingsError::Contract(format!($($arg)+)));
        }
    };
}
pub(crate) use ensure;
