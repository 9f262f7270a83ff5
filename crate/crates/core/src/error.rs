use alloc::string::String;

/// Errors raised by the estimation core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Operand shapes do not satisfy a primitive's contract.
    #[error("{op}: dimension mismatch: {detail}")]
    Shape { op: &'static str, detail: String },

    /// A precondition of an operation was violated.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A value that must be finite was not.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A geographic coordinate lies outside the grid region.
    #[error("outside region: {0}")]
    Region(String),

    /// A grid index lies outside the grid.
    #[error("out of range: {0}")]
    Range(String),

    /// A size limit was exceeded (too many buoys, too many tokens).
    #[error("capacity exceeded: {0}")]
    Capacity(String),

    /// A loss or metric has no support to be computed on.
    #[error("undefined: {0}")]
    Undefined(String),

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}: {detail}")]
    Divergence { epoch: usize, detail: String },

    /// External parameter arrays did not match the model.
    #[error("load error: {0}")]
    Load(String),

    /// Inconsistent configuration.
    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn shape_err(op: &'static str, detail: String) -> Error {
    Error::Shape { op, detail }
}
