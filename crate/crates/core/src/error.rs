use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("tape: {0}")]
    Tape(String),

    #[error("stream: {0}")]
    Stream(String),

    #[error("weight file: {0}")]
    Format(String),

    #[error("weight file checksum mismatch (expected {expected:08x}, found {found:08x})")]
    Checksum { expected: u32, found: u32 },

    #[error("training diverged at step {step}")]
    Diverged { step: usize },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Shape(msg.into()))
}
