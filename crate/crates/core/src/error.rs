use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("non-finite value produced in {0}")]
    NonFinite(String),

    #[error("parameter `{0}` received a NaN or infinite gradient")]
    Poisoned(String),

    #[error("token id {id} is out of range for a vocabulary of {vocab}")]
    TokenOutOfRange { id: usize, vocab: usize },

    #[error("label {0} is out of range (expected 0 or 1)")]
    LabelOutOfRange(usize),

    #[error("grammar error{}: {msg}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Grammar { line: Option<usize>, msg: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn grammar(line: Option<usize>, msg: impl Into<String>) -> Self {
        Error::Grammar {
            line,
            msg: msg.into(),
        }
    }
}
