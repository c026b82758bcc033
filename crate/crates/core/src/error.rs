use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("row {0} of the attention mask has no allowed position")]
    FullyMasked(usize),

    #[error("loss must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("backward already ran on this tape")]
    GraphConsumed,

    #[error("trainable parameter `{0}` has no gradient")]
    MissingGrad(String),

    #[error("invalid prompt: {0}")]
    Prompt(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("cache error: {0}")]
    Cache(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("sequence of {len} tokens exceeds max context {max}")]
    ContextOverflow { len: usize, max: usize },

    #[error("no supervised positions in sequence")]
    NoSupervised,

    #[error("data stream is empty")]
    EmptyData,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }
}
