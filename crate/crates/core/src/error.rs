use alloc::string::String;

/// Errors raised by providers, scorers and the algorithms built on them.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("token id {id} is outside the vocabulary of size {vocab_size}")]
    UnknownToken { id: u32, vocab_size: usize },
    #[error("text cannot be tokenized: {0}")]
    Untokenizable(String),
    #[error("provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("scorer unavailable: {0}")]
    ScorerUnavailable(String),
    #[error("protocol mismatch: {0}")]
    ProtocolMismatch(String),
    #[error("remote model error: {0}")]
    RemoteModelError(String),
    #[error("tokenizer mismatch: `{left}` vs `{right}`")]
    TokenizerMismatch { left: String, right: String },
    #[error("fewer than two tokens have nonzero probability")]
    DegenerateDistribution,
    #[error("exhaustive simulation exceeds the cap of {cap} continuations")]
    ExhaustiveTooLarge { cap: usize },
    #[error("sequence is already terminated")]
    Terminated,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl Error {
    /// Errors that make every further query pointless (as opposed to a
    /// problem with one particular input).
    pub fn is_fatal(&self) -> bool {
        matches!(
            self,
            Error::ProviderUnavailable(_)
                | Error::ScorerUnavailable(_)
                | Error::ProtocolMismatch(_)
                | Error::TokenizerMismatch { .. }
                | Error::InvalidConfig(_)
        )
    }
}

pub type Result<T> = core::result::Result<T, Error>;
