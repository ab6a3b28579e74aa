use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    Params(String),

    #[error("address error: {0}")]
    Address(String),

    #[error("boundary error: {0}")]
    Boundary(String),

    #[error("window error: {0}")]
    Window(String),

    #[error("resource guard exceeded: {0}")]
    Resource(String),

    #[error("sampling failure: {0}")]
    Sampling(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("undefined ratio: {0}")]
    UndefinedRatio(String),

    #[error("insufficient chain: need level {needed}, chain reaches {reached}")]
    InsufficientChain { needed: u64, reached: u64 },

    #[error("inconclusive: {0}")]
    Inconclusive(String),

    #[error("insufficient hits: {0}")]
    InsufficientHits(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("fit error: {0}")]
    Fit(String),
}

impl Error {
    /// Short machine-readable tag used in JSON error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Params(_) => "params",
            Error::Address(_) => "address",
            Error::Boundary(_) => "boundary",
            Error::Window(_) => "window",
            Error::Resource(_) => "resource",
            Error::Sampling(_) => "sampling",
            Error::Precondition(_) => "precondition",
            Error::UndefinedRatio(_) => "undefined_ratio",
            Error::InsufficientChain { .. } => "insufficient_chain",
            Error::Inconclusive(_) => "inconclusive",
            Error::InsufficientHits(_) => "insufficient_hits",
            Error::Domain(_) => "domain",
            Error::Fit(_) => "fit",
        }
    }
}
