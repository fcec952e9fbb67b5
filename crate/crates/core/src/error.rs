use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("invalid d-separation query: {0}")]
    InvalidQuery(String),

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("value out of domain: {0}")]
    Domain(String),

    #[error("conditioning on a zero-probability event: {0}")]
    UndefinedConditional(String),

    #[error("cannot reweight labels: {0}")]
    Reweighting(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("non-finite objective at iteration {iteration} (scores {scores:?})")]
    NonFinite { iteration: usize, scores: Vec<f64> },

    #[error("no convergence after {iterations} iterations: gradient norm {grad_norm:e} (scores {scores:?})")]
    NotConverged {
        iterations: usize,
        grad_norm: f64,
        scores: Vec<f64>,
    },

    #[error("degenerate reweighting function: {0}")]
    Degenerate(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
