use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid edge: {0}")]
    InvalidEdge(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("singular query: {0}")]
    SingularQuery(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("resource limit exceeded: {0}")]
    Resource(String),
    #[error("budget exhausted: {0}")]
    Budget(String),
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("ill-conditioned estimate: {0}")]
    IllConditioned(String),
    #[error("factorization failed: {0}")]
    Factorization(String),
    #[error("quadrature did not converge: {0}")]
    Quadrature(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Errors caused by exhausting a configured resource or sampling budget,
    /// as opposed to invalid input.
    pub fn is_resource(&self) -> bool {
        matches!(self, Error::Resource(_) | Error::Budget(_))
    }
}
