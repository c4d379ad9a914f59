use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimensions: {0}")]
    Dimensions(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix is not positive semidefinite (pivot {pivot} = {value:e})")]
    NotPositiveSemidefinite { pivot: usize, value: f64 },

    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("matrix is ill-conditioned (condition estimate {cond:e})")]
    IllConditioned { cond: f64 },

    #[error("agent {agent}: information matrix ill-conditioned (condition estimate {cond:e})")]
    AgentIllConditioned { agent: usize, cond: f64 },

    #[error("consensus diverged in component {component}, agent {agent} at t = {t}")]
    Divergence { component: usize, agent: usize, t: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("sample {got} delivered out of order (expected {expected})")]
    OutOfOrder { expected: usize, got: usize },

    #[error("time {t} outside [{start}, {end}]")]
    OutOfRange { t: f64, start: f64, end: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical failure at t = {t}: {source}")]
    AtTime {
        t: f64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn at(self, t: f64) -> Self {
        match self {
            e @ Error::AtTime { .. } => e,
            e => Error::AtTime {
                t,
                source: Box::new(e),
            },
        }
    }

    /// Configuration-class errors map to CLI exit code 2, numerical ones to 3.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Dimensions(_) | Error::InvalidArgument(_)
        )
    }
}
