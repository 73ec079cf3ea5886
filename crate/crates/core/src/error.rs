use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("local solver did not converge after {iterations} steps (residual {residual:e})")]
    SolverFailure { iterations: usize, residual: f64 },

    #[error("agent {agent} failed at round {round}: {source}")]
    AgentFailure {
        agent: usize,
        round: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("problem is infeasible: {0}")]
    Infeasible(String),

    #[error("dual ascent did not converge after {iterations} steps (feasibility gap {gap:e})")]
    NoConvergence { iterations: usize, gap: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("decay {q} outside admissible interval ({q_min}, 1)")]
    InadmissibleDecay { q: f64, q_min: f64 },

    #[error("noise decay q = {0} does not produce a summable schedule")]
    DivergentNoise(f64),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn at_agent(self, agent: usize, round: usize) -> Error {
        Error::AgentFailure {
            agent,
            round,
            source: Box::new(self),
        }
    }
}
