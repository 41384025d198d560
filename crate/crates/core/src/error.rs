use thiserror::Error;

/// Errors raised across the model, solver, policy and simulation layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid topology: {0}")]
    Topology(String),

    #[error("pair not in topology: file {file}, server {server}")]
    PairNotInTopology { file: usize, server: usize },

    #[error("unstable chain: arrival rate {arrival} >= total service rate {service}")]
    UnstableChain { arrival: f64, service: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("singular system: {0}")]
    SingularSystem(String),

    #[error("degenerate affine map at x = {x}: slope {slope} is within 1e-12 of 1")]
    DegenerateAffineMap { x: usize, slope: f64 },

    #[error("index iteration did not converge after {iterations} steps (last iterate {last}, last step {step})")]
    NoConvergence {
        iterations: usize,
        last: f64,
        step: f64,
    },

    #[error("solver failed for file {file}, server {server}: {source}")]
    PairSolve {
        file: usize,
        server: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("missing index entry for file {file}, server {server}, x = {x}")]
    MissingIndex { file: usize, server: usize, x: u32 },

    #[error("state space of {states} joint states exceeds the limit of {limit}")]
    StateSpaceTooLarge { states: u128, limit: u128 },

    #[error("value iteration did not converge in {sweeps} sweeps (span {span})")]
    ValueIterationNoConvergence { sweeps: usize, span: f64 },

    #[error("unknown policy {0:?}")]
    UnknownPolicy(String),

    #[error("policy {0:?} is reserved but not implemented")]
    UnsupportedPolicy(String),

    #[error("scenario error: {0}")]
    Scenario(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn for_pair(self, file: usize, server: usize) -> Error {
        match self {
            e @ Error::PairSolve { .. } => e,
            other => Error::PairSolve {
                file,
                server,
                source: Box::new(other),
            },
        }
    }
}

impl Error {
    /// Process exit code: 1 invalid input, 2 solver failure, 3 size guard.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Topology(_)
            | Error::PairNotInTopology { .. }
            | Error::InvalidArgument(_)
            | Error::UnknownPolicy(_)
            | Error::UnsupportedPolicy(_)
            | Error::Scenario(_)
            | Error::Io(_)
            | Error::Csv(_)
            | Error::Json(_) => 1,
            Error::UnstableChain { .. }
            | Error::SingularSystem(_)
            | Error::DegenerateAffineMap { .. }
            | Error::NoConvergence { .. }
            | Error::PairSolve { .. }
            | Error::MissingIndex { .. }
            | Error::ValueIterationNoConvergence { .. } => 2,
            Error::StateSpaceTooLarge { .. } => 3,
        }
    }
}
