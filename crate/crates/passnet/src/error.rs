use thiserror::Error;

/// Errors produced by model construction, synthesis, verification and
/// simulation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite entry in {0}")]
    NonFinite(String),

    #[error("unknown node id `{0}`")]
    UnknownNode(String),

    #[error("unknown edge {0}")]
    UnknownEdge(String),

    #[error("self-loop on node `{0}` is not allowed")]
    SelfLoop(String),

    #[error("parameter path `{path}` not recognized for node `{node}`")]
    UnknownParameter { node: String, path: String },

    #[error("synthesis infeasible: violated constraint class `{constraint}`")]
    Infeasible { constraint: String },

    #[error("SDP solver failure: {0}")]
    Solver(String),

    #[error("matrix is singular or ill-conditioned: {0}")]
    IllConditioned(String),

    #[error("Riccati iteration did not converge: {0}")]
    RiccatiDivergence(String),

    #[error("state norm exceeded overflow guard at t = {time} (|x| = {norm:.3e})")]
    Divergence { time: f64, norm: f64 },

    #[error("invalid event schedule: {0}")]
    Schedule(String),

    #[error("invalid retune: {0}")]
    InvalidRetune(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
