use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("rotation angle {angle} is within the near-π band; log branch is ambiguous")]
    NearPiLog { angle: f64 },

    #[error("degenerate geometry: receiver and satellite coincide (distance {distance} m)")]
    DegenerateGeometry { distance: f64 },

    #[error("factor references node {time} which is not in the window")]
    NodeNotInWindow { time: usize },

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("window underflow: cannot evict {shift} of {nodes} nodes")]
    WindowUnderflow { shift: usize, nodes: usize },

    #[error("solver failure after {iterations} iterations (objective {objective})")]
    SolverFailure { iterations: usize, objective: f64 },

    #[error("no GPS factors in window; detector test skipped")]
    NoGpsFactors,

    #[error("probability {0} outside (0, 1)")]
    InvalidProbability(f64),

    #[error("invalid degrees of freedom {0}")]
    InvalidDegreesOfFreedom(usize),

    #[error("authentication event at step {time} is not on the schedule (epoch {epoch})")]
    UnscheduledAuthentication { time: usize, epoch: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed input at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("registration failure: {0}")]
    Registration(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
