use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degree must be at least 3, got {d}")]
    DegreeTooSmall { d: usize },

    #[error("n*d must be even (n = {n}, d = {d})")]
    OddHalfEdgeCount { n: usize, d: usize },

    #[error("invalid pairing: {0}")]
    InvalidPairing(String),

    #[error("vertex {vertex} out of range for a graph on {n} vertices")]
    UnknownVertex { vertex: usize, n: usize },

    #[error("edge ({u}, {v}) has an endpoint outside the subgraph vertex set")]
    EdgeOutsideSubgraph { u: usize, v: usize },

    #[error("graph is disconnected")]
    Disconnected,

    #[error("vertex set is not connected")]
    DisconnectedVertexSet,

    #[error("{what} did not converge after {iterations} iterations")]
    NotConverged { what: &'static str, iterations: usize },

    #[error("linear solve residual {residual:e} exceeds tolerance {tolerance:e}")]
    SolverResidual { residual: f64, tolerance: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("target set must be nonempty")]
    EmptyTarget,

    #[error("vertex {vertex} belongs to the conditioning set")]
    VertexInTarget { vertex: usize },

    #[error("input is not a 2-core: vertex {vertex} has degree {degree}")]
    NotTwoCore { vertex: usize, degree: usize },

    #[error("rooted tree input contains a cycle or is disconnected")]
    NotATree,

    #[error("no surviving replicas")]
    NoSurvivors,

    #[error("no bracket for the critical level in [{lo}, {hi}]")]
    BracketNotFound { lo: f64, hi: f64 },

    #[error("no unpaired half-edges left")]
    HalfEdgesExhausted,

    #[error("reservoir index {index} consumed twice")]
    ReservoirReuse { index: usize },

    #[error("no simple graph after {attempts} attempts")]
    SimpleGraphNotFound { attempts: usize },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
