use thiserror::Error;

use crate::graph::NodeId;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("rotation angle {angle} is at or too close to pi for a principal logarithm")]
    AngleAtPi { angle: f64 },

    #[error("node {0} already exists")]
    DuplicateNode(NodeId),

    #[error("edge references missing node {0}")]
    MissingEndpoint(NodeId),

    #[error("edge {from} -> {to} is a self-loop")]
    SelfLoop { from: NodeId, to: NodeId },

    #[error("invalid information matrix: {0}")]
    InvalidInformation(String),

    #[error("line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },

    #[error("linear system is not positive definite")]
    NotPositiveDefinite,

    #[error("free node {0} belongs to a component with no fixed node")]
    NoFixedGauge(NodeId),

    #[error("graph has zero total edge weight")]
    EmptyGraph,

    #[error("node {0} is not alone in its group")]
    NotSingleton(NodeId),

    #[error("node {0} is not assigned to any group")]
    UnassignedNode(NodeId),

    #[error("seed node {0} is not in the graph")]
    MissingSeed(NodeId),

    #[error("trajectories do not share the same node ids")]
    MismatchedIds,

    #[error("path length {length} is shorter than segment length {segment}")]
    PathTooShort { length: f64, segment: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] IoError),
}

/// `std::io::Error` is neither `Clone` nor `PartialEq`; keep its rendering.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{0}")]
pub struct IoError(pub String);

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(IoError(e.to_string()))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
