use thiserror::Error;

use crate::graph::{EdgeId, NodeId};
use crate::quotient::CellId;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("edge {edge} joins frames {from} and {to}; only equal or consecutive frames are allowed")]
    FrameGap { edge: EdgeId, from: usize, to: usize },
    #[error("edge {edge} duplicates an earlier edge between nodes {u} and {v}")]
    DuplicateEdge { edge: EdgeId, u: NodeId, v: NodeId },
    #[error("edge {edge} is a self-loop on node {node}")]
    SelfLoop { edge: EdgeId, node: NodeId },
    #[error("edge {edge} references node {node}, but the graph has {num_nodes} nodes")]
    DanglingNodeReference { edge: EdgeId, node: NodeId, num_nodes: usize },
    #[error("node {node} lies in frame {frame}, but the graph has {num_frames} frames")]
    NodeFrameOutOfRange { node: NodeId, frame: usize, num_frames: usize },
    #[error("ids must be dense and 0-based: expected {expected}, found {found}")]
    NonDenseId { expected: usize, found: usize },
    #[error("invalid cost {value} at {what}")]
    InvalidCost { what: String, value: f64 },
    #[error("a hypothesis graph needs at least one frame")]
    NoFrames,
    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch { what: &'static str, expected: usize, found: usize },
    #[error("labeling is fractional but the operation needs 0/1 values")]
    FractionalInput,
    #[error("value {value} at index {index} is not in the admissible range")]
    InvalidLabel { index: usize, value: f64 },
    #[error("indicator checks need a lineage cut; {0} lineage violations found")]
    InfeasibleBase(usize),
    #[error("partition does not match the graph: {0}")]
    PartitionGraphMismatch(String),
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
    #[error("frame {frame} out of range for {num_frames} frames")]
    FrameOutOfRange { frame: usize, num_frames: usize },
    #[error("unknown cell {0}")]
    UnknownCell(CellId),
    #[error("not a frame-pair problem: {0}")]
    NotFramePair(String),
    #[error("matching problem has no perfect matching")]
    NoPerfectMatching,
    #[error("matching is not perfect: {0}")]
    ImperfectMatching(String),
    #[error("invalid restriction: {0}")]
    InvalidRestriction(String),
    #[error("invalid branching: {0}")]
    InvalidBranching(String),
    #[error("cells {0} and {1} are not in the same frame")]
    NotSameFrame(CellId, CellId),
    #[error("cells {0} and {1} share no intra-frame edge")]
    NotAdjacent(CellId, CellId),
    #[error("no arc from cell {0} to cell {1}")]
    NoSuchArc(CellId, CellId),
    #[error("arc from cell {0} to cell {1} is not active")]
    ArcNotActive(CellId, CellId),
    #[error("initial labeling is infeasible: {0}")]
    InfeasibleInitial(String),
    #[error("cell {0} has a single node and cannot be split")]
    SingletonCell(CellId),
    #[error("intra-frame labels are not a multicut in frame {0}")]
    IntraMulticutInvalid(usize),
    #[error("instance too large: {0}")]
    InstanceTooLarge(String),
    #[error("bound {bound} exceeds objective {objective}")]
    InvalidBound { objective: f64, bound: f64 },
    #[error("degenerate generator parameters: {0}")]
    DegenerateParams(String),
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("solution was computed for instance {expected}, but this instance hashes to {found}")]
    HashMismatch { expected: String, found: String },
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;
