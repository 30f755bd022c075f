//! Moral lineage tracing: joint segmentation and tracking as an edge
//! labeling problem on a frame-structured hypothesis graph.
//!
//! The crate provides the instance model and feasibility checks, the
//! quotient graph over cells, an exact minimum cost branching solver based
//! on bipartite matching, two local search heuristics (greedy agglomeration
//! and Kernighan-Lin with optimal branchings), cutting plane separators, an
//! exact solver for small instances, and a synthetic instance generator.

pub mod assignment;
pub mod branching;
pub mod error;
pub mod exact;
pub mod feasibility;
pub mod generator;
pub mod gla;
pub mod graph;
pub mod io;
pub mod klb;
pub mod par;
pub mod quotient;
pub mod separation;

pub use error::{Error, Result};
pub use graph::{
    decompose_objective, fixture_i3, objective, Edge, EdgeId, EdgeKind, HypothesisGraph, Labeling, Node,
    NodeId, ObjectiveParts, EPSILON,
};
pub use par::Execution;
