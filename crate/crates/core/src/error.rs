use thiserror::Error;

use crate::tree::NodeId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid tree: {0}")]
    InvalidTree(String),
    #[error("invalid path: {0}")]
    InvalidPath(String),
    #[error("invalid claim: {0}")]
    InvalidClaim(String),
    #[error("invalid family: {0}")]
    InvalidFamily(String),
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),
    #[error("invalid stopping time: {0}")]
    InvalidStoppingTime(String),
    #[error("node {0} is a leaf")]
    LeafNode(NodeId),
    #[error("missing value for child {child} of node {node}")]
    MissingChildValue { node: NodeId, child: NodeId },
    #[error("measure is not in the family: {0}")]
    NotInFamily(String),
    #[error("measures disagree above the stopping time at node {0}")]
    MeasuresDisagree(NodeId),
    #[error("oracle scale exceeded: {0}")]
    OracleScale(String),
    #[error("family is empty: no superhedging strategy is defined")]
    EmptyFamily,
    #[error("negative compensator increment {increment} on edge {node} -> {child}")]
    NegativeIncrement {
        node: NodeId,
        child: NodeId,
        increment: f64,
    },
    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;
