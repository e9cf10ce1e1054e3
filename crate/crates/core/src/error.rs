use alloc::string::String;

use thiserror::Error;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("labeling has a hidden node where a full labeling is required (node {node})")]
    HiddenLabel { node: usize },
    #[error("label {label} out of range for node {node} with {labels} labels")]
    LabelOutOfRange {
        node: usize,
        label: usize,
        labels: usize,
    },
    #[error("state space of {states} configurations exceeds the enumeration limit of {limit}")]
    StateSpaceTooLarge { states: u128, limit: u128 },
    #[error("graph is not a tree: {0}")]
    NotATree(&'static str),
    #[error("no observed nodes")]
    NoObservedNodes,
    #[error("message underflow on edge {edge} towards node {node}: all entries vanished before normalization")]
    MessageUnderflow { edge: usize, node: usize },
    #[error("invalid edge appearance probabilities: {0}")]
    InvalidRho(String),
    #[error("inference trace does not match the model or schedule: {0}")]
    TraceMismatch(&'static str),
    #[error("singular linear system in implicit differentiation")]
    SingularSystem,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("loss is not finite at the initial parameters")]
    NonFiniteInitialRisk,
}
