use thiserror::Error;

use crate::model::NodeId;

/// Diagnostics produced while loading or validating schemas, DAG
/// specifications and mapping documents. `path` is a JSON-pointer-like
/// location inside the offending document.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SpecError {
    #[error("{path}: malformed document: {msg}")]
    Parse { path: String, msg: String },
    #[error("{path}: unsupported or missing format version {found:?}")]
    Version { path: String, found: Option<u64> },
    #[error("{path}: unknown table \"{table}\"")]
    UnknownTable { path: String, table: String },
    #[error("{path}: unknown attribute \"{attr}\"")]
    UnknownAttribute { path: String, attr: String },
    #[error("{path}: unknown node type \"{node}\"")]
    UnknownNode { path: String, node: String },
    #[error("dependency cycle between node types: {}", cycle.join(" -> "))]
    Cycle { cycle: Vec<String> },
    #[error("root node type {0:?} is not declared")]
    RootMissing(String),
    #[error("{path}: unknown transform \"{name}\"")]
    UnknownTransform { path: String, name: String },
    #[error("{path}: destination attribute \"{attr}\" mapped more than once")]
    DuplicateDestination { path: String, attr: String },
    #[error("{path}: {msg}")]
    Invalid { path: String, msg: String },
}

impl SpecError {
    pub(crate) fn invalid(path: impl Into<String>, msg: impl Into<String>) -> Self {
        SpecError::Invalid {
            path: path.into(),
            msg: msg.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("cycle in instance graph: {}", fmt_nodes(.0))]
    Cycle(Vec<NodeId>),
    #[error("owner of {node} cannot be resolved")]
    OwnerUnresolvable {
        node: NodeId,
        /// Identity named by the ownership attribute, when it holds a raw key.
        named: Option<NodeId>,
    },
}

fn fmt_nodes(nodes: &[NodeId]) -> String {
    nodes
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(" -> ")
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PsmError {
    #[error("cannot compose {left_to} -> ... with mapping starting at {right_from}")]
    CompositionDomain { left_to: String, right_from: String },
    #[error(
        "composition maps more than one source node onto {to_node} (from {first} and {second})"
    )]
    ConflictingNodeMaps {
        to_node: String,
        first: String,
        second: String,
    },
    #[error("cannot compose transform chain for {attr}: {msg}")]
    UnsupportedChain { attr: String, msg: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StoreError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("key {key} already present in table {table}")]
    KeyCollision { table: String, key: i64 },
    #[error("an active migration already holds the lease for {0}")]
    LeaseDenied(NodeId),
    #[error("write-ahead log of migration {0} is sealed")]
    WalSealed(u64),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TrackerError {
    #[error("{0} has no recorded migration history")]
    NotTracked(NodeId),
}

/// Failures that abort a migration. Every variant triggers rollback.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("injected crash at write-ahead record {seq}")]
    Crash { seq: u64 },
    #[error("no free destination key for {0} after bounded retries")]
    KeysExhausted(NodeId),
    #[error("unknown application {0}")]
    UnknownApp(String),
    #[error("{0}")]
    Invalid(String),
}
