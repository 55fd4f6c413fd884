use thiserror::Error;

/// Violations of scenario invariants. `key` is a dotted path into the scenario.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("{key}: {message}")]
    Range { key: String, message: String },
    #[error("arcs[{arc}]: endpoint `{node}` does not reference a known node")]
    DanglingArc { arc: usize, node: String },
    #[error("{key}: unknown node `{node}`")]
    UnknownNode { key: String, node: String },
    #[error("{key}: unknown workload class `{class}`")]
    UnknownClass { key: String, class: String },
    #[error("{key}: duplicate id `{id}`")]
    Duplicate { key: String, id: String },
    #[error("{key}: expected one value per workload class ({expected})")]
    Shape { key: String, expected: usize },
    #[error("{0}")]
    Structure(String),
}

impl ModelError {
    pub(crate) fn range(key: impl Into<String>, message: impl Into<String>) -> Self {
        ModelError::Range { key: key.into(), message: message.into() }
    }

    /// Key path the error points at, when there is one.
    pub fn key(&self) -> Option<String> {
        match self {
            ModelError::Range { key, .. }
            | ModelError::UnknownNode { key, .. }
            | ModelError::UnknownClass { key, .. }
            | ModelError::Duplicate { key, .. }
            | ModelError::Shape { key, .. } => Some(key.clone()),
            ModelError::DanglingArc { arc, .. } => Some(format!("arcs[{arc}]")),
            ModelError::Structure(_) => None,
        }
    }
}

/// Errors from the market-analysis layer (pricing, settlement, experiments).
#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("clearing has no optimal solution ({0})")]
    NotOptimal(String),
    #[error("node {node} does not process class {class}; use the path decomposition instead")]
    NotProcessing { node: String, class: String },
    #[error("no active path from {node} for class {class}")]
    NoActivePath { node: String, class: String },
    #[error("index out of range: {0}")]
    Index(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}
