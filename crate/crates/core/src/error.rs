//! Error types, one enum per layer.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("{n} nodes is outside the supported range 1..={max}")]
    SizeLimit { n: usize, max: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("edge assignment contains a directed cycle")]
    Cyclic,
    #[error("outcome {outcome} is inconsistent with intervention {intervention}")]
    InconsistentOutcome {
        intervention: String,
        outcome: String,
    },
    #[error("parse error: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("parameter {name} = {value} is outside [0, 1]")]
    ParamRange { name: &'static str, value: f64 },
    #[error("invalid prior: {0}")]
    InvalidPrior(String),
    #[error("parameter grid must contain at least one sample")]
    EmptyGrid,
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InferenceError {
    #[error("evidence has zero probability under every hypothesis")]
    DegenerateEvidence,
    #[error("no acyclic completion exists for the requested pair")]
    NoAcyclicCompletion,
    #[error("focus is undefined for the current belief")]
    UndefinedFocus,
    #[error("candidate set is empty")]
    EmptyCandidates,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("row {row}, column '{column}': {message}")]
    Row {
        row: usize,
        column: String,
        message: String,
    },
    #[error("missing column '{0}'")]
    MissingColumn(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Error)]
pub enum FitError {
    #[error("no scorable observations")]
    NoObservations,
    #[error("optimizer failed: {0}")]
    Optimizer(String),
    #[error("unknown model '{0}'")]
    UnknownModel(String),
    #[error("unknown device {device} for {n} nodes in experiment '{experiment}'")]
    UnknownDevice {
        experiment: String,
        device: u32,
        n: usize,
    },
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
