use thiserror::Error;

/// Errors produced by the selection pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("row {row}: expected {expected} columns, found {found}")]
    RaggedRow {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("row {row}, column {column}: cannot parse cell {cell:?}")]
    BadCell {
        row: usize,
        column: usize,
        cell: String,
    },
    #[error("variable {variable} has fewer than two observed states")]
    DegenerateVariable { variable: usize },
    #[error("dataset has no rows")]
    EmptyDataset,
    #[error("invalid model index: {0}")]
    InvalidIndex(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid model spec ({0}); expected fields: case_kind, states, k, s, pi, alpha, beta")]
    InvalidSpec(String),
    #[error("observation {row} has zero density under every component")]
    AllComponentsZero { row: usize },
    #[error("cluster {cluster} has vanishing total responsibility")]
    EmptyCluster { cluster: usize },
    #[error("K = {k} exceeds the number of individuals n = {n}")]
    TooManyClusters { k: usize, n: usize },
    #[error("every candidate fit failed: {0}")]
    AllFitsFailed(String),
    #[error("model pool is empty")]
    EmptyPool,
    #[error("selected dimension never drops along the penalty grid")]
    FlatPath,
    #[error("slope regression needs at least two distinct model dimensions")]
    DegenerateRegression,
    #[error("sample space has {size} points, limit is {limit}")]
    SpaceTooLarge { size: f64, limit: usize },
    #[error("exhaustive collection has {models} models, budget is {budget}")]
    BudgetExceeded { models: usize, budget: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse error families, used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorFamily {
    Input,
    Numerical,
    FlatPath,
}

impl Error {
    pub fn family(&self) -> ErrorFamily {
        match self {
            Error::AllComponentsZero { .. }
            | Error::EmptyCluster { .. }
            | Error::DegenerateRegression
            | Error::SpaceTooLarge { .. }
            | Error::BudgetExceeded { .. }
            | Error::AllFitsFailed(_)
            | Error::EmptyPool => ErrorFamily::Numerical,
            Error::FlatPath => ErrorFamily::FlatPath,
            _ => ErrorFamily::Input,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
