use thiserror::Error;

/// Coarse classification used for CLI exit codes and FFI status codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Parse,
    Validation,
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    // Network structure.
    #[error("duplicate node name `{0}`")]
    DuplicateNode(String),
    #[error("node `{node}` names unknown parent `{parent}`")]
    UnknownParent { node: String, parent: String },
    #[error("node `{node}` lists parent `{parent}` more than once")]
    DuplicateParent { node: String, parent: String },
    #[error("cycle detected through node `{0}`")]
    Cycle(String),
    #[error("node `{node}` has a domain with {size} value(s); at least 2 are required")]
    DomainTooSmall { node: String, size: usize },
    #[error("node `{node}` repeats domain label `{label}`")]
    DuplicateLabel { node: String, label: String },
    #[error("unknown node `{0}`")]
    UnknownNode(String),

    // Data.
    #[error("data has no column for node `{0}`")]
    MissingColumn(String),
    #[error("record {record}: missing value for column `{column}`")]
    MissingValue { record: usize, column: String },
    #[error("record {record}: value `{label}` in column `{column}` is not in the declared domain")]
    UnknownLabel {
        record: usize,
        column: String,
        label: String,
    },
    #[error("record {record}: expected {expected} fields, found {found}")]
    RecordWidth {
        record: usize,
        expected: usize,
        found: usize,
    },
    #[error("shape mismatch: {0}")]
    Shape(String),

    // Priors and hyperparameters.
    #[error("invalid hyperparameter `{name}` = {value}: {constraint}")]
    Hyperparameter {
        name: String,
        value: String,
        constraint: String,
    },
    #[error("row {row} has an improper Dirichlet (total shape is zero)")]
    ImproperRow { row: usize },
    #[error("precondition failed: {0}")]
    Precondition(String),

    // Numerics.
    #[error("quadrature failed to reach tolerance {tol:e} (estimated error {err:e}) after {evaluations} panels")]
    Quadrature { tol: f64, err: f64, evaluations: usize },
    #[error("matrix is not symmetric nonnegative definite: {0}")]
    NotPsd(String),
    #[error("numerical failure: {0}")]
    Numeric(String),

    // Files.
    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Parse { .. } | Error::Io(_) => ErrorKind::Parse,
            Error::Quadrature { .. } | Error::NotPsd(_) | Error::Numeric(_) => ErrorKind::Numeric,
            _ => ErrorKind::Validation,
        }
    }

    pub fn hyper(name: &str, value: impl ToString, constraint: &str) -> Self {
        Error::Hyperparameter {
            name: name.to_string(),
            value: value.to_string(),
            constraint: constraint.to_string(),
        }
    }

    pub fn parse(context: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.to_string(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
