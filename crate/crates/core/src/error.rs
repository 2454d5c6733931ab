use thiserror::Error;

pub type Result<T> = std::result::Result<T, CometError>;

#[derive(Debug, Error)]
pub enum CometError {
    #[error("invalid tensor shape: {0}")]
    Shape(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("mode {mode} out of range for an order-{order} tensor")]
    ModeOutOfRange { mode: usize, order: usize },

    #[error("invalid compression dimensions: {0}")]
    Compression(String),

    /// Subject and observation numbers are 1-based, as they appear to users.
    #[error("invalid dataset at subject {subject}{}: {kind}", observation.map(|o| format!(", observation {o}")).unwrap_or_default())]
    Dataset {
        subject: usize,
        observation: Option<usize>,
        kind: DatasetIssue,
    },

    #[error("invalid hyperparameters: {0}")]
    Hyperparams(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numerical failure{}: {what}", iteration.map(|t| format!(" at iteration {t}")).unwrap_or_default())]
    Numerical {
        iteration: Option<usize>,
        what: String,
    },

    #[error("chain is empty")]
    EmptyChain,

    #[error("level must lie strictly between 0 and 1, got {0}")]
    Level(f64),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DatasetIssue {
    NoSubjects,
    EmptySubject,
    XDims { expected: Vec<usize>, found: Vec<usize> },
    ZDims { expected: Vec<usize>, found: Vec<usize> },
    NonFinite { field: &'static str },
}

impl std::fmt::Display for DatasetIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DatasetIssue::NoSubjects => write!(f, "dataset has no subjects"),
            DatasetIssue::EmptySubject => write!(f, "subject has no observations"),
            DatasetIssue::XDims { expected, found } => {
                write!(f, "X has dims {found:?}, expected {expected:?}")
            }
            DatasetIssue::ZDims { expected, found } => {
                write!(f, "Z has dims {found:?}, expected {expected:?}")
            }
            DatasetIssue::NonFinite { field } => write!(f, "non-finite value in {field}"),
        }
    }
}

impl CometError {
    pub(crate) fn numerical(what: impl Into<String>) -> Self {
        CometError::Numerical {
            iteration: None,
            what: what.into(),
        }
    }

    /// Attaches the Gibbs iteration index to a numerical failure.
    pub fn at_iteration(self, t: usize) -> Self {
        match self {
            CometError::Numerical { what, .. } => CometError::Numerical {
                iteration: Some(t),
                what,
            },
            other => other,
        }
    }
}
