use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid event type: {0}")]
    InvalidEventType(String),

    #[error("empty cohort")]
    EmptyCohort,

    #[error("invalid lab value: {0}")]
    InvalidLabValue(f64),

    #[error("invalid reference range [{low}, {high}]")]
    InvalidRange { low: f64, high: f64 },

    #[error("cycle in type hierarchy: {}", .0.join(" -> "))]
    HierarchyCycle(Vec<String>),

    #[error("no such node: {0}")]
    NoSuchNode(String),

    #[error("invalid window: window_days must be at least 1, got {0}")]
    InvalidWindow(i64),

    #[error("invalid query: {0}")]
    InvalidQuery(String),

    #[error("empty aligned cohort")]
    EmptyAlignedCohort,

    #[error("no outcome label for matched patient {0}")]
    MissingLabel(String),

    #[error("degenerate outcome: every matched patient has the same label")]
    DegenerateOutcome,

    #[error("budget too small: at least {minimum} nodes are needed")]
    BudgetTooSmall { minimum: usize },

    #[error("node {0} is not in the current cut")]
    NotInCut(String),

    #[error("cannot expand leaf {0}")]
    CannotExpandLeaf(String),

    #[error("cannot roll up into {node}: {reason}")]
    CannotRollUp { node: String, reason: String },

    #[error("no resources found")]
    NoResources,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::InvalidEventType(_) => "invalid_event_type",
            Error::EmptyCohort => "empty_cohort",
            Error::InvalidLabValue(_) => "invalid_lab_value",
            Error::InvalidRange { .. } => "invalid_range",
            Error::HierarchyCycle(_) => "hierarchy_cycle",
            Error::NoSuchNode(_) => "no_such_node",
            Error::InvalidWindow(_) => "invalid_window",
            Error::InvalidQuery(_) => "invalid_query",
            Error::EmptyAlignedCohort => "empty_aligned_cohort",
            Error::MissingLabel(_) => "missing_label",
            Error::DegenerateOutcome => "degenerate_outcome",
            Error::BudgetTooSmall { .. } => "budget_too_small",
            Error::NotInCut(_) => "not_in_cut",
            Error::CannotExpandLeaf(_) => "cannot_expand_leaf",
            Error::CannotRollUp { .. } => "cannot_roll_up",
            Error::NoResources => "no_resources",
            Error::InvalidConfig(_) => "invalid_config",
            Error::Json(_) => "json",
        }
    }

    /// Whether the error stems from bad input rather than an engine fault.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Error::Json(_))
    }
}
