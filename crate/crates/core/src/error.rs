use thiserror::Error;

/// Crate-wide error type. Validation problems carry the full list of
/// violations so callers can report every defect in one pass.
#[derive(Debug, Error)]
pub enum Error {
    #[error("instance validation failed:\n{}", format_violations(.0))]
    Validation(Vec<Violation>),

    #[error("action enumeration limited to {limit} arms, got {n}")]
    TooManyArms { n: usize, limit: usize },

    #[error("joint solve limited to {limit} arms (got {n}) or {max_states} joint states (got {states})")]
    JointTooLarge {
        n: usize,
        limit: usize,
        states: usize,
        max_states: usize,
    },

    #[error("value iteration did not converge: residual {residual:.3e} after {iterations} sweeps")]
    NoConvergence { residual: f64, iterations: usize },

    #[error("subsidy bracket [{lo}, {hi}] does not isolate the index for arm state {state}: arm is not indexable under this solver")]
    NotIndexable { lo: f64, hi: f64, state: usize },

    #[error("global reward table has no entry for the queried (state, action) pair")]
    MissingTableEntry,

    #[error("unknown global reward kind `{0}`")]
    UnknownRewardKind(String),

    #[error("{context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid parameter {name}: {message}")]
    InvalidParameter { name: &'static str, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// One validation defect, addressable enough to fix the offending field.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    /// Arm index when the defect is arm-local.
    pub arm: Option<usize>,
    /// Dotted path of the offending field, e.g. `arms[2].transitions[1][0]`.
    pub field: String,
    pub detail: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.arm {
            Some(i) => write!(f, "arm {i}: {}: {}", self.field, self.detail),
            None => write!(f, "{}: {}", self.field, self.detail),
        }
    }
}

fn format_violations(list: &[Violation]) -> String {
    list.iter()
        .map(|v| format!("  - {v}"))
        .collect::<Vec<_>>()
        .join("\n")
}

pub type Result<T> = std::result::Result<T, Error>;
