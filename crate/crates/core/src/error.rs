use thiserror::Error;

use crate::units::Bytes;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid specification: {}", .0.join("; "))]
    InvalidSpec(Vec<String>),

    #[error("over-commit: requested {requested} of B-APM but only {available} per node")]
    OverCommit { requested: Bytes, available: Bytes },

    #[error("out of memory: {needed} per node needed, {available} main memory available")]
    OutOfMemory { needed: Bytes, available: Bytes },

    #[error("allocation conflict: node {node} assigned to both `{first}` and `{second}`")]
    AllocationConflict {
        node: u32,
        first: String,
        second: String,
    },

    #[error("workflow contains a cycle through `{0}`")]
    CyclicWorkflow(String),

    #[error("insufficient AppDirect capacity for `{what}`: {needed} per node, {available} available")]
    InsufficientCapacity {
        what: String,
        needed: Bytes,
        available: Bytes,
    },

    #[error("an I/O access pattern is required to choose an AppDirect strategy")]
    PatternRequired,

    #[error("parameter group `{group}` is unidentifiable: {targets} targets for {params} free parameters")]
    Unidentifiable {
        group: String,
        targets: usize,
        params: usize,
    },

    #[error("fit for group `{group}` did not converge: max relative error {max_error:.4}")]
    NoConvergence { group: String, max_error: f64 },

    #[error("unknown scenario `{id}`; valid ids: {}", .valid.join(", "))]
    UnknownScenario { id: String, valid: Vec<String> },

    #[error("unknown {kind} `{name}`")]
    Unknown { kind: &'static str, name: String },

    #[error("malformed JSON: {0}")]
    Json(serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

// not a source, so error chains do not print the parser message twice
impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e)
    }
}

impl Error {
    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidSpec(_)
            | Error::Json(_)
            | Error::Io(_)
            | Error::UnknownScenario { .. }
            | Error::Unknown { .. }
            | Error::PatternRequired => 1,
            _ => 2,
        }
    }
}
