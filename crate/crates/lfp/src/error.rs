use thiserror::Error;

/// Engine-wide error type. Variants that indicate a bug in the engine itself
/// (rather than in user input or user data) map to exit code 2 in the CLI.
#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {path}")]
    MissingFile { path: String },

    #[error("malformed csv at line {line}: {msg}")]
    MalformedCsv { line: u64, msg: String },

    #[error("unknown column: {0}")]
    UnknownColumn(String),

    #[error("duplicate column: {0}")]
    DuplicateColumn(String),

    #[error("column {column}, row {row}: cannot coerce {value:?} to {dtype}")]
    TypeCoercion {
        column: String,
        row: u64,
        value: String,
        dtype: String,
    },

    #[error("type mismatch: {0}")]
    TypeMismatch(String),

    #[error("empty key list")]
    EmptyKeyList,

    #[error("{line}:{col}: {msg}")]
    Syntax { line: u32, col: u32, msg: String },

    #[error("unknown external function: {0}")]
    UnknownExternal(String),

    #[error("unresolved node id: {0}")]
    UnresolvedUid(u32),

    #[error("memory budget exceeded at node {uid}: {what} needs {state_bytes} bytes (budget {budget})")]
    MemoryBudget {
        uid: u32,
        what: &'static str,
        state_bytes: u64,
        budget: u64,
    },

    #[error("node {uid} ({action}): {source}")]
    Node {
        uid: u32,
        action: String,
        #[source]
        source: Box<Error>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("internal error: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Wrap an error with the task-graph node it surfaced at.
    pub fn at_node(self, uid: u32, action: &str) -> Error {
        match self {
            Error::Node { .. } => self,
            other => Error::Node {
                uid,
                action: action.to_string(),
                source: Box::new(other),
            },
        }
    }

    /// CLI exit code: 1 for user/program/data errors, 2 for engine bugs.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::UnresolvedUid(_) | Error::Internal(_) => 2,
            Error::Node { source, .. } => source.exit_code(),
            _ => 1,
        }
    }
}
