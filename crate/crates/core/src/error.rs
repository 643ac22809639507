use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("index out of range: {0}")]
    Index(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },

    #[error("malformed circuit structure: {0}")]
    Structure(String),

    #[error(
        "compilation exceeded node limit {limit} ({nodes} nodes, {cache_entries} cached residuals, deepest level {depth})"
    )]
    CompilationBlowup {
        limit: usize,
        nodes: usize,
        cache_entries: usize,
        depth: usize,
    },

    #[error("constraint has zero mass under the given weights")]
    Unsatisfiable,

    #[error("all {particles} particles have zero weight (constraint: {constraint}, model: {model})")]
    AllDead {
        particles: usize,
        constraint: String,
        model: String,
    },

    #[error("instance too large for exhaustive enumeration: {0}")]
    TooLarge(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
