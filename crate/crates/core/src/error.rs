use thiserror::Error;

/// Errors produced anywhere in the optimization pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("HTML parse error: {0}")]
    Parse(String),

    #[error("stale chunk map: expected source hash {expected}, found {found}")]
    StaleMap { expected: String, found: String },

    #[error("conflicting edits for chunk {0}")]
    Conflict(usize),

    #[error("chunk index {index} out of range (map has {len} chunks)")]
    Range { index: usize, len: usize },

    #[error("transport error: {0}")]
    Transport(String),

    #[error("no scripted response matches prompt tagged `{tag}`")]
    UnmatchedPrompt { tag: String },

    #[error("retrieval error: {0}")]
    Retrieval(String),

    #[error("generation format error: {0}")]
    GenerationFormat(String),

    #[error("selection format error: {0}")]
    SelectionFormat(String),

    #[error("clustering error: {0}")]
    Clustering(String),

    #[error("diagnosis format error: {0}")]
    DiagnosisFormat(String),

    #[error("template error: missing argument `{0}`")]
    Template(String),

    #[error("tool output error: {0}")]
    ToolOutput(String),

    #[error("every repair tool is masked for this trajectory")]
    PolicyExhausted,

    #[error("targeting error: {0}")]
    Targeting(String),

    #[error("profile error: {0}")]
    Profile(String),

    #[error("dedup integrity error: {0}")]
    DedupIntegrity(String),

    #[error("filter integrity error: {0}")]
    FilterIntegrity(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Wrap an error with the pipeline stage that produced it.
    pub fn at_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Errors that should abort a whole run rather than a single query.
    pub fn is_fatal(&self) -> bool {
        match self {
            Error::Transport(_) | Error::UnmatchedPrompt { .. } | Error::Parse(_) => true,
            Error::Stage { source, .. } => source.is_fatal(),
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
