//! Crate-wide error type.

use thiserror::Error;

/// A single configuration constraint violation, addressed by its path in the
/// config document (e.g. `layer1.lambda`).
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigViolation {
    pub path: String,
    pub message: String,
}

impl std::fmt::Display for ConfigViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

/// Stage of the assessment pipeline, carried by hard errors so callers can
/// emit a report stub naming where the run aborted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Ingest,
    Layer1,
    Layer2,
    Layer3,
    Fusion,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Stage::Ingest => "ingest",
            Stage::Layer1 => "layer1",
            Stage::Layer2 => "layer2",
            Stage::Layer3 => "layer3",
            Stage::Fusion => "fusion",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty dialogue")]
    EmptyDialogue,

    #[error("invalid dialogue: {0}")]
    InvalidDialogue(String),

    #[error("embedding dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("embedding provider error for {endpoint}: {cause}")]
    EmbeddingProvider { endpoint: String, cause: String },

    #[error("pattern '{pattern_id}' has no keywords")]
    PatternNoKeywords { pattern_id: String },

    #[error("pattern '{pattern_id}' has no semantic nodes")]
    PatternNoNodes { pattern_id: String },

    #[error("invalid pattern '{pattern_id}': {message}")]
    InvalidPattern { pattern_id: String, message: String },

    #[error("pattern library is empty")]
    EmptyLibrary,

    #[error("unknown template: {0}")]
    UnknownTemplate(String),

    #[error("missing slot: {slot}")]
    MissingSlot { template: String, slot: String },

    #[error("no scripted rule matches and no catch-all is defined")]
    NoMatchingRule,

    #[error("scripted fixture invalid: {0}")]
    InvalidFixture(String),

    #[error("backend transport failed after {attempts} attempts: {log:?}")]
    Transport { attempts: usize, log: Vec<String> },

    #[error("backend returned status {status}: {body}")]
    HttpStatus { status: u16, body: String },

    #[error("backend is not configured: {0}")]
    BackendNotConfigured(String),

    #[error("backend returned empty completion text")]
    EmptyCompletion,

    #[error("unparseable judge label: {raw:?}")]
    JudgeParse { raw: String },

    #[error("score out of range: {name} = {value}")]
    ScoreOutOfRange { name: String, value: f64 },

    #[error("invalid config:\n{}", format_violations(.0))]
    InvalidConfig(Vec<ConfigViolation>),

    #[error("line {line}: {message}")]
    CorpusLine { line: usize, message: String },

    #[error("duplicate dialogue id: {0}")]
    DuplicateId(String),

    #[error("metrics error: {0}")]
    Metrics(String),

    #[error("unknown report format: {0}")]
    UnknownFormat(String),

    #[error("{stage} failed: {source}")]
    Pipeline {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(String),
}

fn format_violations(violations: &[ConfigViolation]) -> String {
    violations
        .iter()
        .map(|v| format!("  {v}"))
        .collect::<Vec<_>>()
        .join("\n")
}

impl Error {
    /// Wrap an error with the pipeline stage it occurred in.
    pub fn at_stage(self, stage: Stage) -> Error {
        Error::Pipeline {
            stage,
            source: Box::new(self),
        }
    }

    /// The failing stage, if this is a pipeline error.
    pub fn stage(&self) -> Option<Stage> {
        match self {
            Error::Pipeline { stage, .. } => Some(*stage),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
