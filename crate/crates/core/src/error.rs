use thiserror::Error;

/// Crate-wide error type.
///
/// Variants are grouped by the failing subsystem; messages carry enough
/// context (shapes, names, file positions) to act on without a debugger.
#[derive(Debug, Error)]
pub enum Error {
    // ---- tensor / kernel ----
    #[error("shape mismatch in {op}: {left} vs {right}")]
    ShapeMismatch {
        op: &'static str,
        left: String,
        right: String,
    },
    #[error("{op}: tensor data length {got} does not match shape {shape} (expected {expected})")]
    DataLength {
        op: &'static str,
        shape: String,
        expected: usize,
        got: usize,
    },
    #[error("{op}: empty sequence")]
    EmptySequence { op: &'static str },
    #[error("dropout rate must lie in [0, 1), got {rate}")]
    InvalidDropoutRate { rate: f64 },
    #[error("non-finite gradient in parameter `{name}`")]
    NonFiniteGradient { name: String },
    #[error("duplicate parameter name `{name}`")]
    DuplicateParameter { name: String },
    #[error("unknown parameter `{name}`")]
    UnknownParameter { name: String },

    // ---- encoder ----
    #[error("token id {id} out of range for vocabulary of size {vocab_size}")]
    TokenOutOfRange { id: u32, vocab_size: usize },
    #[error("position {position} out of range 1..={len}")]
    PositionOutOfRange { position: usize, len: usize },

    // ---- convcom / metrics ----
    #[error("cannot sample noise: split holds {available} conversation(s), need at least 2")]
    NoiseSourceExhausted { available: usize },
    #[error("cannot sample {requested} noise utterances: only {available} available")]
    InsufficientNoise { requested: usize, available: usize },
    #[error("recall@k undefined: no positive labels in ranking")]
    NoPositiveLabels,
    #[error("recall@k: k={k} outside 1..={n}")]
    InvalidCutoff { k: usize, n: usize },

    // ---- training ----
    #[error("training diverged: non-finite loss at epoch {epoch}, conversation {conversation}")]
    Divergence { epoch: usize, conversation: u64 },
    #[error("checkpoint incompatible: {reason}")]
    IncompatibleCheckpoint { reason: String },
    #[error("invalid configuration: {reason}")]
    InvalidConfig { reason: String },

    // ---- corpus / data ----
    #[error("{path}:{line}: {reason}")]
    MalformedInput {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("too few conversations to split: {count} (need at least 3)")]
    TooFewConversations { count: usize },
    #[error("split `{split}` is empty; training runs require every split non-empty")]
    EmptySplit { split: &'static str },
    #[error("record {record}: {reason}")]
    SchemaViolation { record: usize, reason: String },
    #[error("class `{class}` has zero training instances")]
    ZeroCountClass { class: String },
    #[error("unknown label `{label}` in record {record}: model knows {known:?}")]
    UnknownLabel {
        label: String,
        record: usize,
        known: Vec<String>,
    },

    // ---- statistics ----
    #[error("paired samples differ in length: {left} vs {right}")]
    SampleLengthMismatch { left: usize, right: usize },
    #[error("need at least 2 paired samples, got {n}")]
    TooFewSamples { n: usize },
    #[error("confusion matrix is empty")]
    EmptyConfusionMatrix,

    // ---- io ----
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad checkpoint: {reason}")]
    BadCheckpoint { path: String, reason: String },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
