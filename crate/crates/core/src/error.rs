use thiserror::Error;

/// Crate-wide error type. Variants carry enough context to print a one-line
/// diagnostic naming the offending input.
#[derive(Debug, Error)]
pub enum Error {
    // ── tensor engine ────────────────────────────────────────────────
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected {expected}, got shape {shape:?}")]
    BadShape {
        op: &'static str,
        expected: &'static str,
        shape: Vec<usize>,
    },
    #[error("{op}: non-finite value at flat index {index}")]
    NonFinite { op: &'static str, index: usize },
    #[error("cosine_similarity: zero-norm {side} operand")]
    ZeroNorm { side: &'static str },
    #[error("cross_entropy_nll: every position is padding")]
    AllPadded,
    #[error("cross_entropy_nll: target id {id} out of range for vocab size {vocab}")]
    TargetOutOfRange { id: u32, vocab: usize },
    #[error("backward: loss must be a scalar, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("adam_step: parameter has {param} elements but {what} has {other}")]
    AdamShape {
        param: usize,
        what: &'static str,
        other: usize,
    },

    // ── tokenizer ────────────────────────────────────────────────────
    #[error("build_vocab: corpus is empty")]
    EmptyCorpus,
    #[error("build_vocab: max_size must exceed the {0} special tokens")]
    VocabTooSmall(usize),
    #[error("encode_words: empty word sequence")]
    EmptyWords,
    #[error("decode_ids: unknown token id {0}")]
    UnknownTokenId(u32),
    #[error("vocab file {path}: {reason}")]
    VocabFile { path: String, reason: String },

    // ── graph builder ────────────────────────────────────────────────
    #[error("annotation out of range: {kind}[{index}] {detail}")]
    AnnotationOutOfRange {
        kind: &'static str,
        index: usize,
        detail: String,
    },

    // ── model ────────────────────────────────────────────────────────
    #[error("sequence of {len} subwords exceeds maximum length {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("{what}: empty sequence")]
    EmptySequence { what: &'static str },
    #[error("missing parameter {0}")]
    MissingParam(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    // ── training / checkpoint ────────────────────────────────────────
    #[error("non-finite loss at step {step} ({which})")]
    NonFiniteLoss { step: u64, which: &'static str },
    #[error("checkpoint {path}: unsupported version {found} (expected {expected})")]
    CheckpointVersion {
        path: String,
        found: String,
        expected: u32,
    },
    #[error("checkpoint {path}: {reason}")]
    CheckpointFormat { path: String, reason: String },
    #[error("checkpoint and corpus/vocab are incompatible: {0}")]
    VocabMismatch(String),

    // ── corpus / config files ────────────────────────────────────────
    #[error("record {id}: invalid {field}: {reason}")]
    RecordInvalid {
        id: String,
        field: String,
        reason: String,
    },
    #[error("corpus {path} line {line}: {reason}")]
    CorpusParse {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("config {path} line {line}: {reason}")]
    ConfigParse {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("no record with id {0} in corpus")]
    NoSuchRecord(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
