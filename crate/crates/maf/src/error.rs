//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot segment an empty solution text")]
    EmptySolution,

    #[error("empty completion from the language model")]
    EmptyCompletion,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("expression parse error at byte {position}: {message}")]
    ExprParse { position: usize, message: String },

    #[error("expression evaluation error: {0}")]
    ExprEval(String),

    #[error("interpreter not available: {0}")]
    InterpreterMissing(String),

    #[error("prompt file {path}: {message}")]
    PromptFormat { path: String, message: String },

    #[error("prompt bundle for role {role} is missing placeholder {{{placeholder}}}")]
    MissingPlaceholder { role: String, placeholder: String },

    #[error("unbound placeholder {{{0}}} in prompt template")]
    UnboundPlaceholder(String),

    #[error("temperature must be 0 (greedy decoding), got {0}")]
    NonGreedyTemperature(f32),

    #[error("max_tokens {requested} exceeds the {stage} stage budget of {budget}")]
    BudgetExceeded {
        stage: String,
        requested: u32,
        budget: u32,
    },

    #[error("lm transport failure: {0}")]
    LmTransport(String),

    #[error("lm authentication/configuration failure: {0}")]
    LmAuth(String),

    #[error("no scripted response matches request #{index}")]
    ScriptMiss { index: usize },

    #[error("replay session has no response for request digest {digest}")]
    ReplayMiss { digest: String },

    #[error("dataset record {record}: {message}")]
    DatasetRecord { record: String, message: String },

    #[error("dataset {path} line {line}: {message}")]
    DatasetParse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("duplicate problem id {0}")]
    DuplicateProblemId(String),

    #[error("solve rate is undefined for an empty result set")]
    EmptyResults,

    #[error("cannot combine an empty feedback list")]
    EmptyFeedbackList,

    #[error("unknown module {name}; known modules: {known}")]
    UnknownModule { name: String, known: String },

    #[error("category {0} is not supported for error seeding")]
    UnseedableCategory(String),

    #[error("invalid ablation plan: {0}")]
    AblationPlan(String),

    #[error("trace file {path} line {line}: {message}")]
    TraceParse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("trace directory {0} contains no readable traces")]
    NoTraces(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
