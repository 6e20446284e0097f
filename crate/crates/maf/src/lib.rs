//! Iterative refinement with decoupled, category-bound feedback modules.
//!
//! A base generator drafts a solution; a roster of feedback modules — some
//! deterministic tools, some prompted critics, each bound to exactly one
//! error category — critiques it; a refiner rewrites it. Eager modules
//! trigger an immediate rewrite, lazy modules are summarized and combined
//! into a single rewrite per iteration. The loop is bounded, optionally
//! stops early when an answer oracle accepts, and every run leaves a full
//! JSONL audit trace.
//!
//! Module map:
//! - [`solution`]: shared domain types (solutions, feedback, specs, traces)
//! - [`checkers`]: tool-backed checking (equations, program execution)
//! - [`lm`]: model clients, budgets, scripted/record/replay backends
//! - [`prompts`]: few-shot prompt bundles and their file format
//! - [`feedback`]: critic output parsing, summarization, module registry
//! - [`orchestrator`]: the refinement loop itself
//! - [`eval`]: datasets, answer checking, metrics, reports, ablations
//! - [`fixtures`]: seeded error corpora for checker tests

pub mod checkers;
pub mod error;
pub mod eval;
pub mod feedback;
pub mod fixtures;
pub mod lm;
pub mod orchestrator;
pub mod prompts;
pub mod solution;
mod util;

pub use error::{Error, Result};
pub use eval::{
    answers_match, build_report, load_dataset, normalize_answer, run_batch, AblationPlan,
    AblationVariant, AnswerExtractor, EvalHarness, ProblemRecord, ReportOptions, RunReport,
};
pub use feedback::{
    combine_feedbacks, parse_feedback_text, summarize_feedback, LmCritic, ModuleHandle,
    ModuleRegistry, RegistryOptions,
};
pub use lm::{
    ChatMessage, ChatRole, HttpLmClient, HttpLmConfig, LmClient, LmRequest, LmStage, RecordingLm,
    ReplayLm, ScriptRule, ScriptedLm, SessionMode, TokenBudget,
};
pub use orchestrator::{AnswerOracle, DecodingParams, Orchestrator, RolePrompts, RunConfig};
pub use prompts::{PromptBundle, PromptRole};
pub use solution::{
    segment_solution, ErrorCategory, Feedback, FeedbackModuleSpec, IterationRecord, ModuleBackend,
    ReasoningStep, RefineMode, RunTrace, Solution, SolutionKind, StepFeedback, StopReason, Task,
    DEFAULT_OK_MARKER,
};
