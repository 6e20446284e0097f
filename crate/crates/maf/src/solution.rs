//! Shared domain types: solutions, step-level feedback, module specs, and run traces.
//!
//! Everything here is plain data. Construction validates the documented
//! invariants, serde mirrors the field names in snake_case, and all types are
//! immutable after construction so they can be shared across threads freely.

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default phrase a critic uses for a step with no issues.
///
/// Matching is always a case-insensitive substring test against this marker.
pub const DEFAULT_OK_MARKER: &str = "looks good";

/// The closed set of error categories a feedback module can be bound to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCategory {
    Arithmetic,
    ProgramSyntax,
    VariableNaming,
    MissingStep,
    Coherency,
    Redundancy,
    Repetition,
    Hallucination,
    Commonsense,
    Factuality,
    Grammar,
}

impl ErrorCategory {
    pub const ALL: [ErrorCategory; 11] = [
        ErrorCategory::Arithmetic,
        ErrorCategory::ProgramSyntax,
        ErrorCategory::VariableNaming,
        ErrorCategory::MissingStep,
        ErrorCategory::Coherency,
        ErrorCategory::Redundancy,
        ErrorCategory::Repetition,
        ErrorCategory::Hallucination,
        ErrorCategory::Commonsense,
        ErrorCategory::Factuality,
        ErrorCategory::Grammar,
    ];

    /// Canonical human-readable name, used in combined-feedback banners.
    pub fn name(&self) -> &'static str {
        match self {
            ErrorCategory::Arithmetic => "Arithmetic",
            ErrorCategory::ProgramSyntax => "Program Syntax",
            ErrorCategory::VariableNaming => "Variable Naming",
            ErrorCategory::MissingStep => "Missing Step",
            ErrorCategory::Coherency => "Coherency",
            ErrorCategory::Redundancy => "Redundancy",
            ErrorCategory::Repetition => "Repetition",
            ErrorCategory::Hallucination => "Hallucination",
            ErrorCategory::Commonsense => "Commonsense",
            ErrorCategory::Factuality => "Factuality",
            ErrorCategory::Grammar => "Grammar",
        }
    }
}

impl fmt::Display for ErrorCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Task family. Fixes the solution shape, decoding budgets, and exemplar
/// counts for a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Math,
    Logic,
    Qa,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Math, Task::Logic, Task::Qa];

    /// The shape of solution this task family produces.
    pub fn solution_kind(&self) -> SolutionKind {
        match self {
            Task::Math => SolutionKind::Program,
            Task::Logic => SolutionKind::EntailmentTree,
            Task::Qa => SolutionKind::ChainOfThought,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Task::Math => "math",
            Task::Logic => "logic",
            Task::Qa => "qa",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Task> {
        match s {
            "math" => Ok(Task::Math),
            "logic" => Ok(Task::Logic),
            "qa" => Ok(Task::Qa),
            other => Err(Error::InvalidConfig(format!(
                "unknown task {other:?}; expected math, logic, or qa"
            ))),
        }
    }
}

/// One line of a solution, with its 0-based position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasoningStep {
    pub index: usize,
    pub text: String,
}

/// What shape of solution a task produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolutionKind {
    Program,
    ChainOfThought,
    EntailmentTree,
}

/// A candidate solution: the verbatim generation plus its line-level segmentation.
///
/// Steps are physical lines. Joining `steps` with `\n` reproduces `raw_text`
/// byte-for-byte; blank lines are kept as empty steps to preserve that.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Solution {
    pub kind: SolutionKind,
    pub steps: Vec<ReasoningStep>,
    pub raw_text: String,
    pub extracted_answer: Option<String>,
}

impl Solution {
    pub fn step_count(&self) -> usize {
        self.steps.len()
    }

    /// Returns a copy with the extracted answer recorded.
    pub fn with_answer(&self, answer: Option<String>) -> Solution {
        let mut out = self.clone();
        out.extracted_answer = answer;
        out
    }
}

/// Splits raw generation text into line steps.
///
/// Lossless: blank lines become empty steps so the steps rejoin to the input.
pub fn segment_solution(raw_text: &str, kind: SolutionKind) -> Result<Solution> {
    if raw_text.is_empty() {
        return Err(Error::EmptySolution);
    }
    let steps = raw_text
        .split('\n')
        .enumerate()
        .map(|(index, text)| ReasoningStep {
            index,
            text: text.to_string(),
        })
        .collect();
    Ok(Solution {
        kind,
        steps,
        raw_text: raw_text.to_string(),
        extracted_answer: None,
    })
}

/// One module's verdict on one step.
///
/// An `ok` entry always carries the configured marker phrase as its comment;
/// the verbatim critic wording is preserved in the owning [`Feedback`]'s
/// `raw_text`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepFeedback {
    pub step_index: usize,
    pub ok: bool,
    pub comment: String,
}

impl StepFeedback {
    pub fn ok(step_index: usize, ok_marker: &str) -> StepFeedback {
        StepFeedback {
            step_index,
            ok: true,
            comment: ok_marker.to_string(),
        }
    }

    pub fn issue(step_index: usize, comment: impl Into<String>) -> StepFeedback {
        StepFeedback {
            step_index,
            ok: false,
            comment: comment.into(),
        }
    }
}

/// One feedback module's critique of a solution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feedback {
    pub module_name: String,
    pub category: ErrorCategory,
    pub step_feedback: Vec<StepFeedback>,
    pub revision_required: bool,
    pub raw_text: String,
}

impl Feedback {
    /// Builds a feedback record; `revision_required` is derived from the
    /// per-step flags rather than trusted from the critic.
    pub fn new(
        module_name: impl Into<String>,
        category: ErrorCategory,
        step_feedback: Vec<StepFeedback>,
        raw_text: impl Into<String>,
    ) -> Feedback {
        let revision_required = step_feedback.iter().any(|s| !s.ok);
        Feedback {
            module_name: module_name.into(),
            category,
            step_feedback,
            revision_required,
            raw_text: raw_text.into(),
        }
    }
}

/// When a module's feedback is acted on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefineMode {
    /// Refine immediately after this module's feedback, before later modules run.
    Eager,
    /// Collect with other lazy feedback and refine once per iteration.
    Lazy,
}

/// What produces a module's feedback.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModuleBackend {
    #[serde(rename = "tool:arithmetic")]
    ToolArithmetic,
    #[serde(rename = "tool:interpreter")]
    ToolInterpreter,
    #[serde(rename = "lm-prompt")]
    LmPrompt,
}

impl ModuleBackend {
    pub fn is_lm(&self) -> bool {
        matches!(self, ModuleBackend::LmPrompt)
    }
}

/// Declarative binding of a module name to a category, backend, and strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackModuleSpec {
    pub name: String,
    pub category: ErrorCategory,
    pub mode: RefineMode,
    pub backend: ModuleBackend,
    /// Required iff `backend` is `lm-prompt`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_path: Option<PathBuf>,
    pub max_feedback_tokens: u32,
}

impl FeedbackModuleSpec {
    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::InvalidConfig("module name must be nonempty".into()));
        }
        if self.max_feedback_tokens == 0 {
            return Err(Error::InvalidConfig(format!(
                "modules.{}.max_feedback_tokens: must be positive",
                self.name
            )));
        }
        if self.backend.is_lm() && self.prompt_path.is_none() {
            return Err(Error::InvalidConfig(format!(
                "modules.{}.prompt_path: required for lm-prompt backends",
                self.name
            )));
        }
        Ok(())
    }
}

/// One eager feedback-and-refine event inside an iteration.
///
/// When the feedback required no revision, `solution_after` equals
/// `solution_before`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EagerEvent {
    pub module_name: String,
    pub feedback: Feedback,
    pub solution_before: Solution,
    pub solution_after: Solution,
}

/// Complete audit of one refinement iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// 1-based iteration index.
    pub iteration: usize,
    pub eager_events: Vec<EagerEvent>,
    pub lazy_feedbacks: Vec<Feedback>,
    /// Present iff at least one lazy feedback required revision.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub combined_lazy_feedback: Option<String>,
    pub solution_out: Solution,
}

/// Why a run stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxIterations,
    OracleCorrect,
    CleanFeedback,
    /// A transport failure ended the run early; see the trace's `failure` field.
    Aborted,
}

/// Full audit of one problem's run: initial generation, every iteration, and
/// why the loop stopped. Serialized as one JSON object per line (JSONL).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub problem_id: String,
    pub initial_solution: Solution,
    pub iterations: Vec<IterationRecord>,
    pub final_solution: Solution,
    pub stop_reason: StopReason,
    pub lm_call_count: u64,
    /// Set when the run aborted on a transport failure after retries.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl RunTrace {
    pub fn to_jsonl_line(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_jsonl_line(line: &str) -> Result<RunTrace> {
        Ok(serde_json::from_str(line)?)
    }
}
