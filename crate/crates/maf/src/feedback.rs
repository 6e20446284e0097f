//! Feedback modules: parsing critic output, selective summarization,
//! combining lazy feedback, and the registry that binds module specs to
//! their backends.
//!
//! Every module addresses exactly one error category and is either a tool
//! (arithmetic re-derivation, interpreter syntax check) or a prompted critic.
//! Module output is normalized into per-step entries; a step is "ok" exactly
//! when its comment contains the configured marker phrase, matched
//! case-insensitively.

use std::fmt::Write as _;
use std::sync::Arc;

use once_cell::sync::Lazy;
use regex::Regex;

use crate::checkers::{check_arithmetic, check_program_syntax, ProgramExecutor};
use crate::error::{Error, Result};
use crate::lm::{ChatMessage, LmClient, LmRequest, LmStage, TokenBudget};
use crate::prompts::{PromptBundle, PromptRole};
use crate::solution::{
    ErrorCategory, Feedback, FeedbackModuleSpec, ModuleBackend, RefineMode, Solution,
    StepFeedback, DEFAULT_OK_MARKER,
};

static STEP_LINE: Lazy<Regex> =
    Lazy::new(|| Regex::new(r"(?i)^\s*step\s+(\d+)\s*:\s*(.*)$").unwrap());

fn contains_marker(text: &str, marker: &str) -> bool {
    text.to_lowercase().contains(&marker.to_lowercase())
}

/// Parses critic text of the form `Step k: comment` into per-step entries.
///
/// Lines that do not start a new step continue the previous entry's comment.
/// Text before the first step line is preamble and is dropped. Step numbers
/// are 1-based in the text; an entry whose accumulated comment contains the
/// marker is normalized to carry exactly the marker phrase (the verbatim
/// wording stays in the owning feedback's `raw_text`).
pub fn parse_feedback_text(raw: &str, ok_marker: &str) -> Vec<StepFeedback> {
    struct Partial {
        step_index: usize,
        comment: String,
    }
    let mut partials: Vec<Partial> = Vec::new();
    for line in raw.lines() {
        if let Some(caps) = STEP_LINE.captures(line) {
            let number: usize = caps[1].parse().unwrap_or(0);
            partials.push(Partial {
                step_index: number.saturating_sub(1),
                comment: caps[2].trim_end().to_string(),
            });
        } else if let Some(last) = partials.last_mut() {
            last.comment.push('\n');
            last.comment.push_str(line.trim_end());
        }
    }
    partials
        .into_iter()
        .map(|p| {
            if contains_marker(&p.comment, ok_marker) {
                StepFeedback::ok(p.step_index, ok_marker)
            } else {
                StepFeedback::issue(p.step_index, p.comment.trim().to_string())
            }
        })
        .collect()
}

/// Renders entries back to `Step k: comment` lines; the canonical raw text
/// for tool feedback and summarized feedback.
fn entries_to_text(entries: &[StepFeedback]) -> String {
    let mut out = String::new();
    for entry in entries {
        if !out.is_empty() {
            out.push('\n');
        }
        let _ = write!(out, "Step {}: {}", entry.step_index + 1, entry.comment);
    }
    out
}

/// Selective summarization: keeps only the entries that actually report a
/// problem, dropping every ok step. Idempotent.
pub fn summarize_feedback(feedback: &Feedback, ok_marker: &str) -> Feedback {
    let retained: Vec<StepFeedback> = feedback
        .step_feedback
        .iter()
        .filter(|e| !e.ok && !contains_marker(&e.comment, ok_marker))
        .cloned()
        .collect();
    let raw_text = entries_to_text(&retained);
    Feedback::new(
        feedback.module_name.clone(),
        feedback.category,
        retained,
        raw_text,
    )
}

/// Concatenates lazy feedback under per-category banners, in module order.
pub fn combine_feedbacks(feedbacks: &[Feedback]) -> Result<String> {
    if feedbacks.is_empty() {
        return Err(Error::EmptyFeedbackList);
    }
    Ok(feedbacks
        .iter()
        .map(|fb| format!("### {} Feedback\n{}", fb.category.name(), fb.raw_text))
        .collect::<Vec<_>>()
        .join("\n\n"))
}

/// A prompted feedback module bound to one error category.
#[derive(Debug, Clone)]
pub struct LmCritic {
    pub name: String,
    pub category: ErrorCategory,
    pub prompt: PromptBundle,
    pub max_tokens: u32,
    pub ok_marker: String,
}

impl LmCritic {
    pub fn generate(
        &self,
        lm: &dyn LmClient,
        problem: &str,
        solution: &Solution,
        budget: &TokenBudget,
    ) -> Result<Feedback> {
        budget.check(LmStage::Feedback, self.max_tokens)?;
        let prompt_text = self.prompt.render(&[
            ("problem", problem),
            ("solution", solution.raw_text.as_str()),
        ])?;
        let request = LmRequest::greedy(
            LmStage::Feedback,
            vec![ChatMessage::user(prompt_text)],
            self.max_tokens,
        );
        let raw = lm.complete(&request)?;
        if raw.trim().is_empty() {
            return Err(Error::EmptyCompletion);
        }
        let mut entries = parse_feedback_text(&raw, &self.ok_marker);
        if entries.is_empty() {
            // No per-step lines at all: treat the reply as one verdict on the
            // whole solution.
            entries = vec![if contains_marker(&raw, &self.ok_marker) {
                StepFeedback::ok(0, &self.ok_marker)
            } else {
                StepFeedback::issue(0, raw.trim().to_string())
            }];
        }
        Ok(Feedback::new(&self.name, self.category, entries, raw))
    }
}

#[derive(Debug)]
enum Backend {
    Arithmetic { rel_tol: f64 },
    Interpreter { executor: Arc<ProgramExecutor> },
    Critic { critic: LmCritic },
}

/// One ready-to-run feedback module: its spec plus a concrete backend.
#[derive(Debug)]
pub struct ModuleHandle {
    spec: FeedbackModuleSpec,
    ok_marker: String,
    backend: Backend,
}

impl ModuleHandle {
    pub fn spec(&self) -> &FeedbackModuleSpec {
        &self.spec
    }

    pub fn name(&self) -> &str {
        &self.spec.name
    }

    pub fn category(&self) -> ErrorCategory {
        self.spec.category
    }

    pub fn mode(&self) -> RefineMode {
        self.spec.mode
    }

    pub fn is_lm(&self) -> bool {
        self.spec.backend.is_lm()
    }

    /// Produces this module's critique of `solution`. Tool backends never
    /// touch the model; critics spend one feedback-stage call.
    pub fn generate_feedback(
        &self,
        lm: &dyn LmClient,
        problem: &str,
        solution: &Solution,
        budget: &TokenBudget,
    ) -> Result<Feedback> {
        match &self.backend {
            Backend::Arithmetic { rel_tol } => {
                let entries = check_arithmetic(solution, *rel_tol, &self.ok_marker);
                let raw = entries_to_text(&entries);
                Ok(Feedback::new(self.name(), self.category(), entries, raw))
            }
            Backend::Interpreter { executor } => {
                let entries = check_program_syntax(executor, solution, &self.ok_marker)?;
                let raw = entries_to_text(&entries);
                Ok(Feedback::new(self.name(), self.category(), entries, raw))
            }
            Backend::Critic { critic } => critic.generate(lm, problem, solution, budget),
        }
    }
}

/// Knobs shared by every module in a registry.
#[derive(Debug, Clone)]
pub struct RegistryOptions {
    /// Marker phrase critics use for issue-free steps.
    pub ok_marker: String,
    /// Required when any module uses the interpreter backend.
    pub interpreter: Option<Arc<ProgramExecutor>>,
    /// Relative tolerance for the arithmetic checker.
    pub arithmetic_rel_tol: f64,
}

impl Default for RegistryOptions {
    fn default() -> Self {
        RegistryOptions {
            ok_marker: DEFAULT_OK_MARKER.to_string(),
            interpreter: None,
            arithmetic_rel_tol: crate::checkers::ARITHMETIC_REL_TOLERANCE,
        }
    }
}

/// All feedback modules for a run, in configured order.
pub struct ModuleRegistry {
    modules: Vec<ModuleHandle>,
    ok_marker: String,
}

impl ModuleRegistry {
    /// Validates every spec, loads critic prompts, and binds backends.
    pub fn build(specs: &[FeedbackModuleSpec], options: &RegistryOptions) -> Result<ModuleRegistry> {
        let mut modules = Vec::with_capacity(specs.len());
        for spec in specs {
            spec.validate()?;
            if modules
                .iter()
                .any(|m: &ModuleHandle| m.name() == spec.name)
            {
                return Err(Error::InvalidConfig(format!(
                    "duplicate module name {:?}",
                    spec.name
                )));
            }
            let backend = match spec.backend {
                ModuleBackend::ToolArithmetic => Backend::Arithmetic {
                    rel_tol: options.arithmetic_rel_tol,
                },
                ModuleBackend::ToolInterpreter => {
                    let executor = options.interpreter.clone().ok_or_else(|| {
                        Error::InvalidConfig(format!(
                            "module {:?} uses the interpreter backend but no interpreter is configured",
                            spec.name
                        ))
                    })?;
                    Backend::Interpreter { executor }
                }
                ModuleBackend::LmPrompt => {
                    let path = spec.prompt_path.as_ref().expect("validated above");
                    let prompt = PromptBundle::load(path)?;
                    if prompt.role != PromptRole::Critic {
                        return Err(Error::InvalidConfig(format!(
                            "module {:?} prompt {} has role {}, expected critic",
                            spec.name,
                            path.display(),
                            prompt.role
                        )));
                    }
                    Backend::Critic {
                        critic: LmCritic {
                            name: spec.name.clone(),
                            category: spec.category,
                            prompt,
                            max_tokens: spec.max_feedback_tokens,
                            ok_marker: options.ok_marker.clone(),
                        },
                    }
                }
            };
            modules.push(ModuleHandle {
                spec: spec.clone(),
                ok_marker: options.ok_marker.clone(),
                backend,
            });
        }
        Ok(ModuleRegistry {
            modules,
            ok_marker: options.ok_marker.clone(),
        })
    }

    pub fn ok_marker(&self) -> &str {
        &self.ok_marker
    }

    pub fn modules(&self) -> &[ModuleHandle] {
        &self.modules
    }

    pub fn eager(&self) -> impl Iterator<Item = &ModuleHandle> {
        self.modules.iter().filter(|m| m.mode() == RefineMode::Eager)
    }

    pub fn lazy(&self) -> impl Iterator<Item = &ModuleHandle> {
        self.modules.iter().filter(|m| m.mode() == RefineMode::Lazy)
    }

    /// Restricts to the named subset, preserving registry order. Unknown
    /// names are typed errors listing what exists.
    pub fn select(&self, names: &[String]) -> Result<Vec<&ModuleHandle>> {
        let known = || {
            self.modules
                .iter()
                .map(ModuleHandle::name)
                .collect::<Vec<_>>()
                .join(", ")
        };
        for name in names {
            if !self.modules.iter().any(|m| m.name() == name) {
                return Err(Error::UnknownModule {
                    name: name.clone(),
                    known: known(),
                });
            }
        }
        Ok(self
            .modules
            .iter()
            .filter(|m| names.iter().any(|n| n == m.name()))
            .collect())
    }
}
