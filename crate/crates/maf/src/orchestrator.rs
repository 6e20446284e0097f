//! The refinement loop: initial generation, eager and lazy feedback, bounded
//! iterations, and optional oracle stopping.
//!
//! Each iteration walks the eager modules in configured order, refining
//! immediately whenever one demands a revision, then gathers every lazy
//! module's feedback, summarizes away the issue-free steps, and — only when
//! something remains — refines once against the combined text. The loop
//! stops at the iteration cap, when an oracle confirms the answer, or when a
//! whole iteration produces no revision demands (the solution is then a
//! fixpoint: greedy decoding makes every module deterministic).
//!
//! Failures after the initial generation do not lose the run: the trace is
//! returned with what completed, a stop reason of `aborted`, and the error
//! recorded in its `failure` field, so one bad problem cannot sink a batch.

use crate::error::{Error, Result};
use crate::feedback::{combine_feedbacks, summarize_feedback, ModuleRegistry};
use crate::lm::{ChatMessage, LmClient, LmRequest, LmStage, TokenBudget};
use crate::prompts::{PromptBundle, PromptRole};
use crate::solution::{
    segment_solution, EagerEvent, IterationRecord, RefineMode, RunTrace, Solution, StopReason,
    Task, DEFAULT_OK_MARKER,
};

/// Decoding settings. Greedy only: construction and validation both reject a
/// non-zero temperature, so there is no way to configure sampling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodingParams {
    pub temperature: f32,
}

impl Default for DecodingParams {
    fn default() -> Self {
        DecodingParams { temperature: 0.0 }
    }
}

impl DecodingParams {
    pub fn validate(&self) -> Result<()> {
        if self.temperature != 0.0 {
            return Err(Error::NonGreedyTemperature(self.temperature));
        }
        Ok(())
    }
}

/// The three non-critic prompts a run needs.
#[derive(Debug, Clone)]
pub struct RolePrompts {
    pub generator: PromptBundle,
    pub eager_refiner: PromptBundle,
    pub lazy_refiner: PromptBundle,
}

impl RolePrompts {
    pub fn load(
        generator: impl AsRef<std::path::Path>,
        eager_refiner: impl AsRef<std::path::Path>,
        lazy_refiner: impl AsRef<std::path::Path>,
    ) -> Result<RolePrompts> {
        let prompts = RolePrompts {
            generator: PromptBundle::load(generator)?,
            eager_refiner: PromptBundle::load(eager_refiner)?,
            lazy_refiner: PromptBundle::load(lazy_refiner)?,
        };
        prompts.validate()?;
        Ok(prompts)
    }

    pub fn validate(&self) -> Result<()> {
        let expect = |bundle: &PromptBundle, role: PromptRole| {
            if bundle.role != role {
                return Err(Error::InvalidConfig(format!(
                    "expected a {role} prompt, got {}",
                    bundle.role
                )));
            }
            Ok(())
        };
        expect(&self.generator, PromptRole::Generator)?;
        expect(&self.eager_refiner, PromptRole::Refiner)?;
        expect(&self.lazy_refiner, PromptRole::Refiner)?;
        if self.generator.task != self.eager_refiner.task
            || self.generator.task != self.lazy_refiner.task
        {
            return Err(Error::InvalidConfig(
                "generator and refiner prompts disagree on the task".into(),
            ));
        }
        Ok(())
    }
}

/// Settings for one refinement run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub task: Task,
    /// Upper bound on refinement iterations after the initial generation.
    pub max_iterations: usize,
    pub decoding: DecodingParams,
    pub budget: TokenBudget,
    pub ok_marker: String,
}

impl RunConfig {
    /// Defaults for a task: four iterations, greedy decoding, the task's
    /// token budgets, and the standard marker phrase.
    pub fn for_task(task: Task) -> RunConfig {
        RunConfig {
            task,
            max_iterations: 4,
            decoding: DecodingParams::default(),
            budget: TokenBudget::for_task(task),
            ok_marker: DEFAULT_OK_MARKER.to_string(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.decoding.validate()?;
        if self.ok_marker.trim().is_empty() {
            return Err(Error::InvalidConfig("ok_marker must be non-empty".into()));
        }
        Ok(())
    }
}

/// Decides whether a solution already answers the problem correctly. The
/// evaluation layer implements this against gold answers; the orchestrator
/// only asks.
pub trait AnswerOracle: Send + Sync {
    fn is_correct(&self, problem_id: &str, solution: &Solution) -> Result<bool>;
}

/// Runs the loop for one problem at a time; shareable across worker threads.
pub struct Orchestrator<'a> {
    config: &'a RunConfig,
    prompts: &'a RolePrompts,
    registry: &'a ModuleRegistry,
    lm: &'a dyn LmClient,
    oracle: Option<&'a dyn AnswerOracle>,
}

impl<'a> Orchestrator<'a> {
    /// Wires the pieces together, failing fast on any disagreement between
    /// them (task mismatch, marker mismatch, module budgets over the stage
    /// ceiling, interpreter modules on non-program tasks).
    pub fn new(
        config: &'a RunConfig,
        prompts: &'a RolePrompts,
        registry: &'a ModuleRegistry,
        lm: &'a dyn LmClient,
        oracle: Option<&'a dyn AnswerOracle>,
    ) -> Result<Orchestrator<'a>> {
        config.validate()?;
        prompts.validate()?;
        if prompts.generator.task != config.task {
            return Err(Error::InvalidConfig(format!(
                "prompts are for task {}, run is for task {}",
                prompts.generator.task, config.task
            )));
        }
        if registry.ok_marker() != config.ok_marker {
            return Err(Error::InvalidConfig(
                "module registry and run config disagree on the ok marker".into(),
            ));
        }
        for module in registry.modules() {
            config
                .budget
                .check(LmStage::Feedback, module.spec().max_feedback_tokens)?;
            if module.spec().backend == crate::solution::ModuleBackend::ToolInterpreter
                && config.task.solution_kind() != crate::solution::SolutionKind::Program
            {
                return Err(Error::InvalidConfig(format!(
                    "module {:?} checks program syntax but task {} does not produce programs",
                    module.name(),
                    config.task
                )));
            }
        }
        Ok(Orchestrator {
            config,
            prompts,
            registry,
            lm,
            oracle,
        })
    }

    /// One base-generator call; the run's first model call.
    pub fn generate_initial(&self, problem: &str) -> Result<Solution> {
        let prompt = self.prompts.generator.render(&[("problem", problem)])?;
        let request = LmRequest::greedy(
            LmStage::Base,
            vec![ChatMessage::user(prompt)],
            self.config.budget.base,
        );
        let completion = self.lm.complete(&request)?;
        let text = completion.trim();
        if text.is_empty() {
            return Err(Error::EmptyCompletion);
        }
        segment_solution(text, self.config.task.solution_kind())
    }

    /// One refiner call. An empty revision is treated as "no change": the
    /// incoming solution is kept and a warning logged, because discarding a
    /// solution mid-run is worse than re-critiquing the old one.
    fn refine(
        &self,
        problem: &str,
        solution: &Solution,
        feedback_text: &str,
        mode: RefineMode,
    ) -> Result<Solution> {
        let bundle = match mode {
            RefineMode::Eager => &self.prompts.eager_refiner,
            RefineMode::Lazy => &self.prompts.lazy_refiner,
        };
        let prompt = bundle.render(&[
            ("problem", problem),
            ("solution", solution.raw_text.as_str()),
            ("feedback", feedback_text),
        ])?;
        let request = LmRequest::greedy(
            LmStage::Refiner,
            vec![ChatMessage::user(prompt)],
            self.config.budget.refiner,
        );
        let completion = self.lm.complete(&request)?;
        let text = completion.trim();
        if text.is_empty() {
            log::warn!("refiner returned an empty revision; keeping the current solution");
            return Ok(solution.clone());
        }
        segment_solution(text, solution.kind)
    }

    fn oracle_accepts(&self, problem_id: &str, solution: &Solution) -> Result<bool> {
        match self.oracle {
            Some(oracle) => oracle.is_correct(problem_id, solution),
            None => Ok(false),
        }
    }

    /// Runs the full loop for one problem. Only a failed initial generation
    /// is a hard error; later failures yield an aborted trace.
    pub fn run(&self, problem_id: &str, problem: &str) -> Result<RunTrace> {
        let initial = self.generate_initial(problem)?;
        let mut lm_call_count: u64 = 1;
        let mut current = initial.clone();
        let mut iterations = Vec::new();

        let outcome = self.run_loop(
            problem_id,
            problem,
            &mut current,
            &mut iterations,
            &mut lm_call_count,
        );
        let (stop_reason, failure) = match outcome {
            Ok(reason) => (reason, None),
            Err(e) => {
                log::warn!("run for {problem_id} aborted: {e}");
                (StopReason::Aborted, Some(e.to_string()))
            }
        };

        Ok(RunTrace {
            problem_id: problem_id.to_string(),
            initial_solution: initial,
            iterations,
            final_solution: current,
            stop_reason,
            lm_call_count,
            failure,
        })
    }

    fn run_loop(
        &self,
        problem_id: &str,
        problem: &str,
        current: &mut Solution,
        iterations: &mut Vec<IterationRecord>,
        lm_call_count: &mut u64,
    ) -> Result<StopReason> {
        if self.oracle_accepts(problem_id, current)? {
            return Ok(StopReason::OracleCorrect);
        }

        for iteration in 1..=self.config.max_iterations {
            let mut revision_demanded = false;

            let mut eager_events = Vec::new();
            for module in self.registry.eager() {
                let feedback =
                    module.generate_feedback(self.lm, problem, current, &self.config.budget)?;
                if module.is_lm() {
                    *lm_call_count += 1;
                }
                let before = current.clone();
                let after = if feedback.revision_required {
                    revision_demanded = true;
                    *lm_call_count += 1;
                    self.refine(problem, current, &feedback.raw_text, RefineMode::Eager)?
                } else {
                    before.clone()
                };
                *current = after.clone();
                eager_events.push(EagerEvent {
                    module_name: module.name().to_string(),
                    feedback,
                    solution_before: before,
                    solution_after: after,
                });
            }

            let mut lazy_feedbacks = Vec::new();
            for module in self.registry.lazy() {
                let feedback =
                    module.generate_feedback(self.lm, problem, current, &self.config.budget)?;
                if module.is_lm() {
                    *lm_call_count += 1;
                }
                lazy_feedbacks.push(feedback);
            }
            let pending: Vec<_> = lazy_feedbacks
                .iter()
                .filter(|fb| fb.revision_required)
                .map(|fb| summarize_feedback(fb, &self.config.ok_marker))
                .collect();
            let combined_lazy_feedback = if pending.is_empty() {
                None
            } else {
                revision_demanded = true;
                Some(combine_feedbacks(&pending)?)
            };
            if let Some(text) = &combined_lazy_feedback {
                *lm_call_count += 1;
                *current = self.refine(problem, current, text, RefineMode::Lazy)?;
            }

            iterations.push(IterationRecord {
                iteration,
                eager_events,
                lazy_feedbacks,
                combined_lazy_feedback,
                solution_out: current.clone(),
            });

            if self.oracle_accepts(problem_id, current)? {
                return Ok(StopReason::OracleCorrect);
            }
            if !revision_demanded {
                return Ok(StopReason::CleanFeedback);
            }
        }
        Ok(StopReason::MaxIterations)
    }
}
