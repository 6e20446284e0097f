//! Evaluation: datasets, answer extraction, gold verification, metrics,
//! reports, and ablation planning.
//!
//! Answers are compared after normalization; numeric answers compare within
//! a relative tolerance, dates component-wise, and everything else as exact
//! normalized strings. Solve rates are percentages rounded to one decimal.

use std::collections::{BTreeMap, HashMap};
use std::io::BufRead;
use std::path::Path;
use std::sync::Arc;

use once_cell::sync::Lazy;
use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkers::ProgramExecutor;
use crate::error::{Error, Result};
use crate::orchestrator::{AnswerOracle, Orchestrator};
use crate::solution::{
    FeedbackModuleSpec, ModuleBackend, RefineMode, RunTrace, Solution, SolutionKind, Task,
};

/// One dataset problem: an id, the question text, and the gold answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemRecord {
    pub id: String,
    pub question: String,
    pub answer: String,
    /// Optional supporting passage, prepended to the question when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<String>,
}

impl ProblemRecord {
    /// The problem text handed to the generator.
    pub fn problem_text(&self) -> String {
        match &self.context {
            Some(context) => format!("{context}\n\n{}", self.question),
            None => self.question.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let field_err = |message: &str| Error::DatasetRecord {
            record: self.id.clone(),
            message: message.to_string(),
        };
        if self.id.trim().is_empty() {
            return Err(Error::DatasetRecord {
                record: "<blank id>".into(),
                message: "id must be non-empty".into(),
            });
        }
        if self.question.trim().is_empty() {
            return Err(field_err("question must be non-empty"));
        }
        if self.answer.trim().is_empty() {
            return Err(field_err("answer must be non-empty"));
        }
        Ok(())
    }
}

/// Loads a JSONL dataset, validating every record and rejecting duplicates.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<ProblemRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    let mut records = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ProblemRecord =
            serde_json::from_str(&line).map_err(|e| Error::DatasetParse {
                path: path.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })?;
        record.validate()?;
        if !seen.insert(record.id.clone()) {
            return Err(Error::DuplicateProblemId(record.id));
        }
        records.push(record);
    }
    Ok(records)
}

/// Canonical answer form: trimmed, single-spaced, trailing punctuation and
/// digit-group commas removed, leading `$` dropped, lowercased.
pub fn normalize_answer(raw: &str) -> String {
    let collapsed = raw.split_whitespace().collect::<Vec<_>>().join(" ");
    // Whitespace and punctuation are stripped as one class: removing a
    // trailing "," can expose a space (and vice versa), and normalization
    // must be a fixpoint.
    let stripped =
        collapsed.trim_end_matches(|c: char| c.is_whitespace() || ".,!?;:".contains(c));
    let stripped = stripped.strip_prefix('$').unwrap_or(stripped);
    let chars: Vec<char> = stripped.chars().collect();
    let mut out = String::with_capacity(stripped.len());
    for (i, &c) in chars.iter().enumerate() {
        if c == ','
            && i > 0
            && chars[i - 1].is_ascii_digit()
            && chars.get(i + 1).is_some_and(|n| n.is_ascii_digit())
        {
            continue;
        }
        out.extend(c.to_lowercase());
    }
    out
}

fn parse_numeric(s: &str) -> Option<f64> {
    let s = s.strip_suffix('%').unwrap_or(s);
    s.parse::<f64>().ok()
}

static MONTHS: [&str; 12] = [
    "january", "february", "march", "april", "may", "june", "july", "august", "september",
    "october", "november", "december",
];

fn month_number(word: &str) -> Option<u32> {
    MONTHS
        .iter()
        .position(|m| *m == word || (word.len() >= 3 && m.starts_with(word)))
        .map(|i| i as u32 + 1)
}

fn plausible_date(year: i32, month: u32, day: u32) -> Option<(i32, u32, u32)> {
    ((1..=12).contains(&month) && (1..=31).contains(&day) && (1000..=9999).contains(&year))
        .then_some((year, month, day))
}

/// Component-wise date parse over the common written forms: `month d yyyy`,
/// `d month yyyy`, `yyyy-mm-dd`, and `mm/dd/yyyy`.
fn parse_date(s: &str) -> Option<(i32, u32, u32)> {
    let cleaned = s.replace(',', " ");
    let words: Vec<&str> = cleaned.split_whitespace().collect();
    if words.len() == 3 {
        if let (Some(month), Ok(day), Ok(year)) = (
            month_number(words[0]),
            words[1].parse::<u32>(),
            words[2].parse::<i32>(),
        ) {
            return plausible_date(year, month, day);
        }
        if let (Ok(day), Some(month), Ok(year)) = (
            words[0].parse::<u32>(),
            month_number(words[1]),
            words[2].parse::<i32>(),
        ) {
            return plausible_date(year, month, day);
        }
    }
    if words.len() == 1 {
        let numeric: Vec<&str> = if words[0].contains('-') {
            words[0].split('-').collect()
        } else {
            words[0].split('/').collect()
        };
        if numeric.len() == 3 {
            if words[0].contains('-') {
                // yyyy-mm-dd
                if let (Ok(year), Ok(month), Ok(day)) = (
                    numeric[0].parse::<i32>(),
                    numeric[1].parse::<u32>(),
                    numeric[2].parse::<u32>(),
                ) {
                    return plausible_date(year, month, day);
                }
            } else {
                // mm/dd/yyyy
                if let (Ok(month), Ok(day), Ok(year)) = (
                    numeric[0].parse::<u32>(),
                    numeric[1].parse::<u32>(),
                    numeric[2].parse::<i32>(),
                ) {
                    return plausible_date(year, month, day);
                }
            }
        }
    }
    None
}

/// Relative tolerance for numeric answer comparison.
pub const ANSWER_REL_TOLERANCE: f64 = 1e-6;

/// Compares an extracted answer against gold after normalization.
pub fn answers_match(extracted: &str, gold: &str) -> bool {
    let a = normalize_answer(extracted);
    let b = normalize_answer(gold);
    if let (Some(x), Some(y)) = (parse_numeric(&a), parse_numeric(&b)) {
        let diff = (x - y).abs();
        return diff <= 1e-9 + ANSWER_REL_TOLERANCE * x.abs().max(y.abs());
    }
    if let (Some(x), Some(y)) = (parse_date(&a), parse_date(&b)) {
        return x == y;
    }
    a == b
}

static ANSWER_IS: Lazy<Regex> = Lazy::new(|| Regex::new(r"(?i)\banswer\s+is\s*:?\s*([^\n]+)").unwrap());
static NUMBER_TOKEN: Lazy<Regex> = Lazy::new(|| Regex::new(r"-?\$?\d[\d,]*(?:\.\d+)?").unwrap());
static HYPOTHESIS: Lazy<Regex> = Lazy::new(|| Regex::new(r"(?i)hypothesis\s*:\s*([^\n]+)").unwrap());

/// Pulls the final answer out of a solution, dispatching on its shape.
pub struct AnswerExtractor {
    executor: Option<Arc<ProgramExecutor>>,
}

impl AnswerExtractor {
    /// `executor` is required to extract from program solutions.
    pub fn new(executor: Option<Arc<ProgramExecutor>>) -> AnswerExtractor {
        AnswerExtractor { executor }
    }

    /// Returns the normalized answer, or `None` when the solution does not
    /// yield one (failed program, no answer sentence, nothing numeric).
    pub fn extract(&self, solution: &Solution) -> Result<Option<String>> {
        let raw = match solution.kind {
            SolutionKind::Program => self.extract_program(solution)?,
            SolutionKind::ChainOfThought => extract_chain_of_thought(solution),
            SolutionKind::EntailmentTree => extract_entailment(solution),
        };
        Ok(raw.map(|s| normalize_answer(&s)).filter(|s| !s.is_empty()))
    }

    fn extract_program(&self, solution: &Solution) -> Result<Option<String>> {
        let executor = self.executor.as_ref().ok_or_else(|| {
            Error::InvalidConfig(
                "answer extraction for program solutions needs an interpreter".into(),
            )
        })?;
        let result = executor.execute(&solution.raw_text)?;
        if !result.success() {
            return Ok(None);
        }
        Ok(result
            .stdout
            .split_whitespace()
            .rfind(|token| {
                let cleaned = token.trim_matches(|c: char| !c.is_ascii_digit() && c != '.' && c != '-');
                !cleaned.is_empty() && cleaned.parse::<f64>().is_ok()
            })
            .map(|token| {
                token
                    .trim_matches(|c: char| !c.is_ascii_digit() && c != '.' && c != '-')
                    .to_string()
            }))
    }
}

fn extract_chain_of_thought(solution: &Solution) -> Option<String> {
    if let Some(caps) = ANSWER_IS
        .captures_iter(&solution.raw_text)
        .last()
    {
        return Some(caps[1].to_string());
    }
    let last_step = solution
        .steps
        .iter()
        .rev()
        .find(|s| !s.text.trim().is_empty())?;
    NUMBER_TOKEN
        .find_iter(&last_step.text)
        .last()
        .map(|m| m.as_str().to_string())
}

fn extract_entailment(solution: &Solution) -> Option<String> {
    if let Some(caps) = HYPOTHESIS.captures_iter(&solution.raw_text).last() {
        return Some(caps[1].to_string());
    }
    solution
        .steps
        .iter()
        .rev()
        .find(|s| !s.text.trim().is_empty())
        .map(|s| s.text.clone())
}

/// Gold answers plus the extractor; implements the orchestrator's oracle.
pub struct EvalHarness {
    golds: HashMap<String, String>,
    extractor: AnswerExtractor,
}

impl EvalHarness {
    pub fn new(records: &[ProblemRecord], extractor: AnswerExtractor) -> EvalHarness {
        EvalHarness {
            golds: records
                .iter()
                .map(|r| (r.id.clone(), r.answer.clone()))
                .collect(),
            extractor,
        }
    }

    pub fn gold(&self, problem_id: &str) -> Option<&str> {
        self.golds.get(problem_id).map(String::as_str)
    }

    pub fn extractor(&self) -> &AnswerExtractor {
        &self.extractor
    }

    /// Extracts and compares against gold; unknown ids are typed errors.
    pub fn check(&self, problem_id: &str, solution: &Solution) -> Result<bool> {
        let gold = self.gold(problem_id).ok_or_else(|| Error::DatasetRecord {
            record: problem_id.to_string(),
            message: "no gold answer for this problem id".into(),
        })?;
        match self.extractor.extract(solution)? {
            Some(answer) => Ok(answers_match(&answer, gold)),
            None => Ok(false),
        }
    }
}

impl AnswerOracle for EvalHarness {
    fn is_correct(&self, problem_id: &str, solution: &Solution) -> Result<bool> {
        self.check(problem_id, solution)
    }
}

/// Percentage of true entries, rounded to one decimal. Errors on empty input.
pub fn solve_rate(results: &[bool]) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::EmptyResults);
    }
    let correct = results.iter().filter(|r| **r).count();
    let rate = 100.0 * correct as f64 / results.len() as f64;
    Ok((rate * 10.0).round() / 10.0)
}

/// The solution a trace holds after `k` iterations; early-stopped runs carry
/// their last solution forward.
pub fn solution_at_iteration(trace: &RunTrace, k: usize) -> &Solution {
    if k == 0 {
        return &trace.initial_solution;
    }
    trace
        .iterations
        .get(k - 1)
        .or_else(|| trace.iterations.last())
        .map(|it| &it.solution_out)
        .unwrap_or(&trace.initial_solution)
}

/// Accuracy after each iteration, index 0 = the initial generation.
///
/// With `any_prefix` set, a problem counts at `k` when it was correct after
/// any iteration up to `k` (the oracle-stopping view, monotone by
/// construction); otherwise the solution standing at `k` is what's scored.
pub fn accuracy_by_iteration(
    traces: &[RunTrace],
    harness: &EvalHarness,
    max_iteration: usize,
    any_prefix: bool,
) -> Result<Vec<f64>> {
    if traces.is_empty() {
        return Err(Error::EmptyResults);
    }
    // correctness[t][k] for k in 0..=max_iteration
    let mut correctness = Vec::with_capacity(traces.len());
    for trace in traces {
        let mut row = Vec::with_capacity(max_iteration + 1);
        for k in 0..=max_iteration {
            let correct = harness.check(&trace.problem_id, solution_at_iteration(trace, k))?;
            row.push(correct);
        }
        if any_prefix {
            for k in 1..row.len() {
                row[k] = row[k] || row[k - 1];
            }
        }
        correctness.push(row);
    }
    (0..=max_iteration)
        .map(|k| solve_rate(&correctness.iter().map(|row| row[k]).collect::<Vec<_>>()))
        .collect()
}

/// Summary of one run over a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub task: Task,
    pub config_digest: String,
    pub problem_count: usize,
    /// Accuracy after each iteration; index 0 is the initial generation.
    pub accuracy_by_iteration: Vec<f64>,
    /// Present when the run used oracle stopping: accuracy counting a
    /// problem once any prefix iteration solved it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_accuracy_by_iteration: Option<Vec<f64>>,
    pub report_iteration: usize,
    pub solve_rate_initial: f64,
    pub solve_rate_at_report_iteration: f64,
    pub solve_rate_final: f64,
    pub total_lm_calls: u64,
    pub aborted_runs: usize,
    /// Stop-reason histogram, keyed by the snake_case reason name.
    pub stop_reasons: BTreeMap<String, usize>,
}

impl RunReport {
    /// CSV of the per-iteration curve: `iteration,accuracy` rows, plus an
    /// `oracle_accuracy` column when the oracle curve was computed.
    pub fn iteration_curve_csv(&self) -> String {
        match &self.oracle_accuracy_by_iteration {
            Some(oracle) => {
                let mut out = String::from("iteration,accuracy,oracle_accuracy\n");
                for (k, acc) in self.accuracy_by_iteration.iter().enumerate() {
                    let oracle_acc = oracle.get(k).copied().unwrap_or(0.0);
                    out.push_str(&format!("{k},{acc:.1},{oracle_acc:.1}\n"));
                }
                out
            }
            None => {
                let mut out = String::from("iteration,accuracy\n");
                for (k, acc) in self.accuracy_by_iteration.iter().enumerate() {
                    out.push_str(&format!("{k},{acc:.1}\n"));
                }
                out
            }
        }
    }
}

/// Settings for building a [`RunReport`].
#[derive(Debug, Clone)]
pub struct ReportOptions {
    /// Iteration whose accuracy is called out in the summary.
    pub report_iteration: usize,
    pub config_digest: String,
    /// Also compute the oracle (any-prefix) curve.
    pub oracle_mode: bool,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions {
            report_iteration: 2,
            config_digest: String::new(),
            oracle_mode: false,
        }
    }
}

/// Scores a batch of traces against gold answers.
pub fn build_report(
    task: Task,
    traces: &[RunTrace],
    harness: &EvalHarness,
    options: &ReportOptions,
) -> Result<RunReport> {
    if traces.is_empty() {
        return Err(Error::EmptyResults);
    }
    let observed_max = traces.iter().map(|t| t.iterations.len()).max().unwrap_or(0);
    let max_iteration = observed_max.max(options.report_iteration);
    let accuracy = accuracy_by_iteration(traces, harness, max_iteration, false)?;
    let oracle_accuracy = if options.oracle_mode {
        Some(accuracy_by_iteration(traces, harness, max_iteration, true)?)
    } else {
        None
    };

    let mut stop_reasons = BTreeMap::new();
    for trace in traces {
        let key = serde_json::to_value(trace.stop_reason)?
            .as_str()
            .expect("stop reason serializes to a string")
            .to_string();
        *stop_reasons.entry(key).or_insert(0) += 1;
    }

    Ok(RunReport {
        task,
        config_digest: options.config_digest.clone(),
        problem_count: traces.len(),
        solve_rate_initial: accuracy[0],
        solve_rate_at_report_iteration: accuracy[options.report_iteration.min(max_iteration)],
        solve_rate_final: *accuracy.last().expect("non-empty curve"),
        accuracy_by_iteration: accuracy,
        oracle_accuracy_by_iteration: oracle_accuracy,
        report_iteration: options.report_iteration,
        total_lm_calls: traces.iter().map(|t| t.lm_call_count).sum(),
        aborted_runs: traces.iter().filter(|t| t.failure.is_some()).count(),
        stop_reasons,
    })
}

/// Hex SHA-256 of a value's canonical JSON; identifies a resolved config.
pub fn config_digest<T: Serialize>(value: &T) -> Result<String> {
    let canonical = serde_json::to_string(value)?;
    let mut hasher = Sha256::new();
    hasher.update(canonical.as_bytes());
    Ok(hex::encode(hasher.finalize()))
}

/// Runs every problem through the orchestrator in parallel. Output order
/// matches input order regardless of scheduling, so batch output is
/// deterministic whenever the client is.
pub fn run_batch(orch: &Orchestrator<'_>, records: &[ProblemRecord]) -> Vec<Result<RunTrace>> {
    records
        .par_iter()
        .map(|record| orch.run(&record.id, &record.problem_text()))
        .collect()
}

/// Which family of ablation variants to generate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationPlan {
    /// The full roster plus one variant per removable module.
    LeaveOneOut,
    /// The configured mix plus all-eager and all-lazy re-bindings.
    StrategySweep,
}

impl std::str::FromStr for AblationPlan {
    type Err = Error;

    fn from_str(s: &str) -> Result<AblationPlan> {
        match s {
            "leave-one-out" => Ok(AblationPlan::LeaveOneOut),
            "strategy-sweep" => Ok(AblationPlan::StrategySweep),
            other => Err(Error::InvalidConfig(format!(
                "unknown ablation plan {other:?}; expected leave-one-out or strategy-sweep"
            ))),
        }
    }
}

/// One ablation configuration: a label and the module roster to run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationVariant {
    pub label: String,
    pub specs: Vec<FeedbackModuleSpec>,
}

/// Removes one named module from the roster. Interpreter-backed modules are
/// load-bearing (programs must at least compile) and cannot be ablated.
pub fn leave_out(specs: &[FeedbackModuleSpec], name: &str) -> Result<Vec<FeedbackModuleSpec>> {
    let target = specs.iter().find(|s| s.name == name).ok_or_else(|| {
        Error::UnknownModule {
            name: name.to_string(),
            known: specs.iter().map(|s| s.name.clone()).collect::<Vec<_>>().join(", "),
        }
    })?;
    if target.backend == ModuleBackend::ToolInterpreter {
        return Err(Error::AblationPlan(format!(
            "module {name:?} is interpreter-backed and cannot be removed"
        )));
    }
    Ok(specs.iter().filter(|s| s.name != name).cloned().collect())
}

/// Expands a plan into labeled variants, starting with the full roster.
pub fn ablation_variants(
    plan: AblationPlan,
    specs: &[FeedbackModuleSpec],
) -> Result<Vec<AblationVariant>> {
    if specs.is_empty() {
        return Err(Error::AblationPlan("no modules to ablate".into()));
    }
    let full = AblationVariant {
        label: "full".into(),
        specs: specs.to_vec(),
    };
    match plan {
        AblationPlan::LeaveOneOut => {
            let removable: Vec<&FeedbackModuleSpec> = specs
                .iter()
                .filter(|s| s.backend != ModuleBackend::ToolInterpreter)
                .collect();
            if removable.is_empty() {
                return Err(Error::AblationPlan(
                    "every module is interpreter-backed; nothing can be removed".into(),
                ));
            }
            let mut variants = vec![full];
            for spec in removable {
                variants.push(AblationVariant {
                    label: format!("without-{}", spec.name),
                    specs: leave_out(specs, &spec.name)?,
                });
            }
            Ok(variants)
        }
        AblationPlan::StrategySweep => {
            let rebind = |mode: RefineMode| {
                specs
                    .iter()
                    .cloned()
                    .map(|mut s| {
                        s.mode = mode;
                        s
                    })
                    .collect::<Vec<_>>()
            };
            Ok(vec![
                AblationVariant {
                    label: "mixed".into(),
                    specs: specs.to_vec(),
                },
                AblationVariant {
                    label: "all-eager".into(),
                    specs: rebind(RefineMode::Eager),
                },
                AblationVariant {
                    label: "all-lazy".into(),
                    specs: rebind(RefineMode::Lazy),
                },
            ])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checkers::InterpreterConfig;
    use crate::solution::{segment_solution, ErrorCategory, IterationRecord, StopReason};

    #[test]
    fn normalization_canonicalizes_common_variants() {
        assert_eq!(normalize_answer("  $1,200.  "), "1200");
        assert_eq!(normalize_answer("Forty   Two!"), "forty two");
        assert_eq!(normalize_answer("42."), "42");
        assert_eq!(normalize_answer("A dozen, give or take."), "a dozen, give or take");
        // Interleaved trailing whitespace and punctuation strip fully.
        assert_eq!(normalize_answer("0 ,"), "0");
        assert_eq!(normalize_answer("7 . ,"), "7");
    }

    #[test]
    fn numeric_answers_compare_with_tolerance() {
        assert!(answers_match("42.0", "42"));
        assert!(answers_match("$1,200", "1200"));
        assert!(answers_match("0.3333333334", "0.3333333333"));
        assert!(!answers_match("42", "43"));
        assert!(answers_match("50%", "50"));
    }

    #[test]
    fn date_answers_compare_component_wise() {
        assert!(answers_match("January 5, 2014", "5 january 2014"));
        assert!(answers_match("2014-01-05", "January 5, 2014"));
        assert!(answers_match("01/05/2014", "2014-01-05"));
        assert!(!answers_match("January 6, 2014", "5 january 2014"));
    }

    #[test]
    fn span_answers_compare_after_normalization() {
        assert!(answers_match("The Beatles.", "the beatles"));
        assert!(!answers_match("the beatles", "the rolling stones"));
    }

    #[test]
    fn extracts_program_answers_by_running_them() {
        let executor =
            Arc::new(ProgramExecutor::new(InterpreterConfig::default()).unwrap());
        let extractor = AnswerExtractor::new(Some(executor));
        let sol = segment_solution("x = 6 * 7\nprint('answer', x)", SolutionKind::Program).unwrap();
        assert_eq!(extractor.extract(&sol).unwrap().as_deref(), Some("42"));

        let broken = segment_solution("print(1/0)", SolutionKind::Program).unwrap();
        assert_eq!(extractor.extract(&broken).unwrap(), None);
    }

    #[test]
    fn program_extraction_without_interpreter_is_an_error() {
        let extractor = AnswerExtractor::new(None);
        let sol = segment_solution("print(1)", SolutionKind::Program).unwrap();
        assert!(extractor.extract(&sol).is_err());
    }

    #[test]
    fn extracts_chain_of_thought_answers() {
        let extractor = AnswerExtractor::new(None);
        let sol = segment_solution(
            "He bought 12 eggs.\nSo the answer is 12 eggs.",
            SolutionKind::ChainOfThought,
        )
        .unwrap();
        assert_eq!(extractor.extract(&sol).unwrap().as_deref(), Some("12 eggs"));

        let fallback = segment_solution(
            "First 3 + 4 = 7.\nThen 7 * 2 = 14.",
            SolutionKind::ChainOfThought,
        )
        .unwrap();
        assert_eq!(extractor.extract(&fallback).unwrap().as_deref(), Some("14"));

        let nothing =
            segment_solution("no conclusion here", SolutionKind::ChainOfThought).unwrap();
        assert_eq!(extractor.extract(&nothing).unwrap(), None);
    }

    #[test]
    fn extracts_entailment_hypotheses() {
        let extractor = AnswerExtractor::new(None);
        let sol = segment_solution(
            "fact1 & fact2 -> int1: metals conduct\nint1 -> hypothesis: iron conducts electricity",
            SolutionKind::EntailmentTree,
        )
        .unwrap();
        assert_eq!(
            extractor.extract(&sol).unwrap().as_deref(),
            Some("iron conducts electricity")
        );

        let fallback = segment_solution("a\nfinal line", SolutionKind::EntailmentTree).unwrap();
        assert_eq!(extractor.extract(&fallback).unwrap().as_deref(), Some("final line"));
    }

    #[test]
    fn dataset_loading_validates_and_rejects_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        std::fs::write(
            &path,
            r#"{"id": "p1", "question": "q1", "answer": "a1"}
{"id": "p2", "question": "q2", "answer": "a2", "context": "passage"}
"#,
        )
        .unwrap();
        let records = load_dataset(&path).unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(records[1].problem_text(), "passage\n\nq2");

        std::fs::write(
            &path,
            r#"{"id": "p1", "question": "q1", "answer": "a1"}
{"id": "p1", "question": "q2", "answer": "a2"}
"#,
        )
        .unwrap();
        assert!(matches!(
            load_dataset(&path),
            Err(Error::DuplicateProblemId(id)) if id == "p1"
        ));

        std::fs::write(&path, "{not json}\n").unwrap();
        match load_dataset(&path) {
            Err(Error::DatasetParse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected DatasetParse, got {other:?}"),
        }
    }

    #[test]
    fn solve_rate_rounds_to_one_decimal() {
        assert_eq!(solve_rate(&[true, true, false]).unwrap(), 66.7);
        assert_eq!(solve_rate(&[false, false]).unwrap(), 0.0);
        assert_eq!(solve_rate(&[true]).unwrap(), 100.0);
        assert!(matches!(solve_rate(&[]), Err(Error::EmptyResults)));
    }

    fn cot(text: &str) -> Solution {
        segment_solution(text, SolutionKind::ChainOfThought).unwrap()
    }

    fn trace_with(id: &str, answers: &[&str]) -> RunTrace {
        let initial = cot(&format!("the answer is {}", answers[0]));
        let iterations: Vec<IterationRecord> = answers[1..]
            .iter()
            .enumerate()
            .map(|(i, a)| IterationRecord {
                iteration: i + 1,
                eager_events: vec![],
                lazy_feedbacks: vec![],
                combined_lazy_feedback: None,
                solution_out: cot(&format!("the answer is {a}")),
            })
            .collect();
        let final_solution = iterations
            .last()
            .map(|it| it.solution_out.clone())
            .unwrap_or_else(|| initial.clone());
        RunTrace {
            problem_id: id.into(),
            initial_solution: initial,
            iterations,
            final_solution,
            stop_reason: StopReason::MaxIterations,
            lm_call_count: 3,
            failure: None,
        }
    }

    fn harness_for(records: &[(&str, &str)]) -> EvalHarness {
        let records: Vec<ProblemRecord> = records
            .iter()
            .map(|(id, answer)| ProblemRecord {
                id: id.to_string(),
                question: "q".into(),
                answer: answer.to_string(),
                context: None,
            })
            .collect();
        EvalHarness::new(&records, AnswerExtractor::new(None))
    }

    #[test]
    fn accuracy_curves_carry_forward_and_oracle_view_is_monotone() {
        // p1: wrong, right, wrong again (over-refinement).
        // p2: stops after one iteration, still wrong.
        let traces = vec![
            trace_with("p1", &["1", "42", "7"]),
            trace_with("p2", &["5", "5"]),
        ];
        let harness = harness_for(&[("p1", "42"), ("p2", "42")]);

        let standard = accuracy_by_iteration(&traces, &harness, 3, false).unwrap();
        assert_eq!(standard, vec![0.0, 50.0, 0.0, 0.0]);

        let oracle = accuracy_by_iteration(&traces, &harness, 3, true).unwrap();
        assert_eq!(oracle, vec![0.0, 50.0, 50.0, 50.0]);
    }

    #[test]
    fn report_summarizes_counts_and_curves() {
        let traces = vec![
            trace_with("p1", &["1", "42"]),
            trace_with("p2", &["42", "42"]),
        ];
        let harness = harness_for(&[("p1", "42"), ("p2", "42")]);
        let options = ReportOptions {
            report_iteration: 1,
            config_digest: "d".repeat(64),
            oracle_mode: true,
        };
        let report = build_report(Task::Qa, &traces, &harness, &options).unwrap();
        assert_eq!(report.problem_count, 2);
        assert_eq!(report.solve_rate_initial, 50.0);
        assert_eq!(report.solve_rate_at_report_iteration, 100.0);
        assert_eq!(report.solve_rate_final, 100.0);
        assert_eq!(report.total_lm_calls, 6);
        assert_eq!(report.aborted_runs, 0);
        assert_eq!(report.stop_reasons.get("max_iterations"), Some(&2));
        assert_eq!(
            report.oracle_accuracy_by_iteration.as_ref().unwrap().last(),
            Some(&100.0)
        );
        assert!(report
            .iteration_curve_csv()
            .starts_with("iteration,accuracy,oracle_accuracy\n0,50.0,50.0\n"));
    }

    fn spec(name: &str, backend: ModuleBackend, mode: RefineMode) -> FeedbackModuleSpec {
        FeedbackModuleSpec {
            name: name.into(),
            category: ErrorCategory::Redundancy,
            mode,
            backend,
            prompt_path: matches!(backend, ModuleBackend::LmPrompt)
                .then(|| std::path::PathBuf::from(format!("{name}.prompt"))),
            max_feedback_tokens: 600,
        }
    }

    #[test]
    fn leave_one_out_skips_the_interpreter_module() {
        let specs = vec![
            spec("syntax", ModuleBackend::ToolInterpreter, RefineMode::Eager),
            spec("naming", ModuleBackend::LmPrompt, RefineMode::Eager),
            spec("redundancy", ModuleBackend::LmPrompt, RefineMode::Lazy),
        ];
        let variants = ablation_variants(AblationPlan::LeaveOneOut, &specs).unwrap();
        let labels: Vec<&str> = variants.iter().map(|v| v.label.as_str()).collect();
        assert_eq!(labels, vec!["full", "without-naming", "without-redundancy"]);
        assert_eq!(variants[1].specs.len(), 2);

        assert!(matches!(
            leave_out(&specs, "syntax"),
            Err(Error::AblationPlan(_))
        ));
        assert!(matches!(
            leave_out(&specs, "missing"),
            Err(Error::UnknownModule { .. })
        ));
        assert_eq!(leave_out(&specs, "naming").unwrap().len(), 2);
    }

    #[test]
    fn strategy_sweep_rebinds_every_module() {
        let specs = vec![
            spec("naming", ModuleBackend::LmPrompt, RefineMode::Eager),
            spec("redundancy", ModuleBackend::LmPrompt, RefineMode::Lazy),
        ];
        let variants = ablation_variants(AblationPlan::StrategySweep, &specs).unwrap();
        let labels: Vec<&str> = variants.iter().map(|v| v.label.as_str()).collect();
        assert_eq!(labels, vec!["mixed", "all-eager", "all-lazy"]);
        assert!(variants[1]
            .specs
            .iter()
            .all(|s| s.mode == RefineMode::Eager));
        assert!(variants[2].specs.iter().all(|s| s.mode == RefineMode::Lazy));
        assert_eq!(variants[0].specs, specs);
    }

    #[test]
    fn unknown_gold_id_is_a_typed_error() {
        let harness = harness_for(&[("p1", "42")]);
        let sol = cot("the answer is 42");
        assert!(harness.check("p1", &sol).unwrap());
        assert!(matches!(
            harness.check("p9", &sol),
            Err(Error::DatasetRecord { .. })
        ));
    }
}
