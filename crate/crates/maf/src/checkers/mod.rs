//! Deterministic tool checkers: equation auditing and program execution.
//!
//! Two feedback modules are backed by tools rather than model calls. The
//! arithmetic checker re-derives every `expression = number` claim found in a
//! solution and flags the steps whose stated results do not match. The syntax
//! checker hands the whole program to an external interpreter's compile step
//! and maps the reported line back onto a step index. Program execution (used
//! for answer extraction as well) runs in a temporary directory with a wall
//! clock timeout and a cap on concurrent child processes.

pub mod expr;

use std::fmt::Write as _;
use std::io::Read;
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use once_cell::sync::Lazy;
use regex::Regex;

use crate::error::{Error, Result};
use crate::solution::{Solution, StepFeedback};
use crate::util::Gate;

pub use expr::{evaluate, evaluate_f64, parse_expression, ExprAst};

/// Absolute slack applied on top of the relative tolerance so that claims
/// about values near zero are not rejected for rounding dust.
pub const ARITHMETIC_ABS_TOLERANCE: f64 = 1e-9;

/// Default relative tolerance for accepting a stated result.
pub const ARITHMETIC_REL_TOLERANCE: f64 = 1e-6;

/// One `expression = number` claim harvested from a solution step.
#[derive(Debug, Clone, PartialEq)]
pub struct Equation {
    pub step_index: usize,
    /// The claim as scanned (currency signs and digit-group commas removed).
    pub snippet: String,
    pub expression: ExprAst,
    /// The numeric result the solution asserts.
    pub stated: f64,
}

/// Strips `$` signs and the commas used for digit grouping so that money
/// amounts parse as plain numbers. Prose commas survive (they terminate any
/// expression parse anyway).
fn normalize_numeric_text(text: &str) -> String {
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::with_capacity(text.len());
    for (i, &c) in chars.iter().enumerate() {
        match c {
            '$' => {}
            ',' => {
                let prev_digit = i > 0 && chars[i - 1].is_ascii_digit();
                let next_digit = chars.get(i + 1).is_some_and(|n| n.is_ascii_digit());
                if !(prev_digit && next_digit) {
                    out.push(c);
                }
            }
            _ => out.push(c),
        }
    }
    out
}

/// Parses a prefix of `src` as an expression, returning the AST and the byte
/// length consumed.
fn parse_prefix(src: &str) -> Option<(ExprAst, usize)> {
    expr::parse_expression_prefix(src).ok()
}

fn is_bare_number(ast: &ExprAst) -> bool {
    match ast {
        ExprAst::Literal(_) => true,
        ExprAst::Neg(inner) => matches!(**inner, ExprAst::Literal(_)),
        _ => false,
    }
}

/// Scans one line of text for equations. `=` splits the line into windows;
/// the left-hand side is the longest expression that ends flush against the
/// `=`, and the right-hand side must be a bare number (otherwise the claim is
/// an assignment or a chained rewrite, not an arithmetic assertion).
fn scan_line(line: &str, step_index: usize, out: &mut Vec<Equation>) {
    let text = normalize_numeric_text(line);
    let eq_positions: Vec<usize> = text
        .char_indices()
        .filter(|(i, c)| {
            // Skip comparison operators (==, <=, >=, !=) and arrow tokens.
            *c == '='
                && !matches!(text[..*i].chars().next_back(), Some('=' | '<' | '>' | '!'))
                && !text[i + 1..].starts_with('=')
        })
        .map(|(i, _)| i)
        .collect();
    let mut window_start = 0usize;
    for &eq in &eq_positions {
        if eq < window_start {
            continue;
        }
        let lhs_window = text[window_start..eq].trim_end();
        let rhs_window = &text[eq + 1..];
        window_start = eq + 1;

        let Some((rhs_ast, _)) = parse_prefix(rhs_window.trim_start()) else {
            continue;
        };
        if !is_bare_number(&rhs_ast) {
            continue;
        }
        let stated = match evaluate_f64(&rhs_ast) {
            Ok(v) => v,
            Err(_) => continue,
        };

        // Longest suffix of the left window that parses as a complete
        // expression: try every start boundary from the left and keep the
        // first success.
        let mut found = None;
        for (start, _) in lhs_window.char_indices() {
            let candidate = lhs_window[start..].trim_start();
            if candidate.is_empty() {
                break;
            }
            if let Ok(ast) = parse_expression(candidate) {
                found = Some((ast, candidate));
                break;
            }
        }
        if let Some((expression, lhs_text)) = found {
            let rhs_trim = rhs_window.trim_start();
            let rhs_len = parse_prefix(rhs_trim).map(|(_, n)| n).unwrap_or(0);
            out.push(Equation {
                step_index,
                snippet: format!("{lhs_text} = {}", rhs_trim[..rhs_len].trim_end()),
                expression,
                stated,
            });
        }
    }
}

/// Collects every arithmetic claim in the solution. For programs only the
/// comment text is scanned (code lines hold assignments, not claims); for
/// prose solutions the whole step is scanned.
pub fn extract_equations(solution: &Solution) -> Vec<Equation> {
    let mut out = Vec::new();
    for step in &solution.steps {
        let scannable: &str = match solution.kind {
            crate::solution::SolutionKind::Program => match step.text.find('#') {
                Some(pos) => &step.text[pos + 1..],
                None => continue,
            },
            _ => &step.text,
        };
        scan_line(scannable, step.index, &mut out);
    }
    out
}

fn within_tolerance(actual: f64, stated: f64, rel_tol: f64) -> bool {
    let diff = (actual - stated).abs();
    diff <= ARITHMETIC_ABS_TOLERANCE + rel_tol * actual.abs().max(stated.abs())
}

/// Re-derives every equation in the solution and produces one feedback entry
/// per step: the ok marker where all claims check out (or no claims exist),
/// and a list of corrections otherwise.
pub fn check_arithmetic(solution: &Solution, rel_tol: f64, ok_marker: &str) -> Vec<StepFeedback> {
    let equations = extract_equations(solution);
    solution
        .steps
        .iter()
        .map(|step| {
            let mut problems = String::new();
            for eq in equations.iter().filter(|eq| eq.step_index == step.index) {
                match evaluate_f64(&eq.expression) {
                    Ok(actual) if within_tolerance(actual, eq.stated, rel_tol) => {}
                    Ok(actual) => {
                        if !problems.is_empty() {
                            problems.push_str("; ");
                        }
                        let _ = write!(
                            problems,
                            "{} is incorrect: {} evaluates to {actual}",
                            eq.snippet, eq.expression
                        );
                    }
                    Err(_) => {
                        if !problems.is_empty() {
                            problems.push_str("; ");
                        }
                        let _ = write!(problems, "{} cannot be evaluated", eq.snippet);
                    }
                }
            }
            if problems.is_empty() {
                StepFeedback::ok(step.index, ok_marker)
            } else {
                StepFeedback::issue(step.index, problems)
            }
        })
        .collect()
}

/// How to invoke the external interpreter. Each argument may contain the
/// `{file}` placeholder, replaced with the program's temp-file path; when no
/// argument carries it the path is appended.
#[derive(Debug, Clone)]
pub struct InterpreterConfig {
    /// Command used to run a program, e.g. `["python3", "{file}"]`.
    pub run_command: Vec<String>,
    /// Command used for a compile-only syntax check.
    pub compile_command: Vec<String>,
    /// Extension given to the temp file (some interpreters sniff it).
    pub file_extension: String,
    /// Wall-clock limit per child process.
    pub timeout: Duration,
    /// Upper bound on concurrently running children.
    pub max_concurrent: usize,
}

impl Default for InterpreterConfig {
    fn default() -> Self {
        InterpreterConfig {
            run_command: vec!["python3".into(), "{file}".into()],
            compile_command: vec![
                "python3".into(),
                "-m".into(),
                "py_compile".into(),
                "{file}".into(),
            ],
            file_extension: "py".into(),
            timeout: Duration::from_secs(10),
            max_concurrent: 4,
        }
    }
}

impl InterpreterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.run_command.is_empty() || self.compile_command.is_empty() {
            return Err(Error::InvalidConfig(
                "interpreter run and compile commands must be non-empty".into(),
            ));
        }
        if self.max_concurrent == 0 {
            return Err(Error::InvalidConfig(
                "interpreter max_concurrent must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Outcome of one child process run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecutionResult {
    pub exit_code: Option<i32>,
    pub stdout: String,
    pub stderr: String,
    pub timed_out: bool,
}

impl ExecutionResult {
    pub fn success(&self) -> bool {
        !self.timed_out && self.exit_code == Some(0)
    }
}

/// Runs candidate programs in throwaway directories under a timeout.
#[derive(Debug)]
pub struct ProgramExecutor {
    config: InterpreterConfig,
    gate: Gate,
}

impl ProgramExecutor {
    pub fn new(config: InterpreterConfig) -> Result<Self> {
        config.validate()?;
        let gate = Gate::new(config.max_concurrent);
        Ok(ProgramExecutor { config, gate })
    }

    pub fn config(&self) -> &InterpreterConfig {
        &self.config
    }

    /// Compile-only pass; a nonzero exit means a syntax error.
    pub fn check_syntax(&self, source: &str) -> Result<ExecutionResult> {
        self.run_with(&self.config.compile_command.clone(), source)
    }

    /// Full run of the program, capturing stdout/stderr.
    pub fn execute(&self, source: &str) -> Result<ExecutionResult> {
        self.run_with(&self.config.run_command.clone(), source)
    }

    fn run_with(&self, template: &[String], source: &str) -> Result<ExecutionResult> {
        let _permit = self.gate.acquire();
        let dir = tempfile::tempdir()?;
        let file_path = dir
            .path()
            .join(format!("program.{}", self.config.file_extension));
        std::fs::write(&file_path, source)?;
        let args = substitute_file(template, &file_path);
        let (program, rest) = args.split_first().expect("validated non-empty command");

        let mut child = Command::new(program)
            .args(rest)
            .current_dir(dir.path())
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| {
                if e.kind() == std::io::ErrorKind::NotFound {
                    Error::InterpreterMissing(program.clone())
                } else {
                    Error::Io(e)
                }
            })?;

        // Drain the pipes on their own threads so a chatty child cannot fill
        // the pipe buffer and stall before we notice the timeout.
        let stdout_handle = drain(child.stdout.take());
        let stderr_handle = drain(child.stderr.take());

        let deadline = Instant::now() + self.config.timeout;
        let mut timed_out = false;
        let status = loop {
            if let Some(status) = child.try_wait()? {
                break status;
            }
            if Instant::now() >= deadline {
                timed_out = true;
                let _ = child.kill();
                break child.wait()?;
            }
            std::thread::sleep(Duration::from_millis(10));
        };

        Ok(ExecutionResult {
            exit_code: status.code(),
            stdout: stdout_handle.join().unwrap_or_default(),
            stderr: stderr_handle.join().unwrap_or_default(),
            timed_out,
        })
    }
}

fn substitute_file(template: &[String], path: &Path) -> Vec<String> {
    let path_str = path.to_string_lossy();
    let mut args: Vec<String> = template
        .iter()
        .map(|a| a.replace("{file}", &path_str))
        .collect();
    if !template.iter().any(|a| a.contains("{file}")) {
        args.push(path_str.into_owned());
    }
    args
}

fn drain(pipe: Option<impl Read + Send + 'static>) -> std::thread::JoinHandle<String> {
    std::thread::spawn(move || {
        let mut buf = String::new();
        if let Some(mut pipe) = pipe {
            let _ = pipe.read_to_string(&mut buf);
        }
        buf
    })
}

static LINE_NUMBER: Lazy<Regex> = Lazy::new(|| Regex::new(r"line (\d+)").unwrap());

/// Compiles the program and maps any reported error line onto its step. On a
/// clean compile every step carries the ok marker; otherwise the offending
/// step (or step 1 when no line is reported) carries the interpreter's
/// message and the rest stay ok.
pub fn check_program_syntax(
    executor: &ProgramExecutor,
    solution: &Solution,
    ok_marker: &str,
) -> Result<Vec<StepFeedback>> {
    let result = executor.check_syntax(&solution.raw_text)?;
    if result.success() {
        return Ok(solution
            .steps
            .iter()
            .map(|s| StepFeedback::ok(s.index, ok_marker))
            .collect());
    }

    let reported_line = LINE_NUMBER
        .captures_iter(&result.stderr)
        .last()
        .and_then(|c| c[1].parse::<usize>().ok());
    let bad_index = reported_line
        .map(|line| line.saturating_sub(1).min(solution.steps.len().saturating_sub(1)))
        .unwrap_or(0);
    let message = result
        .stderr
        .lines()
        .rev()
        .find(|l| !l.trim().is_empty())
        .unwrap_or("syntax check failed")
        .trim()
        .to_string();

    Ok(solution
        .steps
        .iter()
        .map(|s| {
            if s.index == bad_index {
                StepFeedback::issue(s.index, format!("syntax error: {message}"))
            } else {
                StepFeedback::ok(s.index, ok_marker)
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solution::{segment_solution, SolutionKind, DEFAULT_OK_MARKER};

    fn cot(text: &str) -> Solution {
        segment_solution(text, SolutionKind::ChainOfThought).unwrap()
    }

    #[test]
    fn extracts_simple_equation() {
        let sol = cot("He bought 12 eggs.\nSo 12 * 3 = 36 in total.");
        let eqs = extract_equations(&sol);
        assert_eq!(eqs.len(), 1);
        assert_eq!(eqs[0].step_index, 1);
        assert_eq!(eqs[0].snippet, "12 * 3 = 36");
        assert_eq!(eqs[0].stated, 36.0);
    }

    #[test]
    fn takes_longest_left_hand_side() {
        let sol = cot("Total is 1 + 2 + 3 = 6.");
        let eqs = extract_equations(&sol);
        assert_eq!(eqs.len(), 1);
        assert_eq!(eqs[0].expression.to_string(), "1 + 2 + 3");
    }

    #[test]
    fn handles_currency_and_grouped_digits() {
        let sol = cot("That costs $1,200 / 4 = $300 per person.");
        let eqs = extract_equations(&sol);
        assert_eq!(eqs.len(), 1);
        assert_eq!(eqs[0].snippet, "1200 / 4 = 300");
        assert_eq!(eqs[0].stated, 300.0);
    }

    #[test]
    fn skips_assignments_and_comparisons() {
        let sol = cot("x = 5\ncheck that y == 7\nz >= 3");
        assert!(extract_equations(&sol).is_empty());
    }

    #[test]
    fn rhs_must_be_a_bare_number() {
        let sol = cot("We know 5 = 2 + 3 here.");
        assert!(extract_equations(&sol).is_empty());
    }

    #[test]
    fn chained_equalities_split_into_windows() {
        let sol = cot("2 + 3 = 5 = 5.0");
        let eqs = extract_equations(&sol);
        assert_eq!(eqs.len(), 2);
        assert_eq!(eqs[0].expression.to_string(), "2 + 3");
        assert_eq!(eqs[1].expression.to_string(), "5");
    }

    #[test]
    fn program_comments_are_scanned_code_is_not() {
        let text = "total = 12 * 3  # 12 * 3 = 36\nprint(total)";
        let sol = segment_solution(text, SolutionKind::Program).unwrap();
        let eqs = extract_equations(&sol);
        assert_eq!(eqs.len(), 1);
        assert_eq!(eqs[0].step_index, 0);
        assert_eq!(eqs[0].stated, 36.0);
    }

    #[test]
    fn arithmetic_check_flags_only_wrong_steps() {
        let sol = cot("First, 2 + 3 = 5.\nThen 5 * 4 = 21.\nDone.");
        let fb = check_arithmetic(&sol, ARITHMETIC_REL_TOLERANCE, DEFAULT_OK_MARKER);
        assert_eq!(fb.len(), 3);
        assert!(fb[0].ok);
        assert!(!fb[1].ok);
        assert!(fb[1].comment.contains("5 * 4 = 21 is incorrect"));
        assert!(fb[1].comment.contains("evaluates to 20"));
        assert!(fb[2].ok);
    }

    #[test]
    fn arithmetic_check_accepts_rounded_values_within_tolerance() {
        let sol = cot("1 / 3 = 0.3333333333 approximately.");
        let fb = check_arithmetic(&sol, ARITHMETIC_REL_TOLERANCE, DEFAULT_OK_MARKER);
        assert!(fb[0].ok);
    }

    #[test]
    fn arithmetic_check_flags_division_by_zero_claims() {
        let sol = cot("Clearly 1 / (2 - 2) = 7.");
        let fb = check_arithmetic(&sol, ARITHMETIC_REL_TOLERANCE, DEFAULT_OK_MARKER);
        assert!(!fb[0].ok);
        assert!(fb[0].comment.contains("cannot be evaluated"));
    }

    #[test]
    fn executor_runs_a_program() {
        let exec = ProgramExecutor::new(InterpreterConfig::default()).unwrap();
        let result = exec.execute("print(6 * 7)").unwrap();
        assert!(result.success());
        assert_eq!(result.stdout.trim(), "42");
    }

    #[test]
    fn executor_enforces_timeout() {
        let config = InterpreterConfig {
            timeout: Duration::from_millis(200),
            ..InterpreterConfig::default()
        };
        let exec = ProgramExecutor::new(config).unwrap();
        let result = exec.execute("while True:\n    pass").unwrap();
        assert!(result.timed_out);
        assert!(!result.success());
    }

    #[test]
    fn missing_interpreter_is_a_typed_error() {
        let config = InterpreterConfig {
            run_command: vec!["definitely-not-a-real-interpreter".into(), "{file}".into()],
            ..InterpreterConfig::default()
        };
        let exec = ProgramExecutor::new(config).unwrap();
        match exec.execute("print(1)") {
            Err(Error::InterpreterMissing(name)) => {
                assert_eq!(name, "definitely-not-a-real-interpreter")
            }
            other => panic!("expected InterpreterMissing, got {other:?}"),
        }
    }

    #[test]
    fn syntax_check_maps_error_line_to_step() {
        let exec = ProgramExecutor::new(InterpreterConfig::default()).unwrap();
        let source = "a = 1\nb = 2\nc = (a +\nprint(c)";
        let sol = segment_solution(source, SolutionKind::Program).unwrap();
        let fb = check_program_syntax(&exec, &sol, DEFAULT_OK_MARKER).unwrap();
        assert_eq!(fb.len(), 4);
        let bad: Vec<_> = fb.iter().filter(|f| !f.ok).collect();
        assert_eq!(bad.len(), 1);
        assert!(bad[0].comment.contains("syntax error"));
        // Python reports the unclosed parenthesis on line 3 or 4 depending on
        // version; either maps inside the program.
        assert!(bad[0].step_index == 2 || bad[0].step_index == 3);
    }

    #[test]
    fn syntax_check_passes_clean_programs() {
        let exec = ProgramExecutor::new(InterpreterConfig::default()).unwrap();
        let source = "a = 1\nprint(a)";
        let sol = segment_solution(source, SolutionKind::Program).unwrap();
        let fb = check_program_syntax(&exec, &sol, DEFAULT_OK_MARKER).unwrap();
        assert!(fb.iter().all(|f| f.ok));
    }
}
