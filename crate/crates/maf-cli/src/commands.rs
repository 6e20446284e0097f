//! The four subcommands behind the `maf` binary.
//!
//! Each command is a plain function returning data; the binary's `main`
//! handles printing and exit codes so tests can drive the same code paths
//! in-process with scripted clients.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;

use maf::checkers::ProgramExecutor;
use maf::eval::{
    ablation_variants, build_report, config_digest, load_dataset, run_batch, AblationPlan,
    AnswerExtractor, EvalHarness, ReportOptions, RunReport,
};
use maf::feedback::{summarize_feedback, ModuleRegistry, RegistryOptions};
use maf::lm::{HttpLmClient, LmClient, RecordingLm, ReplayLm, SessionMode, TokenBudget};
use maf::orchestrator::{AnswerOracle, Orchestrator, RolePrompts};
use maf::solution::{
    segment_solution, ErrorCategory, FeedbackModuleSpec, ModuleBackend, RefineMode, RunTrace,
    SolutionKind, Task,
};
use maf::{Error, Result};

use crate::config::AppConfig;

/// Flag-level overrides applied on top of the config file; flags win.
#[derive(Debug, Clone, Default)]
pub struct RunOverrides {
    pub max_iterations: Option<usize>,
    pub report_iteration: Option<usize>,
    pub oracle: bool,
    pub modules: Option<Vec<String>>,
    pub session: Option<SessionMode>,
    pub out: Option<PathBuf>,
}

impl RunOverrides {
    pub fn apply(&self, config: &mut AppConfig) -> Result<()> {
        if let Some(n) = self.max_iterations {
            config.max_iterations = n;
        }
        if let Some(k) = self.report_iteration {
            config.report_iteration = k;
        }
        if self.oracle {
            config.oracle = true;
        }
        if let Some(mode) = self.session {
            config.session.mode = mode;
        }
        if let Some(out) = &self.out {
            config.output.dir = out.clone();
        }
        if let Some(names) = &self.modules {
            config.retain_modules(names)?;
        }
        Ok(())
    }
}

/// Builds the LM client the config asks for. Replay mode never constructs an
/// HTTP client, so replayed runs are offline by construction.
pub fn build_client(config: &AppConfig) -> Result<Box<dyn LmClient>> {
    match config.session.mode {
        SessionMode::Live => Ok(Box::new(HttpLmClient::new(config.http_config())?)),
        SessionMode::Record => {
            let path = config
                .session
                .path
                .as_ref()
                .expect("validation requires session.path for record mode");
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent)?;
            }
            let inner = HttpLmClient::new(config.http_config())?;
            Ok(Box::new(RecordingLm::create(inner, path)?))
        }
        SessionMode::Replay => {
            let path = config
                .session
                .path
                .as_ref()
                .expect("validation requires session.path for replay mode");
            Ok(Box::new(ReplayLm::load(path)?))
        }
    }
}

/// What `run` accomplished, for the summary printout.
#[derive(Debug)]
pub struct RunSummary {
    pub run_dir: PathBuf,
    pub new_traces: usize,
    pub resumed: usize,
    pub report: RunReport,
}

/// Digest over the semantically meaningful parts of a run configuration:
/// two runs with the same digest execute the same refinement procedure.
///
/// File locations are deliberately excluded (a run is the same run no matter
/// where its config or prompts live on disk), so the digest only covers the
/// module roster's shape: names, categories, modes, backends, and caps.
pub fn semantic_digest(config: &AppConfig) -> Result<String> {
    #[derive(Serialize)]
    struct ModuleView<'a> {
        name: &'a str,
        category: ErrorCategory,
        mode: RefineMode,
        backend: ModuleBackend,
        max_feedback_tokens: u32,
    }
    #[derive(Serialize)]
    struct View<'a> {
        task: Task,
        max_iterations: usize,
        ok_marker: &'a str,
        oracle: bool,
        budget: TokenBudget,
        modules: Vec<ModuleView<'a>>,
    }
    config_digest(&View {
        task: config.task,
        max_iterations: config.max_iterations,
        ok_marker: &config.ok_marker,
        oracle: config.oracle,
        budget: config.run_config().budget,
        modules: config
            .modules
            .iter()
            .map(|m| ModuleView {
                name: &m.name,
                category: m.category,
                mode: m.mode,
                backend: m.backend,
                max_feedback_tokens: m.max_feedback_tokens,
            })
            .collect(),
    })
}

/// Reads a JSONL trace file; a missing file is an empty run, a corrupt line
/// is an error naming the file and line.
pub fn read_traces_file(path: &Path) -> Result<Vec<RunTrace>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(path)?;
    let mut traces = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let trace = RunTrace::from_jsonl_line(line).map_err(|e| Error::TraceParse {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        traces.push(trace);
    }
    Ok(traces)
}

/// Keeps the last trace per problem id, preserving first-seen order.
fn dedupe_traces(traces: Vec<RunTrace>) -> Vec<RunTrace> {
    let mut order: Vec<String> = Vec::new();
    let mut by_id: std::collections::HashMap<String, RunTrace> = std::collections::HashMap::new();
    for trace in traces {
        if !by_id.contains_key(&trace.problem_id) {
            order.push(trace.problem_id.clone());
        }
        by_id.insert(trace.problem_id.clone(), trace);
    }
    order
        .into_iter()
        .map(|id| by_id.remove(&id).expect("id recorded on first sight"))
        .collect()
}

fn executor_for(config: &AppConfig, specs: &[FeedbackModuleSpec]) -> Result<Option<Arc<ProgramExecutor>>> {
    let needed = config.task.solution_kind() == SolutionKind::Program
        || specs
            .iter()
            .any(|s| s.backend == ModuleBackend::ToolInterpreter);
    if !needed {
        return Ok(None);
    }
    Ok(Some(Arc::new(ProgramExecutor::new(
        config.interpreter_config(),
    )?)))
}

/// Runs refinement over the configured dataset with the given client,
/// writing traces, the resolved config, and reports into the run directory.
///
/// Problems that already have a trace in the run directory are skipped, so
/// interrupted runs resume where they left off. Traces are appended in
/// dataset order, one chunk of `parallelism.problems` at a time.
pub fn execute_run(config: &AppConfig, lm: &dyn LmClient) -> Result<RunSummary> {
    let records = load_dataset(&config.dataset.path)?;
    let run_dir = config.output.dir.clone();
    fs::create_dir_all(&run_dir)?;
    fs::write(run_dir.join("config.toml"), config.absolutized()?.to_toml()?)?;

    let prompts = RolePrompts::load(
        &config.prompts.generator,
        &config.prompts.eager_refiner,
        &config.prompts.lazy_refiner,
    )?;
    let specs = config.module_specs();
    let executor = executor_for(config, &specs)?;
    let registry = ModuleRegistry::build(
        &specs,
        &RegistryOptions {
            ok_marker: config.ok_marker.clone(),
            interpreter: executor.clone(),
            ..RegistryOptions::default()
        },
    )?;
    let run_config = config.run_config();
    let harness = EvalHarness::new(&records, AnswerExtractor::new(executor));
    let oracle: Option<&dyn AnswerOracle> =
        if config.oracle { Some(&harness) } else { None };
    let orchestrator = Orchestrator::new(&run_config, &prompts, &registry, lm, oracle)?;

    let trace_path = run_dir.join("traces.jsonl");
    let mut traces = read_traces_file(&trace_path)?;
    let done: HashSet<String> = traces.iter().map(|t| t.problem_id.clone()).collect();
    let pending: Vec<_> = records
        .iter()
        .filter(|r| !done.contains(&r.id))
        .cloned()
        .collect();
    let resumed = records.len() - pending.len();
    if resumed > 0 {
        log::info!(
            "resuming: {resumed} of {} problems already have traces in {}",
            records.len(),
            trace_path.display()
        );
    }

    let mut file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&trace_path)?;
    let mut failures: Vec<Error> = Vec::new();
    let mut new_traces = 0usize;
    for chunk in pending.chunks(config.parallelism.problems.max(1)) {
        for result in run_batch(&orchestrator, chunk) {
            match result {
                Ok(trace) => {
                    writeln!(file, "{}", trace.to_jsonl_line()?)?;
                    traces.push(trace);
                    new_traces += 1;
                }
                Err(e) => failures.push(e),
            }
        }
        file.flush()?;
    }
    drop(file);

    if !failures.is_empty() {
        for failure in &failures {
            log::error!("problem failed before any trace could be written: {failure}");
        }
        return Err(failures.remove(0));
    }

    let traces = dedupe_traces(traces);
    let report = build_report(
        config.task,
        &traces,
        &harness,
        &ReportOptions {
            report_iteration: config.report_iteration,
            config_digest: semantic_digest(config)?,
            oracle_mode: true,
        },
    )?;
    fs::write(
        run_dir.join("report.json"),
        format!("{}\n", serde_json::to_string_pretty(&report)?),
    )?;
    fs::write(run_dir.join("report.csv"), report.iteration_curve_csv())?;

    Ok(RunSummary {
        run_dir,
        new_traces,
        resumed,
        report,
    })
}

/// `maf run`: load config, apply flag overrides, validate, execute.
pub fn cmd_run(config_path: &Path, overrides: &RunOverrides) -> Result<RunSummary> {
    let mut config = AppConfig::load(config_path)?;
    overrides.apply(&mut config)?;
    config.validate()?;
    let lm = build_client(&config)?;
    execute_run(&config, lm.as_ref())
}

pub fn render_run_summary(summary: &RunSummary) -> String {
    let report = &summary.report;
    let mut out = String::new();
    out.push_str(&format!(
        "task: {} | problems: {} ({} new, {} resumed)\n",
        report.task, report.problem_count, summary.new_traces, summary.resumed
    ));
    out.push_str(&format!(
        "solve rate: initial {:.1} | iteration {}: {:.1} | final {:.1}\n",
        report.solve_rate_initial,
        report.report_iteration,
        report.solve_rate_at_report_iteration,
        report.solve_rate_final
    ));
    if let Some(oracle) = &report.oracle_accuracy_by_iteration {
        if let Some(last) = oracle.last() {
            out.push_str(&format!("oracle solve rate: final {last:.1}\n"));
        }
    }
    let reasons = report
        .stop_reasons
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(", ");
    out.push_str(&format!(
        "lm calls: {} | aborted: {} | stop reasons: {reasons}\n",
        report.total_lm_calls, report.aborted_runs
    ));
    out.push_str(&format!(
        "wrote {}/{{config.toml, traces.jsonl, report.json, report.csv}}\n",
        summary.run_dir.display()
    ));
    out
}

/// `maf check`: run the named modules once against a single solution file
/// and show each module's feedback before and after summarization.
pub fn cmd_check(
    config_path: &Path,
    solution_file: &Path,
    module_names: &[String],
    problem: Option<&str>,
) -> Result<String> {
    let config = AppConfig::load(config_path)?;
    config.validate()?;
    let raw = fs::read_to_string(solution_file)?;
    let solution = segment_solution(raw.trim_end_matches('\n'), config.task.solution_kind())?;

    let specs = config.module_specs();
    let executor = executor_for(&config, &specs)?;
    let registry = ModuleRegistry::build(
        &specs,
        &RegistryOptions {
            ok_marker: config.ok_marker.clone(),
            interpreter: executor,
            ..RegistryOptions::default()
        },
    )?;
    let chosen = registry.select(module_names)?;
    let lm = build_client(&config)?;
    let budget = config.run_config().budget;

    let mut out = String::new();
    for module in chosen {
        let mode = match module.mode() {
            RefineMode::Eager => "eager",
            RefineMode::Lazy => "lazy",
        };
        let feedback =
            module.generate_feedback(lm.as_ref(), problem.unwrap_or(""), &solution, &budget)?;
        out.push_str(&format!(
            "== {} — category: {}, mode: {mode}\n",
            module.name(),
            module.category().name()
        ));
        out.push_str(&format!(
            "revision required: {}\n",
            if feedback.revision_required { "yes" } else { "no" }
        ));
        out.push_str(&feedback.raw_text);
        out.push_str("\n-- after summarization --\n");
        let summarized = summarize_feedback(&feedback, registry.ok_marker());
        if summarized.step_feedback.is_empty() {
            out.push_str("(all steps look good)\n");
        } else {
            out.push_str(&summarized.raw_text);
            out.push('\n');
        }
        out.push('\n');
    }
    Ok(out)
}

/// One ablation variant's results.
#[derive(Debug)]
pub struct VariantOutcome {
    pub label: String,
    pub run_dir: PathBuf,
    pub report: RunReport,
}

#[derive(Debug)]
pub struct AblationSummary {
    pub root: PathBuf,
    pub variants: Vec<VariantOutcome>,
}

/// Rewrites the config's module list to a variant's roster, keeping each
/// module's prompt path and token settings from the base config.
fn apply_variant_modules(config: &mut AppConfig, specs: &[FeedbackModuleSpec]) {
    let sections = specs
        .iter()
        .map(|spec| {
            let mut section = config
                .modules
                .iter()
                .find(|m| m.name == spec.name)
                .expect("variant rosters are drawn from the config")
                .clone();
            section.mode = spec.mode;
            section
        })
        .collect();
    config.modules = sections;
}

/// `maf ablate`: expand the plan into variants, run each into its own
/// subdirectory, and write a comparison table against the first variant.
pub fn cmd_ablate(
    config_path: &Path,
    plan: AblationPlan,
    overrides: &RunOverrides,
) -> Result<AblationSummary> {
    let mut config = AppConfig::load(config_path)?;
    overrides.apply(&mut config)?;
    config.validate()?;
    let lm = build_client(&config)?;
    execute_ablate(&config, plan, lm.as_ref())
}

/// Runs an ablation plan against an already-built client. All variants share
/// the client, so a recorded session covers the whole sweep.
pub fn execute_ablate(
    config: &AppConfig,
    plan: AblationPlan,
    lm: &dyn LmClient,
) -> Result<AblationSummary> {
    let variants = ablation_variants(plan, &config.module_specs())?;
    let root = config.output.dir.clone();

    let mut outcomes = Vec::new();
    for variant in &variants {
        let mut variant_config = config.clone();
        variant_config.output.dir = root.join(&variant.label);
        apply_variant_modules(&mut variant_config, &variant.specs);
        let summary = execute_run(&variant_config, lm)?;
        outcomes.push(VariantOutcome {
            label: variant.label.clone(),
            run_dir: summary.run_dir,
            report: summary.report,
        });
    }

    let summary = AblationSummary {
        root: root.clone(),
        variants: outcomes,
    };
    fs::write(root.join("ablation.csv"), ablation_csv(&summary))?;
    Ok(summary)
}

fn ablation_csv(summary: &AblationSummary) -> String {
    let baseline = summary.variants[0].report.solve_rate_final;
    let mut out = String::from("variant,final_accuracy,delta\n");
    for (i, v) in summary.variants.iter().enumerate() {
        let delta = if i == 0 {
            String::new()
        } else {
            format!("{:+.1}", v.report.solve_rate_final - baseline)
        };
        out.push_str(&format!(
            "{},{:.1},{delta}\n",
            v.label, v.report.solve_rate_final
        ));
    }
    out
}

pub fn render_ablation_table(summary: &AblationSummary) -> String {
    let width = summary
        .variants
        .iter()
        .map(|v| v.label.len())
        .max()
        .unwrap_or(7)
        .max("variant".len());
    let baseline = summary.variants[0].report.solve_rate_final;
    let mut out = format!("{:<width$}  {:>7}  {:>7}\n", "variant", "final", "delta");
    for (i, v) in summary.variants.iter().enumerate() {
        let delta = if i == 0 {
            "-".to_string()
        } else {
            format!("{:+.1}", v.report.solve_rate_final - baseline)
        };
        out.push_str(&format!(
            "{:<width$}  {:>7.1}  {:>7}\n",
            v.label, v.report.solve_rate_final, delta
        ));
    }
    out
}

/// What `report` produced.
#[derive(Debug)]
pub struct ReportRender {
    pub dir: PathBuf,
    pub report: RunReport,
    pub table: String,
    pub skipped_files: Vec<String>,
}

/// `maf report`: recompute accuracy-at-iteration curves (standard and oracle
/// accounting) from the trace files in a run directory.
///
/// The directory's own `config.toml` supplies the dataset and task; pass an
/// explicit config for trace directories assembled by hand. Corrupt trace
/// files are named, skipped, and only fatal if nothing readable remains.
pub fn cmd_report(dir: &Path, config_override: Option<&Path>) -> Result<ReportRender> {
    let config_path = match config_override {
        Some(path) => path.to_path_buf(),
        None => dir.join("config.toml"),
    };
    if !config_path.is_file() {
        return Err(Error::InvalidConfig(format!(
            "{}: not found (pass --config for trace directories produced elsewhere)",
            config_path.display()
        )));
    }
    let config = AppConfig::load(&config_path)?;
    let records = load_dataset(&config.dataset.path)?;

    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "jsonl"))
        .collect();
    entries.sort();

    let mut traces = Vec::new();
    let mut skipped_files = Vec::new();
    for path in &entries {
        match read_traces_file(path) {
            Ok(mut file_traces) => traces.append(&mut file_traces),
            Err(e) => {
                log::warn!("skipping corrupt trace file: {e}");
                skipped_files.push(path.display().to_string());
            }
        }
    }
    let traces = dedupe_traces(traces);
    if traces.is_empty() {
        return Err(Error::NoTraces(dir.display().to_string()));
    }

    let executor = executor_for(&config, &config.module_specs())?;
    let harness = EvalHarness::new(&records, AnswerExtractor::new(executor));
    let report = build_report(
        config.task,
        &traces,
        &harness,
        &ReportOptions {
            report_iteration: config.report_iteration,
            config_digest: semantic_digest(&config)?,
            oracle_mode: true,
        },
    )?;
    fs::write(dir.join("report.csv"), report.iteration_curve_csv())?;
    fs::write(
        dir.join("report.json"),
        format!("{}\n", serde_json::to_string_pretty(&report)?),
    )?;

    let table = render_curve_table(&report);
    Ok(ReportRender {
        dir: dir.to_path_buf(),
        report,
        table,
        skipped_files,
    })
}

pub fn render_curve_table(report: &RunReport) -> String {
    let mut out = format!("{:>9}  {:>8}  {:>15}\n", "iteration", "accuracy", "oracle_accuracy");
    let oracle = report.oracle_accuracy_by_iteration.as_deref().unwrap_or(&[]);
    for (k, acc) in report.accuracy_by_iteration.iter().enumerate() {
        match oracle.get(k) {
            Some(oracle_acc) => out.push_str(&format!(
                "{k:>9}  {acc:>8.1}  {oracle_acc:>15.1}\n"
            )),
            None => out.push_str(&format!("{k:>9}  {acc:>8.1}  {:>15}\n", "-")),
        }
    }
    out
}
