//! Configuration document for the `maf` binary.
//!
//! A run is described by a single TOML file; command-line flags override
//! individual fields after the file is parsed. Relative paths are resolved
//! against the directory containing the config file, and the fully resolved
//! document is written into every run directory so runs are self-describing.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use maf::checkers::InterpreterConfig;
use maf::lm::{HttpLmConfig, SessionMode, TokenBudget};
use maf::orchestrator::{DecodingParams, RunConfig};
use maf::solution::{
    ErrorCategory, FeedbackModuleSpec, ModuleBackend, RefineMode, Task, DEFAULT_OK_MARKER,
};
use maf::{Error, Result};

fn default_max_iterations() -> usize {
    4
}

fn default_report_iteration() -> usize {
    2
}

fn default_ok_marker() -> String {
    DEFAULT_OK_MARKER.to_string()
}

/// Top-level configuration for a refinement run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppConfig {
    pub task: Task,
    /// Upper bound on refinement iterations after the initial generation.
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    /// Iteration whose accuracy is called out in the report summary.
    #[serde(default = "default_report_iteration")]
    pub report_iteration: usize,
    /// Marker phrase critics use for issue-free steps.
    #[serde(default = "default_ok_marker")]
    pub ok_marker: String,
    /// Stop a problem early once its extracted answer matches gold.
    #[serde(default)]
    pub oracle: bool,
    /// Reserved for future sampling support; decoding is greedy throughout,
    /// so this value is currently unused.
    #[serde(default)]
    pub seed: u64,
    pub dataset: DatasetSection,
    pub prompts: PromptsSection,
    #[serde(default)]
    pub decoding: DecodingSection,
    /// Per-stage token ceilings; defaults are derived from the task.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<BudgetSection>,
    #[serde(default)]
    pub lm: LmSection,
    #[serde(default)]
    pub session: SessionSection,
    pub output: OutputSection,
    #[serde(default)]
    pub parallelism: ParallelismSection,
    #[serde(default)]
    pub interpreter: InterpreterSection,
    #[serde(default)]
    pub modules: Vec<ModuleSection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub path: PathBuf,
    /// Only `jsonl` is supported; the field exists so configs are explicit.
    #[serde(default = "default_dataset_format")]
    pub format: String,
}

fn default_dataset_format() -> String {
    "jsonl".to_string()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptsSection {
    /// Directory holding the prompt files; the file fields below and module
    /// `prompt` entries are resolved against it.
    pub dir: PathBuf,
    #[serde(default = "default_generator_prompt")]
    pub generator: PathBuf,
    #[serde(default = "default_eager_refiner_prompt")]
    pub eager_refiner: PathBuf,
    #[serde(default = "default_lazy_refiner_prompt")]
    pub lazy_refiner: PathBuf,
}

fn default_generator_prompt() -> PathBuf {
    PathBuf::from("generator.prompt")
}

fn default_eager_refiner_prompt() -> PathBuf {
    PathBuf::from("refiner_eager.prompt")
}

fn default_lazy_refiner_prompt() -> PathBuf {
    PathBuf::from("refiner_lazy.prompt")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodingSection {
    pub temperature: f32,
}

impl Default for DecodingSection {
    fn default() -> Self {
        DecodingSection { temperature: 0.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetSection {
    pub base: u32,
    pub feedback: u32,
    pub refiner: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LmSection {
    pub endpoint: String,
    pub model: String,
    /// Environment variable read for the bearer token.
    pub api_key_env: String,
    pub max_attempts: u32,
    pub backoff_ms: u64,
    pub request_timeout_secs: u64,
    pub max_in_flight: usize,
}

impl Default for LmSection {
    fn default() -> Self {
        let base = HttpLmConfig::default();
        LmSection {
            endpoint: base.endpoint,
            model: base.model,
            api_key_env: base.api_key_env,
            max_attempts: base.max_attempts,
            backoff_ms: base.backoff_base.as_millis() as u64,
            request_timeout_secs: base.request_timeout.as_secs(),
            max_in_flight: base.max_in_flight,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionSection {
    pub mode: SessionMode,
    /// Session file; required for `record` and `replay`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

impl Default for SessionSection {
    fn default() -> Self {
        SessionSection {
            mode: SessionMode::Live,
            path: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    /// The run directory: traces, the resolved config, and reports go here.
    pub dir: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParallelismSection {
    /// Problems refined concurrently.
    pub problems: usize,
}

impl Default for ParallelismSection {
    fn default() -> Self {
        ParallelismSection { problems: 4 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterpreterSection {
    pub run: Vec<String>,
    pub compile: Vec<String>,
    pub extension: String,
    pub timeout_secs: u64,
    pub max_concurrent: usize,
}

impl Default for InterpreterSection {
    fn default() -> Self {
        let base = InterpreterConfig::default();
        InterpreterSection {
            run: base.run_command,
            compile: base.compile_command,
            extension: base.file_extension,
            timeout_secs: base.timeout.as_secs(),
            max_concurrent: base.max_concurrent,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModuleSection {
    pub name: String,
    pub category: ErrorCategory,
    pub mode: RefineMode,
    pub backend: ModuleBackend,
    /// Prompt file relative to `prompts.dir`; required for `lm-prompt`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<PathBuf>,
    #[serde(default = "default_feedback_tokens")]
    pub max_feedback_tokens: u32,
}

fn default_feedback_tokens() -> u32 {
    600
}

/// Joins `path` onto `base` unless it is already absolute.
fn resolve_path(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

impl AppConfig {
    /// Parses a TOML config file and resolves its relative paths against the
    /// file's directory. Call [`AppConfig::validate`] before using it.
    pub fn load(path: impl AsRef<Path>) -> Result<AppConfig> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| {
            Error::InvalidConfig(format!("{}: {e}", path.display()))
        })?;
        let mut config: AppConfig = toml::from_str(&text).map_err(|e| {
            Error::InvalidConfig(format!("{}: {e}", path.display()))
        })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        config.resolve(base);
        Ok(config)
    }

    /// Rewrites every relative path to be relative to `base`.
    pub fn resolve(&mut self, base: &Path) {
        self.dataset.path = resolve_path(base, &self.dataset.path);
        self.prompts.dir = resolve_path(base, &self.prompts.dir);
        self.prompts.generator = resolve_path(&self.prompts.dir, &self.prompts.generator);
        self.prompts.eager_refiner = resolve_path(&self.prompts.dir, &self.prompts.eager_refiner);
        self.prompts.lazy_refiner = resolve_path(&self.prompts.dir, &self.prompts.lazy_refiner);
        if let Some(session_path) = &self.session.path {
            self.session.path = Some(resolve_path(base, session_path));
        }
        self.output.dir = resolve_path(base, &self.output.dir);
        for module in &mut self.modules {
            if let Some(prompt) = &module.prompt {
                module.prompt = Some(resolve_path(&self.prompts.dir, prompt));
            }
        }
    }

    /// Copy with every path made absolute. Loaded paths are relative to the
    /// invocation directory, so the snapshot written into a run directory
    /// must pin them down or `maf report <run-dir>` would re-resolve them
    /// against the run directory and miss.
    pub fn absolutized(&self) -> Result<AppConfig> {
        fn abs(path: &Path) -> Result<PathBuf> {
            std::path::absolute(path).map_err(|e| {
                Error::InvalidConfig(format!("{}: {e}", path.display()))
            })
        }
        let mut copy = self.clone();
        copy.dataset.path = abs(&copy.dataset.path)?;
        copy.prompts.dir = abs(&copy.prompts.dir)?;
        copy.prompts.generator = abs(&copy.prompts.generator)?;
        copy.prompts.eager_refiner = abs(&copy.prompts.eager_refiner)?;
        copy.prompts.lazy_refiner = abs(&copy.prompts.lazy_refiner)?;
        if let Some(session_path) = &copy.session.path {
            copy.session.path = Some(abs(session_path)?);
        }
        copy.output.dir = abs(&copy.output.dir)?;
        for module in &mut copy.modules {
            if let Some(prompt) = &module.prompt {
                module.prompt = Some(abs(prompt)?);
            }
        }
        Ok(copy)
    }

    /// Checks every invariant that can be checked without touching the
    /// network, reporting all violations at once with their field paths.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();

        if self.dataset.format != "jsonl" {
            problems.push(format!(
                "dataset.format: unsupported format {:?} (only \"jsonl\")",
                self.dataset.format
            ));
        }
        if !self.dataset.path.is_file() {
            problems.push(format!(
                "dataset.path: file not found: {}",
                self.dataset.path.display()
            ));
        }
        if !self.prompts.dir.is_dir() {
            problems.push(format!(
                "prompts.dir: directory not found: {}",
                self.prompts.dir.display()
            ));
        }
        for (field, path) in [
            ("prompts.generator", &self.prompts.generator),
            ("prompts.eager_refiner", &self.prompts.eager_refiner),
            ("prompts.lazy_refiner", &self.prompts.lazy_refiner),
        ] {
            if !path.is_file() {
                problems.push(format!("{field}: file not found: {}", path.display()));
            }
        }
        if self.decoding.temperature != 0.0 {
            problems.push(format!(
                "decoding.temperature: must be 0 (greedy); got {}",
                self.decoding.temperature
            ));
        }
        if let Some(budget) = &self.budget {
            for (field, value) in [
                ("budget.base", budget.base),
                ("budget.feedback", budget.feedback),
                ("budget.refiner", budget.refiner),
            ] {
                if value == 0 {
                    problems.push(format!("{field}: must be positive"));
                }
            }
        }
        if self.ok_marker.trim().is_empty() {
            problems.push("ok_marker: must be non-empty".to_string());
        }
        if self.parallelism.problems == 0 {
            problems.push("parallelism.problems: must be at least 1".to_string());
        }
        match self.session.mode {
            SessionMode::Replay => match &self.session.path {
                None => problems.push(
                    "session.path: required when session.mode = \"replay\"".to_string(),
                ),
                Some(path) if !path.is_file() => problems.push(format!(
                    "session.path: file not found: {}",
                    path.display()
                )),
                Some(_) => {}
            },
            SessionMode::Record => {
                if self.session.path.is_none() {
                    problems.push(
                        "session.path: required when session.mode = \"record\"".to_string(),
                    );
                }
            }
            SessionMode::Live => {}
        }
        if let Err(e) = self.interpreter_config().validate() {
            problems.push(format!("interpreter: {e}"));
        }
        let mut seen = Vec::new();
        for (i, module) in self.modules.iter().enumerate() {
            if module.name.trim().is_empty() {
                problems.push(format!("modules[{i}].name: must be non-empty"));
            }
            if seen.contains(&&module.name) {
                problems.push(format!("modules[{i}].name: duplicate name {:?}", module.name));
            }
            seen.push(&module.name);
            match (module.backend, &module.prompt) {
                (ModuleBackend::LmPrompt, None) => problems.push(format!(
                    "modules[{i}].prompt: required for backend \"lm-prompt\""
                )),
                (ModuleBackend::LmPrompt, Some(path)) if !path.is_file() => problems.push(
                    format!("modules[{i}].prompt: file not found: {}", path.display()),
                ),
                (ModuleBackend::ToolArithmetic | ModuleBackend::ToolInterpreter, Some(_)) => {
                    problems.push(format!(
                        "modules[{i}].prompt: not allowed for tool backends"
                    ))
                }
                _ => {}
            }
            if module.max_feedback_tokens == 0 {
                problems.push(format!("modules[{i}].max_feedback_tokens: must be positive"));
            }
        }

        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(problems.join("\n  ")))
        }
    }

    /// The orchestrator-facing view of this config.
    pub fn run_config(&self) -> RunConfig {
        let budget = match &self.budget {
            Some(b) => TokenBudget {
                base: b.base,
                feedback: b.feedback,
                refiner: b.refiner,
            },
            None => TokenBudget::for_task(self.task),
        };
        RunConfig {
            task: self.task,
            max_iterations: self.max_iterations,
            decoding: DecodingParams {
                temperature: self.decoding.temperature,
            },
            budget,
            ok_marker: self.ok_marker.clone(),
        }
    }

    pub fn interpreter_config(&self) -> InterpreterConfig {
        InterpreterConfig {
            run_command: self.interpreter.run.clone(),
            compile_command: self.interpreter.compile.clone(),
            file_extension: self.interpreter.extension.clone(),
            timeout: Duration::from_secs(self.interpreter.timeout_secs),
            max_concurrent: self.interpreter.max_concurrent,
        }
    }

    pub fn http_config(&self) -> HttpLmConfig {
        HttpLmConfig {
            endpoint: self.lm.endpoint.clone(),
            model: self.lm.model.clone(),
            api_key_env: self.lm.api_key_env.clone(),
            max_attempts: self.lm.max_attempts,
            backoff_base: Duration::from_millis(self.lm.backoff_ms),
            request_timeout: Duration::from_secs(self.lm.request_timeout_secs),
            max_in_flight: self.lm.max_in_flight,
        }
    }

    /// Module specs with prompt paths already resolved.
    pub fn module_specs(&self) -> Vec<FeedbackModuleSpec> {
        self.modules
            .iter()
            .map(|m| FeedbackModuleSpec {
                name: m.name.clone(),
                category: m.category,
                mode: m.mode,
                backend: m.backend,
                prompt_path: m.prompt.clone(),
                max_feedback_tokens: m.max_feedback_tokens,
            })
            .collect()
    }

    /// Keeps only the named modules, preserving configured order. Unknown
    /// names are an error listing the known ones.
    pub fn retain_modules(&mut self, names: &[String]) -> Result<()> {
        let known: Vec<String> = self.modules.iter().map(|m| m.name.clone()).collect();
        for name in names {
            if !known.contains(name) {
                return Err(Error::UnknownModule {
                    name: name.clone(),
                    known: known.join(", "),
                });
            }
        }
        self.modules.retain(|m| names.contains(&m.name));
        Ok(())
    }

    /// Serializes the resolved config back to TOML (written into run dirs).
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self)
            .map_err(|e| Error::InvalidConfig(format!("config serialization failed: {e}")))
    }
}
