//! Few-shot prompt bundles and their on-disk format.
//!
//! A prompt file is a small header, a blank line, then `k + 2` blocks
//! separated by the header's delimiter: one instruction, `k` exemplars, and
//! the input template that gets filled at call time.
//!
//! ```text
//! role: critic
//! task: math
//! k: 3
//! delimiter: \n\n---\n\n
//!
//! <instruction>
//!
//! ---
//!
//! <exemplar 1>
//! ...
//! ```
//!
//! Loading and saving round-trip byte-for-byte; nothing is trimmed or
//! re-wrapped. Placeholders are `{problem}`, `{solution}`, `{feedback}`;
//! which ones a template must carry depends on the role.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use once_cell::sync::Lazy;
use regex::{Captures, Regex};

use crate::error::{Error, Result};
use crate::solution::{RefineMode, Task};

/// What the prompt is for; decides the required template placeholders.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptRole {
    Generator,
    Critic,
    Refiner,
}

impl PromptRole {
    pub fn name(&self) -> &'static str {
        match self {
            PromptRole::Generator => "generator",
            PromptRole::Critic => "critic",
            PromptRole::Refiner => "refiner",
        }
    }

    /// Placeholders the input template must contain for this role.
    pub fn required_placeholders(&self) -> &'static [&'static str] {
        match self {
            PromptRole::Generator => &["problem"],
            PromptRole::Critic => &["problem", "solution"],
            PromptRole::Refiner => &["problem", "solution", "feedback"],
        }
    }
}

impl fmt::Display for PromptRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for PromptRole {
    type Err = Error;

    fn from_str(s: &str) -> Result<PromptRole> {
        match s {
            "generator" => Ok(PromptRole::Generator),
            "critic" => Ok(PromptRole::Critic),
            "refiner" => Ok(PromptRole::Refiner),
            other => Err(Error::InvalidConfig(format!(
                "unknown prompt role {other:?}; expected generator, critic, or refiner"
            ))),
        }
    }
}

/// Exemplar counts used by the shipped prompt sets.
pub fn standard_exemplar_count(role: PromptRole, task: Task, mode: RefineMode) -> usize {
    match role {
        PromptRole::Generator => match task {
            Task::Math => 8,
            Task::Logic => 4,
            Task::Qa => 3,
        },
        PromptRole::Critic => 3,
        PromptRole::Refiner => match mode {
            RefineMode::Eager => 3,
            RefineMode::Lazy => 2,
        },
    }
}

/// A parsed prompt file: instruction, exemplars, and the input template.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptBundle {
    pub role: PromptRole,
    pub task: Task,
    pub delimiter: String,
    pub instruction: String,
    pub exemplars: Vec<String>,
    pub input_template: String,
}

static PLACEHOLDER: Lazy<Regex> = Lazy::new(|| Regex::new(r"\{([a-z_]+)\}").unwrap());

fn escape_delimiter(delim: &str) -> String {
    delim
        .replace('\\', "\\\\")
        .replace('\n', "\\n")
        .replace('\t', "\\t")
}

fn unescape_delimiter(escaped: &str) -> String {
    let mut out = String::with_capacity(escaped.len());
    let mut chars = escaped.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('n') => out.push('\n'),
            Some('t') => out.push('\t'),
            Some('\\') => out.push('\\'),
            Some(other) => {
                out.push('\\');
                out.push(other);
            }
            None => out.push('\\'),
        }
    }
    out
}

impl PromptBundle {
    pub fn k(&self) -> usize {
        self.exemplars.len()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<PromptBundle> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        PromptBundle::parse(&text, &path.display().to_string())
    }

    /// Parses prompt-file text; `origin` labels errors (usually the path).
    pub fn parse(text: &str, origin: &str) -> Result<PromptBundle> {
        let fail = |message: String| Error::PromptFormat {
            path: origin.to_string(),
            message,
        };

        let (header, body) = text
            .split_once("\n\n")
            .ok_or_else(|| fail("missing blank line after header".into()))?;

        let mut fields: HashMap<&str, &str> = HashMap::new();
        for line in header.lines() {
            let (key, value) = line
                .split_once(':')
                .ok_or_else(|| fail(format!("malformed header line {line:?}")))?;
            let key = key.trim();
            if !matches!(key, "role" | "task" | "k" | "delimiter") {
                return Err(fail(format!("unknown header key {key:?}")));
            }
            if fields.insert(key, value.trim()).is_some() {
                return Err(fail(format!("duplicate header key {key:?}")));
            }
        }
        let field = |key: &str| {
            fields
                .get(key)
                .copied()
                .ok_or_else(|| fail(format!("missing header key {key:?}")))
        };

        let role: PromptRole = field("role")?.parse()?;
        let task: Task = field("task")?.parse()?;
        let k: usize = field("k")?
            .parse()
            .map_err(|e| fail(format!("bad k: {e}")))?;
        let delimiter = unescape_delimiter(field("delimiter")?);
        if delimiter.is_empty() {
            return Err(fail("delimiter must be non-empty".into()));
        }

        let blocks: Vec<&str> = body.split(delimiter.as_str()).collect();
        if blocks.len() != k + 2 {
            return Err(fail(format!(
                "expected {} blocks (instruction, {k} exemplars, input template), found {}",
                k + 2,
                blocks.len()
            )));
        }

        let bundle = PromptBundle {
            role,
            task,
            delimiter,
            instruction: blocks[0].to_string(),
            exemplars: blocks[1..=k].iter().map(|b| b.to_string()).collect(),
            input_template: blocks[k + 1].to_string(),
        };
        bundle.validate_placeholders()?;
        Ok(bundle)
    }

    fn validate_placeholders(&self) -> Result<()> {
        for placeholder in self.role.required_placeholders() {
            if !self.input_template.contains(&format!("{{{placeholder}}}")) {
                return Err(Error::MissingPlaceholder {
                    role: self.role.name().to_string(),
                    placeholder: placeholder.to_string(),
                });
            }
        }
        Ok(())
    }

    /// Serializes back to the file format; inverse of [`parse`].
    ///
    /// [`parse`]: PromptBundle::parse
    pub fn to_file_text(&self) -> String {
        let mut blocks = Vec::with_capacity(self.k() + 2);
        blocks.push(self.instruction.as_str());
        blocks.extend(self.exemplars.iter().map(String::as_str));
        blocks.push(self.input_template.as_str());
        format!(
            "role: {}\ntask: {}\nk: {}\ndelimiter: {}\n\n{}",
            self.role,
            self.task,
            self.k(),
            escape_delimiter(&self.delimiter),
            blocks.join(&self.delimiter)
        )
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        std::fs::write(path, self.to_file_text())?;
        Ok(())
    }

    /// Fills the input template and joins instruction, exemplars, and the
    /// filled template with the delimiter.
    ///
    /// Placeholders are located in the template *before* substitution, so
    /// braces inside substituted values are never re-interpreted.
    pub fn render(&self, bindings: &[(&str, &str)]) -> Result<String> {
        let map: HashMap<&str, &str> = bindings.iter().copied().collect();
        let mut unbound = None;
        let filled = PLACEHOLDER.replace_all(&self.input_template, |caps: &Captures<'_>| {
            let name = caps.get(1).unwrap().as_str();
            match map.get(name) {
                Some(value) => value.to_string(),
                None => {
                    if unbound.is_none() {
                        unbound = Some(name.to_string());
                    }
                    caps[0].to_string()
                }
            }
        });
        if let Some(name) = unbound {
            return Err(Error::UnboundPlaceholder(name));
        }
        let mut blocks = Vec::with_capacity(self.k() + 2);
        blocks.push(self.instruction.as_str());
        blocks.extend(self.exemplars.iter().map(String::as_str));
        blocks.push(filled.as_ref());
        Ok(blocks.join(&self.delimiter))
    }

    /// Returns a copy keeping at most `n` exemplars, dropping from the end.
    pub fn with_max_exemplars(&self, n: usize) -> PromptBundle {
        if self.exemplars.len() <= n {
            return self.clone();
        }
        log::warn!(
            "truncating {} {} prompt from {} to {n} exemplars",
            self.task,
            self.role,
            self.exemplars.len()
        );
        let mut out = self.clone();
        out.exemplars.truncate(n);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "role: critic\ntask: math\nk: 2\ndelimiter: \\n\\n---\\n\\n\n\n\
Check each step for redundancy.\n\n---\n\n\
Q: first exemplar\n\n---\n\n\
Q: second exemplar\n\n---\n\n\
Q: {problem}\nSolution:\n{solution}\nFeedback:";

    #[test]
    fn parses_header_and_blocks() {
        let bundle = PromptBundle::parse(SAMPLE, "sample").unwrap();
        assert_eq!(bundle.role, PromptRole::Critic);
        assert_eq!(bundle.task, Task::Math);
        assert_eq!(bundle.k(), 2);
        assert_eq!(bundle.delimiter, "\n\n---\n\n");
        assert_eq!(bundle.instruction, "Check each step for redundancy.");
        assert_eq!(bundle.exemplars[1], "Q: second exemplar");
        assert!(bundle.input_template.starts_with("Q: {problem}"));
    }

    #[test]
    fn file_text_round_trips() {
        let bundle = PromptBundle::parse(SAMPLE, "sample").unwrap();
        assert_eq!(bundle.to_file_text(), SAMPLE);
        let again = PromptBundle::parse(&bundle.to_file_text(), "sample").unwrap();
        assert_eq!(again, bundle);
    }

    #[test]
    fn save_and_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("critic.prompt");
        let bundle = PromptBundle::parse(SAMPLE, "sample").unwrap();
        bundle.save(&path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), SAMPLE);
        assert_eq!(PromptBundle::load(&path).unwrap(), bundle);
    }

    #[test]
    fn wrong_block_count_is_an_error() {
        let text = SAMPLE.replace("k: 2", "k: 3");
        match PromptBundle::parse(&text, "sample") {
            Err(Error::PromptFormat { message, .. }) => {
                assert!(message.contains("expected 5 blocks"), "{message}")
            }
            other => panic!("expected PromptFormat, got {other:?}"),
        }
    }

    #[test]
    fn missing_and_unknown_header_keys_are_errors() {
        let missing = SAMPLE.replace("task: math\n", "");
        assert!(matches!(
            PromptBundle::parse(&missing, "sample"),
            Err(Error::PromptFormat { .. })
        ));
        let unknown = SAMPLE.replace("task: math", "task: math\nshots: 2");
        assert!(matches!(
            PromptBundle::parse(&unknown, "sample"),
            Err(Error::PromptFormat { .. })
        ));
    }

    #[test]
    fn critic_template_requires_solution_placeholder() {
        let text = SAMPLE.replace("{solution}", "(the solution)");
        match PromptBundle::parse(&text, "sample") {
            Err(Error::MissingPlaceholder { role, placeholder }) => {
                assert_eq!(role, "critic");
                assert_eq!(placeholder, "solution");
            }
            other => panic!("expected MissingPlaceholder, got {other:?}"),
        }
    }

    #[test]
    fn render_fills_template_and_keeps_exemplars() {
        let bundle = PromptBundle::parse(SAMPLE, "sample").unwrap();
        let rendered = bundle
            .render(&[("problem", "2+2?"), ("solution", "Step 1: 4")])
            .unwrap();
        assert!(rendered.starts_with("Check each step"));
        assert!(rendered.contains("Q: first exemplar"));
        assert!(rendered.ends_with("Q: 2+2?\nSolution:\nStep 1: 4\nFeedback:"));
    }

    #[test]
    fn render_rejects_unbound_placeholders() {
        let bundle = PromptBundle::parse(SAMPLE, "sample").unwrap();
        match bundle.render(&[("problem", "2+2?")]) {
            Err(Error::UnboundPlaceholder(name)) => assert_eq!(name, "solution"),
            other => panic!("expected UnboundPlaceholder, got {other:?}"),
        }
    }

    #[test]
    fn braces_in_substituted_values_are_not_reinterpreted() {
        let bundle = PromptBundle::parse(SAMPLE, "sample").unwrap();
        let rendered = bundle
            .render(&[("problem", "p"), ("solution", "counts = {x} and {feedback}")])
            .unwrap();
        assert!(rendered.contains("counts = {x} and {feedback}"));
    }

    #[test]
    fn exemplar_truncation_drops_from_the_end() {
        let bundle = PromptBundle::parse(SAMPLE, "sample").unwrap();
        let cut = bundle.with_max_exemplars(1);
        assert_eq!(cut.k(), 1);
        assert_eq!(cut.exemplars[0], "Q: first exemplar");
        assert_eq!(bundle.with_max_exemplars(5), bundle);
    }

    #[test]
    fn standard_exemplar_counts_are_fixed() {
        use RefineMode::*;
        assert_eq!(standard_exemplar_count(PromptRole::Generator, Task::Math, Eager), 8);
        assert_eq!(standard_exemplar_count(PromptRole::Generator, Task::Logic, Eager), 4);
        assert_eq!(standard_exemplar_count(PromptRole::Generator, Task::Qa, Eager), 3);
        assert_eq!(standard_exemplar_count(PromptRole::Critic, Task::Qa, Lazy), 3);
        assert_eq!(standard_exemplar_count(PromptRole::Refiner, Task::Math, Eager), 3);
        assert_eq!(standard_exemplar_count(PromptRole::Refiner, Task::Math, Lazy), 2);
    }
}
