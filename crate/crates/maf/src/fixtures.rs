//! Deterministic test corpora: solutions with errors injected at known
//! steps, for exercising the tool checkers end to end.
//!
//! Generation is driven by a seeded RNG, so a given `(category, count,
//! seed)` triple always produces byte-identical cases. Even-numbered cases
//! are clean (for false-positive checks); odd-numbered cases carry one or
//! two injected errors whose step indices are recorded.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::solution::{segment_solution, ErrorCategory, Solution, SolutionKind};

/// One generated case: the solution plus where the errors were planted.
#[derive(Debug, Clone, PartialEq)]
pub struct SeededErrorCase {
    pub id: String,
    pub category: ErrorCategory,
    pub solution: Solution,
    /// 0-based step indices carrying an injected error; empty means clean.
    pub seeded_steps: Vec<usize>,
    /// For clean program cases: the exact stdout the program prints.
    pub expected_output: Option<String>,
}

impl SeededErrorCase {
    pub fn is_clean(&self) -> bool {
        self.seeded_steps.is_empty()
    }
}

/// Generates `count` cases for a mechanically seedable category
/// (arithmetic or program syntax); other categories are typed errors.
pub fn generate_seeded_corpus(
    category: ErrorCategory,
    count: usize,
    seed: u64,
) -> Result<Vec<SeededErrorCase>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match category {
        ErrorCategory::Arithmetic => Ok((0..count)
            .map(|i| arithmetic_case(&mut rng, i))
            .collect()),
        ErrorCategory::ProgramSyntax => Ok((0..count).map(|i| syntax_case(&mut rng, i)).collect()),
        other => Err(Error::UnseedableCategory(other.name().to_string())),
    }
}

fn apply_op(a: i64, op: char, b: i64) -> i64 {
    match op {
        '+' => a + b,
        '-' => a - b,
        _ => a * b,
    }
}

fn arithmetic_case(rng: &mut ChaCha8Rng, index: usize) -> SeededErrorCase {
    const OPS: [char; 3] = ['+', '-', '*'];
    let step_count = rng.gen_range(2..=4);
    let mut seeded_steps: Vec<usize> = if index.is_multiple_of(2) {
        Vec::new()
    } else {
        let mut all: Vec<usize> = (0..step_count).collect();
        all.shuffle(rng);
        let mut picked: Vec<usize> = all
            .into_iter()
            .take(rng.gen_range(1..=2usize.min(step_count)))
            .collect();
        picked.sort_unstable();
        picked
    };
    // Draw the corruption deltas up front so step generation stays aligned
    // with the RNG stream regardless of which steps are corrupted.
    let deltas: Vec<i64> = seeded_steps.iter().map(|_| rng.gen_range(1..=9)).collect();

    let mut lines = Vec::with_capacity(step_count);
    for step in 0..step_count {
        let a = rng.gen_range(2..=50);
        let b = rng.gen_range(2..=50);
        let op = OPS[rng.gen_range(0..OPS.len())];
        let truth = apply_op(a, op, b);
        let stated = match seeded_steps.iter().position(|s| *s == step) {
            Some(slot) => truth + deltas[slot],
            None => truth,
        };
        lines.push(format!("Then {a} {op} {b} = {stated}."));
    }
    seeded_steps.dedup();
    SeededErrorCase {
        id: format!("arith-{index:03}"),
        category: ErrorCategory::Arithmetic,
        solution: segment_solution(&lines.join("\n"), SolutionKind::ChainOfThought)
            .expect("generated text is non-empty"),
        seeded_steps,
        expected_output: None,
    }
}

fn syntax_case(rng: &mut ChaCha8Rng, index: usize) -> SeededErrorCase {
    let x: i64 = rng.gen_range(2..=50);
    let y: i64 = rng.gen_range(2..=50);
    let mut lines = [
        format!("a = {x}"),
        format!("b = {y}"),
        "total = a + b".to_string(),
        "print(total)".to_string(),
    ];
    let mut seeded_steps = Vec::new();
    let mut expected_output = Some(format!("{}\n", x + y));
    if index % 2 == 1 {
        // Each corruption fails to compile *at its own line*, which keeps
        // the interpreter's reported line aligned with the seeded step.
        let broken_line = rng.gen_range(0..=2usize);
        lines[broken_line] = match broken_line {
            0 => format!("a = 'unclosed {x}"),
            1 => format!("b = {y} {y}"),
            _ => "total = a + * b".to_string(),
        };
        seeded_steps.push(broken_line);
        expected_output = None;
    }
    SeededErrorCase {
        id: format!("syntax-{index:03}"),
        category: ErrorCategory::ProgramSyntax,
        solution: segment_solution(&lines.join("\n"), SolutionKind::Program)
            .expect("generated text is non-empty"),
        seeded_steps,
        expected_output,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checkers::{
        check_arithmetic, check_program_syntax, InterpreterConfig, ProgramExecutor,
        ARITHMETIC_REL_TOLERANCE,
    };
    use crate::solution::DEFAULT_OK_MARKER;

    #[test]
    fn corpus_is_deterministic_per_seed() {
        let a = generate_seeded_corpus(ErrorCategory::Arithmetic, 12, 7).unwrap();
        let b = generate_seeded_corpus(ErrorCategory::Arithmetic, 12, 7).unwrap();
        assert_eq!(a, b);
        let c = generate_seeded_corpus(ErrorCategory::Arithmetic, 12, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn even_cases_are_clean_and_odd_cases_are_corrupted() {
        let corpus = generate_seeded_corpus(ErrorCategory::Arithmetic, 10, 42).unwrap();
        for (i, case) in corpus.iter().enumerate() {
            assert_eq!(case.is_clean(), i % 2 == 0, "case {}", case.id);
        }
    }

    #[test]
    fn arithmetic_checker_flags_exactly_the_seeded_steps() {
        let corpus = generate_seeded_corpus(ErrorCategory::Arithmetic, 20, 42).unwrap();
        for case in corpus {
            let feedback =
                check_arithmetic(&case.solution, ARITHMETIC_REL_TOLERANCE, DEFAULT_OK_MARKER);
            let flagged: Vec<usize> = feedback
                .iter()
                .filter(|f| !f.ok)
                .map(|f| f.step_index)
                .collect();
            assert_eq!(flagged, case.seeded_steps, "case {}", case.id);
        }
    }

    #[test]
    fn unseedable_categories_are_typed_errors() {
        match generate_seeded_corpus(ErrorCategory::Grammar, 3, 1) {
            Err(Error::UnseedableCategory(name)) => assert_eq!(name, "Grammar"),
            other => panic!("expected UnseedableCategory, got {other:?}"),
        }
    }

    #[test]
    fn syntax_corpus_compiles_cleanly_iff_unseeded() {
        let executor = ProgramExecutor::new(InterpreterConfig::default()).unwrap();
        let corpus = generate_seeded_corpus(ErrorCategory::ProgramSyntax, 4, 42).unwrap();
        for case in corpus {
            let feedback =
                check_program_syntax(&executor, &case.solution, DEFAULT_OK_MARKER).unwrap();
            let flagged: Vec<usize> = feedback
                .iter()
                .filter(|f| !f.ok)
                .map(|f| f.step_index)
                .collect();
            assert_eq!(flagged, case.seeded_steps, "case {}", case.id);
        }
    }
}
