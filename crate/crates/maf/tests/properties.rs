//! Property-based checks for the invariants the rest of the system leans
//! on: lossless segmentation, a printer/parser that round-trips, idempotent
//! summarization, and stable serialization.

use proptest::prelude::*;

use maf::checkers::{parse_expression, ExprAst};
use maf::eval::solve_rate;
use maf::{
    answers_match, normalize_answer, segment_solution, summarize_feedback, ErrorCategory,
    Feedback, PromptBundle, PromptRole, SolutionKind, StepFeedback, Task, DEFAULT_OK_MARKER,
};

fn solution_kind() -> impl Strategy<Value = SolutionKind> {
    prop_oneof![
        Just(SolutionKind::Program),
        Just(SolutionKind::ChainOfThought),
        Just(SolutionKind::EntailmentTree),
    ]
}

fn expression() -> impl Strategy<Value = ExprAst> {
    let literal = (0u16..400).prop_map(|n| ExprAst::Literal(f64::from(n) / 4.0));
    literal.prop_recursive(4, 48, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone())
                .prop_map(|(a, b)| ExprAst::Add(Box::new(a), Box::new(b))),
            (inner.clone(), inner.clone())
                .prop_map(|(a, b)| ExprAst::Sub(Box::new(a), Box::new(b))),
            (inner.clone(), inner.clone())
                .prop_map(|(a, b)| ExprAst::Mul(Box::new(a), Box::new(b))),
            (inner.clone(), inner.clone())
                .prop_map(|(a, b)| ExprAst::Div(Box::new(a), Box::new(b))),
            inner.prop_map(|a| ExprAst::Neg(Box::new(a))),
        ]
    })
}

fn step_feedback() -> impl Strategy<Value = StepFeedback> {
    (0usize..40, any::<bool>(), "[ -~]{0,60}").prop_map(|(step_index, ok, comment)| {
        StepFeedback {
            step_index,
            ok,
            comment,
        }
    })
}

proptest! {
    /// Steps are physical lines: joining them with newlines reproduces the
    /// original text byte for byte, whatever the solution kind.
    #[test]
    fn segmentation_is_lossless(
        lines in prop::collection::vec("[ -~]{0,50}", 1..12)
            .prop_filter("needs visible content", |ls| ls.iter().any(|l| !l.trim().is_empty())),
        kind in solution_kind(),
    ) {
        let text = lines.join("\n");
        let solution = segment_solution(&text, kind).unwrap();
        prop_assert_eq!(&solution.raw_text, &text);
        let rejoined = solution
            .steps
            .iter()
            .map(|s| s.text.as_str())
            .collect::<Vec<_>>()
            .join("\n");
        prop_assert_eq!(rejoined, text);
        for (expected, step) in solution.steps.iter().enumerate() {
            prop_assert_eq!(step.index, expected);
        }
    }

    /// The expression printer emits just enough parentheses that reparsing
    /// rebuilds the identical tree.
    #[test]
    fn printed_expressions_reparse_to_the_same_tree(ast in expression()) {
        let printed = ast.to_string();
        let reparsed = parse_expression(&printed).unwrap();
        prop_assert_eq!(reparsed, ast, "printed as {}", printed);
    }

    /// Summarization keeps exactly the flagged entries, in order, and is
    /// idempotent; `revision_required` always agrees with the entries.
    #[test]
    fn summarization_filters_preserves_order_and_is_idempotent(
        entries in prop::collection::vec(step_feedback(), 0..12),
    ) {
        let feedback = Feedback::new("reviewer", ErrorCategory::Redundancy, entries.clone(), "");
        prop_assert_eq!(feedback.revision_required, entries.iter().any(|e| !e.ok));

        let summary = summarize_feedback(&feedback, DEFAULT_OK_MARKER);
        let marker = DEFAULT_OK_MARKER.to_lowercase();
        let expected: Vec<StepFeedback> = entries
            .iter()
            .filter(|e| !e.ok && !e.comment.to_lowercase().contains(&marker))
            .cloned()
            .collect();
        prop_assert_eq!(&summary.step_feedback, &expected);
        prop_assert_eq!(summarize_feedback(&summary, DEFAULT_OK_MARKER), summary);
    }

    /// Feedback records survive a JSON round trip unchanged.
    #[test]
    fn feedback_serialization_round_trips(
        entries in prop::collection::vec(step_feedback(), 0..12),
        raw in "[ -~\\n]{0,120}",
    ) {
        let feedback = Feedback::new("reviewer", ErrorCategory::Commonsense, entries, raw);
        let json = serde_json::to_string(&feedback).unwrap();
        let back: Feedback = serde_json::from_str(&json).unwrap();
        prop_assert_eq!(back, feedback);
    }

    /// Rendering substitutes every bound placeholder and leaves the
    /// surrounding template intact.
    #[test]
    fn rendering_binds_every_placeholder(
        problem in "[ -~&&[^{}]]{1,40}",
        solution in "[ -~&&[^{}]]{1,40}",
        feedback in "[ -~&&[^{}]]{1,40}",
    ) {
        let bundle = PromptBundle {
            role: PromptRole::Refiner,
            task: Task::Qa,
            delimiter: "\n\n---\n\n".to_string(),
            instruction: "Rewrite the draft.".to_string(),
            exemplars: vec![],
            input_template: "P: {problem}\nS: {solution}\nF: {feedback}".to_string(),
        };
        let rendered = bundle
            .render(&[
                ("problem", problem.as_str()),
                ("solution", solution.as_str()),
                ("feedback", feedback.as_str()),
            ])
            .unwrap();
        let expected = format!("P: {problem}\nS: {solution}\nF: {feedback}");
        prop_assert!(rendered.contains(&expected));
        for name in ["{problem}", "{solution}", "{feedback}"] {
            prop_assert!(!rendered.contains(name));
        }
    }

    /// Answer normalization is idempotent, and matching is symmetric.
    #[test]
    fn normalization_is_idempotent_and_matching_symmetric(
        a in "[ -~]{0,30}",
        b in "[ -~]{0,30}",
    ) {
        let once = normalize_answer(&a);
        prop_assert_eq!(normalize_answer(&once), once);
        prop_assert_eq!(answers_match(&a, &b), answers_match(&b, &a));
    }

    /// Solve rates are percentages on one decimal, whatever the outcomes.
    #[test]
    fn solve_rates_are_rounded_percentages(results in prop::collection::vec(any::<bool>(), 1..60)) {
        let rate = solve_rate(&results).unwrap();
        prop_assert!((0.0..=100.0).contains(&rate));
        prop_assert_eq!((rate * 10.0).round(), rate * 10.0);
    }
}
