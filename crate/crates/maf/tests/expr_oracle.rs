//! Independent oracle for the arithmetic expression parser/evaluator.
//!
//! The oracle here evaluates ASTs by compiling them to postfix and running a
//! stack machine — a different route than the evaluator under test. Random
//! ASTs are generated directly (not via the parser), printed, reparsed, and
//! evaluated on both routes.

use maf::checkers::expr::{evaluate_f64, parse_expression, ExprAst};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy)]
enum PostfixOp {
    Push(f64),
    Neg,
    Add,
    Sub,
    Mul,
    Div,
}

fn compile_postfix(ast: &ExprAst, out: &mut Vec<PostfixOp>) {
    match ast {
        ExprAst::Literal(v) => out.push(PostfixOp::Push(*v)),
        ExprAst::Neg(inner) => {
            compile_postfix(inner, out);
            out.push(PostfixOp::Neg);
        }
        ExprAst::Add(a, b) => {
            compile_postfix(a, out);
            compile_postfix(b, out);
            out.push(PostfixOp::Add);
        }
        ExprAst::Sub(a, b) => {
            compile_postfix(a, out);
            compile_postfix(b, out);
            out.push(PostfixOp::Sub);
        }
        ExprAst::Mul(a, b) => {
            compile_postfix(a, out);
            compile_postfix(b, out);
            out.push(PostfixOp::Mul);
        }
        ExprAst::Div(a, b) => {
            compile_postfix(a, out);
            compile_postfix(b, out);
            out.push(PostfixOp::Div);
        }
    }
}

/// Stack-machine evaluation; returns None on division by zero.
fn oracle_eval(ast: &ExprAst) -> Option<f64> {
    let mut ops = Vec::new();
    compile_postfix(ast, &mut ops);
    let mut stack: Vec<f64> = Vec::new();
    for op in ops {
        match op {
            PostfixOp::Push(v) => stack.push(v),
            PostfixOp::Neg => {
                let a = stack.pop()?;
                stack.push(-a);
            }
            PostfixOp::Add => {
                let b = stack.pop()?;
                let a = stack.pop()?;
                stack.push(a + b);
            }
            PostfixOp::Sub => {
                let b = stack.pop()?;
                let a = stack.pop()?;
                stack.push(a - b);
            }
            PostfixOp::Mul => {
                let b = stack.pop()?;
                let a = stack.pop()?;
                stack.push(a * b);
            }
            PostfixOp::Div => {
                let b = stack.pop()?;
                let a = stack.pop()?;
                if b == 0.0 {
                    return None;
                }
                stack.push(a / b);
            }
        }
    }
    stack.pop()
}

/// Random AST over short decimal literals, bounded depth.
fn random_ast(rng: &mut ChaCha8Rng, depth: usize) -> ExprAst {
    if depth == 0 || rng.gen_bool(0.3) {
        // Literals with at most two decimal places keep printed text exact.
        let v = (rng.gen_range(0..10_000) as f64) / 100.0;
        return ExprAst::Literal(v);
    }
    match rng.gen_range(0..5) {
        0 => ExprAst::Add(
            Box::new(random_ast(rng, depth - 1)),
            Box::new(random_ast(rng, depth - 1)),
        ),
        1 => ExprAst::Sub(
            Box::new(random_ast(rng, depth - 1)),
            Box::new(random_ast(rng, depth - 1)),
        ),
        2 => ExprAst::Mul(
            Box::new(random_ast(rng, depth - 1)),
            Box::new(random_ast(rng, depth - 1)),
        ),
        3 => ExprAst::Div(
            Box::new(random_ast(rng, depth - 1)),
            Box::new(random_ast(rng, depth - 1)),
        ),
        _ => ExprAst::Neg(Box::new(random_ast(rng, depth - 1))),
    }
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    if a == b {
        return true;
    }
    let scale = a.abs().max(b.abs());
    (a - b).abs() <= tol * scale
}

#[test]
fn print_reparse_matches_independent_evaluator_on_1000_asts() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut checked = 0usize;
    while checked < 1000 {
        let ast = random_ast(&mut rng, 4);
        let expected = match oracle_eval(&ast) {
            Some(v) if v.is_finite() => v,
            _ => continue, // division by zero or overflow: covered separately
        };
        let printed = ast.to_string();
        let reparsed = parse_expression(&printed)
            .unwrap_or_else(|e| panic!("failed to reparse {printed:?}: {e}"));
        let got = evaluate_f64(&reparsed)
            .unwrap_or_else(|e| panic!("failed to evaluate {printed:?}: {e}"));
        assert!(
            rel_close(got, expected, 1e-12),
            "mismatch on {printed}: impl {got} vs oracle {expected}"
        );
        checked += 1;
    }
}

#[test]
fn division_by_zero_is_an_error_on_both_routes() {
    let ast = ExprAst::Div(
        Box::new(ExprAst::Literal(1.0)),
        Box::new(ExprAst::Sub(
            Box::new(ExprAst::Literal(2.0)),
            Box::new(ExprAst::Literal(2.0)),
        )),
    );
    assert!(oracle_eval(&ast).is_none());
    assert!(evaluate_f64(&ast).is_err());
}

#[test]
fn hand_checked_values() {
    // Worked out by hand before the evaluator existed.
    let cases = [
        ("2+3*4", 14.0),
        ("(1.5 - 0.5) / 2", 0.5),
        ("-3 + 5", 2.0),
        ("2 * -3", -6.0),
        ("10 - 4 - 3", 3.0), // left associativity
        ("24 / 4 / 2", 3.0),
        ("-(2 + 3) * 2", -10.0),
        ("0.1 + 0.2", 0.1 + 0.2),
    ];
    for (src, expected) in cases {
        let got = evaluate_f64(&parse_expression(src).unwrap()).unwrap();
        assert!(
            rel_close(got, expected, 1e-12),
            "{src}: got {got}, expected {expected}"
        );
    }
}
