//! Recursive-descent parser and evaluator for arithmetic expressions.
//!
//! Grammar (left-associative within each tier, unary minus binds tightest):
//!
//! ```text
//! expr   := term  (("+" | "-") term)*
//! term   := factor (("*" | "/") factor)*
//! factor := "-" factor | "(" expr ")" | number
//! number := decimal literal ("2", "3.5", ".5")
//! ```
//!
//! The unicode operators `×`, `÷`, and `−` are accepted as aliases, since
//! expressions are harvested from model-written text. Evaluation is generic
//! over the float type; [`evaluate_f64`] is the concrete entry point used by
//! the checkers.

use std::fmt;

use num_traits::{Float, FromPrimitive};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum ExprAst {
    Literal(f64),
    Neg(Box<ExprAst>),
    Add(Box<ExprAst>, Box<ExprAst>),
    Sub(Box<ExprAst>, Box<ExprAst>),
    Mul(Box<ExprAst>, Box<ExprAst>),
    Div(Box<ExprAst>, Box<ExprAst>),
}

impl ExprAst {
    fn precedence(&self) -> u8 {
        match self {
            ExprAst::Add(..) | ExprAst::Sub(..) => 1,
            ExprAst::Mul(..) | ExprAst::Div(..) => 2,
            ExprAst::Neg(..) => 3,
            ExprAst::Literal(..) => 4,
        }
    }
}

impl fmt::Display for ExprAst {
    /// Prints with just enough parentheses that reparsing rebuilds the same
    /// tree (left-leaning chains stay bare, right operands of equal
    /// precedence get parenthesized).
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn side(f: &mut fmt::Formatter<'_>, parent: u8, child: &ExprAst, right: bool) -> fmt::Result {
            let needs_parens = child.precedence() < parent || (right && child.precedence() == parent);
            if needs_parens {
                write!(f, "({child})")
            } else {
                write!(f, "{child}")
            }
        }
        match self {
            ExprAst::Literal(v) => write!(f, "{v}"),
            ExprAst::Neg(inner) => {
                if inner.precedence() < self.precedence() {
                    write!(f, "-({inner})")
                } else {
                    write!(f, "-{inner}")
                }
            }
            ExprAst::Add(a, b) => {
                side(f, self.precedence(), a, false)?;
                write!(f, " + ")?;
                side(f, self.precedence(), b, true)
            }
            ExprAst::Sub(a, b) => {
                side(f, self.precedence(), a, false)?;
                write!(f, " - ")?;
                side(f, self.precedence(), b, true)
            }
            ExprAst::Mul(a, b) => {
                side(f, self.precedence(), a, false)?;
                write!(f, " * ")?;
                side(f, self.precedence(), b, true)
            }
            ExprAst::Div(a, b) => {
                side(f, self.precedence(), a, false)?;
                write!(f, " / ")?;
                side(f, self.precedence(), b, true)
            }
        }
    }
}

struct Parser<'a> {
    src: &'a str,
    chars: Vec<(usize, char)>,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Self {
        Parser {
            src,
            chars: src.char_indices().collect(),
            pos: 0,
        }
    }

    fn byte_pos(&self) -> usize {
        self.chars
            .get(self.pos)
            .map(|(i, _)| *i)
            .unwrap_or(self.src.len())
    }

    fn err(&self, message: impl Into<String>) -> Error {
        Error::ExprParse {
            position: self.byte_pos(),
            message: message.into(),
        }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).map(|(_, c)| *c)
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek();
        if c.is_some() {
            self.pos += 1;
        }
        c
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(c) if c.is_whitespace()) {
            self.pos += 1;
        }
    }

    fn expr(&mut self) -> Result<ExprAst> {
        let mut lhs = self.term()?;
        loop {
            self.skip_ws();
            match self.peek() {
                Some('+') => {
                    self.bump();
                    let rhs = self.term()?;
                    lhs = ExprAst::Add(Box::new(lhs), Box::new(rhs));
                }
                Some('-') | Some('\u{2212}') => {
                    self.bump();
                    let rhs = self.term()?;
                    lhs = ExprAst::Sub(Box::new(lhs), Box::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<ExprAst> {
        let mut lhs = self.factor()?;
        loop {
            self.skip_ws();
            match self.peek() {
                Some('*') | Some('\u{d7}') => {
                    self.bump();
                    let rhs = self.factor()?;
                    lhs = ExprAst::Mul(Box::new(lhs), Box::new(rhs));
                }
                Some('/') | Some('\u{f7}') => {
                    self.bump();
                    let rhs = self.factor()?;
                    lhs = ExprAst::Div(Box::new(lhs), Box::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn factor(&mut self) -> Result<ExprAst> {
        self.skip_ws();
        match self.peek() {
            Some('-') | Some('\u{2212}') => {
                self.bump();
                Ok(ExprAst::Neg(Box::new(self.factor()?)))
            }
            Some('(') => {
                self.bump();
                let inner = self.expr()?;
                self.skip_ws();
                if self.peek() != Some(')') {
                    return Err(self.err("expected ')'"));
                }
                self.bump();
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == '.' => self.number(),
            Some(c) => Err(self.err(format!("unexpected character {c:?}"))),
            None => Err(self.err("unexpected end of input")),
        }
    }

    fn number(&mut self) -> Result<ExprAst> {
        let start = self.byte_pos();
        let mut saw_digit = false;
        let mut saw_dot = false;
        while let Some(c) = self.peek() {
            if c.is_ascii_digit() {
                saw_digit = true;
                self.bump();
            } else if c == '.' && !saw_dot {
                // A dot is part of the number only when a digit follows;
                // otherwise it is sentence punctuation ("= 21.").
                let next_is_digit = self
                    .chars
                    .get(self.pos + 1)
                    .is_some_and(|(_, n)| n.is_ascii_digit());
                if !next_is_digit {
                    break;
                }
                saw_dot = true;
                self.bump();
            } else {
                break;
            }
        }
        let text = &self.src[start..self.byte_pos()];
        if !saw_digit {
            return Err(self.err("expected a number"));
        }
        let value: f64 = text
            .parse()
            .map_err(|e| self.err(format!("bad numeric literal {text:?}: {e}")))?;
        Ok(ExprAst::Literal(value))
    }
}

/// Parses one full expression; trailing garbage is rejected.
pub fn parse_expression(src: &str) -> Result<ExprAst> {
    let mut parser = Parser::new(src);
    let ast = parser.expr()?;
    parser.skip_ws();
    if parser.peek().is_some() {
        return Err(parser.err("trailing input after expression"));
    }
    Ok(ast)
}

/// Parses the longest expression starting at the beginning of `src`,
/// returning the AST and the number of bytes consumed. Used by the equation
/// scanner, which works on windows of prose.
pub(crate) fn parse_expression_prefix(src: &str) -> Result<(ExprAst, usize)> {
    let mut parser = Parser::new(src);
    let ast = parser.expr()?;
    Ok((ast, parser.byte_pos()))
}

/// Evaluates an AST over any float type. Total except for division by zero.
pub fn evaluate<T: Float + FromPrimitive>(ast: &ExprAst) -> Result<T> {
    match ast {
        ExprAst::Literal(v) => {
            T::from_f64(*v).ok_or_else(|| Error::ExprEval(format!("literal {v} not representable")))
        }
        ExprAst::Neg(inner) => Ok(-evaluate::<T>(inner)?),
        ExprAst::Add(a, b) => Ok(evaluate::<T>(a)? + evaluate::<T>(b)?),
        ExprAst::Sub(a, b) => Ok(evaluate::<T>(a)? - evaluate::<T>(b)?),
        ExprAst::Mul(a, b) => Ok(evaluate::<T>(a)? * evaluate::<T>(b)?),
        ExprAst::Div(a, b) => {
            let denom = evaluate::<T>(b)?;
            if denom == T::zero() {
                return Err(Error::ExprEval("division by zero".into()));
            }
            Ok(evaluate::<T>(a)? / denom)
        }
    }
}

/// Concrete f64 evaluation used by the arithmetic checker.
pub fn evaluate_f64(ast: &ExprAst) -> Result<f64> {
    evaluate::<f64>(ast)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval(src: &str) -> f64 {
        evaluate_f64(&parse_expression(src).unwrap()).unwrap()
    }

    #[test]
    fn precedence_and_grouping() {
        assert_eq!(eval("2+3*4"), 14.0);
        assert_eq!(eval("(2+3)*4"), 20.0);
        assert_eq!(eval("(1.5 - 0.5) / 2"), 0.5);
    }

    #[test]
    fn left_associativity() {
        assert_eq!(eval("10 - 4 - 3"), 3.0);
        assert_eq!(eval("24 / 4 / 2"), 3.0);
    }

    #[test]
    fn unary_negation_binds_tightest() {
        assert_eq!(eval("-3 + 5"), 2.0);
        assert_eq!(eval("2 * -3"), -6.0);
        assert_eq!(eval("--4"), 4.0);
    }

    #[test]
    fn unicode_operators() {
        assert_eq!(eval("3 × 4"), 12.0);
        assert_eq!(eval("12 ÷ 4"), 3.0);
        assert_eq!(eval("9 − 2"), 7.0);
    }

    #[test]
    fn rejects_trailing_garbage() {
        let err = parse_expression("2 + 3 apples").unwrap_err();
        match err {
            Error::ExprParse { position, .. } => assert_eq!(position, 6),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn rejects_malformed_input() {
        assert!(parse_expression("").is_err());
        assert!(parse_expression("(2 + 3").is_err());
        assert!(parse_expression("2 +").is_err());
        assert!(parse_expression("* 4").is_err());
    }

    #[test]
    fn division_by_zero_errors() {
        let ast = parse_expression("1 / (2 - 2)").unwrap();
        assert!(matches!(evaluate_f64(&ast), Err(Error::ExprEval(_))));
    }

    #[test]
    fn f32_evaluation_matches_f64_at_low_precision() {
        let ast = parse_expression("0.5 * (3 + 1)").unwrap();
        let narrow: f32 = evaluate(&ast).unwrap();
        assert_eq!(narrow, 2.0f32);
    }

    #[test]
    fn display_round_trips_tree_shape() {
        let cases = ["2 + 3 * 4", "(2 + 3) * 4", "10 - (4 - 3)", "-(2 + 3) * 2"];
        for src in cases {
            let ast = parse_expression(src).unwrap();
            let reparsed = parse_expression(&ast.to_string()).unwrap();
            assert_eq!(ast, reparsed, "printing {src} as {ast} changed the tree");
        }
    }
}
