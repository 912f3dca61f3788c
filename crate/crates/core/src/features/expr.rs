//! Custom term language.
//!
//! ```text
//! expr    = term { ("+" | "-") term } ;
//! term    = unary { ("*" | "/" | <juxtaposition>) unary } ;
//! unary   = "-" unary | power ;
//! power   = primary [ "^" unary ] ;
//! primary = number | variable | function "(" expr ")" | "(" expr ")" ;
//! variable = "x" digit { digit } ;
//! function = "sin" | "cos" | "tan" | "exp" | "log" | "sqrt" | "abs" ;
//! number  = digit { digit } [ "." { digit } ] [ ("e" | "E") [ "+" | "-" ] digit { digit } ] ;
//! ```
//!
//! Juxtaposition multiplies, so the library feature names `x0 x1` and
//! `sin(2 x0)` are themselves valid terms.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Log,
    Sqrt,
    Abs,
}

impl Func {
    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
        }
    }

    fn apply(self, v: f64) -> Result<f64, EvalError> {
        let out = match self {
            Func::Sin => v.sin(),
            Func::Cos => v.cos(),
            Func::Tan => v.tan(),
            Func::Exp => v.exp(),
            Func::Log if v <= 0.0 => {
                return Err(EvalError::Domain(format!("log of non-positive value {v}")))
            }
            Func::Log => v.ln(),
            Func::Sqrt if v < 0.0 => {
                return Err(EvalError::Domain(format!("sqrt of negative value {v}")))
            }
            Func::Sqrt => v.sqrt(),
            Func::Abs => v.abs(),
        };
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Expr {
    Num(f64),
    Var(usize),
    Neg(Box<Expr>),
    Call(Func, Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("empty term")]
    Empty,
    #[error("syntax error at position {pos}: {message}")]
    Syntax { pos: usize, message: String },
    #[error("unknown identifier {name:?} at position {pos}")]
    UnknownIdentifier { pos: usize, name: String },
    #[error("variable x{index} at position {pos} out of range for dimension {dimension}")]
    VariableOutOfRange {
        pos: usize,
        index: usize,
        dimension: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("non-finite result")]
    NonFinite,
    #[error("state has {got} components, term references x{index}")]
    MissingVariable { index: usize, got: usize },
}

/// A parsed custom term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermExpr {
    pub source: String,
    pub ast: Expr,
}

impl TermExpr {
    pub fn eval(&self, x: &[f64]) -> Result<f64, EvalError> {
        self.ast.eval(x)
    }

    /// Largest variable index referenced, if any.
    pub fn max_variable(&self) -> Option<usize> {
        self.ast.max_variable()
    }
}

impl fmt::Display for TermExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

/// Longest accepted term source, in bytes.
pub const MAX_TERM_LENGTH: usize = 512;
/// Deepest accepted nesting of parentheses, calls and unary operators.
pub const MAX_TERM_DEPTH: usize = 64;

/// Parses `source` as a term over `x0..x{n-1}`.
pub fn parse_term(source: &str, n: usize) -> Result<TermExpr, ParseError> {
    let trimmed = source.trim();
    if trimmed.is_empty() {
        return Err(ParseError::Empty);
    }
    if source.len() > MAX_TERM_LENGTH {
        return Err(ParseError::Syntax {
            pos: MAX_TERM_LENGTH,
            message: format!("term longer than {MAX_TERM_LENGTH} bytes"),
        });
    }
    let tokens = lex(source)?;
    let mut parser = Parser {
        tokens,
        pos: 0,
        dimension: n,
        len: source.len(),
        depth: 0,
    };
    let ast = parser.expr()?;
    if let Some(tok) = parser.peek() {
        return Err(ParseError::Syntax {
            pos: tok.pos,
            message: format!("unexpected {}", tok.kind.describe()),
        });
    }
    Ok(TermExpr {
        source: trimmed.to_string(),
        ast,
    })
}

impl Expr {
    pub fn eval(&self, x: &[f64]) -> Result<f64, EvalError> {
        let v = match self {
            Expr::Num(v) => *v,
            Expr::Var(i) => *x.get(*i).ok_or(EvalError::MissingVariable {
                index: *i,
                got: x.len(),
            })?,
            Expr::Neg(e) => -e.eval(x)?,
            Expr::Call(f, e) => f.apply(e.eval(x)?)?,
            Expr::Bin(op, a, b) => {
                let (a, b) = (a.eval(x)?, b.eval(x)?);
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => a / b,
                    BinOp::Pow => pow(a, b),
                }
            }
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(EvalError::NonFinite)
        }
    }

    fn max_variable(&self) -> Option<usize> {
        match self {
            Expr::Num(_) => None,
            Expr::Var(i) => Some(*i),
            Expr::Neg(e) | Expr::Call(_, e) => e.max_variable(),
            Expr::Bin(_, a, b) => a.max_variable().max(b.max_variable()),
        }
    }

    /// True when the top-level node is additive, i.e. the expression needs
    /// parentheses when used as a factor.
    pub fn is_additive(&self) -> bool {
        matches!(self, Expr::Neg(_) | Expr::Bin(BinOp::Add | BinOp::Sub, _, _))
    }
}

fn pow(a: f64, b: f64) -> f64 {
    if b.fract() == 0.0 && b.abs() <= i32::MAX as f64 {
        a.powi(b as i32)
    } else {
        a.powf(b)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum TokKind {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
}

impl TokKind {
    fn describe(&self) -> String {
        match self {
            TokKind::Num(v) => format!("number {v}"),
            TokKind::Ident(s) => format!("identifier {s:?}"),
            TokKind::Plus => "'+'".into(),
            TokKind::Minus => "'-'".into(),
            TokKind::Star => "'*'".into(),
            TokKind::Slash => "'/'".into(),
            TokKind::Caret => "'^'".into(),
            TokKind::LParen => "'('".into(),
            TokKind::RParen => "')'".into(),
        }
    }

    fn starts_primary(&self) -> bool {
        matches!(self, TokKind::Num(_) | TokKind::Ident(_) | TokKind::LParen)
    }
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokKind,
    pos: usize,
}

fn lex(src: &str) -> Result<Vec<Token>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        let single = match c {
            b' ' | b'\t' | b'\r' | b'\n' => {
                i += 1;
                continue;
            }
            b'+' => Some(TokKind::Plus),
            b'-' => Some(TokKind::Minus),
            b'*' => Some(TokKind::Star),
            b'/' => Some(TokKind::Slash),
            b'^' => Some(TokKind::Caret),
            b'(' => Some(TokKind::LParen),
            b')' => Some(TokKind::RParen),
            _ => None,
        };
        if let Some(kind) = single {
            // `**` is accepted as an alias of `^`.
            if kind == TokKind::Star && bytes.get(i + 1) == Some(&b'*') {
                out.push(Token { kind: TokKind::Caret, pos: start });
                i += 2;
            } else {
                out.push(Token { kind, pos: start });
                i += 1;
            }
            continue;
        }
        if c.is_ascii_digit() || c == b'.' {
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            if i < bytes.len() && bytes[i] == b'.' {
                i += 1;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    while j < bytes.len() && bytes[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                }
            }
            let text = &src[start..i];
            let value = text.parse::<f64>().map_err(|_| ParseError::Syntax {
                pos: start,
                message: format!("malformed number {text:?}"),
            })?;
            out.push(Token { kind: TokKind::Num(value), pos: start });
            continue;
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push(Token {
                kind: TokKind::Ident(src[start..i].to_string()),
                pos: start,
            });
            continue;
        }
        let ch = src[start..].chars().next().unwrap_or('?');
        return Err(ParseError::Syntax {
            pos: start,
            message: format!("unexpected character {ch:?}"),
        });
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    dimension: usize,
    len: usize,
    depth: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn eat(&mut self, kind: &TokKind) -> bool {
        if self.peek().map(|t| &t.kind) == Some(kind) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn here(&self) -> usize {
        self.peek().map_or(self.len, |t| t.pos)
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = if self.eat(&TokKind::Plus) {
                BinOp::Add
            } else if self.eat(&TokKind::Minus) {
                BinOp::Sub
            } else {
                return Ok(lhs);
            };
            let rhs = self.term()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = if self.eat(&TokKind::Star) {
                BinOp::Mul
            } else if self.eat(&TokKind::Slash) {
                BinOp::Div
            } else if self.peek().is_some_and(|t| t.kind.starts_primary()) {
                BinOp::Mul
            } else {
                return Ok(lhs);
            };
            let rhs = self.unary()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        self.depth += 1;
        if self.depth > MAX_TERM_DEPTH {
            return Err(ParseError::Syntax {
                pos: self.here(),
                message: format!("nesting deeper than {MAX_TERM_DEPTH}"),
            });
        }
        let out = if self.eat(&TokKind::Minus) {
            self.unary().map(|e| Expr::Neg(Box::new(e)))
        } else {
            self.power()
        };
        self.depth -= 1;
        out
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.primary()?;
        if self.eat(&TokKind::Caret) {
            let exp = self.unary()?;
            return Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let pos = self.here();
        let Some(tok) = self.next() else {
            return Err(ParseError::Syntax {
                pos,
                message: "unexpected end of term".into(),
            });
        };
        match tok.kind {
            TokKind::Num(v) => Ok(Expr::Num(v)),
            TokKind::LParen => {
                let inner = self.expr()?;
                self.expect_rparen()?;
                Ok(inner)
            }
            TokKind::Ident(name) => {
                if let Some(index) = variable_index(&name) {
                    if index >= self.dimension {
                        return Err(ParseError::VariableOutOfRange {
                            pos: tok.pos,
                            index,
                            dimension: self.dimension,
                        });
                    }
                    return Ok(Expr::Var(index));
                }
                let Some(func) = Func::from_name(&name) else {
                    return Err(ParseError::UnknownIdentifier { pos: tok.pos, name });
                };
                if !self.eat(&TokKind::LParen) {
                    return Err(ParseError::Syntax {
                        pos: self.here(),
                        message: format!("expected '(' after {name}"),
                    });
                }
                let arg = self.expr()?;
                self.expect_rparen()?;
                Ok(Expr::Call(func, Box::new(arg)))
            }
            other => Err(ParseError::Syntax {
                pos: tok.pos,
                message: format!("unexpected {}", other.describe()),
            }),
        }
    }

    fn expect_rparen(&mut self) -> Result<(), ParseError> {
        if self.eat(&TokKind::RParen) {
            Ok(())
        } else {
            Err(ParseError::Syntax {
                pos: self.here(),
                message: "expected ')'".into(),
            })
        }
    }
}

fn variable_index(name: &str) -> Option<usize> {
    let digits = name.strip_prefix('x')?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) || digits.len() > 6 {
        return None;
    }
    digits.parse().ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent evaluator: tiny recursive-descent over chars that computes
    /// directly rather than building an AST.
    fn direct_eval(src: &str, x: &[f64]) -> f64 {
        struct P<'a>(&'a [u8], usize, &'a [f64]);
        impl P<'_> {
            fn ws(&mut self) {
                while self.1 < self.0.len() && self.0[self.1] == b' ' {
                    self.1 += 1;
                }
            }
            fn peek(&mut self) -> Option<u8> {
                self.ws();
                self.0.get(self.1).copied()
            }
            fn sum(&mut self) -> f64 {
                let mut v = self.prod();
                while let Some(c @ (b'+' | b'-')) = self.peek() {
                    self.1 += 1;
                    let r = self.prod();
                    v = if c == b'+' { v + r } else { v - r };
                }
                v
            }
            fn prod(&mut self) -> f64 {
                let mut v = self.pow();
                while let Some(b'*') = self.peek() {
                    self.1 += 1;
                    v *= self.pow();
                }
                v
            }
            fn pow(&mut self) -> f64 {
                let b = self.atom();
                if let Some(b'^') = self.peek() {
                    self.1 += 1;
                    return b.powf(self.atom());
                }
                b
            }
            fn atom(&mut self) -> f64 {
                match self.peek() {
                    Some(b'x') => {
                        self.1 += 1;
                        let i = (self.0[self.1] - b'0') as usize;
                        self.1 += 1;
                        self.2[i]
                    }
                    _ => {
                        let s = self.1;
                        while self.1 < self.0.len() && self.0[self.1].is_ascii_digit() {
                            self.1 += 1;
                        }
                        std::str::from_utf8(&self.0[s..self.1]).unwrap().parse().unwrap()
                    }
                }
            }
        }
        P(src.as_bytes(), 0, x).sum()
    }

    #[test]
    fn evaluates_polynomial_expression() {
        let t = parse_term("x0^2 + 3*x1", 2).unwrap();
        let x = [2.0, 1.0];
        assert_eq!(t.eval(&x).unwrap(), 7.0);
        assert_eq!(direct_eval("x0^2 + 3*x1", &x), 7.0);
    }

    #[test]
    fn identity_and_functions() {
        assert_eq!(parse_term("x0", 1).unwrap().ast, Expr::Var(0));
        let t = parse_term("exp(x0)", 3).unwrap();
        assert_eq!(t.ast, Expr::Call(Func::Exp, Box::new(Expr::Var(0))));
        assert!((t.eval(&[1.0, 0.0, 0.0]).unwrap() - std::f64::consts::E).abs() < 1e-15);
    }

    #[test]
    fn juxtaposition_multiplies() {
        let x = [1.5, -2.0];
        assert_eq!(parse_term("x0 x1", 2).unwrap().eval(&x).unwrap(), -3.0);
        assert_eq!(parse_term("sin(2 x0)", 2).unwrap().eval(&x).unwrap(), 3.0f64.sin());
        assert_eq!(parse_term("x0^2 x1", 2).unwrap().eval(&x).unwrap(), -4.5);
        assert_eq!(parse_term("2 - x1", 2).unwrap().eval(&x).unwrap(), 4.0);
        assert_eq!(parse_term("-x0^2", 2).unwrap().eval(&x).unwrap(), -2.25);
        assert_eq!(parse_term("1.5e-1 x0", 2).unwrap().eval(&x).unwrap(), 0.15 * 1.5);
        assert_eq!(parse_term("x0**2", 2).unwrap().eval(&x).unwrap(), 2.25);
    }

    #[test]
    fn reports_errors_with_positions() {
        assert_eq!(parse_term("  ", 1), Err(ParseError::Empty));
        assert!(matches!(
            parse_term("x0 + foo(x1)", 2),
            Err(ParseError::UnknownIdentifier { pos: 5, .. })
        ));
        assert!(matches!(
            parse_term("x3", 3),
            Err(ParseError::VariableOutOfRange { index: 3, dimension: 3, .. })
        ));
        assert!(matches!(parse_term("(x0 + 1", 1), Err(ParseError::Syntax { pos: 7, .. })));
        assert!(matches!(parse_term("x0 $ 1", 1), Err(ParseError::Syntax { pos: 3, .. })));
        assert!(matches!(parse_term("sin x0", 1), Err(ParseError::Syntax { .. })));
    }

    #[test]
    fn rejects_oversized_input() {
        let deep = format!("{}x0{}", "(".repeat(100), ")".repeat(100));
        assert!(matches!(parse_term(&deep, 1), Err(ParseError::Syntax { .. })));
        let nested = format!("{}x0{}", "(".repeat(30), ")".repeat(30));
        assert!(parse_term(&nested, 1).is_ok());
        assert!(parse_term("x0+".repeat(200).trim_end_matches('+'), 1).is_err());
    }

    #[test]
    fn domain_errors() {
        let log = parse_term("log(x0)", 1).unwrap();
        assert!(matches!(log.eval(&[0.0]), Err(EvalError::Domain(_))));
        assert!(matches!(log.eval(&[-1.0]), Err(EvalError::Domain(_))));
        let sqrt = parse_term("sqrt(x0)", 1).unwrap();
        assert!(matches!(sqrt.eval(&[-1e-3]), Err(EvalError::Domain(_))));
        assert_eq!(sqrt.eval(&[0.0]).unwrap(), 0.0);
        let div = parse_term("1/x0", 1).unwrap();
        assert_eq!(div.eval(&[0.0]), Err(EvalError::NonFinite));
    }
}
