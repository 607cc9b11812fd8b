//! Arithmetic expression language for coefficient functions.
//!
//! Grammar:
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := factor (('*' | '/') factor)*
//! factor := unary ('^' factor)?
//! unary  := '-' unary | atom
//! atom   := number | ident | ident '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! `^` is right-associative and its base is a `unary`, so `-x^2` reads as
//! `(-x)^2`. Write `-(x^2)` for the negated square.

use std::f64::consts::{E, PI};
use std::fmt;

use thiserror::Error;

/// Byte range plus the 1-based line/column of its start.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub line: usize,
    pub column: usize,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unknown identifier `{name}` at line {line}, column {column}")]
    UnknownIdentifier {
        name: String,
        line: usize,
        column: usize,
    },
    #[error("function `{name}` expects {expected} argument(s), got {got}")]
    Arity {
        name: String,
        expected: usize,
        got: usize,
    },
    #[error("variable `{0}` is not bound")]
    Unbound(String),
    #[error("variable `{name}` is not allowed here (allowed: {allowed})")]
    Disallowed { name: String, allowed: String },
    #[error("domain error: `{expr}` evaluated to {value}")]
    Domain { expr: String, value: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Var {
    /// Zero-based component index; printed as `u1`, `u2`, ...
    U(usize),
    X,
    Y,
    T,
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Var::U(i) => write!(f, "u{}", i + 1),
            Var::X => f.write_str("x"),
            Var::Y => f.write_str("y"),
            Var::T => f.write_str("t"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Pow => "^",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Log,
    Tanh,
    Abs,
    Sqrt,
    Min,
    Max,
    Pow,
}

impl Func {
    fn lookup(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "tanh" => Func::Tanh,
            "abs" => Func::Abs,
            "sqrt" => Func::Sqrt,
            "min" => Func::Min,
            "max" => Func::Max,
            "pow" => Func::Pow,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Tanh => "tanh",
            Func::Abs => "abs",
            Func::Sqrt => "sqrt",
            Func::Min => "min",
            Func::Max => "max",
            Func::Pow => "pow",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Func::Min | Func::Max | Func::Pow => 2,
            _ => 1,
        }
    }
}

#[derive(Clone, Debug)]
pub enum ExprKind {
    Const(f64),
    Var(Var),
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

/// A parsed expression node. Equality ignores source spans.
#[derive(Clone, Debug)]
pub struct Expr {
    pub kind: ExprKind,
    pub span: Span,
}

impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        match (&self.kind, &other.kind) {
            (ExprKind::Const(a), ExprKind::Const(b)) => a.to_bits() == b.to_bits(),
            (ExprKind::Var(a), ExprKind::Var(b)) => a == b,
            (ExprKind::Neg(a), ExprKind::Neg(b)) => a == b,
            (ExprKind::Binary(o1, l1, r1), ExprKind::Binary(o2, l2, r2)) => {
                o1 == o2 && l1 == l2 && r1 == r2
            }
            (ExprKind::Call(f1, a1), ExprKind::Call(f2, a2)) => f1 == f2 && a1 == a2,
            _ => false,
        }
    }
}

/// Variable values for evaluation. `u` binds `u1..u{len}`.
#[derive(Clone, Copy, Debug, Default)]
pub struct Bindings<'a> {
    pub u: &'a [f64],
    pub x: Option<f64>,
    pub y: Option<f64>,
    pub t: Option<f64>,
}

impl<'a> Bindings<'a> {
    pub fn new(u: &'a [f64]) -> Self {
        Bindings {
            u,
            ..Default::default()
        }
    }

    pub fn at(u: &'a [f64], point: [f64; 2], t: f64) -> Self {
        Bindings {
            u,
            x: Some(point[0]),
            y: Some(point[1]),
            t: Some(t),
        }
    }

    fn get(&self, var: Var) -> Result<f64, ExprError> {
        let value = match var {
            Var::U(i) => self.u.get(i).copied(),
            Var::X => self.x,
            Var::Y => self.y,
            Var::T => self.t,
        };
        value.ok_or_else(|| ExprError::Unbound(var.to_string()))
    }
}

impl Expr {
    pub fn constant(value: f64) -> Expr {
        Expr {
            kind: ExprKind::Const(value),
            span: Span::default(),
        }
    }

    pub fn eval(&self, b: &Bindings<'_>) -> Result<f64, ExprError> {
        let value = match &self.kind {
            ExprKind::Const(c) => *c,
            ExprKind::Var(v) => b.get(*v)?,
            ExprKind::Neg(a) => -a.eval(b)?,
            ExprKind::Binary(op, l, r) => {
                let l = l.eval(b)?;
                let r = r.eval(b)?;
                match op {
                    BinOp::Add => l + r,
                    BinOp::Sub => l - r,
                    BinOp::Mul => l * r,
                    BinOp::Div => l / r,
                    BinOp::Pow => pow(l, r),
                }
            }
            ExprKind::Call(func, args) => {
                let a = args[0].eval(b)?;
                match func {
                    Func::Sin => a.sin(),
                    Func::Cos => a.cos(),
                    Func::Exp => a.exp(),
                    Func::Log => a.ln(),
                    Func::Tanh => a.tanh(),
                    Func::Abs => a.abs(),
                    Func::Sqrt => a.sqrt(),
                    Func::Min => a.min(args[1].eval(b)?),
                    Func::Max => a.max(args[1].eval(b)?),
                    Func::Pow => pow(a, args[1].eval(b)?),
                }
            }
        };
        if value.is_finite() {
            Ok(value)
        } else {
            Err(ExprError::Domain {
                expr: self.to_string(),
                value,
            })
        }
    }

    /// Visits every variable referenced by the expression.
    pub fn variables(&self) -> Vec<Var> {
        let mut out = Vec::new();
        self.collect_vars(&mut out);
        out.sort();
        out.dedup();
        out
    }

    fn collect_vars(&self, out: &mut Vec<Var>) {
        match &self.kind {
            ExprKind::Const(_) => {}
            ExprKind::Var(v) => out.push(*v),
            ExprKind::Neg(a) => a.collect_vars(out),
            ExprKind::Binary(_, l, r) => {
                l.collect_vars(out);
                r.collect_vars(out);
            }
            ExprKind::Call(_, args) => args.iter().for_each(|a| a.collect_vars(out)),
        }
    }

    /// True for a literal `0` (possibly negated or parenthesized).
    pub fn is_literal_zero(&self) -> bool {
        match &self.kind {
            ExprKind::Const(c) => *c == 0.0,
            ExprKind::Neg(a) => a.is_literal_zero(),
            _ => false,
        }
    }

    /// Fails if any variable outside `allowed` is referenced.
    pub fn check_vars(&self, allowed: &[Var]) -> Result<(), ExprError> {
        for v in self.variables() {
            if !allowed.contains(&v) {
                let allowed = allowed
                    .iter()
                    .map(|v| v.to_string())
                    .collect::<Vec<_>>()
                    .join(", ");
                return Err(ExprError::Disallowed {
                    name: v.to_string(),
                    allowed,
                });
            }
        }
        Ok(())
    }
}

fn pow(base: f64, exponent: f64) -> f64 {
    if exponent.fract() == 0.0 && exponent.abs() <= i32::MAX as f64 {
        base.powi(exponent as i32)
    } else {
        base.powf(exponent)
    }
}

// Binding strength used by the printer: sums < products < powers < unary < atoms.
fn precedence(e: &Expr) -> u8 {
    match &e.kind {
        ExprKind::Binary(BinOp::Add | BinOp::Sub, ..) => 1,
        ExprKind::Binary(BinOp::Mul | BinOp::Div, ..) => 2,
        ExprKind::Binary(BinOp::Pow, ..) => 3,
        ExprKind::Neg(_) => 4,
        ExprKind::Const(c) if *c < 0.0 || c.is_sign_negative() => 4,
        _ => 5,
    }
}

fn write_operand(f: &mut fmt::Formatter<'_>, e: &Expr, min: u8) -> fmt::Result {
    if precedence(e) < min {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            ExprKind::Const(c) => {
                if c.is_sign_negative() {
                    write!(f, "-{}", -c)
                } else {
                    write!(f, "{c}")
                }
            }
            ExprKind::Var(v) => write!(f, "{v}"),
            ExprKind::Neg(a) => {
                f.write_str("-")?;
                write_operand(f, a, 4)
            }
            ExprKind::Binary(op, l, r) => {
                let (lmin, rmin) = match op {
                    BinOp::Add => (1, 2),
                    BinOp::Sub => (1, 2),
                    BinOp::Mul | BinOp::Div => (2, 3),
                    // base is a unary; exponent may itself be a power
                    BinOp::Pow => (4, 3),
                };
                write_operand(f, l, lmin)?;
                write!(f, " {} ", op.symbol())?;
                write_operand(f, r, rmin)
            }
            ExprKind::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    End,
}

struct Lexer<'a> {
    src: &'a str,
    tokens: Vec<(Tok, Span)>,
}

fn position(src: &str, offset: usize) -> (usize, usize) {
    let before = &src[..offset];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(before.chars().count(), |nl| {
        before[nl + 1..].chars().count()
    }) + 1;
    (line, column)
}

impl<'a> Lexer<'a> {
    fn span(&self, start: usize, end: usize) -> Span {
        let (line, column) = position(self.src, start);
        Span {
            start,
            end,
            line,
            column,
        }
    }

    fn run(mut self) -> Result<Vec<(Tok, Span)>, ExprError> {
        let bytes = self.src.as_bytes();
        let mut i = 0;
        while i < bytes.len() {
            let c = bytes[i] as char;
            if c.is_ascii_whitespace() {
                i += 1;
            } else if c.is_ascii_digit() || c == '.' {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                // exponent only when followed by digits, so `2e` stays `2 * e` territory
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
                let text = &self.src[start..i];
                let value: f64 = text.parse().map_err(|_| {
                    let (line, column) = position(self.src, start);
                    ExprError::Syntax {
                        line,
                        column,
                        message: format!("malformed number `{text}`"),
                    }
                })?;
                let span = self.span(start, i);
                self.tokens.push((Tok::Num(value), span));
            } else if c.is_ascii_alphabetic() || c == '_' {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                let span = self.span(start, i);
                self.tokens
                    .push((Tok::Ident(self.src[start..i].to_string()), span));
            } else if "+-*/^(),".contains(c) {
                let span = self.span(i, i + 1);
                self.tokens.push((Tok::Op(c), span));
                i += 1;
            } else {
                let (line, column) = position(self.src, i);
                let ch = self.src[i..].chars().next().unwrap_or(c);
                return Err(ExprError::Syntax {
                    line,
                    column,
                    message: format!("unexpected character `{ch}`"),
                });
            }
        }
        let end = self.span(self.src.len(), self.src.len());
        self.tokens.push((Tok::End, end));
        Ok(self.tokens)
    }
}

struct Parser {
    tokens: Vec<(Tok, Span)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.tokens[self.pos].0
    }

    fn span(&self) -> Span {
        self.tokens[self.pos].1
    }

    fn bump(&mut self) -> (Tok, Span) {
        let t = self.tokens[self.pos].clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn error(&self, message: impl Into<String>) -> ExprError {
        let span = self.span();
        ExprError::Syntax {
            line: span.line,
            column: span.column,
            message: message.into(),
        }
    }

    fn describe(tok: &Tok) -> String {
        match tok {
            Tok::Num(v) => format!("number `{v}`"),
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Op(c) => format!("token `{c}`"),
            Tok::End => "end of input".to_string(),
        }
    }

    fn join(start: Span, end: Span) -> Span {
        Span {
            end: end.end,
            ..start
        }
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        while let Tok::Op(c @ ('+' | '-')) = *self.peek() {
            self.bump();
            let rhs = self.term()?;
            let op = if c == '+' { BinOp::Add } else { BinOp::Sub };
            let span = Self::join(lhs.span, rhs.span);
            lhs = Expr {
                kind: ExprKind::Binary(op, Box::new(lhs), Box::new(rhs)),
                span,
            };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.factor()?;
        while let Tok::Op(c @ ('*' | '/')) = *self.peek() {
            self.bump();
            let rhs = self.factor()?;
            let op = if c == '*' { BinOp::Mul } else { BinOp::Div };
            let span = Self::join(lhs.span, rhs.span);
            lhs = Expr {
                kind: ExprKind::Binary(op, Box::new(lhs), Box::new(rhs)),
                span,
            };
        }
        Ok(lhs)
    }

    fn factor(&mut self) -> Result<Expr, ExprError> {
        let base = self.unary()?;
        if *self.peek() == Tok::Op('^') {
            self.bump();
            let exponent = self.factor()?;
            let span = Self::join(base.span, exponent.span);
            return Ok(Expr {
                kind: ExprKind::Binary(BinOp::Pow, Box::new(base), Box::new(exponent)),
                span,
            });
        }
        Ok(base)
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        if *self.peek() == Tok::Op('-') {
            let (_, start) = self.bump();
            let inner = self.unary()?;
            let span = Self::join(start, inner.span);
            return Ok(Expr {
                kind: ExprKind::Neg(Box::new(inner)),
                span,
            });
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Expr, ExprError> {
        let (tok, span) = self.bump();
        match tok {
            Tok::Num(v) => Ok(Expr {
                kind: ExprKind::Const(v),
                span,
            }),
            Tok::Op('(') => {
                let inner = self.expr()?;
                self.expect(')')?;
                Ok(inner)
            }
            Tok::Ident(name) => {
                if *self.peek() == Tok::Op('(') {
                    self.call(name, span)
                } else {
                    let kind = match name.as_str() {
                        "pi" => ExprKind::Const(PI),
                        "e" => ExprKind::Const(E),
                        "x" => ExprKind::Var(Var::X),
                        "y" => ExprKind::Var(Var::Y),
                        "t" => ExprKind::Var(Var::T),
                        other => match parse_component(other) {
                            Some(i) => ExprKind::Var(Var::U(i)),
                            None => {
                                return Err(ExprError::UnknownIdentifier {
                                    name,
                                    line: span.line,
                                    column: span.column,
                                })
                            }
                        },
                    };
                    Ok(Expr { kind, span })
                }
            }
            other => {
                self.pos = self.pos.saturating_sub(1);
                Err(self.error(format!("unexpected {}", Self::describe(&other))))
            }
        }
    }

    fn call(&mut self, name: String, start: Span) -> Result<Expr, ExprError> {
        let func = Func::lookup(&name).ok_or(ExprError::UnknownIdentifier {
            name: name.clone(),
            line: start.line,
            column: start.column,
        })?;
        self.expect('(')?;
        let mut args = vec![self.expr()?];
        while *self.peek() == Tok::Op(',') {
            self.bump();
            args.push(self.expr()?);
        }
        let close = self.span();
        self.expect(')')?;
        if args.len() != func.arity() {
            return Err(ExprError::Arity {
                name,
                expected: func.arity(),
                got: args.len(),
            });
        }
        Ok(Expr {
            kind: ExprKind::Call(func, args),
            span: Self::join(start, close),
        })
    }

    fn expect(&mut self, c: char) -> Result<(), ExprError> {
        if *self.peek() == Tok::Op(c) {
            self.bump();
            Ok(())
        } else {
            Err(self.error(format!(
                "expected `{c}`, found {}",
                Self::describe(self.peek())
            )))
        }
    }
}

fn parse_component(name: &str) -> Option<usize> {
    let digits = name.strip_prefix('u')?;
    if digits.is_empty() || digits.starts_with('0') || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse::<usize>().ok().map(|k| k - 1)
}

/// Parses one expression from `source`.
pub fn parse_expr(source: &str) -> Result<Expr, ExprError> {
    let tokens = Lexer {
        src: source,
        tokens: Vec::new(),
    }
    .run()?;
    let mut parser = Parser { tokens, pos: 0 };
    let expr = parser.expr()?;
    if *parser.peek() != Tok::End {
        return Err(parser.error(format!(
            "unexpected {}",
            Parser::describe(parser.peek())
        )));
    }
    Ok(expr)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(v: f64) -> Expr {
        Expr::constant(v)
    }
    fn var(v: Var) -> Expr {
        Expr {
            kind: ExprKind::Var(v),
            span: Span::default(),
        }
    }
    fn bin(op: BinOp, l: Expr, r: Expr) -> Expr {
        Expr {
            kind: ExprKind::Binary(op, Box::new(l), Box::new(r)),
            span: Span::default(),
        }
    }

    #[test]
    fn parses_polynomial() {
        let ast = parse_expr("u1 + 2*u1^3").unwrap();
        let expected = bin(
            BinOp::Add,
            var(Var::U(0)),
            bin(BinOp::Mul, c(2.0), bin(BinOp::Pow, var(Var::U(0)), c(3.0))),
        );
        assert_eq!(ast, expected);
    }

    #[test]
    fn parses_call_with_pi() {
        let ast = parse_expr("sin(pi*x)").unwrap();
        let expected = Expr {
            kind: ExprKind::Call(Func::Sin, vec![bin(BinOp::Mul, c(PI), var(Var::X))]),
            span: Span::default(),
        };
        assert_eq!(ast, expected);
    }

    #[test]
    fn reports_misplaced_operator() {
        match parse_expr("u1 + * 2") {
            Err(ExprError::Syntax { line, column, .. }) => assert_eq!((line, column), (1, 6)),
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    #[test]
    fn reports_unknown_identifier_and_arity() {
        assert!(matches!(
            parse_expr("foo + 1"),
            Err(ExprError::UnknownIdentifier { .. })
        ));
        assert!(matches!(
            parse_expr("bar(1)"),
            Err(ExprError::UnknownIdentifier { .. })
        ));
        assert!(matches!(
            parse_expr("min(1)"),
            Err(ExprError::Arity { expected: 2, got: 1, .. })
        ));
        assert!(matches!(parse_expr("u0"), Err(ExprError::UnknownIdentifier { .. })));
        assert!(matches!(parse_expr("(1 + 2"), Err(ExprError::Syntax { .. })));
        assert!(matches!(parse_expr(""), Err(ExprError::Syntax { .. })));
    }

    #[test]
    fn power_is_right_associative_with_unary_base() {
        let v = parse_expr("2^3^2").unwrap().eval(&Bindings::default()).unwrap();
        assert_eq!(v, 512.0);
        let v = parse_expr("-2^2").unwrap().eval(&Bindings::default()).unwrap();
        assert_eq!(v, 4.0);
        let v = parse_expr("-(2^2)").unwrap().eval(&Bindings::default()).unwrap();
        assert_eq!(v, -4.0);
        let v = parse_expr("2^-1").unwrap().eval(&Bindings::default()).unwrap();
        assert_eq!(v, 0.5);
    }

    #[test]
    fn evaluates_examples() {
        let u = [3.0];
        assert_eq!(parse_expr("u1^2").unwrap().eval(&Bindings::new(&u)).unwrap(), 9.0);
        let b = Bindings::at(&[], [0.0, 0.0], 0.0);
        assert_eq!(parse_expr("exp(x)").unwrap().eval(&b).unwrap(), 1.0);
        let zero = [0.0];
        assert!(matches!(
            parse_expr("1/(u1)").unwrap().eval(&Bindings::new(&zero)),
            Err(ExprError::Domain { .. })
        ));
        assert!(matches!(
            parse_expr("u2").unwrap().eval(&Bindings::new(&zero)),
            Err(ExprError::Unbound(_))
        ));
        assert!(matches!(
            parse_expr("max(log(0-1), 1)").unwrap().eval(&Bindings::default()),
            Err(ExprError::Domain { .. })
        ));
    }

    #[test]
    fn scientific_literals_and_constants() {
        let b = Bindings::default();
        assert_eq!(parse_expr("1e-3").unwrap().eval(&b).unwrap(), 1e-3);
        assert_eq!(parse_expr("2.5E+2").unwrap().eval(&b).unwrap(), 250.0);
        assert_eq!(parse_expr("2*e").unwrap().eval(&b).unwrap(), 2.0 * E);
        assert_eq!(parse_expr("pow(2, 10)").unwrap().eval(&b).unwrap(), 1024.0);
    }

    #[test]
    fn variable_restrictions() {
        let ast = parse_expr("u1 + y").unwrap();
        assert!(ast.check_vars(&[Var::U(0), Var::X]).is_err());
        assert!(ast.check_vars(&[Var::U(0), Var::X, Var::Y]).is_ok());
        assert_eq!(ast.variables(), vec![Var::U(0), Var::Y]);
        assert!(parse_expr("-0").unwrap().is_literal_zero());
    }
}
