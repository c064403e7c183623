//! Scalar coefficient expressions.
//!
//! Drift and diffusion coefficients, test functions and rate functions are
//! written as small arithmetic expressions over the state variables
//! `x1..xn`. This module parses them, renders them back to text, evaluates
//! them in IEEE-754 double precision and propagates value, gradient and
//! Hessian together (second-order forward mode).
//!
//! Non-smooth primitives (`abs`, `sgn`, `sqrt`, fractional powers) evaluated
//! exactly at their kink do not fabricate derivatives: the resulting
//! [`Jet2`] carries `smooth = false` and NaN derivative entries.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
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

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Abs,
    Sgn,
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
}

impl Func {
    pub const ALL: [Func; 7] = [
        Func::Abs,
        Func::Sgn,
        Func::Sin,
        Func::Cos,
        Func::Exp,
        Func::Log,
        Func::Sqrt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Func::Abs => "abs",
            Func::Sgn => "sgn",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
        }
    }

    fn from_name(name: &str) -> Option<Func> {
        Func::ALL.into_iter().find(|f| f.name() == name)
    }
}

/// Expression tree. Variables are stored zero-based: `Var(0)` is `x1`.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(usize),
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at byte {pos}: {message}")]
    Syntax { pos: usize, message: String },
    #[error("unknown identifier `{name}` at byte {pos}")]
    UnknownIdentifier { pos: usize, name: String },
    #[error("variable x{index} exceeds dimension {dim}")]
    VariableOutOfRange { index: usize, dim: usize },
    #[error("point has {len} coordinates but the expression reads x{index}")]
    PointTooShort { index: usize, len: usize },
    #[error("domain error: {0}")]
    Domain(String),
}

/// Sign with `sgn(0) = 0`.
pub fn sgn(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn is_integral(v: f64) -> bool {
    v.fract() == 0.0 && v.abs() <= i32::MAX as f64
}

fn pow_value(base: f64, exponent: f64) -> Result<f64, ExprError> {
    if base == 0.0 && exponent < 0.0 {
        return Err(ExprError::Domain(format!(
            "zero raised to negative power {exponent}"
        )));
    }
    if is_integral(exponent) {
        Ok(base.powi(exponent as i32))
    } else if base < 0.0 {
        Err(ExprError::Domain(format!(
            "negative base {base} with non-integer exponent {exponent}"
        )))
    } else {
        Ok(base.powf(exponent))
    }
}

fn call_value(func: Func, u: f64) -> Result<f64, ExprError> {
    Ok(match func {
        Func::Abs => u.abs(),
        Func::Sgn => sgn(u),
        Func::Sin => u.sin(),
        Func::Cos => u.cos(),
        Func::Exp => u.exp(),
        Func::Log => {
            if u <= 0.0 {
                return Err(ExprError::Domain(format!("log of non-positive value {u}")));
            }
            u.ln()
        }
        Func::Sqrt => {
            if u < 0.0 {
                return Err(ExprError::Domain(format!("sqrt of negative value {u}")));
            }
            u.sqrt()
        }
    })
}

fn div_value(a: f64, b: f64) -> Result<f64, ExprError> {
    if b == 0.0 {
        Err(ExprError::Domain("division by zero".into()))
    } else {
        Ok(a / b)
    }
}

impl Expr {
    pub fn num(v: f64) -> Expr {
        Expr::Num(v)
    }

    /// Variable `x{index}` with a one-based index.
    pub fn var(index: usize) -> Expr {
        Expr::Var(index - 1)
    }

    pub fn binary(op: BinOp, lhs: Expr, rhs: Expr) -> Expr {
        Expr::Binary(op, Box::new(lhs), Box::new(rhs))
    }

    pub fn call(func: Func, arg: Expr) -> Expr {
        Expr::Call(func, Box::new(arg))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn neg(arg: Expr) -> Expr {
        Expr::Neg(Box::new(arg))
    }

    /// A literal that may be negative, encoded as `Neg(Num)` so that
    /// rendering round-trips.
    pub fn constant(v: f64) -> Expr {
        if v < 0.0 {
            Expr::neg(Expr::Num(-v))
        } else {
            Expr::Num(v)
        }
    }

    /// Largest one-based variable index referenced, if any.
    pub fn max_var(&self) -> Option<usize> {
        match self {
            Expr::Num(_) => None,
            Expr::Var(i) => Some(i + 1),
            Expr::Neg(e) | Expr::Call(_, e) => e.max_var(),
            Expr::Binary(_, l, r) => match (l.max_var(), r.max_var()) {
                (Some(a), Some(b)) => Some(a.max(b)),
                (a, b) => a.or(b),
            },
        }
    }

    pub fn is_constant(&self) -> bool {
        self.max_var().is_none()
    }

    pub fn check_dimension(&self, n: usize) -> Result<(), ExprError> {
        match self.max_var() {
            Some(index) if index > n => Err(ExprError::VariableOutOfRange { index, dim: n }),
            _ => Ok(()),
        }
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64, ExprError> {
        match self {
            Expr::Num(v) => Ok(*v),
            Expr::Var(i) => x.get(*i).copied().ok_or(ExprError::PointTooShort {
                index: i + 1,
                len: x.len(),
            }),
            Expr::Neg(e) => Ok(-e.eval(x)?),
            Expr::Binary(op, l, r) => {
                let a = l.eval(x)?;
                let b = r.eval(x)?;
                match op {
                    BinOp::Add => Ok(a + b),
                    BinOp::Sub => Ok(a - b),
                    BinOp::Mul => Ok(a * b),
                    BinOp::Div => div_value(a, b),
                    BinOp::Pow => pow_value(a, b),
                }
            }
            Expr::Call(f, e) => call_value(*f, e.eval(x)?),
        }
    }

    /// Value, gradient and Hessian at `x`; the dimension is `x.len()`.
    pub fn eval_jet(&self, x: &[f64]) -> Result<Jet2, ExprError> {
        let dual = self.dual(x)?;
        Ok(dual.into_jet())
    }

    fn dual(&self, x: &[f64]) -> Result<Dual, ExprError> {
        let n = x.len();
        match self {
            Expr::Num(v) => Ok(Dual::constant(*v, n)),
            Expr::Var(i) => {
                let v = x.get(*i).copied().ok_or(ExprError::PointTooShort {
                    index: i + 1,
                    len: n,
                })?;
                Ok(Dual::variable(v, *i, n))
            }
            Expr::Neg(e) => Ok(e.dual(x)?.negate()),
            Expr::Binary(op, l, r) => {
                let a = l.dual(x)?;
                match op {
                    BinOp::Add => Ok(a.add(&r.dual(x)?)),
                    BinOp::Sub => Ok(a.sub(&r.dual(x)?)),
                    BinOp::Mul => Ok(a.mul(&r.dual(x)?)),
                    BinOp::Div => {
                        let b = r.dual(x)?;
                        let value = div_value(a.v, b.v)?;
                        let recip = b.chain(1.0 / b.v, -1.0 / (b.v * b.v), 2.0 / (b.v * b.v * b.v));
                        let mut q = a.mul(&recip);
                        q.v = value;
                        Ok(q)
                    }
                    BinOp::Pow => {
                        if r.is_constant() {
                            let c = r.eval(x)?;
                            a.powc(c)
                        } else {
                            let b = r.dual(x)?;
                            let value = pow_value(a.v, b.v)?;
                            if a.v <= 0.0 {
                                return Err(ExprError::Domain(format!(
                                    "variable exponent needs a positive base, got {}",
                                    a.v
                                )));
                            }
                            let ln = a.chain(a.v.ln(), 1.0 / a.v, -1.0 / (a.v * a.v));
                            let w = b.mul(&ln);
                            let mut out = w.chain(value, value, value);
                            out.v = value;
                            Ok(out)
                        }
                    }
                }
            }
            Expr::Call(f, e) => {
                let u = e.dual(x)?;
                let value = call_value(*f, u.v)?;
                let out = match f {
                    Func::Abs => {
                        if u.v == 0.0 {
                            u.kink(value)
                        } else {
                            u.chain(value, sgn(u.v), 0.0)
                        }
                    }
                    Func::Sgn => {
                        if u.v == 0.0 {
                            u.kink(value)
                        } else {
                            u.chain(value, 0.0, 0.0)
                        }
                    }
                    Func::Sin => u.chain(value, u.v.cos(), -value),
                    Func::Cos => u.chain(value, -u.v.sin(), -value),
                    Func::Exp => u.chain(value, value, value),
                    Func::Log => u.chain(value, 1.0 / u.v, -1.0 / (u.v * u.v)),
                    Func::Sqrt => {
                        if u.v == 0.0 {
                            u.kink(value)
                        } else {
                            u.chain(value, 0.5 / value, -0.25 / (value * u.v))
                        }
                    }
                };
                Ok(out)
            }
        }
    }
}

impl fmt::Display for Expr {
    /// Fully parenthesized rendering; `parse(render(e)) == e` for every tree
    /// the parser can produce.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => {
                if *v < 0.0 || (*v == 0.0 && v.is_sign_negative()) {
                    write!(f, "(-{})", -v)
                } else {
                    write!(f, "{v}")
                }
            }
            Expr::Var(i) => write!(f, "x{}", i + 1),
            Expr::Neg(e) => write!(f, "(-{e})"),
            Expr::Binary(op, l, r) => write!(f, "({l} {} {r})", op.symbol()),
            Expr::Call(func, e) => write!(f, "{}({e})", func.name()),
        }
    }
}

impl Expr {
    pub fn render(&self) -> String {
        self.to_string()
    }
}

/// Value, gradient and Hessian of an expression at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct Jet2 {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
    /// False when a non-smooth primitive was differentiated at its kink;
    /// gradient and Hessian are then NaN.
    pub smooth: bool,
}

#[derive(Debug, Clone)]
struct Dual {
    v: f64,
    g: Vec<f64>,
    // row-major n×n; only the upper triangle is computed, then mirrored
    h: Vec<f64>,
    smooth: bool,
}

impl Dual {
    fn n(&self) -> usize {
        self.g.len()
    }

    fn constant(v: f64, n: usize) -> Dual {
        Dual {
            v,
            g: vec![0.0; n],
            h: vec![0.0; n * n],
            smooth: true,
        }
    }

    fn variable(v: f64, index: usize, n: usize) -> Dual {
        let mut d = Dual::constant(v, n);
        d.g[index] = 1.0;
        d
    }

    fn kink(&self, value: f64) -> Dual {
        let n = self.n();
        Dual {
            v: value,
            g: vec![f64::NAN; n],
            h: vec![f64::NAN; n * n],
            smooth: false,
        }
    }

    fn fill_symmetric(h: &mut [f64], n: usize, mut entry: impl FnMut(usize, usize) -> f64) {
        for i in 0..n {
            for j in i..n {
                let e = entry(i, j);
                h[i * n + j] = e;
                h[j * n + i] = e;
            }
        }
    }

    /// Composition with a scalar function whose value and first two
    /// derivatives at `self.v` are given.
    fn chain(&self, value: f64, d1: f64, d2: f64) -> Dual {
        let n = self.n();
        let g: Vec<f64> = self.g.iter().map(|gi| d1 * gi).collect();
        let mut h = vec![0.0; n * n];
        Dual::fill_symmetric(&mut h, n, |i, j| {
            d1 * self.h[i * n + j] + d2 * self.g[i] * self.g[j]
        });
        Dual {
            v: value,
            g,
            h,
            smooth: self.smooth,
        }
    }

    fn negate(&self) -> Dual {
        Dual {
            v: -self.v,
            g: self.g.iter().map(|g| -g).collect(),
            h: self.h.iter().map(|h| -h).collect(),
            smooth: self.smooth,
        }
    }

    fn zip(&self, other: &Dual, v: f64, op: impl Fn(f64, f64) -> f64) -> Dual {
        Dual {
            v,
            g: self
                .g
                .iter()
                .zip(&other.g)
                .map(|(a, b)| op(*a, *b))
                .collect(),
            h: self
                .h
                .iter()
                .zip(&other.h)
                .map(|(a, b)| op(*a, *b))
                .collect(),
            smooth: self.smooth && other.smooth,
        }
    }

    fn add(&self, other: &Dual) -> Dual {
        self.zip(other, self.v + other.v, |a, b| a + b)
    }

    fn sub(&self, other: &Dual) -> Dual {
        self.zip(other, self.v - other.v, |a, b| a - b)
    }

    fn mul(&self, other: &Dual) -> Dual {
        let n = self.n();
        let (a, b) = (self, other);
        let g = (0..n).map(|i| a.g[i] * b.v + a.v * b.g[i]).collect();
        let mut h = vec![0.0; n * n];
        Dual::fill_symmetric(&mut h, n, |i, j| {
            a.h[i * n + j] * b.v + a.v * b.h[i * n + j] + a.g[i] * b.g[j] + a.g[j] * b.g[i]
        });
        Dual {
            v: a.v * b.v,
            g,
            h,
            smooth: a.smooth && b.smooth,
        }
    }

    fn powc(&self, c: f64) -> Result<Dual, ExprError> {
        let value = pow_value(self.v, c)?;
        if self.v == 0.0 && !is_integral(c) && c < 2.0 {
            return Ok(self.kink(value));
        }
        let d1 = if c == 0.0 {
            0.0
        } else {
            c * pow_value(self.v, c - 1.0)?
        };
        let d2 = if c == 0.0 || c == 1.0 {
            0.0
        } else {
            c * (c - 1.0) * pow_value(self.v, c - 2.0)?
        };
        Ok(self.chain(value, d1, d2))
    }

    fn into_jet(self) -> Jet2 {
        let n = self.n();
        let (gradient, hessian) = if self.smooth {
            (
                DVector::from_vec(self.g),
                DMatrix::from_row_slice(n, n, &self.h),
            )
        } else {
            (
                DVector::from_element(n, f64::NAN),
                DMatrix::from_element(n, n, f64::NAN),
            )
        };
        Jet2 {
            value: self.v,
            gradient,
            hessian,
            smooth: self.smooth,
        }
    }
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    End,
}

fn tokenize(src: &str) -> Result<Vec<(Tok, usize)>, ExprError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let tok = match c {
            b'+' => Tok::Plus,
            b'-' => Tok::Minus,
            b'*' => Tok::Star,
            b'/' => Tok::Slash,
            b'^' => Tok::Caret,
            b'(' => Tok::LParen,
            b')' => Tok::RParen,
            b'0'..=b'9' | b'.' => {
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
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
                let v: f64 = text.parse().map_err(|_| ExprError::Syntax {
                    pos: start,
                    message: format!("malformed number `{text}`"),
                })?;
                out.push((Tok::Num(v), start));
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((Tok::Ident(src[start..i].to_string()), start));
                continue;
            }
            _ => {
                return Err(ExprError::Syntax {
                    pos: start,
                    message: format!(
                        "unexpected character `{}`",
                        src[start..].chars().next().unwrap_or('?')
                    ),
                })
            }
        };
        out.push((tok, start));
        i += 1;
    }
    out.push((Tok::End, src.len()));
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    dim: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].0.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error<T>(&self, message: impl Into<String>) -> Result<T, ExprError> {
        Err(ExprError::Syntax {
            pos: self.offset(),
            message: message.into(),
        })
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), ExprError> {
        if *self.peek() == tok {
            self.bump();
            Ok(())
        } else {
            self.error(format!("expected {what}"))
        }
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    // unary minus binds looser than `^`: -x1^2 = -(x1^2)
    fn unary(&mut self) -> Result<Expr, ExprError> {
        if *self.peek() == Tok::Minus {
            self.bump();
            Ok(Expr::neg(self.unary()?))
        } else {
            self.power()
        }
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.atom()?;
        if *self.peek() == Tok::Caret {
            self.bump();
            let exponent = self.unary()?;
            Ok(Expr::binary(BinOp::Pow, base, exponent))
        } else {
            Ok(base)
        }
    }

    fn atom(&mut self) -> Result<Expr, ExprError> {
        let start = self.offset();
        match self.bump() {
            Tok::Num(v) => Ok(Expr::Num(v)),
            Tok::LParen => {
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Tok::Ident(name) => {
                if let Some(func) = Func::from_name(&name) {
                    self.expect(Tok::LParen, &format!("`(` after `{name}`"))?;
                    let arg = self.expr()?;
                    self.expect(Tok::RParen, "`)`")?;
                    return Ok(Expr::call(func, arg));
                }
                let index = name
                    .strip_prefix('x')
                    .filter(|d| !d.is_empty() && d.bytes().all(|b| b.is_ascii_digit()))
                    .and_then(|d| d.parse::<usize>().ok());
                match index {
                    Some(0) => Err(ExprError::UnknownIdentifier { pos: start, name }),
                    Some(i) if i > self.dim => Err(ExprError::VariableOutOfRange {
                        index: i,
                        dim: self.dim,
                    }),
                    Some(i) => Ok(Expr::Var(i - 1)),
                    None => Err(ExprError::UnknownIdentifier { pos: start, name }),
                }
            }
            Tok::End => Err(ExprError::Syntax {
                pos: start,
                message: "unexpected end of input".into(),
            }),
            tok => Err(ExprError::Syntax {
                pos: start,
                message: format!("unexpected token {tok:?}"),
            }),
        }
    }
}

/// Parse `source` as an expression over `x1..x{dim}`.
pub fn parse(source: &str, dim: usize) -> Result<Expr, ExprError> {
    let toks = tokenize(source)?;
    let mut p = Parser { toks, pos: 0, dim };
    let e = p.expr()?;
    if *p.peek() != Tok::End {
        return p.error("trailing input");
    }
    Ok(e)
}

impl std::str::FromStr for Expr {
    type Err = ExprError;

    /// Parses without a dimension bound.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse(s, usize::MAX)
    }
}
