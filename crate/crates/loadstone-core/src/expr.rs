//! Symbolic expressions in the variables `x`, `t`, `y`.
//!
//! Small closed-form coefficient functions enter the model as text; this
//! module parses them, evaluates them pointwise, and differentiates them
//! symbolically (all finite-difference stencils act on grid samples, but
//! condition checks and manufactured solutions need exact derivatives).
//!
//! Grammar, loosest to tightest binding: `+ -`, then `* /`, then unary
//! minus, then `^` (right associative). Functions are `sin cos exp log
//! sqrt`, constants `pi` and `e`. `-x^2` therefore means `-(x^2)` and
//! `2^3^2` means `2^(3^2)`.

use std::fmt;

/// One of the three independent variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    X,
    T,
    Y,
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Var::X => "x",
            Var::T => "t",
            Var::Y => "y",
        })
    }
}

/// Expression tree. Parsing never folds anything; the differentiation
/// helpers fold only value-preserving trivia (`0 * e`, `e + 0`, numeric
/// constants) to keep repeated derivatives from ballooning.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(Var),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
    Sin(Box<Expr>),
    Cos(Box<Expr>),
    Exp(Box<Expr>),
    Log(Box<Expr>),
    Sqrt(Box<Expr>),
}

/// Values bound to the three variables for one evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bindings {
    pub x: f64,
    pub t: f64,
    pub y: f64,
}

impl Bindings {
    pub fn new(x: f64, t: f64, y: f64) -> Self {
        Bindings { x, t, y }
    }

    /// Bindings for expressions that only use `x` and `t`.
    pub fn xt(x: f64, t: f64) -> Self {
        Bindings { x, t, y: 0.0 }
    }

    fn get(&self, v: Var) -> f64 {
        match v {
            Var::X => self.x,
            Var::T => self.t,
            Var::Y => self.y,
        }
    }
}

/// Parse failure, with the byte offset into the source string.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{msg} at byte {pos}")]
pub struct ParseError {
    pub pos: usize,
    pub msg: String,
}

/// Evaluation failure. `subexpr` is the printed form of the node whose
/// evaluation was undefined.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("division by zero in `{subexpr}`")]
    DivisionByZero { subexpr: String },
    #[error("log of non-positive value {arg} in `{subexpr}`")]
    LogNonPositive { arg: f64, subexpr: String },
    #[error("sqrt of negative value {arg} in `{subexpr}`")]
    SqrtNegative { arg: f64, subexpr: String },
    #[error("undefined power {base}^{exponent} in `{subexpr}`")]
    PowUndefined {
        base: f64,
        exponent: f64,
        subexpr: String,
    },
}

// ---------------------------------------------------------------------------
// Lexer
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
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer {
            src: src.as_bytes(),
            pos: 0,
        }
    }

    fn tokens(mut self) -> Result<Vec<(Tok, usize)>, ParseError> {
        let mut out = Vec::new();
        while let Some(&b) = self.src.get(self.pos) {
            let start = self.pos;
            match b {
                b' ' | b'\t' | b'\r' | b'\n' => {
                    self.pos += 1;
                }
                b'+' => {
                    out.push((Tok::Plus, start));
                    self.pos += 1;
                }
                b'-' => {
                    out.push((Tok::Minus, start));
                    self.pos += 1;
                }
                b'*' => {
                    out.push((Tok::Star, start));
                    self.pos += 1;
                }
                b'/' => {
                    out.push((Tok::Slash, start));
                    self.pos += 1;
                }
                b'^' => {
                    out.push((Tok::Caret, start));
                    self.pos += 1;
                }
                b'(' => {
                    out.push((Tok::LParen, start));
                    self.pos += 1;
                }
                b')' => {
                    out.push((Tok::RParen, start));
                    self.pos += 1;
                }
                b'0'..=b'9' | b'.' => {
                    out.push((self.number()?, start));
                }
                b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                    let mut end = self.pos;
                    while end < self.src.len()
                        && (self.src[end].is_ascii_alphanumeric() || self.src[end] == b'_')
                    {
                        end += 1;
                    }
                    let word = std::str::from_utf8(&self.src[self.pos..end]).unwrap();
                    out.push((Tok::Ident(word.to_string()), start));
                    self.pos = end;
                }
                _ => {
                    return Err(ParseError {
                        pos: start,
                        msg: format!("unexpected character `{}`", b as char),
                    });
                }
            }
        }
        Ok(out)
    }

    fn number(&mut self) -> Result<Tok, ParseError> {
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if self.src.get(self.pos) == Some(&b'.') {
            self.pos += 1;
            while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
        }
        // Exponent part: only taken when a digit actually follows, so that
        // `2*e` stays an identifier reference.
        if matches!(self.src.get(self.pos), Some(b'e') | Some(b'E')) {
            let mut probe = self.pos + 1;
            if matches!(self.src.get(probe), Some(b'+') | Some(b'-')) {
                probe += 1;
            }
            if self.src.get(probe).is_some_and(u8::is_ascii_digit) {
                probe += 1;
                while probe < self.src.len() && self.src[probe].is_ascii_digit() {
                    probe += 1;
                }
                self.pos = probe;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        text.parse::<f64>()
            .map(Tok::Num)
            .map_err(|_| ParseError {
                pos: start,
                msg: format!("malformed number `{text}`"),
            })
    }
}

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

struct Parser {
    toks: Vec<(Tok, usize)>,
    at: usize,
    end: usize,
}

/// Parse a source string into an expression tree.
pub fn parse(src: &str) -> Result<Expr, ParseError> {
    let toks = Lexer::new(src).tokens()?;
    let end = src.len();
    let mut p = Parser { toks, at: 0, end };
    let e = p.sum()?;
    if let Some((_, pos)) = p.toks.get(p.at) {
        return Err(ParseError {
            pos: *pos,
            msg: "unexpected trailing input".to_string(),
        });
    }
    Ok(e)
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.at).map(|(t, _)| t)
    }

    fn pos(&self) -> usize {
        self.toks.get(self.at).map_or(self.end, |(_, p)| *p)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.at).map(|(t, _)| t.clone());
        if t.is_some() {
            self.at += 1;
        }
        t
    }

    fn expect_rparen(&mut self) -> Result<(), ParseError> {
        match self.bump() {
            Some(Tok::RParen) => Ok(()),
            _ => Err(ParseError {
                pos: self.pos(),
                msg: "expected `)`".to_string(),
            }),
        }
    }

    fn sum(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(Tok::Plus) => {
                    self.bump();
                    lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Some(Tok::Minus) => {
                    self.bump();
                    lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Some(Tok::Star) => {
                    self.bump();
                    lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
                }
                Some(Tok::Slash) => {
                    self.bump();
                    lhs = Expr::Div(Box::new(lhs), Box::new(self.unary()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if matches!(self.peek(), Some(Tok::Minus)) {
            self.bump();
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if matches!(self.peek(), Some(Tok::Caret)) {
            self.bump();
            // Exponent at unary level: right associative, and `x^-2` works.
            let exponent = self.unary()?;
            return Ok(Expr::Pow(Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let pos = self.pos();
        match self.bump() {
            Some(Tok::Num(v)) => Ok(Expr::Num(v)),
            Some(Tok::LParen) => {
                let inner = self.sum()?;
                self.expect_rparen()?;
                Ok(inner)
            }
            Some(Tok::Ident(name)) => match name.as_str() {
                "x" => Ok(Expr::Var(Var::X)),
                "t" => Ok(Expr::Var(Var::T)),
                "y" => Ok(Expr::Var(Var::Y)),
                "pi" => Ok(Expr::Num(std::f64::consts::PI)),
                "e" => Ok(Expr::Num(std::f64::consts::E)),
                "sin" | "cos" | "exp" | "log" | "sqrt" => {
                    match self.bump() {
                        Some(Tok::LParen) => {}
                        _ => {
                            return Err(ParseError {
                                pos: self.pos(),
                                msg: format!("expected `(` after `{name}`"),
                            });
                        }
                    }
                    let arg = Box::new(self.sum()?);
                    self.expect_rparen()?;
                    Ok(match name.as_str() {
                        "sin" => Expr::Sin(arg),
                        "cos" => Expr::Cos(arg),
                        "exp" => Expr::Exp(arg),
                        "log" => Expr::Log(arg),
                        _ => Expr::Sqrt(arg),
                    })
                }
                _ => Err(ParseError {
                    pos,
                    msg: format!("unknown identifier `{name}`"),
                }),
            },
            _ => Err(ParseError {
                pos,
                msg: "expected a number, variable, function, or `(`".to_string(),
            }),
        }
    }
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

impl Expr {
    /// Evaluate with every variable bound.
    pub fn eval(&self, b: &Bindings) -> Result<f64, EvalError> {
        match self {
            Expr::Num(v) => Ok(*v),
            Expr::Var(v) => Ok(b.get(*v)),
            Expr::Add(l, r) => Ok(l.eval(b)? + r.eval(b)?),
            Expr::Sub(l, r) => Ok(l.eval(b)? - r.eval(b)?),
            Expr::Mul(l, r) => Ok(l.eval(b)? * r.eval(b)?),
            Expr::Div(l, r) => {
                let num = l.eval(b)?;
                let den = r.eval(b)?;
                if den == 0.0 {
                    return Err(EvalError::DivisionByZero {
                        subexpr: self.to_string(),
                    });
                }
                Ok(num / den)
            }
            Expr::Pow(base, exponent) => {
                let bv = base.eval(b)?;
                let ev = exponent.eval(b)?;
                pow_value(bv, ev).ok_or_else(|| EvalError::PowUndefined {
                    base: bv,
                    exponent: ev,
                    subexpr: self.to_string(),
                })
            }
            Expr::Neg(e) => Ok(-e.eval(b)?),
            Expr::Sin(e) => Ok(e.eval(b)?.sin()),
            Expr::Cos(e) => Ok(e.eval(b)?.cos()),
            Expr::Exp(e) => Ok(e.eval(b)?.exp()),
            Expr::Log(e) => {
                let arg = e.eval(b)?;
                if arg <= 0.0 {
                    return Err(EvalError::LogNonPositive {
                        arg,
                        subexpr: self.to_string(),
                    });
                }
                Ok(arg.ln())
            }
            Expr::Sqrt(e) => {
                let arg = e.eval(b)?;
                if arg < 0.0 {
                    return Err(EvalError::SqrtNegative {
                        arg,
                        subexpr: self.to_string(),
                    });
                }
                Ok(arg.sqrt())
            }
        }
    }

    /// True when the expression references `v`.
    pub fn uses(&self, v: Var) -> bool {
        match self {
            Expr::Num(_) => false,
            Expr::Var(w) => *w == v,
            Expr::Add(l, r) | Expr::Sub(l, r) | Expr::Mul(l, r) | Expr::Div(l, r)
            | Expr::Pow(l, r) => l.uses(v) || r.uses(v),
            Expr::Neg(e) | Expr::Sin(e) | Expr::Cos(e) | Expr::Exp(e) | Expr::Log(e)
            | Expr::Sqrt(e) => e.uses(v),
        }
    }

    /// Replace a variable by a constant, e.g. to restrict `f(x, t, y)` to
    /// the observation plane `y = ell0`.
    pub fn bind(&self, v: Var, value: f64) -> Expr {
        match self {
            Expr::Num(c) => Expr::Num(*c),
            Expr::Var(w) => {
                if *w == v {
                    Expr::Num(value)
                } else {
                    Expr::Var(*w)
                }
            }
            Expr::Add(l, r) => Expr::Add(Box::new(l.bind(v, value)), Box::new(r.bind(v, value))),
            Expr::Sub(l, r) => Expr::Sub(Box::new(l.bind(v, value)), Box::new(r.bind(v, value))),
            Expr::Mul(l, r) => Expr::Mul(Box::new(l.bind(v, value)), Box::new(r.bind(v, value))),
            Expr::Div(l, r) => Expr::Div(Box::new(l.bind(v, value)), Box::new(r.bind(v, value))),
            Expr::Pow(l, r) => Expr::Pow(Box::new(l.bind(v, value)), Box::new(r.bind(v, value))),
            Expr::Neg(e) => Expr::Neg(Box::new(e.bind(v, value))),
            Expr::Sin(e) => Expr::Sin(Box::new(e.bind(v, value))),
            Expr::Cos(e) => Expr::Cos(Box::new(e.bind(v, value))),
            Expr::Exp(e) => Expr::Exp(Box::new(e.bind(v, value))),
            Expr::Log(e) => Expr::Log(Box::new(e.bind(v, value))),
            Expr::Sqrt(e) => Expr::Sqrt(Box::new(e.bind(v, value))),
        }
    }

    /// `order`-fold symbolic derivative with respect to `v`. Order 0 is the
    /// identity.
    pub fn differentiate(&self, v: Var, order: u32) -> Expr {
        let mut e = self.clone();
        for _ in 0..order {
            e = e.d1(v);
        }
        e
    }

    /// Parse an expression from text; same grammar as config files.
    pub fn parse(src: &str) -> Result<Expr, ParseError> {
        parse(src)
    }

    /// Folding sum: collapses numeric operands and drops zero terms, which
    /// keeps programmatically built trees (symbolic forcings, operator
    /// compositions) from ballooning.
    pub fn add(l: Expr, r: Expr) -> Expr {
        add(l, r)
    }

    pub fn sub(l: Expr, r: Expr) -> Expr {
        sub(l, r)
    }

    pub fn mul(l: Expr, r: Expr) -> Expr {
        mul(l, r)
    }

    pub fn div(l: Expr, r: Expr) -> Expr {
        div(l, r)
    }

    pub fn pow(base: Expr, exponent: Expr) -> Expr {
        pow(base, exponent)
    }

    pub fn neg(e: Expr) -> Expr {
        neg(e)
    }

    fn d1(&self, v: Var) -> Expr {
        match self {
            Expr::Num(_) => Expr::Num(0.0),
            Expr::Var(w) => Expr::Num(if *w == v { 1.0 } else { 0.0 }),
            Expr::Add(l, r) => add(l.d1(v), r.d1(v)),
            Expr::Sub(l, r) => sub(l.d1(v), r.d1(v)),
            Expr::Mul(l, r) => add(
                mul(l.d1(v), (**r).clone()),
                mul((**l).clone(), r.d1(v)),
            ),
            Expr::Div(l, r) => div(
                sub(
                    mul(l.d1(v), (**r).clone()),
                    mul((**l).clone(), r.d1(v)),
                ),
                pow((**r).clone(), Expr::Num(2.0)),
            ),
            Expr::Pow(base, exponent) => match &**exponent {
                // Constant exponent: plain power rule, so that d/dt t^4
                // stays finite at t = 0.
                Expr::Num(c) => mul(
                    mul(Expr::Num(*c), pow((**base).clone(), Expr::Num(c - 1.0))),
                    base.d1(v),
                ),
                _ => {
                    // General rule: f^g * (g' log f + g f'/f).
                    let f = (**base).clone();
                    let g = (**exponent).clone();
                    mul(
                        self.clone(),
                        add(
                            mul(exponent.d1(v), Expr::Log(Box::new(f.clone()))),
                            mul(g, div(base.d1(v), f)),
                        ),
                    )
                }
            },
            Expr::Neg(e) => neg(e.d1(v)),
            Expr::Sin(e) => mul(Expr::Cos(e.clone()), e.d1(v)),
            Expr::Cos(e) => neg(mul(Expr::Sin(e.clone()), e.d1(v))),
            Expr::Exp(e) => mul(Expr::Exp(e.clone()), e.d1(v)),
            Expr::Log(e) => div(e.d1(v), (**e).clone()),
            Expr::Sqrt(e) => div(
                e.d1(v),
                mul(Expr::Num(2.0), Expr::Sqrt(e.clone())),
            ),
        }
    }
}

fn pow_value(base: f64, exponent: f64) -> Option<f64> {
    if base == 0.0 && exponent < 0.0 {
        return None;
    }
    if base < 0.0 && exponent.fract() != 0.0 {
        return None;
    }
    Some(base.powf(exponent))
}

// Folding constructors used by differentiation. They drop zero terms, unit
// factors, and fold numeric leaves; they never reorder live subtrees.

fn num_of(e: &Expr) -> Option<f64> {
    match e {
        Expr::Num(v) => Some(*v),
        _ => None,
    }
}

fn add(l: Expr, r: Expr) -> Expr {
    match (num_of(&l), num_of(&r)) {
        (Some(a), Some(b)) => Expr::Num(a + b),
        (Some(0.0), _) => r,
        (_, Some(0.0)) => l,
        _ => Expr::Add(Box::new(l), Box::new(r)),
    }
}

fn sub(l: Expr, r: Expr) -> Expr {
    match (num_of(&l), num_of(&r)) {
        (Some(a), Some(b)) => Expr::Num(a - b),
        (_, Some(0.0)) => l,
        (Some(0.0), _) => neg(r),
        _ => Expr::Sub(Box::new(l), Box::new(r)),
    }
}

fn mul(l: Expr, r: Expr) -> Expr {
    match (num_of(&l), num_of(&r)) {
        (Some(a), Some(b)) => Expr::Num(a * b),
        (Some(0.0), _) | (_, Some(0.0)) => Expr::Num(0.0),
        (Some(1.0), _) => r,
        (_, Some(1.0)) => l,
        _ => Expr::Mul(Box::new(l), Box::new(r)),
    }
}

fn div(l: Expr, r: Expr) -> Expr {
    match (num_of(&l), num_of(&r)) {
        (Some(a), Some(b)) if b != 0.0 => Expr::Num(a / b),
        (Some(0.0), _) => Expr::Num(0.0),
        (_, Some(1.0)) => l,
        _ => Expr::Div(Box::new(l), Box::new(r)),
    }
}

fn pow(base: Expr, exponent: Expr) -> Expr {
    match (num_of(&base), num_of(&exponent)) {
        (Some(b), Some(e)) => match pow_value(b, e) {
            Some(v) => Expr::Num(v),
            None => Expr::Pow(Box::new(base), Box::new(exponent)),
        },
        (_, Some(1.0)) => base,
        (_, Some(0.0)) => Expr::Num(1.0),
        _ => Expr::Pow(Box::new(base), Box::new(exponent)),
    }
}

fn neg(e: Expr) -> Expr {
    match e {
        Expr::Num(v) => Expr::Num(-v),
        Expr::Neg(inner) => *inner,
        _ => Expr::Neg(Box::new(e)),
    }
}

// ---------------------------------------------------------------------------
// Printing
// ---------------------------------------------------------------------------

// Binding strength used for parenthesization: sums 1, products 2, unary
// minus 3, powers 4, atoms 5.
fn prec(e: &Expr) -> u8 {
    match e {
        Expr::Add(..) | Expr::Sub(..) => 1,
        Expr::Mul(..) | Expr::Div(..) => 2,
        Expr::Neg(_) => 3,
        Expr::Num(v) if *v < 0.0 => 3,
        Expr::Pow(..) => 4,
        _ => 5,
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn child(f: &mut fmt::Formatter<'_>, e: &Expr, need_parens: bool) -> fmt::Result {
            if need_parens {
                write!(f, "({e})")
            } else {
                write!(f, "{e}")
            }
        }
        match self {
            Expr::Num(v) => {
                if *v < 0.0 {
                    // Reparses as unary minus applied to the literal.
                    write!(f, "-{}", -*v)
                } else {
                    write!(f, "{v}")
                }
            }
            Expr::Var(v) => write!(f, "{v}"),
            Expr::Add(l, r) => {
                child(f, l, prec(l) < 1)?;
                f.write_str(" + ")?;
                child(f, r, prec(r) <= 1)
            }
            Expr::Sub(l, r) => {
                child(f, l, prec(l) < 1)?;
                f.write_str(" - ")?;
                child(f, r, prec(r) <= 1)
            }
            Expr::Mul(l, r) => {
                child(f, l, prec(l) < 2)?;
                f.write_str(" * ")?;
                child(f, r, prec(r) <= 2)
            }
            Expr::Div(l, r) => {
                child(f, l, prec(l) < 2)?;
                f.write_str(" / ")?;
                child(f, r, prec(r) <= 2)
            }
            Expr::Pow(l, r) => {
                child(f, l, prec(l) <= 4)?;
                f.write_str("^")?;
                child(f, r, prec(r) < 3)
            }
            Expr::Neg(e) => {
                f.write_str("-")?;
                child(f, e, prec(e) < 3)
            }
            Expr::Sin(e) => write!(f, "sin({e})"),
            Expr::Cos(e) => write!(f, "cos({e})"),
            Expr::Exp(e) => write!(f, "exp({e})"),
            Expr::Log(e) => write!(f, "log({e})"),
            Expr::Sqrt(e) => write!(f, "sqrt({e})"),
        }
    }
}
