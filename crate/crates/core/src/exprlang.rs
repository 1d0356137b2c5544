//! Arithmetic expression trees with symbolic differentiation.
//!
//! The grammar is deliberately small: it covers the coefficient functions
//! arising from standard metrics and the free profile functions of the
//! constructions. Trees are immutable and shared via `Arc`, so
//! differentiation can reuse subtrees.
//!
//! Grammar:
//! ```text
//! expr   := term (('+'|'-') term)*
//! term   := factor (('*'|'/') factor)*
//! factor := unary ('^' factor)?          // '^' right-associative
//! unary  := '-'? atom
//! atom   := number | variable | func '(' expr ')' | '(' expr ')'
//! ```

use crate::jets::VJet;
use std::fmt;
use std::sync::Arc;
use thiserror::Error;

/// Variable names for connection-coefficient expressions.
pub const VARS_TR: [&str; 2] = ["t", "r"];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("empty input")]
    Empty,
    #[error("syntax error at offset {offset}: {msg}")]
    Syntax { offset: usize, msg: String },
    #[error("unknown identifier {name} at offset {offset}")]
    UnknownIdentifier { name: String, offset: usize },
    #[error("domain error in `{subtree}`: {msg}")]
    Domain { subtree: String, msg: String },
    #[error("jet arithmetic: {0}")]
    Jet(#[from] crate::jets::JetError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Log,
    Sqrt,
    Sinh,
    Cosh,
    Tanh,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Sinh => "sinh",
            Func::Cosh => "cosh",
            Func::Tanh => "tanh",
        }
    }

    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            "sinh" => Func::Sinh,
            "cosh" => Func::Cosh,
            "tanh" => Func::Tanh,
            _ => return None,
        })
    }
}

/// Immutable expression tree.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(usize, &'static str),
    Neg(Arc<Expr>),
    Add(Arc<Expr>, Arc<Expr>),
    Sub(Arc<Expr>, Arc<Expr>),
    Mul(Arc<Expr>, Arc<Expr>),
    Div(Arc<Expr>, Arc<Expr>),
    Pow(Arc<Expr>, Arc<Expr>),
    Call(Func, Arc<Expr>),
}

/// Parse an expression in the `(t, r)` variables.
pub fn parse(text: &str) -> Result<Expr, ExprError> {
    parse_with_vars(text, &VARS_TR)
}

/// Parse an expression over an explicit variable list. Identifiers that are
/// neither a known function nor one of `vars` are rejected with their byte
/// offset.
pub fn parse_with_vars(text: &str, vars: &[&'static str]) -> Result<Expr, ExprError> {
    let mut p = Parser { bytes: text.as_bytes(), pos: 0, vars };
    p.skip_ws();
    if p.at_end() {
        return Err(ExprError::Empty);
    }
    let e = p.expr()?;
    p.skip_ws();
    if !p.at_end() {
        return Err(ExprError::Syntax {
            offset: p.pos,
            msg: format!("unexpected character '{}'", p.peek_char()),
        });
    }
    Ok(e)
}

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
    vars: &'a [&'static str],
}

impl<'a> Parser<'a> {
    fn at_end(&self) -> bool {
        self.pos >= self.bytes.len()
    }

    fn peek(&self) -> u8 {
        if self.at_end() {
            0
        } else {
            self.bytes[self.pos]
        }
    }

    fn peek_char(&self) -> char {
        self.peek() as char
    }

    fn skip_ws(&mut self) {
        while !self.at_end() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        loop {
            self.skip_ws();
            match self.peek() {
                b'+' => {
                    self.pos += 1;
                    let rhs = self.term()?;
                    lhs = Expr::Add(Arc::new(lhs), Arc::new(rhs));
                }
                b'-' => {
                    self.pos += 1;
                    let rhs = self.term()?;
                    lhs = Expr::Sub(Arc::new(lhs), Arc::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.factor()?;
        loop {
            self.skip_ws();
            match self.peek() {
                b'*' => {
                    self.pos += 1;
                    let rhs = self.factor()?;
                    lhs = Expr::Mul(Arc::new(lhs), Arc::new(rhs));
                }
                b'/' => {
                    self.pos += 1;
                    let rhs = self.factor()?;
                    lhs = Expr::Div(Arc::new(lhs), Arc::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn factor(&mut self) -> Result<Expr, ExprError> {
        let base = self.unary()?;
        self.skip_ws();
        if self.peek() == b'^' {
            self.pos += 1;
            let exponent = self.factor()?;
            return Ok(Expr::Pow(Arc::new(base), Arc::new(exponent)));
        }
        Ok(base)
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        self.skip_ws();
        if self.peek() == b'-' {
            self.pos += 1;
            let inner = self.atom()?;
            return Ok(Expr::Neg(Arc::new(inner)));
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Expr, ExprError> {
        self.skip_ws();
        if self.at_end() {
            return Err(ExprError::Syntax {
                offset: self.pos,
                msg: "unexpected end of input".into(),
            });
        }
        let c = self.peek();
        if c == b'(' {
            self.pos += 1;
            let inner = self.expr()?;
            self.skip_ws();
            if self.peek() != b')' {
                return Err(ExprError::Syntax {
                    offset: self.pos,
                    msg: "expected ')'".into(),
                });
            }
            self.pos += 1;
            return Ok(inner);
        }
        if c.is_ascii_digit() {
            return self.number();
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            return self.identifier();
        }
        Err(ExprError::Syntax {
            offset: self.pos,
            msg: format!("unexpected character '{}'", self.peek_char()),
        })
    }

    fn number(&mut self) -> Result<Expr, ExprError> {
        let start = self.pos;
        while self.peek().is_ascii_digit() {
            self.pos += 1;
        }
        if self.peek() == b'.' {
            self.pos += 1;
            while self.peek().is_ascii_digit() {
                self.pos += 1;
            }
        }
        if self.peek() == b'e' || self.peek() == b'E' {
            let mark = self.pos;
            self.pos += 1;
            if self.peek() == b'+' || self.peek() == b'-' {
                self.pos += 1;
            }
            if self.peek().is_ascii_digit() {
                while self.peek().is_ascii_digit() {
                    self.pos += 1;
                }
            } else {
                self.pos = mark;
            }
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap();
        match text.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(Expr::Const(v)),
            _ => Err(ExprError::Syntax {
                offset: start,
                msg: format!("invalid number literal '{text}'"),
            }),
        }
    }

    fn identifier(&mut self) -> Result<Expr, ExprError> {
        let start = self.pos;
        while self.peek().is_ascii_alphanumeric() || self.peek() == b'_' {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap();
        if let Some(idx) = self.vars.iter().position(|v| *v == name) {
            return Ok(Expr::Var(idx, self.vars[idx]));
        }
        if let Some(func) = Func::from_name(name) {
            self.skip_ws();
            if self.peek() != b'(' {
                return Err(ExprError::Syntax {
                    offset: self.pos,
                    msg: format!("expected '(' after function '{name}'"),
                });
            }
            self.pos += 1;
            let arg = self.expr()?;
            self.skip_ws();
            if self.peek() != b')' {
                return Err(ExprError::Syntax {
                    offset: self.pos,
                    msg: "expected ')'".into(),
                });
            }
            self.pos += 1;
            return Ok(Expr::Call(func, Arc::new(arg)));
        }
        Err(ExprError::UnknownIdentifier { name: name.to_string(), offset: start })
    }
}

fn domain_err(subtree: &Expr, msg: impl Into<String>) -> ExprError {
    ExprError::Domain { subtree: subtree.to_string(), msg: msg.into() }
}

/// Exponent value usable with integer exponentiation.
fn as_small_int(v: f64) -> Option<i32> {
    if v.fract() == 0.0 && v.abs() <= 64.0 {
        Some(v as i32)
    } else {
        None
    }
}

impl Expr {
    /// IEEE double evaluation at the given variable values.
    pub fn eval(&self, vars: &[f64]) -> Result<f64, ExprError> {
        let v = match self {
            Expr::Const(c) => *c,
            Expr::Var(i, _) => vars[*i],
            Expr::Neg(a) => -a.eval(vars)?,
            Expr::Add(a, b) => a.eval(vars)? + b.eval(vars)?,
            Expr::Sub(a, b) => a.eval(vars)? - b.eval(vars)?,
            Expr::Mul(a, b) => a.eval(vars)? * b.eval(vars)?,
            Expr::Div(a, b) => {
                let den = b.eval(vars)?;
                if den == 0.0 {
                    return Err(domain_err(self, "division by zero"));
                }
                a.eval(vars)? / den
            }
            Expr::Pow(a, b) => {
                let base = a.eval(vars)?;
                let exp = b.eval(vars)?;
                match as_small_int(exp) {
                    Some(n) => {
                        if base == 0.0 && n < 0 {
                            return Err(domain_err(self, "division by zero"));
                        }
                        base.powi(n)
                    }
                    None => {
                        if base <= 0.0 {
                            return Err(domain_err(
                                self,
                                "non-integer power of non-positive base",
                            ));
                        }
                        base.powf(exp)
                    }
                }
            }
            Expr::Call(f, a) => {
                let x = a.eval(vars)?;
                match f {
                    Func::Sin => x.sin(),
                    Func::Cos => x.cos(),
                    Func::Tan => x.tan(),
                    Func::Exp => x.exp(),
                    Func::Log => {
                        if x <= 0.0 {
                            return Err(domain_err(self, "log of non-positive value"));
                        }
                        x.ln()
                    }
                    Func::Sqrt => {
                        if x < 0.0 {
                            return Err(domain_err(self, "sqrt of negative value"));
                        }
                        x.sqrt()
                    }
                    Func::Sinh => x.sinh(),
                    Func::Cosh => x.cosh(),
                    Func::Tanh => x.tanh(),
                }
            }
        };
        if !v.is_finite() {
            return Err(domain_err(self, "non-finite result"));
        }
        Ok(v)
    }

    /// Evaluation with jet-valued variables.
    pub fn eval_jet(&self, vars: &[VJet]) -> Result<VJet, ExprError> {
        Ok(match self {
            Expr::Const(c) => VJet::constant(*c, vars[0].order()),
            Expr::Var(i, _) => vars[*i].clone(),
            Expr::Neg(a) => -a.eval_jet(vars)?,
            Expr::Add(a, b) => &a.eval_jet(vars)? + &b.eval_jet(vars)?,
            Expr::Sub(a, b) => &a.eval_jet(vars)? - &b.eval_jet(vars)?,
            Expr::Mul(a, b) => &a.eval_jet(vars)? * &b.eval_jet(vars)?,
            Expr::Div(a, b) => a
                .eval_jet(vars)?
                .div(&b.eval_jet(vars)?)
                .map_err(|e| domain_err(self, e.to_string()))?,
            Expr::Pow(a, b) => {
                let base = a.eval_jet(vars)?;
                match &**b {
                    Expr::Const(c) => match as_small_int(*c) {
                        Some(n) => base
                            .powi(n)
                            .map_err(|e| domain_err(self, e.to_string()))?,
                        None => base
                            .powf(*c)
                            .map_err(|e| domain_err(self, e.to_string()))?,
                    },
                    Expr::Neg(inner) => {
                        if let Expr::Const(c) = &**inner {
                            let c = -*c;
                            match as_small_int(c) {
                                Some(n) => base
                                    .powi(n)
                                    .map_err(|e| domain_err(self, e.to_string()))?,
                                None => base
                                    .powf(c)
                                    .map_err(|e| domain_err(self, e.to_string()))?,
                            }
                        } else {
                            let exp = b.eval_jet(vars)?;
                            let ln =
                                base.ln().map_err(|e| domain_err(self, e.to_string()))?;
                            (&exp * &ln).exp()
                        }
                    }
                    _ => {
                        let exp = b.eval_jet(vars)?;
                        let ln = base.ln().map_err(|e| domain_err(self, e.to_string()))?;
                        (&exp * &ln).exp()
                    }
                }
            }
            Expr::Call(f, a) => {
                let x = a.eval_jet(vars)?;
                match f {
                    Func::Sin => x.sin(),
                    Func::Cos => x.cos(),
                    Func::Tan => x.tan().map_err(|e| domain_err(self, e.to_string()))?,
                    Func::Exp => x.exp(),
                    Func::Log => x.ln().map_err(|e| domain_err(self, e.to_string()))?,
                    Func::Sqrt => x.sqrt().map_err(|e| domain_err(self, e.to_string()))?,
                    Func::Sinh => x.sinh(),
                    Func::Cosh => x.cosh(),
                    Func::Tanh => x.tanh().map_err(|e| domain_err(self, e.to_string()))?,
                }
            }
        })
    }

    /// Exact symbolic derivative with respect to variable index `var`,
    /// constant-folded after construction.
    pub fn diff(&self, var: usize) -> Expr {
        let d = self.diff_raw(var);
        fold(&d)
    }

    fn diff_raw(&self, var: usize) -> Expr {
        use Expr::*;
        match self {
            Const(_) => Const(0.0),
            Var(i, _) => Const(if *i == var { 1.0 } else { 0.0 }),
            Neg(a) => Neg(Arc::new(a.diff_raw(var))),
            Add(a, b) => Add(Arc::new(a.diff_raw(var)), Arc::new(b.diff_raw(var))),
            Sub(a, b) => Sub(Arc::new(a.diff_raw(var)), Arc::new(b.diff_raw(var))),
            Mul(a, b) => Add(
                Arc::new(Mul(Arc::new(a.diff_raw(var)), b.clone())),
                Arc::new(Mul(a.clone(), Arc::new(b.diff_raw(var)))),
            ),
            Div(a, b) => Div(
                Arc::new(Sub(
                    Arc::new(Mul(Arc::new(a.diff_raw(var)), b.clone())),
                    Arc::new(Mul(a.clone(), Arc::new(b.diff_raw(var)))),
                )),
                Arc::new(Mul(b.clone(), b.clone())),
            ),
            Pow(a, b) => {
                if let Const(c) = &**b {
                    // d(f^c) = c f^(c-1) f'
                    Mul(
                        Arc::new(Mul(
                            Arc::new(Const(*c)),
                            Arc::new(Pow(a.clone(), Arc::new(Const(c - 1.0)))),
                        )),
                        Arc::new(a.diff_raw(var)),
                    )
                } else {
                    // d(f^g) = f^g (g' log f + g f'/f)
                    Mul(
                        Arc::new(self.clone()),
                        Arc::new(Add(
                            Arc::new(Mul(
                                Arc::new(b.diff_raw(var)),
                                Arc::new(Call(Func::Log, a.clone())),
                            )),
                            Arc::new(Div(
                                Arc::new(Mul(b.clone(), Arc::new(a.diff_raw(var)))),
                                a.clone(),
                            )),
                        )),
                    )
                }
            }
            Call(f, a) => {
                let inner = Arc::new(a.diff_raw(var));
                let outer = match f {
                    Func::Sin => Call(Func::Cos, a.clone()),
                    Func::Cos => Neg(Arc::new(Call(Func::Sin, a.clone()))),
                    Func::Tan => {
                        // 1 + tan^2
                        Add(
                            Arc::new(Const(1.0)),
                            Arc::new(Mul(
                                Arc::new(Call(Func::Tan, a.clone())),
                                Arc::new(Call(Func::Tan, a.clone())),
                            )),
                        )
                    }
                    Func::Exp => Call(Func::Exp, a.clone()),
                    Func::Log => Div(Arc::new(Const(1.0)), a.clone()),
                    Func::Sqrt => Div(
                        Arc::new(Const(0.5)),
                        Arc::new(Call(Func::Sqrt, a.clone())),
                    ),
                    Func::Sinh => Call(Func::Cosh, a.clone()),
                    Func::Cosh => Call(Func::Sinh, a.clone()),
                    Func::Tanh => {
                        // 1 - tanh^2
                        Sub(
                            Arc::new(Const(1.0)),
                            Arc::new(Mul(
                                Arc::new(Call(Func::Tanh, a.clone())),
                                Arc::new(Call(Func::Tanh, a.clone())),
                            )),
                        )
                    }
                };
                Mul(Arc::new(outer), inner)
            }
        }
    }

    /// True when the expression is the literal constant 0.
    pub fn is_zero(&self) -> bool {
        matches!(self, Expr::Const(c) if *c == 0.0)
    }
}

/// Replace every `Var(i)` node by `repl[i]`.
pub fn subst(e: &Expr, repl: &[Expr]) -> Expr {
    match e {
        Expr::Const(_) => e.clone(),
        Expr::Var(i, _) => repl[*i].clone(),
        Expr::Neg(a) => Expr::Neg(Arc::new(subst(a, repl))),
        Expr::Add(a, b) => Expr::Add(Arc::new(subst(a, repl)), Arc::new(subst(b, repl))),
        Expr::Sub(a, b) => Expr::Sub(Arc::new(subst(a, repl)), Arc::new(subst(b, repl))),
        Expr::Mul(a, b) => Expr::Mul(Arc::new(subst(a, repl)), Arc::new(subst(b, repl))),
        Expr::Div(a, b) => Expr::Div(Arc::new(subst(a, repl)), Arc::new(subst(b, repl))),
        Expr::Pow(a, b) => Expr::Pow(Arc::new(subst(a, repl)), Arc::new(subst(b, repl))),
        Expr::Call(f, a) => Expr::Call(*f, Arc::new(subst(a, repl))),
    }
}

/// Shallow constant folding: 0*x -> 0, x+0 -> x, 1*x -> x, plus literal
/// arithmetic. Applied bottom-up; no deeper simplification.
pub fn fold(e: &Expr) -> Expr {
    use Expr::*;
    match e {
        Const(_) | Var(..) => e.clone(),
        Neg(a) => {
            let a = fold(a);
            match a {
                Const(c) => Const(-c),
                Neg(inner) => (*inner).clone(),
                _ => Neg(Arc::new(a)),
            }
        }
        Add(a, b) => {
            let (a, b) = (fold(a), fold(b));
            match (&a, &b) {
                (Const(x), Const(y)) => Const(x + y),
                (Const(x), _) if *x == 0.0 => b,
                (_, Const(y)) if *y == 0.0 => a,
                _ => Add(Arc::new(a), Arc::new(b)),
            }
        }
        Sub(a, b) => {
            let (a, b) = (fold(a), fold(b));
            match (&a, &b) {
                (Const(x), Const(y)) => Const(x - y),
                (_, Const(y)) if *y == 0.0 => a,
                (Const(x), _) if *x == 0.0 => Neg(Arc::new(b)),
                _ => Sub(Arc::new(a), Arc::new(b)),
            }
        }
        Mul(a, b) => {
            let (a, b) = (fold(a), fold(b));
            match (&a, &b) {
                (Const(x), Const(y)) => Const(x * y),
                (Const(x), _) if *x == 0.0 => Const(0.0),
                (_, Const(y)) if *y == 0.0 => Const(0.0),
                (Const(x), _) if *x == 1.0 => b,
                (_, Const(y)) if *y == 1.0 => a,
                _ => Mul(Arc::new(a), Arc::new(b)),
            }
        }
        Div(a, b) => {
            let (a, b) = (fold(a), fold(b));
            match (&a, &b) {
                (Const(x), _) if *x == 0.0 && !b.is_zero() => Const(0.0),
                (_, Const(y)) if *y == 1.0 => a,
                (Const(x), Const(y)) if *y != 0.0 => Const(x / y),
                _ => Div(Arc::new(a), Arc::new(b)),
            }
        }
        Pow(a, b) => {
            let (a, b) = (fold(a), fold(b));
            match (&a, &b) {
                (_, Const(y)) if *y == 1.0 => a,
                (_, Const(y)) if *y == 0.0 => Const(1.0),
                (Const(x), Const(y)) => {
                    let v = if y.fract() == 0.0 { x.powi(*y as i32) } else { x.powf(*y) };
                    if v.is_finite() {
                        Const(v)
                    } else {
                        Pow(Arc::new(a), Arc::new(b))
                    }
                }
                _ => Pow(Arc::new(a), Arc::new(b)),
            }
        }
        Call(f, a) => Call(*f, Arc::new(fold(a))),
    }
}

/// Shared expression handle with arithmetic operators for building derived
/// scalar fields symbolically. Each operation applies the same shallow
/// constant folding as [`fold`], so composite trees stay compact.
#[derive(Clone, Debug)]
pub struct Ex(pub Arc<Expr>);

impl Ex {
    pub fn new(e: Expr) -> Ex {
        Ex(Arc::new(e))
    }

    pub fn konst(v: f64) -> Ex {
        Ex::new(Expr::Const(v))
    }

    pub fn var(idx: usize, name: &'static str) -> Ex {
        Ex::new(Expr::Var(idx, name))
    }

    pub fn expr(&self) -> &Expr {
        &self.0
    }

    pub fn eval(&self, vars: &[f64]) -> Result<f64, ExprError> {
        self.0.eval(vars)
    }

    pub fn eval_jet(&self, vars: &[VJet]) -> Result<VJet, ExprError> {
        self.0.eval_jet(vars)
    }

    pub fn diff(&self, var: usize) -> Ex {
        Ex::new(self.0.diff(var))
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    fn top(e: Expr) -> Ex {
        // Children are already folded; one shallow pass suffices.
        Ex::new(fold_top(e))
    }

    pub fn neg(&self) -> Ex {
        Ex::top(Expr::Neg(self.0.clone()))
    }

    pub fn sq(&self) -> Ex {
        self * self
    }
}

fn fold_top(e: Expr) -> Expr {
    use Expr::*;
    match &e {
        Neg(a) => match &**a {
            Const(c) => Const(-c),
            Neg(inner) => (**inner).clone(),
            _ => e,
        },
        Add(a, b) => match (&**a, &**b) {
            (Const(x), Const(y)) => Const(x + y),
            (Const(x), other) if *x == 0.0 => other.clone(),
            (other, Const(y)) if *y == 0.0 => other.clone(),
            _ => e,
        },
        Sub(a, b) => match (&**a, &**b) {
            (Const(x), Const(y)) => Const(x - y),
            (other, Const(y)) if *y == 0.0 => other.clone(),
            (Const(x), _) if *x == 0.0 => Neg(b.clone()),
            _ => e,
        },
        Mul(a, b) => match (&**a, &**b) {
            (Const(x), Const(y)) => Const(x * y),
            (Const(x), _) | (_, Const(x)) if *x == 0.0 => Const(0.0),
            (Const(x), other) if *x == 1.0 => other.clone(),
            (other, Const(y)) if *y == 1.0 => other.clone(),
            _ => e,
        },
        Div(a, b) => match (&**a, &**b) {
            (Const(x), d) if *x == 0.0 && !d.is_zero() => Const(0.0),
            (other, Const(y)) if *y == 1.0 => other.clone(),
            (Const(x), Const(y)) if *y != 0.0 => Const(x / y),
            _ => e,
        },
        _ => e,
    }
}

macro_rules! ex_binop {
    ($trait:ident, $method:ident, $node:ident) => {
        impl std::ops::$trait<&Ex> for &Ex {
            type Output = Ex;
            fn $method(self, rhs: &Ex) -> Ex {
                Ex::top(Expr::$node(self.0.clone(), rhs.0.clone()))
            }
        }
        impl std::ops::$trait<Ex> for Ex {
            type Output = Ex;
            fn $method(self, rhs: Ex) -> Ex {
                (&self).$method(&rhs)
            }
        }
        impl std::ops::$trait<&Ex> for Ex {
            type Output = Ex;
            fn $method(self, rhs: &Ex) -> Ex {
                (&self).$method(rhs)
            }
        }
        impl std::ops::$trait<Ex> for &Ex {
            type Output = Ex;
            fn $method(self, rhs: Ex) -> Ex {
                self.$method(&rhs)
            }
        }
        impl std::ops::$trait<f64> for &Ex {
            type Output = Ex;
            fn $method(self, rhs: f64) -> Ex {
                self.$method(&Ex::konst(rhs))
            }
        }
        impl std::ops::$trait<f64> for Ex {
            type Output = Ex;
            fn $method(self, rhs: f64) -> Ex {
                (&self).$method(&Ex::konst(rhs))
            }
        }
        impl std::ops::$trait<&Ex> for f64 {
            type Output = Ex;
            fn $method(self, rhs: &Ex) -> Ex {
                (&Ex::konst(self)).$method(rhs)
            }
        }
        impl std::ops::$trait<Ex> for f64 {
            type Output = Ex;
            fn $method(self, rhs: Ex) -> Ex {
                (&Ex::konst(self)).$method(&rhs)
            }
        }
    };
}

ex_binop!(Add, add, Add);
ex_binop!(Sub, sub, Sub);
ex_binop!(Mul, mul, Mul);
ex_binop!(Div, div, Div);

// Precedence levels for printing: additive 1, multiplicative 2, power 3,
// atoms/unary 4. Matches the parsing grammar so printed forms re-parse to
// evaluation-equivalent trees.
fn prec(e: &Expr) -> u8 {
    match e {
        Expr::Add(..) | Expr::Sub(..) => 1,
        Expr::Mul(..) | Expr::Div(..) => 2,
        Expr::Pow(..) => 3,
        Expr::Neg(..) => 2, // prints as '-' atom; treat like a product
        _ => 4,
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn child(
            f: &mut fmt::Formatter<'_>,
            e: &Expr,
            min_prec: u8,
        ) -> fmt::Result {
            if prec(e) < min_prec {
                write!(f, "({e})")
            } else {
                write!(f, "{e}")
            }
        }
        match self {
            Expr::Const(c) => {
                if *c < 0.0 || c.is_sign_negative() {
                    write!(f, "({c})")
                } else {
                    write!(f, "{c}")
                }
            }
            Expr::Var(_, name) => write!(f, "{name}"),
            Expr::Neg(a) => {
                write!(f, "-")?;
                child(f, a, 4)
            }
            Expr::Add(a, b) => {
                child(f, a, 1)?;
                write!(f, " + ")?;
                child(f, b, 2)
            }
            Expr::Sub(a, b) => {
                child(f, a, 1)?;
                write!(f, " - ")?;
                child(f, b, 2)
            }
            Expr::Mul(a, b) => {
                child(f, a, 2)?;
                write!(f, "*")?;
                child(f, b, 3)
            }
            Expr::Div(a, b) => {
                child(f, a, 2)?;
                write!(f, "/")?;
                child(f, b, 3)
            }
            Expr::Pow(a, b) => {
                child(f, a, 4)?;
                write!(f, "^")?;
                child(f, b, 3)
            }
            Expr::Call(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn grammar_examples() {
        let e = parse("1/r").unwrap();
        assert!(matches!(&e, Expr::Div(a, b)
            if matches!(&**a, Expr::Const(c) if *c == 1.0)
            && matches!(&**b, Expr::Var(1, "r"))));

        // m*(r-2*m)/r^3 with m = 1: left-associative */, '^' tightest.
        let e = parse("1*(r-2*1)/r^3").unwrap();
        let at = |t, r| e.eval(&[t, r]).unwrap();
        assert!((at(0.0, 3.0) - (3.0 - 2.0) / 27.0).abs() < 1e-15);

        let err = parse("sin(q)").unwrap_err();
        assert_eq!(err.to_string(), "unknown identifier q at offset 4");

        assert!(matches!(parse(""), Err(ExprError::Empty)));
        assert!(matches!(parse("   "), Err(ExprError::Empty)));
        assert!(matches!(parse("sin("), Err(ExprError::Syntax { .. })));
        assert!(matches!(parse("1 +"), Err(ExprError::Syntax { .. })));
    }

    #[test]
    fn eval_examples() {
        assert_eq!(parse("r^2").unwrap().eval(&[0.0, 3.0]).unwrap(), 9.0);
        assert_eq!(parse("exp(t)*r").unwrap().eval(&[0.0, 5.0]).unwrap(), 5.0);
        let err = parse("1/r").unwrap().eval(&[0.0, 0.0]).unwrap_err();
        assert!(matches!(err, ExprError::Domain { .. }));
        assert!(err.to_string().contains("1/r"));
        let err = parse("log(t)").unwrap().eval(&[-1.0, 0.0]).unwrap_err();
        assert!(matches!(err, ExprError::Domain { .. }));
    }

    #[test]
    fn power_binds_tightest_and_right_assoc() {
        // 2*r^3 = 2*(r^3)
        assert_eq!(parse("2*r^3").unwrap().eval(&[0.0, 2.0]).unwrap(), 16.0);
        // r^2^3 = r^(2^3) = r^8 (right-associative)
        assert_eq!(parse("r^2^3").unwrap().eval(&[0.0, 2.0]).unwrap(), 256.0);
        // unary minus binds below '^' per the grammar: -r^2 = (-r)^2
        assert_eq!(parse("-r^2").unwrap().eval(&[0.0, 3.0]).unwrap(), 9.0);
        // negative exponent
        assert_eq!(parse("r^-2").unwrap().eval(&[0.0, 2.0]).unwrap(), 0.25);
    }

    #[test]
    fn diff_examples() {
        let e = parse("r^2").unwrap();
        let d = e.diff(1);
        assert!((d.eval(&[0.0, 3.0]).unwrap() - 6.0).abs() < 1e-15);
        let e = parse("t*r").unwrap();
        assert_eq!(e.diff(0).eval(&[9.0, 7.0]).unwrap(), 7.0);
    }

    fn fd(e: &Expr, var: usize, at: [f64; 2], h: f64) -> f64 {
        let d = |h: f64| {
            let mut p = at;
            let mut m = at;
            p[var] += h;
            m[var] -= h;
            (e.eval(&p).unwrap() - e.eval(&m).unwrap()) / (2.0 * h)
        };
        (4.0 * d(h / 2.0) - d(h)) / 3.0
    }

    #[test]
    fn diff_matches_finite_differences_at_random_points() {
        let exprs = [
            "exp(t)*sin(r) + r^3/(1+t^2)",
            "sqrt(1+t^2+r^2)",
            "log(2+sin(t))*cosh(r/2)",
            "t^2*r - r/(t-4)",
            "tanh(t*r)/(2+cos(r))",
        ];
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for src in exprs {
            let e = parse(src).unwrap();
            for var in 0..2 {
                let d = e.diff(var);
                for _ in 0..50 {
                    let at = [rng.gen_range(-1.5..1.5), rng.gen_range(0.5..2.5)];
                    let want = fd(&e, var, at, 1e-4);
                    let got = d.eval(&at).unwrap();
                    assert!(
                        (got - want).abs() <= 1e-7 * want.abs().max(1.0),
                        "{src} d/d{var} at {at:?}: {got} vs {want}"
                    );
                }
            }
        }
    }

    #[test]
    fn mixed_partials_commute() {
        let e = parse("exp(t*r)*sin(r) + sqrt(1+t^2)").unwrap();
        let dtr = e.diff(0).diff(1);
        let drt = e.diff(1).diff(0);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..30 {
            let at = [rng.gen_range(-1.0..1.0), rng.gen_range(0.2..2.0)];
            let a = dtr.eval(&at).unwrap();
            let b = drt.eval(&at).unwrap();
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn linearity_of_diff() {
        let e1 = parse("sin(t)*r").unwrap();
        let e2 = parse("exp(r)/(2+t)").unwrap();
        let combo = parse("2.5*(sin(t)*r) - 1.25*(exp(r)/(2+t))").unwrap();
        let d = combo.diff(0);
        let d1 = e1.diff(0);
        let d2 = e2.diff(0);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let at = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let want = 2.5 * d1.eval(&at).unwrap() - 1.25 * d2.eval(&at).unwrap();
            let got = d.eval(&at).unwrap();
            assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0));
        }
    }

    #[test]
    fn custom_variable_lists() {
        let e = parse_with_vars("q^2 + 1/q", &["q"]).unwrap();
        assert_eq!(e.eval(&[2.0]).unwrap(), 4.5);
        let err = parse_with_vars("t + 1", &["q"]).unwrap_err();
        assert!(matches!(err, ExprError::UnknownIdentifier { .. }));
    }

    #[test]
    fn folding_keeps_derivatives_small() {
        let e = parse("t*r").unwrap();
        // d/dt (t*r) = 1*r + t*0 -> r
        assert_eq!(e.diff(0), parse("r").unwrap());
        let e = parse("r^2").unwrap();
        match e.diff(1) {
            Expr::Mul(..) => {}
            other => panic!("expected folded product, got {other:?}"),
        }
    }

    // Random expression generator for the print/parse round-trip.
    fn random_expr(rng: &mut impl Rng, depth: usize) -> Expr {
        use std::sync::Arc;
        if depth == 0 || rng.gen_bool(0.3) {
            return match rng.gen_range(0..3) {
                0 => Expr::Const((rng.gen_range(-40..40) as f64) / 8.0),
                1 => Expr::Var(0, "t"),
                _ => Expr::Var(1, "r"),
            };
        }
        let a = Arc::new(random_expr(rng, depth - 1));
        let b = Arc::new(random_expr(rng, depth - 1));
        match rng.gen_range(0..8) {
            0 => Expr::Add(a, b),
            1 => Expr::Sub(a, b),
            2 => Expr::Mul(a, b),
            3 => Expr::Div(a, b),
            4 => Expr::Neg(a),
            5 => Expr::Pow(a, Arc::new(Expr::Const(rng.gen_range(1..4) as f64))),
            6 => Expr::Call(Func::Sin, a),
            _ => Expr::Call(Func::Exp, a),
        }
    }

    #[test]
    fn print_parse_round_trip() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        let mut checked = 0;
        for _ in 0..300 {
            let e = random_expr(&mut rng, 4);
            let printed = e.to_string();
            let reparsed = parse(&printed)
                .unwrap_or_else(|err| panic!("reparse of `{printed}` failed: {err}"));
            for _ in 0..5 {
                let at = [rng.gen_range(0.3..1.7), rng.gen_range(0.3..1.7)];
                match (e.eval(&at), reparsed.eval(&at)) {
                    (Ok(a), Ok(b)) => {
                        assert!(
                            (a - b).abs() <= 1e-12 * a.abs().max(1.0),
                            "`{printed}` at {at:?}: {a} vs {b}"
                        );
                        checked += 1;
                    }
                    (Err(_), Err(_)) => {}
                    (a, b) => panic!("`{printed}` at {at:?}: {a:?} vs {b:?}"),
                }
            }
        }
        assert!(checked > 200);
    }
}
