//! The equation model: kernels and right-hand sides as parsed arithmetic
//! expressions, problem descriptions for the three equation families, path
//! weights (the integrands of the series terms), grid-based norm reports,
//! and validity checks.
//!
//! # Expression language
//!
//! Kernels and right-hand sides are written in a small arithmetic language:
//!
//! ```text
//! expr   := term (('+'|'-') term)*
//! term   := factor (('*'|'/') factor)*
//! factor := unary ('^' factor)?
//! unary  := '-' unary | atom
//! atom   := number | ident | ident '(' expr ')' | '(' expr ')'
//! ```
//!
//! Identifiers are `t`, `s`, `u`, `v` (variables), `pi`, `e` (constants),
//! and the functions `exp`, `log` (natural logarithm), `sin`, `cos`,
//! `sqrt`, `abs`. Exponentiation is right-associative and, per the grammar,
//! applies to a whole unary: `-2^2` parses as `(-2)^2`. Variables bind by
//! position — `t`/`u` name the first argument and `s`/`v` the second — so
//! `"t*s"` and `"u*v"` denote the same two-argument kernel.
//!
//! # Families
//!
//! * Volterra: `x(t) = f(t) + lambda * integral_0^t K(t,s) x(s) ds` on
//!   `[0, T]`.
//! * Fredholm: `x(u) = f(u) + lambda * integral_V K(u,v) x(v) nu(dv)` with
//!   `V = [0,1]^d` and `nu` the uniform probability measure. For `d >= 2`
//!   the expressions act coordinatewise and the kernel/right-hand side are
//!   the products over coordinates.
//! * Abel-Volterra: `x(t) = f(t) + lambda * integral_0^t K(t,s)
//!   (t-s)^(-alpha) x(s) ds`; the stored kernel expression is the smooth
//!   factor `K` only — the weak singularity belongs to the family.

use std::fmt;

use crate::error::{Error, Result};
use crate::sampling::SimplexPoint;

// ---------------------------------------------------------------------------
// Expression AST
// ---------------------------------------------------------------------------

/// Variable identifier. `T`/`U` evaluate to the first argument and `S`/`V`
/// to the second; the spelling is kept so printing round-trips.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarName {
    T,
    S,
    U,
    V,
}

impl VarName {
    fn slot(self) -> usize {
        match self {
            VarName::T | VarName::U => 0,
            VarName::S | VarName::V => 1,
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            VarName::T => "t",
            VarName::S => "s",
            VarName::U => "u",
            VarName::V => "v",
        }
    }
}

/// Named mathematical constant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstName {
    Pi,
    E,
}

impl ConstName {
    fn value(self) -> f64 {
        match self {
            ConstName::Pi => std::f64::consts::PI,
            ConstName::E => std::f64::consts::E,
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            ConstName::Pi => "pi",
            ConstName::E => "e",
        }
    }
}

/// Binary arithmetic operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

/// Built-in unary function.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Exp,
    Log,
    Sin,
    Cos,
    Sqrt,
    Abs,
}

impl Func {
    fn as_str(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
        }
    }
}

/// Parsed arithmetic expression over at most two positional arguments.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Number(f64),
    Variable(VarName),
    Constant(ConstName),
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

impl Expr {
    /// True when the expression references no variables (its value does not
    /// depend on the evaluation point).
    pub fn is_constant(&self) -> bool {
        match self {
            Expr::Number(_) | Expr::Constant(_) => true,
            Expr::Variable(_) => false,
            Expr::Neg(inner) | Expr::Call(_, inner) => inner.is_constant(),
            Expr::Binary(_, lhs, rhs) => lhs.is_constant() && rhs.is_constant(),
        }
    }

    /// Evaluate as a one-argument expression (a right-hand side `f(t)`).
    /// Using `s`/`v` here is an evaluation error.
    pub fn eval_unary(&self, x: f64) -> Result<f64> {
        ensure_finite(self.eval_in(x, None)?)
    }

    /// Evaluate as a two-argument expression (a kernel `K(a, b)`).
    pub fn eval_binary(&self, a: f64, b: f64) -> Result<f64> {
        ensure_finite(self.eval_in(a, Some(b))?)
    }

    fn eval_in(&self, first: f64, second: Option<f64>) -> Result<f64> {
        match self {
            Expr::Number(x) => Ok(*x),
            Expr::Variable(v) => {
                if v.slot() == 0 {
                    Ok(first)
                } else {
                    second.ok_or_else(|| {
                        Error::Eval(format!(
                            "variable `{}` names the second argument, but the expression is \
                             evaluated with a single argument",
                            v.as_str()
                        ))
                    })
                }
            }
            Expr::Constant(c) => Ok(c.value()),
            Expr::Neg(inner) => Ok(-inner.eval_in(first, second)?),
            Expr::Binary(op, lhs, rhs) => {
                let a = lhs.eval_in(first, second)?;
                let b = rhs.eval_in(first, second)?;
                match op {
                    BinOp::Add => Ok(a + b),
                    BinOp::Sub => Ok(a - b),
                    BinOp::Mul => Ok(a * b),
                    BinOp::Div => {
                        if b == 0.0 {
                            Err(Error::Eval(format!("division by zero ({a} / 0)")))
                        } else {
                            Ok(a / b)
                        }
                    }
                    BinOp::Pow => {
                        let r = a.powf(b);
                        if r.is_nan() {
                            Err(Error::Eval(format!("{a} ^ {b} is undefined")))
                        } else {
                            Ok(r)
                        }
                    }
                }
            }
            Expr::Call(func, arg) => {
                let x = arg.eval_in(first, second)?;
                match func {
                    Func::Exp => Ok(x.exp()),
                    Func::Log => {
                        if x > 0.0 {
                            Ok(x.ln())
                        } else {
                            Err(Error::Eval(format!("log of non-positive value {x}")))
                        }
                    }
                    Func::Sin => Ok(x.sin()),
                    Func::Cos => Ok(x.cos()),
                    Func::Sqrt => {
                        if x >= 0.0 {
                            Ok(x.sqrt())
                        } else {
                            Err(Error::Eval(format!("sqrt of negative value {x}")))
                        }
                    }
                    Func::Abs => Ok(x.abs()),
                }
            }
        }
    }
}

fn ensure_finite(v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Eval(format!(
            "expression evaluated to a non-finite value ({v})"
        )))
    }
}

// ---------------------------------------------------------------------------
// Printing
// ---------------------------------------------------------------------------

/// Binding strength used when printing: higher values need no parentheses
/// inside lower-strength contexts. Matches the parse grammar exactly, so
/// `parse(expr.to_string())` reproduces the tree.
fn print_prec(e: &Expr) -> u8 {
    match e {
        Expr::Binary(BinOp::Add | BinOp::Sub, ..) => 0,
        Expr::Binary(BinOp::Mul | BinOp::Div, ..) => 1,
        Expr::Binary(BinOp::Pow, ..) => 2,
        Expr::Neg(_) => 3,
        // A hand-built negative literal prints with a leading minus and must
        // be treated like a negation for placement purposes.
        Expr::Number(x) if *x < 0.0 => 3,
        _ => 4,
    }
}

fn write_child(f: &mut fmt::Formatter<'_>, e: &Expr, min_prec: u8) -> fmt::Result {
    if print_prec(e) < min_prec {
        write!(f, "(")?;
        write_expr(f, e)?;
        write!(f, ")")
    } else {
        write_expr(f, e)
    }
}

fn write_expr(f: &mut fmt::Formatter<'_>, e: &Expr) -> fmt::Result {
    match e {
        Expr::Number(x) => write!(f, "{x}"),
        Expr::Variable(v) => write!(f, "{}", v.as_str()),
        Expr::Constant(c) => write!(f, "{}", c.as_str()),
        Expr::Neg(inner) => {
            write!(f, "-")?;
            // The operand of unary minus is itself a unary in the grammar,
            // so anything weaker than a negation needs parentheses.
            write_child(f, inner, 3)
        }
        Expr::Binary(op, lhs, rhs) => {
            // Minimum child strengths implied by the grammar: the left side
            // of `^` is a unary, its right side a factor; `*`/`/` and
            // `+`/`-` associate to the left.
            let (left_min, right_min, sym) = match op {
                BinOp::Add => (0, 1, "+"),
                BinOp::Sub => (0, 1, "-"),
                BinOp::Mul => (1, 2, "*"),
                BinOp::Div => (1, 2, "/"),
                BinOp::Pow => (3, 2, "^"),
            };
            write_child(f, lhs, left_min)?;
            write!(f, "{sym}")?;
            write_child(f, rhs, right_min)
        }
        Expr::Call(func, arg) => write!(f, "{}({})", func.as_str(), arg),
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_expr(f, self)
    }
}

// ---------------------------------------------------------------------------
// Lexer
// ---------------------------------------------------------------------------

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
            TokKind::Num(x) => format!("number `{x}`"),
            TokKind::Ident(s) => format!("identifier `{s}`"),
            TokKind::Plus => "`+`".to_string(),
            TokKind::Minus => "`-`".to_string(),
            TokKind::Star => "`*`".to_string(),
            TokKind::Slash => "`/`".to_string(),
            TokKind::Caret => "`^`".to_string(),
            TokKind::LParen => "`(`".to_string(),
            TokKind::RParen => "`)`".to_string(),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokKind,
    offset: usize,
}

fn lex(src: &str) -> Result<Vec<Token>> {
    let bytes = src.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0usize;
    while i < bytes.len() {
        let c = bytes[i];
        let offset = i;
        match c {
            b' ' | b'\t' | b'\r' | b'\n' => {
                i += 1;
                continue;
            }
            b'+' => tokens.push(Token { kind: TokKind::Plus, offset }),
            b'-' => tokens.push(Token { kind: TokKind::Minus, offset }),
            b'*' => tokens.push(Token { kind: TokKind::Star, offset }),
            b'/' => tokens.push(Token { kind: TokKind::Slash, offset }),
            b'^' => tokens.push(Token { kind: TokKind::Caret, offset }),
            b'(' => tokens.push(Token { kind: TokKind::LParen, offset }),
            b')' => tokens.push(Token { kind: TokKind::RParen, offset }),
            b'0'..=b'9' => {
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                if i < bytes.len() && bytes[i] == b'.' {
                    i += 1;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                // Scientific suffix only when a digit actually follows, so
                // `2*e` still lexes `e` as the Euler constant.
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        i = j;
                        while i < bytes.len() && bytes[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let text = &src[offset..i];
                let value: f64 = text.parse().map_err(|_| Error::Parse {
                    offset,
                    message: format!("malformed number `{text}`"),
                })?;
                tokens.push(Token {
                    kind: TokKind::Num(value),
                    offset,
                });
                continue;
            }
            c if c.is_ascii_alphabetic() => {
                while i < bytes.len() && bytes[i].is_ascii_alphabetic() {
                    i += 1;
                }
                tokens.push(Token {
                    kind: TokKind::Ident(src[offset..i].to_string()),
                    offset,
                });
                continue;
            }
            _ => {
                return Err(Error::Parse {
                    offset,
                    message: format!(
                        "unexpected character `{}`",
                        src[offset..].chars().next().expect("offset is in range")
                    ),
                });
            }
        }
        i += 1;
    }
    Ok(tokens)
}

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    /// Byte offset for diagnostics at the current position (source length
    /// when input is exhausted).
    fn here(&self) -> usize {
        self.peek().map(|t| t.offset).unwrap_or(self.end)
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek().map(|t| &t.kind) {
                Some(TokKind::Plus) => BinOp::Add,
                Some(TokKind::Minus) => BinOp::Sub,
                _ => break,
            };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.factor()?;
        loop {
            let op = match self.peek().map(|t| &t.kind) {
                Some(TokKind::Star) => BinOp::Mul,
                Some(TokKind::Slash) => BinOp::Div,
                _ => break,
            };
            self.pos += 1;
            let rhs = self.factor()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn factor(&mut self) -> Result<Expr> {
        let base = self.unary()?;
        if matches!(self.peek().map(|t| &t.kind), Some(TokKind::Caret)) {
            self.pos += 1;
            let exponent = self.factor()?;
            return Ok(Expr::Binary(BinOp::Pow, Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn unary(&mut self) -> Result<Expr> {
        if matches!(self.peek().map(|t| &t.kind), Some(TokKind::Minus)) {
            self.pos += 1;
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Expr> {
        let Some(token) = self.peek() else {
            return Err(Error::Parse {
                offset: self.end,
                message: "expected an operand".to_string(),
            });
        };
        let offset = token.offset;
        let kind = token.kind.clone();
        match kind {
            TokKind::Num(value) => {
                self.pos += 1;
                Ok(Expr::Number(value))
            }
            TokKind::LParen => {
                self.pos += 1;
                let inner = self.expr()?;
                self.expect_rparen()?;
                Ok(inner)
            }
            TokKind::Ident(name) => {
                self.pos += 1;
                self.ident_atom(&name, offset)
            }
            other => Err(Error::Parse {
                offset,
                message: format!("expected an operand, found {}", other.describe()),
            }),
        }
    }

    fn ident_atom(&mut self, name: &str, offset: usize) -> Result<Expr> {
        let variable = match name {
            "t" => Some(VarName::T),
            "s" => Some(VarName::S),
            "u" => Some(VarName::U),
            "v" => Some(VarName::V),
            _ => None,
        };
        let constant = match name {
            "pi" => Some(ConstName::Pi),
            "e" => Some(ConstName::E),
            _ => None,
        };
        if variable.is_some() || constant.is_some() {
            if matches!(self.peek().map(|t| &t.kind), Some(TokKind::LParen)) {
                return Err(Error::Parse {
                    offset: self.here(),
                    message: format!("`{name}` is not a function"),
                });
            }
            return Ok(match (variable, constant) {
                (Some(v), _) => Expr::Variable(v),
                (_, Some(c)) => Expr::Constant(c),
                _ => unreachable!(),
            });
        }
        let func = match name {
            "exp" => Some(Func::Exp),
            "log" => Some(Func::Log),
            "sin" => Some(Func::Sin),
            "cos" => Some(Func::Cos),
            "sqrt" => Some(Func::Sqrt),
            "abs" => Some(Func::Abs),
            _ => None,
        };
        if let Some(func) = func {
            if !matches!(self.peek().map(|t| &t.kind), Some(TokKind::LParen)) {
                return Err(Error::Parse {
                    offset: self.here(),
                    message: format!("function `{name}` requires a parenthesized argument"),
                });
            }
            self.pos += 1;
            let arg = self.expr()?;
            self.expect_rparen()?;
            return Ok(Expr::Call(func, Box::new(arg)));
        }
        Err(Error::Parse {
            offset,
            message: format!("unknown identifier `{name}`"),
        })
    }

    fn expect_rparen(&mut self) -> Result<()> {
        if matches!(self.peek().map(|t| &t.kind), Some(TokKind::RParen)) {
            self.pos += 1;
            Ok(())
        } else {
            Err(Error::Parse {
                offset: self.here(),
                message: "expected `)`".to_string(),
            })
        }
    }
}

/// Parse an expression from text. Errors carry the byte offset of the
/// offending token.
pub fn parse_expression(text: &str) -> Result<Expr> {
    let tokens = lex(text)?;
    let mut parser = Parser {
        tokens,
        pos: 0,
        end: text.len(),
    };
    let expr = parser.expr()?;
    if let Some(token) = parser.peek() {
        return Err(Error::Parse {
            offset: token.offset,
            message: format!("unexpected trailing input ({})", token.kind.describe()),
        });
    }
    Ok(expr)
}

// ---------------------------------------------------------------------------
// Problem specification
// ---------------------------------------------------------------------------

/// Equation family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Volterra,
    Fredholm,
    AbelVolterra,
}

impl Family {
    /// Lowercase name used in configuration files and messages.
    pub fn as_str(self) -> &'static str {
        match self {
            Family::Volterra => "volterra",
            Family::Fredholm => "fredholm",
            Family::AbelVolterra => "abel",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A second-kind integral equation instance. Immutable once built;
/// range conditions beyond structural sanity (for example `lambda < 1`
/// for Fredholm) are checked by [`validate_problem`], not the
/// constructors, so invalid instances can still be described in reports.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    family: Family,
    kernel: Expr,
    rhs: Expr,
    lambda: f64,
    horizon: f64,
    domain_dim: usize,
    alpha: f64,
}

impl ProblemSpec {
    /// Volterra problem on `[0, horizon]`.
    pub fn volterra(kernel: Expr, rhs: Expr, lambda: f64, horizon: f64) -> Result<Self> {
        if !lambda.is_finite() {
            return Err(Error::InvalidProblem(format!("lambda must be finite, got {lambda}")));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidProblem(format!(
                "horizon must be positive and finite, got {horizon}"
            )));
        }
        Ok(ProblemSpec {
            family: Family::Volterra,
            kernel,
            rhs,
            lambda,
            horizon,
            domain_dim: 1,
            alpha: 0.0,
        })
    }

    /// Fredholm problem on `[0,1]^domain_dim` with the uniform probability
    /// measure. For `domain_dim >= 2` the kernel and right-hand side act as
    /// products over coordinates.
    pub fn fredholm(kernel: Expr, rhs: Expr, lambda: f64, domain_dim: usize) -> Result<Self> {
        if !lambda.is_finite() {
            return Err(Error::InvalidProblem(format!("lambda must be finite, got {lambda}")));
        }
        if domain_dim == 0 {
            return Err(Error::InvalidProblem(
                "domain dimension must be at least 1".to_string(),
            ));
        }
        Ok(ProblemSpec {
            family: Family::Fredholm,
            kernel,
            rhs,
            lambda,
            horizon: 1.0,
            domain_dim,
            alpha: 0.0,
        })
    }

    /// Abel-Volterra problem on `[0, horizon]` with singularity exponent
    /// `alpha`. The kernel expression is the smooth factor only; the
    /// `(t - s)^(-alpha)` singularity is implied by the family.
    pub fn abel(kernel: Expr, rhs: Expr, lambda: f64, horizon: f64, alpha: f64) -> Result<Self> {
        if !lambda.is_finite() {
            return Err(Error::InvalidProblem(format!("lambda must be finite, got {lambda}")));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidProblem(format!(
                "horizon must be positive and finite, got {horizon}"
            )));
        }
        if !alpha.is_finite() {
            return Err(Error::InvalidProblem(format!("alpha must be finite, got {alpha}")));
        }
        Ok(ProblemSpec {
            family: Family::AbelVolterra,
            kernel,
            rhs,
            lambda,
            horizon,
            domain_dim: 1,
            alpha,
        })
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn kernel(&self) -> &Expr {
        &self.kernel
    }

    pub fn rhs(&self) -> &Expr {
        &self.rhs
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Right end of the time interval (1 for Fredholm problems).
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Fredholm domain dimension `d` (1 for the time families).
    pub fn domain_dim(&self) -> usize {
        self.domain_dim
    }

    /// Abel singularity exponent (0 for the other families).
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Abel smoothness parameter `beta = 1 - alpha` (1 for the other
    /// families).
    pub fn beta(&self) -> f64 {
        1.0 - self.alpha
    }

    /// Kernel value at scalar arguments.
    pub fn kernel_at(&self, a: f64, b: f64) -> Result<f64> {
        self.kernel.eval_binary(a, b)
    }

    /// Right-hand side value at a scalar argument.
    pub fn rhs_at(&self, x: f64) -> Result<f64> {
        self.rhs.eval_unary(x)
    }

    /// Kernel value at `d`-dimensional points: the product of the scalar
    /// expression over coordinates.
    pub fn kernel_at_points(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        debug_assert_eq!(a.len(), b.len());
        let mut prod = 1.0;
        for (&x, &y) in a.iter().zip(b) {
            prod *= self.kernel.eval_binary(x, y)?;
        }
        Ok(prod)
    }

    /// Right-hand side at a `d`-dimensional point: the product of the
    /// scalar expression over coordinates.
    pub fn rhs_at_point(&self, a: &[f64]) -> Result<f64> {
        let mut prod = 1.0;
        for &x in a {
            prod *= self.rhs.eval_unary(x)?;
        }
        Ok(prod)
    }
}

// ---------------------------------------------------------------------------
// Path weights
// ---------------------------------------------------------------------------

/// Path weight for the time families at evaluation time `t` along the
/// simplex point `s_1 > ... > s_n`:
///
/// ```text
/// L_n = K(t, t*s_1) K(t*s_1, t*s_2) ... K(t*s_{n-1}, t*s_n) f(t*s_n)
/// ```
///
/// with `L_0 = f(t)`. The Abel family uses the same product over its smooth
/// kernel factor — the singular gap factors are carried by the node
/// sampling density and the series weights, not by the path weight.
pub fn path_weight_volterra(spec: &ProblemSpec, t: f64, point: &SimplexPoint) -> Result<f64> {
    if !matches!(spec.family(), Family::Volterra | Family::AbelVolterra) {
        return Err(Error::InvalidProblem(format!(
            "path_weight_volterra requires a Volterra or Abel-Volterra problem, got {}",
            spec.family()
        )));
    }
    let coords = point.coords();
    if coords.is_empty() {
        return spec.rhs_at(t);
    }
    let mut weight = 1.0;
    let mut prev = t;
    for &s in coords {
        let cur = t * s;
        weight *= spec.kernel_at(prev, cur)?;
        prev = cur;
    }
    weight *= spec.rhs_at(prev)?;
    Ok(weight)
}

/// Path weight for the Fredholm family at evaluation point `u` along the
/// node chain `s_1, ..., s_n`:
///
/// ```text
/// L_n = K(u, s_1) K(s_1, s_2) ... K(s_{n-1}, s_n) f(s_n)
/// ```
///
/// with `L_0 = f(u)`. Points are `domain_dim`-dimensional.
pub fn path_weight_fredholm(spec: &ProblemSpec, u: &[f64], nodes: &[Vec<f64>]) -> Result<f64> {
    if spec.family() != Family::Fredholm {
        return Err(Error::InvalidProblem(format!(
            "path_weight_fredholm requires a Fredholm problem, got {}",
            spec.family()
        )));
    }
    if nodes.is_empty() {
        return spec.rhs_at_point(u);
    }
    let mut weight = spec.kernel_at_points(u, &nodes[0])?;
    for pair in nodes.windows(2) {
        weight *= spec.kernel_at_points(&pair[0], &pair[1])?;
    }
    weight *= spec.rhs_at_point(nodes.last().expect("nodes nonempty"))?;
    Ok(weight)
}

// ---------------------------------------------------------------------------
// Norms
// ---------------------------------------------------------------------------

/// Grid-based norm estimates for a problem. For Fredholm problems with
/// `d >= 2` the reported values are the exact `d`-th powers of the
/// one-dimensional quantities (the product-kernel convention makes them
/// multiplicative). For the time families the sup norm runs over the
/// triangle `0 <= b <= a <= T` actually visited by path weights, and the
/// operator norms report `max_t integral_0^t |K(t, s)| ds` (respectively
/// with `K^2`), which are informational there.
#[derive(Debug, Clone, Copy)]
pub struct NormReport {
    /// Sup norm of the kernel over its evaluation domain.
    pub sup_norm_k: f64,
    /// Operator norm: max over the first argument of the integral of `|K|`.
    pub op_norm_k: f64,
    /// Operator norm of the squared kernel, which controls the Fredholm
    /// second moment.
    pub op_norm_k2: f64,
    /// Sup norm of the right-hand side.
    pub sup_norm_f: f64,
    /// Grid resolution per axis that produced these values.
    pub grid_per_axis: usize,
}

/// Compute [`NormReport`] on a uniform tensor grid with `grid_per_axis`
/// points per axis (endpoints included); integrals use the composite
/// trapezoid rule.
pub fn compute_norms(spec: &ProblemSpec, grid_per_axis: usize) -> Result<NormReport> {
    if grid_per_axis < 2 {
        return Err(Error::domain(
            "compute_norms",
            format!("grid_per_axis must be at least 2, got {grid_per_axis}"),
        ));
    }
    let g = grid_per_axis;
    match spec.family() {
        Family::Fredholm => {
            let h = 1.0 / (g - 1) as f64;
            let xs: Vec<f64> = (0..g).map(|i| i as f64 * h).collect();
            let mut sup_k = 0.0f64;
            let mut op_k = 0.0f64;
            let mut op_k2 = 0.0f64;
            for &a in &xs {
                let mut int_abs = 0.0;
                let mut int_sq = 0.0;
                for (j, &b) in xs.iter().enumerate() {
                    let v = spec.kernel.eval_binary(a, b)?;
                    sup_k = sup_k.max(v.abs());
                    let w = if j == 0 || j == g - 1 { 0.5 * h } else { h };
                    int_abs += w * v.abs();
                    int_sq += w * v * v;
                }
                op_k = op_k.max(int_abs);
                op_k2 = op_k2.max(int_sq);
            }
            let mut sup_f = 0.0f64;
            for &x in &xs {
                sup_f = sup_f.max(spec.rhs.eval_unary(x)?.abs());
            }
            let d = spec.domain_dim() as i32;
            Ok(NormReport {
                sup_norm_k: sup_k.powi(d),
                op_norm_k: op_k.powi(d),
                op_norm_k2: op_k2.powi(d),
                sup_norm_f: sup_f.powi(d),
                grid_per_axis: g,
            })
        }
        Family::Volterra | Family::AbelVolterra => {
            let t_end = spec.horizon();
            let h = t_end / (g - 1) as f64;
            let xs: Vec<f64> = (0..g).map(|i| i as f64 * h).collect();
            let mut sup_k = 0.0f64;
            let mut op_k = 0.0f64;
            let mut op_k2 = 0.0f64;
            for (i, &a) in xs.iter().enumerate() {
                let mut int_abs = 0.0;
                let mut int_sq = 0.0;
                for (j, &b) in xs.iter().enumerate().take(i + 1) {
                    let v = spec.kernel.eval_binary(a, b)?;
                    sup_k = sup_k.max(v.abs());
                    if i >= 1 {
                        let w = if j == 0 || j == i { 0.5 * h } else { h };
                        int_abs += w * v.abs();
                        int_sq += w * v * v;
                    }
                }
                op_k = op_k.max(int_abs);
                op_k2 = op_k2.max(int_sq);
            }
            let mut sup_f = 0.0f64;
            for &x in &xs {
                sup_f = sup_f.max(spec.rhs.eval_unary(x)?.abs());
            }
            Ok(NormReport {
                sup_norm_k: sup_k,
                op_norm_k: op_k,
                op_norm_k2: op_k2,
                sup_norm_f: sup_f,
                grid_per_axis: g,
            })
        }
    }
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

/// Outcome of problem validation: the list of violated conditions, empty
/// when the problem satisfies its family's hypotheses.
#[derive(Debug, Clone)]
pub struct Validation {
    failures: Vec<String>,
}

impl Validation {
    pub fn is_valid(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn failures(&self) -> &[String] {
        &self.failures
    }
}

/// Check the family hypotheses. Volterra needs `lambda > 0`; Fredholm
/// needs `lambda` in `(0,1)`, operator norm at most 1, and
/// `lambda * op_norm_k2 < 1` (the contraction condition for the second
/// moment); Abel additionally needs `alpha` in `(0,1)`.
pub fn validate_problem(spec: &ProblemSpec, norms: &NormReport) -> Validation {
    let mut failures = Vec::new();
    match spec.family() {
        Family::Fredholm => {
            if !(spec.lambda() > 0.0 && spec.lambda() < 1.0) {
                failures.push("lambda not in (0,1)".to_string());
            }
            // The tolerance absorbs trapezoid rounding on kernels whose
            // operator norm is exactly 1 (e.g. a constant kernel).
            if norms.op_norm_k > 1.0 + 1e-9 {
                failures.push(format!(
                    "kernel operator norm {} exceeds 1",
                    norms.op_norm_k
                ));
            }
            if !(spec.lambda() * norms.op_norm_k2 < 1.0) {
                failures.push(format!(
                    "lambda * squared-kernel operator norm = {} is not below 1",
                    spec.lambda() * norms.op_norm_k2
                ));
            }
        }
        Family::Volterra => {
            if !(spec.lambda() > 0.0) {
                failures.push("lambda not positive".to_string());
            }
        }
        Family::AbelVolterra => {
            if !(spec.lambda() > 0.0) {
                failures.push("lambda not positive".to_string());
            }
            if !(spec.alpha() > 0.0 && spec.alpha() < 1.0) {
                failures.push("alpha not in (0,1)".to_string());
            }
        }
    }
    Validation { failures }
}
