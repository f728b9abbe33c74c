//! Arithmetic expressions over named variables.
//!
//! Expressions are how users write metric components, chart changes,
//! Lagrangians and vector fields. Variables follow one naming convention at
//! every level: `t1..tp` for temporal coordinates, `x1..xn` for spatial
//! coordinates and `x{i}_{a}` (for example `x2_1`) for the jet coordinate
//! `x^i_a`. Indices in names are 1-based; [`VarKind`] stores them 0-based.
//!
//! Exponents of `^` are integer constants. Rational powers go through `sqrt`.

mod diff;
mod parse;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::ops;
use std::sync::Arc;

pub use parse::{parse, ParseError};

/// Builtin unary functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Log,
    Sqrt,
    Sinh,
    Cosh,
}

impl Func {
    pub const ALL: [Func; 8] = [
        Func::Sin,
        Func::Cos,
        Func::Tan,
        Func::Exp,
        Func::Log,
        Func::Sqrt,
        Func::Sinh,
        Func::Cosh,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Sinh => "sinh",
            Func::Cosh => "cosh",
        }
    }

    pub fn from_name(name: &str) -> Option<Func> {
        Func::ALL.into_iter().find(|f| f.name() == name)
    }

    fn apply(self, x: f64) -> Result<f64, EvalError> {
        let y = match self {
            Func::Sin => x.sin(),
            Func::Cos => x.cos(),
            Func::Tan => {
                if x.cos() == 0.0 {
                    return Err(EvalError::Domain(format!("tan({x}) is undefined")));
                }
                x.tan()
            }
            Func::Exp => x.exp(),
            Func::Log => {
                if x <= 0.0 {
                    return Err(EvalError::Domain(format!("log of non-positive value {x}")));
                }
                x.ln()
            }
            Func::Sqrt => {
                if x < 0.0 {
                    return Err(EvalError::Domain(format!("sqrt of negative value {x}")));
                }
                x.sqrt()
            }
            Func::Sinh => x.sinh(),
            Func::Cosh => x.cosh(),
        };
        Ok(y)
    }
}

/// Role of a variable, decoded from its name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VarKind {
    /// `t{a+1}`
    Time(usize),
    /// `x{i+1}`
    Space(usize),
    /// `x{i+1}_{a+1}`
    Jet { space: usize, time: usize },
    /// Any other identifier; only resolvable through a name-keyed environment.
    Other,
}

impl VarKind {
    fn decode(name: &str) -> VarKind {
        fn index(digits: &str) -> Option<usize> {
            if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
                return None;
            }
            digits.parse::<usize>().ok().filter(|&k| k >= 1).map(|k| k - 1)
        }
        if let Some(rest) = name.strip_prefix('t') {
            if let Some(a) = index(rest) {
                return VarKind::Time(a);
            }
        } else if let Some(rest) = name.strip_prefix('x') {
            match rest.split_once('_') {
                Some((i, a)) => {
                    if let (Some(i), Some(a)) = (index(i), index(a)) {
                        return VarKind::Jet { space: i, time: a };
                    }
                }
                None => {
                    if let Some(i) = index(rest) {
                        return VarKind::Space(i);
                    }
                }
            }
        }
        VarKind::Other
    }
}

/// A named variable together with its decoded role.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Var {
    name: Arc<str>,
    kind: VarKind,
}

impl Var {
    pub fn new(name: &str) -> Var {
        Var {
            name: Arc::from(name),
            kind: VarKind::decode(name),
        }
    }

    /// Temporal coordinate `t^a` (0-based).
    pub fn time(a: usize) -> Var {
        Var::new(&format!("t{}", a + 1))
    }

    /// Spatial coordinate `x^i` (0-based).
    pub fn space(i: usize) -> Var {
        Var::new(&format!("x{}", i + 1))
    }

    /// Jet coordinate `x^i_a` (0-based).
    pub fn jet(i: usize, a: usize) -> Var {
        Var::new(&format!("x{}_{}", i + 1, a + 1))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> VarKind {
        self.kind
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("unbound variable `{0}`")]
    Unbound(String),
    #[error("math domain error: {0}")]
    Domain(String),
}

/// Variable bindings used by [`Expr::eval`].
pub trait Env {
    fn value(&self, var: &Var) -> Option<f64>;
}

impl Env for HashMap<String, f64> {
    fn value(&self, var: &Var) -> Option<f64> {
        self.get(var.name()).copied()
    }
}

impl Env for BTreeMap<String, f64> {
    fn value(&self, var: &Var) -> Option<f64> {
        self.get(var.name()).copied()
    }
}

impl Env for [(&str, f64)] {
    fn value(&self, var: &Var) -> Option<f64> {
        self.iter().find(|(n, _)| *n == var.name()).map(|&(_, v)| v)
    }
}

impl<const N: usize> Env for [(&str, f64); N] {
    fn value(&self, var: &Var) -> Option<f64> {
        self.as_slice().value(var)
    }
}

/// Coordinates `(t, x)` of a point of `T x M`, resolved by [`VarKind`].
#[derive(Debug, Clone, Copy)]
pub struct BaseEnv<'a> {
    pub t: &'a [f64],
    pub x: &'a [f64],
}

impl Env for BaseEnv<'_> {
    fn value(&self, var: &Var) -> Option<f64> {
        match var.kind() {
            VarKind::Time(a) => self.t.get(a).copied(),
            VarKind::Space(i) => self.x.get(i).copied(),
            _ => None,
        }
    }
}

/// Arithmetic expression tree. Children are shared, so cloning is cheap.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(Var),
    Neg(Arc<Expr>),
    Add(Arc<Expr>, Arc<Expr>),
    Sub(Arc<Expr>, Arc<Expr>),
    Mul(Arc<Expr>, Arc<Expr>),
    Div(Arc<Expr>, Arc<Expr>),
    Pow(Arc<Expr>, i32),
    Call(Func, Arc<Expr>),
}

impl Expr {
    pub fn num(v: f64) -> Expr {
        Expr::Num(v)
    }

    pub fn zero() -> Expr {
        Expr::Num(0.0)
    }

    pub fn one() -> Expr {
        Expr::Num(1.0)
    }

    pub fn var(name: &str) -> Expr {
        Expr::Var(Var::new(name))
    }

    pub fn time(a: usize) -> Expr {
        Expr::Var(Var::time(a))
    }

    pub fn space(i: usize) -> Expr {
        Expr::Var(Var::space(i))
    }

    pub fn jet(i: usize, a: usize) -> Expr {
        Expr::Var(Var::jet(i, a))
    }

    pub fn as_num(&self) -> Option<f64> {
        match self {
            Expr::Num(v) => Some(*v),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.as_num() == Some(0.0)
    }

    pub fn is_one(&self) -> bool {
        self.as_num() == Some(1.0)
    }

    // Simplifying constructors. Parsing builds raw nodes; everything that
    // synthesises expressions (differentiation, substitution, builders) goes
    // through these.

    pub fn neg(a: Expr) -> Expr {
        match a {
            Expr::Num(v) => Expr::Num(-v),
            Expr::Neg(inner) => (*inner).clone(),
            other => Expr::Neg(Arc::new(other)),
        }
    }

    pub fn add(a: Expr, b: Expr) -> Expr {
        match (&a, &b) {
            (Expr::Num(x), Expr::Num(y)) => Expr::Num(x + y),
            _ if a.is_zero() => b,
            _ if b.is_zero() => a,
            (_, Expr::Neg(inner)) => Expr::Sub(Arc::new(a.clone()), inner.clone()),
            _ => Expr::Add(Arc::new(a), Arc::new(b)),
        }
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        match (&a, &b) {
            (Expr::Num(x), Expr::Num(y)) => Expr::Num(x - y),
            _ if b.is_zero() => a,
            _ if a.is_zero() => Expr::neg(b),
            (_, Expr::Neg(inner)) => Expr::Add(Arc::new(a.clone()), inner.clone()),
            _ => Expr::Sub(Arc::new(a), Arc::new(b)),
        }
    }

    pub fn mul(a: Expr, b: Expr) -> Expr {
        match (&a, &b) {
            (Expr::Num(x), Expr::Num(y)) => Expr::Num(x * y),
            _ if a.is_zero() || b.is_zero() => Expr::zero(),
            _ if a.is_one() => b,
            _ if b.is_one() => a,
            (Expr::Num(x), _) if *x == -1.0 => Expr::neg(b),
            (_, Expr::Num(y)) if *y == -1.0 => Expr::neg(a),
            // keep numeric factors on the left
            (_, Expr::Num(_)) => Expr::Mul(Arc::new(b), Arc::new(a)),
            _ => Expr::Mul(Arc::new(a), Arc::new(b)),
        }
    }

    pub fn div(a: Expr, b: Expr) -> Expr {
        match (&a, &b) {
            (Expr::Num(x), Expr::Num(y)) if *y != 0.0 => Expr::Num(x / y),
            _ if a.is_zero() => Expr::zero(),
            _ if b.is_one() => a,
            _ => Expr::Div(Arc::new(a), Arc::new(b)),
        }
    }

    pub fn pow(a: Expr, n: i32) -> Expr {
        match (&a, n) {
            (_, 0) => Expr::one(),
            (_, 1) => a,
            (Expr::Num(x), _) if *x != 0.0 || n > 0 => Expr::Num(x.powi(n)),
            _ => Expr::Pow(Arc::new(a), n),
        }
    }

    pub fn call(f: Func, a: Expr) -> Expr {
        if let Expr::Num(x) = a {
            if let Ok(y) = f.apply(x) {
                if y.is_finite() {
                    return Expr::Num(y);
                }
            }
        }
        Expr::Call(f, Arc::new(a))
    }

    pub fn sin(a: Expr) -> Expr {
        Expr::call(Func::Sin, a)
    }

    pub fn cos(a: Expr) -> Expr {
        Expr::call(Func::Cos, a)
    }

    pub fn exp(a: Expr) -> Expr {
        Expr::call(Func::Exp, a)
    }

    pub fn log(a: Expr) -> Expr {
        Expr::call(Func::Log, a)
    }

    pub fn sqrt(a: Expr) -> Expr {
        Expr::call(Func::Sqrt, a)
    }

    pub fn sinh(a: Expr) -> Expr {
        Expr::call(Func::Sinh, a)
    }

    /// Sum of an iterator of expressions (0 when empty).
    pub fn sum<I: IntoIterator<Item = Expr>>(terms: I) -> Expr {
        terms.into_iter().fold(Expr::zero(), Expr::add)
    }

    /// Evaluates in IEEE double precision.
    pub fn eval<E: Env + ?Sized>(&self, env: &E) -> Result<f64, EvalError> {
        let v = match self {
            Expr::Num(v) => *v,
            Expr::Var(var) => env
                .value(var)
                .ok_or_else(|| EvalError::Unbound(var.name().to_string()))?,
            Expr::Neg(a) => -a.eval(env)?,
            Expr::Add(a, b) => a.eval(env)? + b.eval(env)?,
            Expr::Sub(a, b) => a.eval(env)? - b.eval(env)?,
            Expr::Mul(a, b) => a.eval(env)? * b.eval(env)?,
            Expr::Div(a, b) => {
                let num = a.eval(env)?;
                let den = b.eval(env)?;
                if den == 0.0 {
                    return Err(EvalError::Domain("division by zero".into()));
                }
                num / den
            }
            Expr::Pow(a, n) => {
                let base = a.eval(env)?;
                if base == 0.0 && *n < 0 {
                    return Err(EvalError::Domain("division by zero".into()));
                }
                base.powi(*n)
            }
            Expr::Call(f, a) => f.apply(a.eval(env)?)?,
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(EvalError::Domain(format!("non-finite result in `{self}`")))
        }
    }

    /// Replaces variables for which `f` returns `Some`.
    pub fn substitute<F>(&self, f: &F) -> Expr
    where
        F: Fn(&Var) -> Option<Expr>,
    {
        match self {
            Expr::Num(_) => self.clone(),
            Expr::Var(v) => f(v).unwrap_or_else(|| self.clone()),
            Expr::Neg(a) => Expr::neg(a.substitute(f)),
            Expr::Add(a, b) => Expr::add(a.substitute(f), b.substitute(f)),
            Expr::Sub(a, b) => Expr::sub(a.substitute(f), b.substitute(f)),
            Expr::Mul(a, b) => Expr::mul(a.substitute(f), b.substitute(f)),
            Expr::Div(a, b) => Expr::div(a.substitute(f), b.substitute(f)),
            Expr::Pow(a, n) => Expr::pow(a.substitute(f), *n),
            Expr::Call(func, a) => Expr::call(*func, a.substitute(f)),
        }
    }

    /// Names of all variables referenced.
    pub fn variables(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.visit_vars(&mut |v| {
            out.insert(v.name().to_string());
        });
        out
    }

    pub fn var_kinds(&self) -> BTreeSet<VarKind> {
        let mut out = BTreeSet::new();
        self.visit_vars(&mut |v| {
            out.insert(v.kind());
        });
        out
    }

    fn visit_vars(&self, f: &mut dyn FnMut(&Var)) {
        match self {
            Expr::Num(_) => {}
            Expr::Var(v) => f(v),
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Call(_, a) => a.visit_vars(f),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.visit_vars(f);
                b.visit_vars(f);
            }
        }
    }

    /// Number of nodes (shared subtrees counted each time they occur).
    pub fn size(&self) -> usize {
        match self {
            Expr::Num(_) | Expr::Var(_) => 1,
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Call(_, a) => 1 + a.size(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                1 + a.size() + b.size()
            }
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Add(..) | Expr::Sub(..) => 1,
            Expr::Mul(..) | Expr::Div(..) => 2,
            Expr::Neg(_) => 3,
            Expr::Pow(..) => 4,
            Expr::Num(_) | Expr::Var(_) | Expr::Call(..) => 5,
        }
    }

    fn fmt_prec(&self, f: &mut fmt::Formatter<'_>, min: u8) -> fmt::Result {
        if self.precedence() < min {
            f.write_str("(")?;
            self.fmt_prec(f, 0)?;
            return f.write_str(")");
        }
        match self {
            Expr::Num(v) => {
                if v.is_sign_negative() {
                    write!(f, "(-{})", -v)
                } else {
                    write!(f, "{v}")
                }
            }
            Expr::Var(v) => f.write_str(v.name()),
            Expr::Neg(a) => {
                f.write_str("-")?;
                a.fmt_prec(f, 3)
            }
            Expr::Add(a, b) | Expr::Sub(a, b) => {
                a.fmt_prec(f, 1)?;
                f.write_str(if matches!(self, Expr::Add(..)) { " + " } else { " - " })?;
                b.fmt_prec(f, 2)
            }
            Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.fmt_prec(f, 2)?;
                f.write_str(if matches!(self, Expr::Mul(..)) { "*" } else { "/" })?;
                b.fmt_prec(f, 3)
            }
            Expr::Pow(a, n) => {
                a.fmt_prec(f, 5)?;
                if *n < 0 {
                    write!(f, "^(-{})", -(*n as i64))
                } else {
                    write!(f, "^{n}")
                }
            }
            Expr::Call(func, a) => {
                write!(f, "{}(", func.name())?;
                a.fmt_prec(f, 0)?;
                f.write_str(")")
            }
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_prec(f, 0)
    }
}

impl From<f64> for Expr {
    fn from(v: f64) -> Expr {
        Expr::Num(v)
    }
}

impl std::str::FromStr for Expr {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Expr, ParseError> {
        parse(s)
    }
}

macro_rules! binop {
    ($trait:ident, $method:ident, $ctor:ident) => {
        impl ops::$trait for Expr {
            type Output = Expr;
            fn $method(self, rhs: Expr) -> Expr {
                Expr::$ctor(self, rhs)
            }
        }
        impl ops::$trait<&Expr> for &Expr {
            type Output = Expr;
            fn $method(self, rhs: &Expr) -> Expr {
                Expr::$ctor(self.clone(), rhs.clone())
            }
        }
        impl ops::$trait<f64> for Expr {
            type Output = Expr;
            fn $method(self, rhs: f64) -> Expr {
                Expr::$ctor(self, Expr::Num(rhs))
            }
        }
        impl ops::$trait<Expr> for f64 {
            type Output = Expr;
            fn $method(self, rhs: Expr) -> Expr {
                Expr::$ctor(Expr::Num(self), rhs)
            }
        }
    };
}

binop!(Add, add, add);
binop!(Sub, sub, sub);
binop!(Mul, mul, mul);
binop!(Div, div, div);

impl ops::Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::neg(self)
    }
}
