//! Finite-difference derivatives and Jacobians of chart changes.
//!
//! The finite-difference routines are the independent oracle against which the
//! symbolic derivatives of [`crate::exprlang`] are checked. Chart changes
//! always use symbolic Jacobians.

mod change;
pub mod catalog;

pub use change::{jacobian_blocks, ChangeMap, JacobianBlocks, SecondBlocks};

use crate::exprlang::{Env, EvalError, Expr, Var};

/// Step for first-order central differences: `eps^(1/3) * max(1, |x|)`.
pub fn fd_step(x: f64) -> f64 {
    f64::EPSILON.cbrt() * x.abs().max(1.0)
}

/// Step for nested (second-order) central differences: `eps^(1/4) * max(1, |x|)`.
pub fn fd_step2(x: f64) -> f64 {
    f64::EPSILON.powf(0.25) * x.abs().max(1.0)
}

/// Central difference `(f(p + h e_k) - f(p - h e_k)) / 2h`.
pub fn fd_partial<F, E>(f: F, point: &[f64], index: usize) -> Result<f64, E>
where
    F: Fn(&[f64]) -> Result<f64, E>,
{
    let h = fd_step(point[index]);
    let mut p = point.to_vec();
    p[index] = point[index] + h;
    let up = f(&p)?;
    p[index] = point[index] - h;
    let down = f(&p)?;
    // use the step actually representable in floating point
    let span = (point[index] + h) - (point[index] - h);
    Ok((up - down) / span)
}

/// Nested central difference for `d²f / dp_i dp_j`.
pub fn fd_second_partial<F, E>(f: F, point: &[f64], i: usize, j: usize) -> Result<f64, E>
where
    F: Fn(&[f64]) -> Result<f64, E>,
{
    let mut p = point.to_vec();
    if i == j {
        let h = fd_step2(point[i]);
        let centre = f(point)?;
        p[i] = point[i] + h;
        let up = f(&p)?;
        p[i] = point[i] - h;
        let down = f(&p)?;
        return Ok((up - 2.0 * centre + down) / (h * h));
    }
    let hi = fd_step2(point[i]);
    let hj = fd_step2(point[j]);
    let mut eval = |si: f64, sj: f64| {
        p[i] = point[i] + si * hi;
        p[j] = point[j] + sj * hj;
        f(&p)
    };
    let pp = eval(1.0, 1.0)?;
    let pm = eval(1.0, -1.0)?;
    let mp = eval(-1.0, 1.0)?;
    let mm = eval(-1.0, -1.0)?;
    Ok((pp - pm - mp + mm) / (4.0 * hi * hj))
}

/// A scalar field given by an expression over an ordered list of variables.
/// Derivatives are taken symbolically.
#[derive(Debug, Clone)]
pub struct ExprScalar {
    pub expr: Expr,
    pub vars: Vec<Var>,
}

struct Positional<'a> {
    vars: &'a [Var],
    values: &'a [f64],
}

impl Env for Positional<'_> {
    fn value(&self, var: &Var) -> Option<f64> {
        self.vars
            .iter()
            .position(|v| v.name() == var.name())
            .map(|k| self.values[k])
    }
}

impl ExprScalar {
    pub fn new(expr: Expr, vars: &[&str]) -> ExprScalar {
        ExprScalar {
            expr,
            vars: vars.iter().map(|v| Var::new(v)).collect(),
        }
    }

    pub fn value(&self, point: &[f64]) -> Result<f64, EvalError> {
        self.expr.eval(&Positional {
            vars: &self.vars,
            values: point,
        })
    }

    pub fn partial(&self, point: &[f64], i: usize) -> Result<f64, EvalError> {
        self.expr.diff(self.vars[i].name()).eval(&Positional {
            vars: &self.vars,
            values: point,
        })
    }

    /// Nested symbolic differentiation.
    pub fn second_partial(&self, point: &[f64], i: usize, j: usize) -> Result<f64, EvalError> {
        self.expr
            .diff(self.vars[i].name())
            .diff(self.vars[j].name())
            .eval(&Positional {
                vars: &self.vars,
                values: point,
            })
    }

    pub fn fd_partial(&self, point: &[f64], i: usize) -> Result<f64, EvalError> {
        fd_partial(|p| self.value(p), point, i)
    }
}

/// `d²f / dp_i dp_j` for a closure field, by nested central differences.
pub fn second_partial<F, E>(f: F, point: &[f64], i: usize, j: usize) -> Result<f64, E>
where
    F: Fn(&[f64]) -> Result<f64, E>,
{
    fd_second_partial(f, point, i, j)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exprlang::parse;

    fn ok(v: f64) -> Result<f64, ()> {
        Ok(v)
    }

    #[test]
    fn fd_partial_examples() {
        let sq = fd_partial(|p: &[f64]| ok(p[0] * p[0]), &[3.0], 0).unwrap();
        assert!((sq - 6.0).abs() < 1e-7);
        let c = fd_partial(|_: &[f64]| ok(4.2), &[1.0], 0).unwrap();
        assert!(c.abs() < 1e-9);
        let s = fd_partial(|p: &[f64]| ok(p[0].sin()), &[0.0], 0).unwrap();
        assert!((s - 1.0).abs() < 1e-9);
    }

    #[test]
    fn fd_partial_propagates_errors() {
        let r = fd_partial(|p: &[f64]| if p[0] > 1.0 { Err("boom") } else { Ok(p[0]) }, &[1.0], 0);
        assert_eq!(r, Err("boom"));
    }

    #[test]
    fn second_partial_examples() {
        let f = |p: &[f64]| ok(p[0] * p[0] * p[1]);
        assert!((second_partial(f, &[1.0, 1.0], 0, 1).unwrap() - 2.0).abs() < 1e-6);
        let lin = |p: &[f64]| ok(3.0 * p[0] - 2.0 * p[1] + 1.0);
        assert!(second_partial(lin, &[0.3, -0.7], 0, 1).unwrap().abs() < 1e-6);
        assert!(second_partial(lin, &[0.3, -0.7], 1, 1).unwrap().abs() < 1e-6);
        let e = |p: &[f64]| ok(p[0].exp());
        assert!((second_partial(e, &[0.0], 0, 0).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn symbolic_second_partials() {
        let f = ExprScalar::new(parse("x^2*y").unwrap(), &["x", "y"]);
        assert_eq!(f.second_partial(&[1.0, 1.0], 0, 1).unwrap(), 2.0);
        let lin = ExprScalar::new(parse("3*x - y").unwrap(), &["x", "y"]);
        assert_eq!(lin.second_partial(&[0.5, 0.5], 0, 0).unwrap(), 0.0);
        let e = ExprScalar::new(parse("exp(x)").unwrap(), &["x"]);
        assert_eq!(e.second_partial(&[0.0], 0, 0).unwrap(), 1.0);
    }

    #[test]
    fn symbolic_matches_fd() {
        let f = ExprScalar::new(parse("sin(x)*exp(y) + x^3/(1 + y^2)").unwrap(), &["x", "y"]);
        for p in [[0.1, 0.2], [1.3, -0.4], [-2.0, 0.9]] {
            for i in 0..2 {
                let s = f.partial(&p, i).unwrap();
                let d = f.fd_partial(&p, i).unwrap();
                assert!((s - d).abs() <= 1e-6 * s.abs().max(1.0));
            }
        }
    }
}
