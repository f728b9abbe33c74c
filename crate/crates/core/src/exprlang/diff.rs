use super::{Expr, Func};

impl Expr {
    /// Exact partial derivative with respect to the variable named `var`.
    pub fn diff(&self, var: &str) -> Expr {
        match self {
            Expr::Num(_) => Expr::zero(),
            Expr::Var(v) => {
                if v.name() == var {
                    Expr::one()
                } else {
                    Expr::zero()
                }
            }
            Expr::Neg(a) => Expr::neg(a.diff(var)),
            Expr::Add(a, b) => Expr::add(a.diff(var), b.diff(var)),
            Expr::Sub(a, b) => Expr::sub(a.diff(var), b.diff(var)),
            Expr::Mul(a, b) => {
                let (a, b) = (a.as_ref(), b.as_ref());
                Expr::add(
                    Expr::mul(a.diff(var), b.clone()),
                    Expr::mul(a.clone(), b.diff(var)),
                )
            }
            Expr::Div(a, b) => {
                let (a, b) = (a.as_ref(), b.as_ref());
                let da = a.diff(var);
                let db = b.diff(var);
                if db.is_zero() {
                    return Expr::div(da, b.clone());
                }
                Expr::div(
                    Expr::sub(Expr::mul(da, b.clone()), Expr::mul(a.clone(), db)),
                    Expr::pow(b.clone(), 2),
                )
            }
            Expr::Pow(a, n) => {
                let da = a.diff(var);
                if da.is_zero() {
                    return Expr::zero();
                }
                Expr::mul(
                    Expr::mul(Expr::num(*n as f64), Expr::pow(a.as_ref().clone(), n - 1)),
                    da,
                )
            }
            Expr::Call(f, a) => {
                let da = a.diff(var);
                if da.is_zero() {
                    return Expr::zero();
                }
                let u = a.as_ref().clone();
                let outer = match f {
                    Func::Sin => Expr::call(Func::Cos, u),
                    Func::Cos => Expr::neg(Expr::call(Func::Sin, u)),
                    Func::Tan => Expr::div(Expr::one(), Expr::pow(Expr::call(Func::Cos, u), 2)),
                    Func::Exp => self.clone(),
                    Func::Log => Expr::div(Expr::one(), u),
                    Func::Sqrt => Expr::div(Expr::num(0.5), self.clone()),
                    Func::Sinh => Expr::call(Func::Cosh, u),
                    Func::Cosh => Expr::call(Func::Sinh, u),
                };
                Expr::mul(outer, da)
            }
        }
    }
}
