//! Total derivatives, first prolongation of vector fields on `T x M`, the
//! horizontal lift through a nonlinear connection, and the vertical gap
//! between the two.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::connection::NonlinearConnection;
use crate::domain::DomainBox;
use crate::dtensor::{check_jet, Components, FieldRef, JetField, Signature};
use crate::error::{Error, Result};
use crate::exprlang::{parse, BaseEnv, Expr, Var, VarKind};
use crate::jetspace::JetPoint;
use crate::numdiff::ChangeMap;

fn check_base_expr(e: &Expr, p: usize, n: usize) -> Result<()> {
    for kind in e.var_kinds() {
        let ok = match kind {
            VarKind::Time(a) => a < p,
            VarKind::Space(i) => i < n,
            _ => false,
        };
        if !ok {
            return Err(Error::Dimension(format!(
                "`{e}` must be a function of t1..t{p}, x1..x{n} only"
            )));
        }
    }
    Ok(())
}

/// `D_α f = ∂f/∂t^α + (∂f/∂x^i) x^i_α` as an expression on `J¹`.
pub fn total_derivative_expr(f: &Expr, alpha: usize, n: usize) -> Expr {
    let mut d = f.diff(Var::time(alpha).name());
    for i in 0..n {
        d = d + f.diff(Var::space(i).name()) * Expr::jet(i, alpha);
    }
    d
}

pub fn total_derivative(f: &Expr, u: &JetPoint, alpha: usize) -> Result<f64> {
    check_base_expr(f, u.p(), u.n())?;
    if alpha >= u.p() {
        return Err(Error::Dimension(format!("no time direction {} for p = {}", alpha + 1, u.p())));
    }
    Ok(total_derivative_expr(f, alpha, u.n()).eval(&u.env())?)
}

/// `D_α f = δf/δt^α + (δf/δx^i) x^i_α`, with
/// `δ/δt^α = ∂/∂t^α − M^{(j)}_{(β)α} ∂/∂x^j_β` and
/// `δ/δx^i = ∂/∂x^i − N^{(j)}_{(β)i} ∂/∂x^j_β`.
pub fn total_derivative_adapted(f: &Expr, g: &NonlinearConnection, u: &JetPoint, alpha: usize) -> Result<f64> {
    check_base_expr(f, u.p(), u.n())?;
    if g.dims() != (u.p(), u.n()) {
        return Err(Error::Dimension("connection and jet live on different bundles".into()));
    }
    let (p, n) = (u.p(), u.n());
    let env = u.env();
    let (m, nc) = g.eval(u)?;
    // vertical gradient ∂f/∂x^j_β
    let dv = (0..n * p)
        .map(|r| Ok(f.diff(Var::jet(r / p, r % p).name()).eval(&env)?))
        .collect::<Result<Vec<f64>>>()?;
    let dt = f.diff(Var::time(alpha).name()).eval(&env)? - (0..n * p).map(|r| m.get(&[r, alpha]) * dv[r]).sum::<f64>();
    let mut total = dt;
    for i in 0..n {
        let dx = f.diff(Var::space(i).name()).eval(&env)? - (0..n * p).map(|r| nc.get(&[r, i]) * dv[r]).sum::<f64>();
        total += dx * u.v()[(i, alpha)];
    }
    Ok(total)
}

/// The distinguished 1-form `Df = (D_α f) dt^α`, signature `L(a)`.
#[derive(Debug, Clone)]
pub struct TotalDifferential {
    f: Expr,
    dims: (usize, usize),
    signature: Signature,
    exprs: Vec<Expr>,
}

impl TotalDifferential {
    pub fn new(f: Expr, p: usize, n: usize) -> Result<TotalDifferential> {
        check_base_expr(&f, p, n)?;
        let exprs = (0..p).map(|a| total_derivative_expr(&f, a, n)).collect();
        Ok(TotalDifferential {
            f,
            dims: (p, n),
            signature: "L(a)".parse()?,
            exprs,
        })
    }
}

impl JetField for TotalDifferential {
    fn name(&self) -> String {
        format!("D({})", self.f)
    }
    fn signature(&self) -> &Signature {
        &self.signature
    }
    fn dims(&self) -> (usize, usize) {
        self.dims
    }
    fn eval(&self, u: &JetPoint) -> Result<Components> {
        check_jet(&self.name(), self.dims, u)?;
        let env = u.env();
        let data = self.exprs.iter().map(|e| Ok(e.eval(&env)?)).collect::<Result<_>>()?;
        Components::new(vec![self.dims.0], data)
    }
    fn in_chart(&self, c: &ChangeMap) -> Result<FieldRef> {
        Ok(Arc::new(TotalDifferential::new(c.pull(&self.f), self.dims.0, self.dims.1)?))
    }
    fn exprs(&self) -> Option<Vec<Expr>> {
        Some(self.exprs.clone())
    }
}

/// `X = X^α ∂/∂t^α + X^i ∂/∂x^i` on `T x M`.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseVectorField {
    temporal: Vec<Expr>,
    spatial: Vec<Expr>,
}

impl BaseVectorField {
    pub fn new(temporal: Vec<Expr>, spatial: Vec<Expr>) -> Result<BaseVectorField> {
        let (p, n) = (temporal.len(), spatial.len());
        if p == 0 || n == 0 {
            return Err(Error::Dimension("vector field needs p ≥ 1 and n ≥ 1 components".into()));
        }
        for e in temporal.iter().chain(&spatial) {
            check_base_expr(e, p, n)?;
        }
        Ok(BaseVectorField { temporal, spatial })
    }

    pub fn parse(temporal: &[&str], spatial: &[&str]) -> Result<BaseVectorField> {
        let go = |s: &[&str]| s.iter().map(|s| Ok(parse(s)?)).collect::<Result<Vec<_>>>();
        BaseVectorField::new(go(temporal)?, go(spatial)?)
    }

    /// Named test fields: `zero`, `dt1`, `t1dt1`, `x1dx1`, `mixed`.
    pub fn catalog(name: &str, p: usize, n: usize) -> Result<BaseVectorField> {
        let unit = |k: usize, len: usize, e: Expr| (0..len).map(|j| if j == k { e.clone() } else { Expr::zero() }).collect::<Vec<_>>();
        let zeros = |len: usize| vec![Expr::zero(); len];
        let (t, x) = match name {
            "zero" => (zeros(p), zeros(n)),
            "dt1" => (unit(0, p, Expr::one()), zeros(n)),
            "t1dt1" => (unit(0, p, Expr::time(0)), zeros(n)),
            "x1dx1" => (zeros(p), unit(0, n, Expr::space(0))),
            "mixed" => (
                (0..p)
                    .map(|a| 0.3 * Expr::sin(Expr::space(a % n)) + 0.2 * Expr::pow(Expr::time((a + 1) % p), 2))
                    .collect(),
                (0..n)
                    .map(|i| 0.5 * Expr::cos(Expr::time(i % p)) * Expr::space(i) + 0.1 * Expr::pow(Expr::space((i + 1) % n), 2))
                    .collect(),
            ),
            other => return Err(Error::UnknownCatalog(other.to_string())),
        };
        BaseVectorField::new(t, x)
    }

    pub fn p(&self) -> usize {
        self.temporal.len()
    }

    pub fn n(&self) -> usize {
        self.spatial.len()
    }

    pub fn temporal(&self) -> &[Expr] {
        &self.temporal
    }

    pub fn spatial(&self) -> &[Expr] {
        &self.spatial
    }

    /// `(X^α, X^i)` at a base point.
    pub fn eval(&self, t: &[f64], x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let env = BaseEnv { t, x };
        let go = |es: &[Expr]| es.iter().map(|e| Ok(e.eval(&env)?)).collect::<Result<Vec<_>>>();
        Ok((go(&self.temporal)?, go(&self.spatial)?))
    }

    /// `aX + bY`.
    pub fn combine(a: f64, x: &BaseVectorField, b: f64, y: &BaseVectorField) -> Result<BaseVectorField> {
        if (x.p(), x.n()) != (y.p(), y.n()) {
            return Err(Error::Dimension("vector fields on different bases".into()));
        }
        let lin = |u: &[Expr], w: &[Expr]| u.iter().zip(w).map(|(u, w)| a * u.clone() + b * w.clone()).collect();
        BaseVectorField::new(lin(&x.temporal, &y.temporal), lin(&x.spatial, &y.spatial))
    }

    /// Push-forward through a product chart change, written in the new chart.
    pub fn in_chart(&self, c: &ChangeMap) -> Result<BaseVectorField> {
        let k = c.temporal_exprs();
        let a = c.spatial_exprs();
        let push = |jac: &[Vec<Expr>], comps: &[Expr]| {
            jac.iter()
                .map(|row| c.pull(&Expr::sum(row.iter().zip(comps).map(|(j, x)| j * x))))
                .collect()
        };
        BaseVectorField::new(push(k, &self.temporal), push(a, &self.spatial))
    }
}

/// Components `(X^α, X^i, X^{(i)}_{(α)})` of a vector field on `J¹` at a point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JetVector {
    pub temporal: Vec<f64>,
    pub spatial: Vec<f64>,
    /// `n x p`, row `i`, column `α`
    #[serde(serialize_with = "rows")]
    pub vertical: DMatrix<f64>,
}

fn rows<S: serde::Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(m.nrows()))?;
    for r in m.row_iter() {
        seq.serialize_element(&r.iter().copied().collect::<Vec<_>>())?;
    }
    seq.end()
}

#[derive(Debug, Clone)]
enum Vertical {
    /// Olver prolongation, as expressions over `J¹`.
    Prolonged(Vec<Expr>),
    Horizontal(NonlinearConnection),
}

/// A vector field on `J¹(T, M)` projecting to a base field.
#[derive(Debug, Clone)]
pub struct JetVectorField {
    base: BaseVectorField,
    vertical: Vertical,
}

impl JetVectorField {
    pub fn base(&self) -> &BaseVectorField {
        &self.base
    }

    pub fn eval(&self, u: &JetPoint) -> Result<JetVector> {
        let (p, n) = (self.base.p(), self.base.n());
        check_jet("jet vector field", (p, n), u)?;
        let (temporal, spatial) = self.base.eval(u.t(), u.x())?;
        let vertical = match &self.vertical {
            Vertical::Prolonged(es) => {
                let env = u.env();
                let mut v = DMatrix::zeros(n, p);
                for (r, e) in es.iter().enumerate() {
                    v[(r / p, r % p)] = e.eval(&env)?;
                }
                v
            }
            Vertical::Horizontal(g) => {
                let (m, nc) = g.eval(u)?;
                DMatrix::from_fn(n, p, |i, a| {
                    let r = i * p + a;
                    let mx: f64 = (0..p).map(|b| m.get(&[r, b]) * temporal[b]).sum();
                    let nx: f64 = (0..n).map(|j| nc.get(&[r, j]) * spatial[j]).sum();
                    -(mx + nx)
                })
            }
        };
        Ok(JetVector {
            temporal,
            spatial,
            vertical,
        })
    }

    /// Vertical component expressions `[i·p + α]`, for prolongations.
    pub fn vertical_exprs(&self) -> Option<&[Expr]> {
        match &self.vertical {
            Vertical::Prolonged(es) => Some(es),
            Vertical::Horizontal(_) => None,
        }
    }
}

/// `X^{(i)}_{(α)} = D_α X^i − (D_α X^β) x^i_β`.
pub fn olver_prolong(x: &BaseVectorField) -> JetVectorField {
    let (p, n) = (x.p(), x.n());
    let dxt: Vec<Vec<Expr>> = (0..p)
        .map(|a| x.temporal.iter().map(|xb| total_derivative_expr(xb, a, n)).collect())
        .collect();
    let vertical = (0..n)
        .flat_map(|i| (0..p).map(move |a| (i, a)))
        .map(|(i, a)| {
            let mut e = total_derivative_expr(&x.spatial[i], a, n);
            for b in 0..p {
                e = e - &dxt[a][b] * &Expr::jet(i, b);
            }
            e
        })
        .collect();
    JetVectorField {
        base: x.clone(),
        vertical: Vertical::Prolonged(vertical),
    }
}

/// `X^H = X − (M^{(j)}_{(β)α} X^α + N^{(j)}_{(β)i} X^i) ∂/∂x^j_β`.
pub fn horizontal_lift(x: &BaseVectorField, g: &NonlinearConnection) -> Result<JetVectorField> {
    if g.dims() != (x.p(), x.n()) {
        return Err(Error::Dimension("connection and vector field live on different bundles".into()));
    }
    Ok(JetVectorField {
        base: x.clone(),
        vertical: Vertical::Horizontal(g.clone()),
    })
}

/// `pr⁽¹⁾X − X^H`, a vertical d-tensor field with signature `U(i,a)`.
#[derive(Debug, Clone)]
pub struct VerticalGap {
    x: BaseVectorField,
    prolonged: JetVectorField,
    g: NonlinearConnection,
    signature: Signature,
}

impl VerticalGap {
    pub fn new(x: BaseVectorField, g: NonlinearConnection) -> Result<VerticalGap> {
        if g.dims() != (x.p(), x.n()) {
            return Err(Error::Dimension("connection and vector field live on different bundles".into()));
        }
        Ok(VerticalGap {
            prolonged: olver_prolong(&x),
            x,
            g,
            signature: "U(i,a)".parse()?,
        })
    }
}

impl JetField for VerticalGap {
    fn name(&self) -> String {
        "vertical_gap".into()
    }
    fn signature(&self) -> &Signature {
        &self.signature
    }
    fn dims(&self) -> (usize, usize) {
        (self.x.p(), self.x.n())
    }
    fn eval(&self, u: &JetPoint) -> Result<Components> {
        let (p, n) = self.dims();
        let pr = self.prolonged.eval(u)?;
        let (m, nc) = self.g.eval(u)?;
        let mut out = Components::zeros(vec![n * p]);
        for i in 0..n {
            for a in 0..p {
                let r = i * p + a;
                let mx: f64 = (0..p).map(|b| m.get(&[r, b]) * pr.temporal[b]).sum();
                let nx: f64 = (0..n).map(|j| nc.get(&[r, j]) * pr.spatial[j]).sum();
                out.set(&[r], pr.vertical[(i, a)] + mx + nx);
            }
        }
        Ok(out)
    }
    fn in_chart(&self, c: &ChangeMap) -> Result<FieldRef> {
        Ok(Arc::new(VerticalGap::new(self.x.in_chart(c)?, self.g.in_chart(c)?)?))
    }
}

pub fn vertical_gap(x: &BaseVectorField, g: &NonlinearConnection, u: &JetPoint) -> Result<Components> {
    VerticalGap::new(x.clone(), g.clone())?.eval(u)
}

// ---------------------------------------------------------------------------
// Flow oracle

const FLOW_SUBSTEPS: usize = 16;
const JACOBIAN_STEP: f64 = 1e-4;

/// Time-`eps` flow of `X` on `T x M` by RK4, point packed as `(t, x)`.
fn flow(x: &BaseVectorField, y0: &[f64], eps: f64, domain: &DomainBox) -> Result<Vec<f64>> {
    let p = x.p();
    let rhs = |y: &[f64]| -> Result<Vec<f64>> {
        let (a, b) = x.eval(&y[..p], &y[p..])?;
        Ok(a.into_iter().chain(b).collect())
    };
    let h = eps / FLOW_SUBSTEPS as f64;
    let mut y = y0.to_vec();
    let shift = |y: &[f64], c: f64, k: &[f64]| -> Vec<f64> { y.iter().zip(k).map(|(y, k)| y + c * k).collect() };
    for _ in 0..FLOW_SUBSTEPS {
        let k1 = rhs(&y)?;
        let k2 = rhs(&shift(&y, 0.5 * h, &k1))?;
        let k3 = rhs(&shift(&y, 0.5 * h, &k2))?;
        let k4 = rhs(&shift(&y, h, &k3))?;
        for j in 0..y.len() {
            y[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        if y.iter().any(|v| !v.is_finite()) || !domain.contains(&y[..p], &y[p..]) {
            return Err(Error::OutsideDomain(format!("flow of X from {y0:?} leaves the domain at {y:?}")));
        }
    }
    Ok(y)
}

/// Jet transported by the flow: the graph `t ↦ (t, x + v·(t − t0))` is pushed
/// forward and re-solved for its slope,
/// `ṽ = (∂_t Φ_x + ∂_x Φ_x v)(∂_t Φ_t + ∂_x Φ_t v)⁻¹`.
fn flowed_jet(x: &BaseVectorField, u: &JetPoint, eps: f64, domain: &DomainBox) -> Result<DMatrix<f64>> {
    let (p, n) = (u.p(), u.n());
    let y0: Vec<f64> = u.t().iter().chain(u.x()).copied().collect();
    let dim = p + n;
    let mut jac = DMatrix::zeros(dim, dim);
    for k in 0..dim {
        let step = JACOBIAN_STEP * y0[k].abs().max(1.0);
        let mut yp = y0.clone();
        let mut ym = y0.clone();
        yp[k] += step;
        ym[k] -= step;
        let (fp, fm) = (flow(x, &yp, eps, domain)?, flow(x, &ym, eps, domain)?);
        for r in 0..dim {
            jac[(r, k)] = (fp[r] - fm[r]) / (2.0 * step);
        }
    }
    let v = u.v();
    let tt = jac.view((0, 0), (p, p)) + jac.view((0, p), (p, n)) * v;
    let xt = jac.view((p, 0), (n, p)) + jac.view((p, p), (n, n)) * v;
    let inv = tt
        .try_inverse()
        .ok_or(Error::SingularJacobian { block: "flowed temporal", det: 0.0 })?;
    Ok(xt * inv)
}

/// `max |(ṽ(ε) − ṽ(−ε))/(2ε) − pr⁽¹⁾X|` at `u`: a finite-difference
/// embodiment of the prolonged one-parameter group.
pub fn flow_prolong_check(x: &BaseVectorField, u: &JetPoint, eps: f64) -> Result<f64> {
    flow_prolong_check_in(x, u, eps, &DomainBox::unbounded(x.p(), x.n()))
}

pub fn flow_prolong_check_in(x: &BaseVectorField, u: &JetPoint, eps: f64, domain: &DomainBox) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::Unsupported(format!("flow step must be positive, got {eps}")));
    }
    let pr = olver_prolong(x).eval(u)?;
    let fwd = flowed_jet(x, u, eps, domain)?;
    let bwd = flowed_jet(x, u, -eps, domain)?;
    let fd = (fwd - bwd) / (2.0 * eps);
    Ok((fd - pr.vertical).amax())
}
