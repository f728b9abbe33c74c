//! Affine and harmonic maps `T -> M` of a multi-time spray: residuals, the
//! Poisson form, an RK4 solver for `dim T = 1` and a damped Jacobi grid solver
//! for `dim T = 2`.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::dtensor::Components;
use crate::error::{Error, Result};
use crate::exprlang::{parse, BaseEnv, Expr, Var};
use crate::geometry::Metric;
use crate::jetspace::JetPoint;
use crate::sprays::MultiTimeSpray;

/// A map `t ↦ x(t)` given by expressions over `t1..tp`, with exact first and
/// second derivatives.
#[derive(Debug, Clone)]
pub struct SmoothMap {
    p: usize,
    components: Vec<Expr>,
    /// `[i][α]`
    first: Vec<Vec<Expr>>,
    /// `[i][α][β]`
    second: Vec<Vec<Vec<Expr>>>,
}

/// Jet of a map at a point plus its second derivatives `x^i_{αβ}`.
#[derive(Debug, Clone)]
pub struct MapJet {
    pub jet: JetPoint,
    /// `[(i·p + α)·p + β]`
    pub second: Vec<f64>,
}

impl MapJet {
    pub fn second(&self, i: usize, a: usize, b: usize) -> f64 {
        let p = self.jet.p();
        self.second[(i * p + a) * p + b]
    }
}

impl SmoothMap {
    pub fn new(p: usize, components: Vec<Expr>) -> Result<SmoothMap> {
        for e in &components {
            for v in e.variables() {
                if !(0..p).any(|a| Var::time(a).name() == v) {
                    return Err(Error::Dimension(format!(
                        "map component `{e}` depends on `{v}`, expected only t1..t{p}"
                    )));
                }
            }
        }
        let first: Vec<Vec<Expr>> = components
            .iter()
            .map(|e| (0..p).map(|a| e.diff(Var::time(a).name())).collect())
            .collect();
        let second = first
            .iter()
            .map(|row| {
                row.iter()
                    .map(|d| (0..p).map(|b| d.diff(Var::time(b).name())).collect())
                    .collect()
            })
            .collect();
        Ok(SmoothMap {
            p,
            components,
            first,
            second,
        })
    }

    pub fn parse(p: usize, sources: &[&str]) -> Result<SmoothMap> {
        SmoothMap::new(p, sources.iter().map(|s| Ok(parse(s)?)).collect::<Result<_>>()?)
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn n(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[Expr] {
        &self.components
    }

    pub fn value(&self, t: &[f64]) -> Result<Vec<f64>> {
        let env = BaseEnv { t, x: &[] };
        self.components.iter().map(|e| Ok(e.eval(&env)?)).collect()
    }

    fn check_t(&self, t: &[f64]) -> Result<()> {
        if t.len() != self.p {
            return Err(Error::Dimension(format!("map on a {}-dimensional T evaluated at {t:?}", self.p)));
        }
        Ok(())
    }

    pub fn map_jet(&self, t: &[f64]) -> Result<MapJet> {
        self.check_t(t)?;
        let env = BaseEnv { t, x: &[] };
        let (p, n) = (self.p, self.n());
        let x = self.value(t)?;
        let mut v = DMatrix::zeros(n, p);
        for i in 0..n {
            for a in 0..p {
                v[(i, a)] = self.first[i][a].eval(&env)?;
            }
        }
        let second = self
            .second
            .iter()
            .flatten()
            .flatten()
            .map(|e| Ok(e.eval(&env)?))
            .collect::<Result<Vec<_>>>()?;
        Ok(MapJet {
            jet: JetPoint::new(t.to_vec(), x, v)?,
            second,
        })
    }
}

/// `(t, f(t), ∂f/∂t)`.
pub fn jet_lift(f: &SmoothMap, t: &[f64]) -> Result<JetPoint> {
    Ok(f.map_jet(t)?.jet)
}

fn check_spray(s: &MultiTimeSpray, mj: &MapJet) -> Result<()> {
    let dims = (mj.jet.p(), mj.jet.n());
    if s.dims() != dims {
        return Err(Error::Dimension(format!(
            "spray lives on {:?}, map jet on {dims:?}",
            s.dims()
        )));
    }
    Ok(())
}

/// `x^i_{αβ} + G_{(α)β} + G_{(β)α} + H_{(α)β} + H_{(β)α}`, shape `[n, p, p]`.
pub fn affine_residual_at(mj: &MapJet, s: &MultiTimeSpray) -> Result<Components> {
    check_spray(s, mj)?;
    let (p, n) = (mj.jet.p(), mj.jet.n());
    let h = s.temporal.eval(&mj.jet)?;
    let g = s.spatial.eval(&mj.jet)?;
    let sym = |c: &Components, i: usize, a: usize, b: usize| c.get(&[i * p + a, b]) + c.get(&[i * p + b, a]);
    let mut out = Components::zeros(vec![n, p, p]);
    for i in 0..n {
        for a in 0..p {
            for b in 0..p {
                out.set(&[i, a, b], mj.second(i, a, b) + sym(&g, i, a, b) + sym(&h, i, a, b));
            }
        }
    }
    Ok(out)
}

pub fn affine_residual(f: &SmoothMap, s: &MultiTimeSpray, t: &[f64]) -> Result<Components> {
    affine_residual_at(&f.map_jet(t)?, s)
}

/// `h^{αβ}(x^i_{αβ} + 2G^{(i)}_{(α)β} + 2H^{(i)}_{(α)β})`.
pub fn harmonic_residual_at(mj: &MapJet, s: &MultiTimeSpray, h: &Metric) -> Result<Vec<f64>> {
    traced_residual(mj, s, &h.inverse_at(mj.jet.t())?)
}

fn traced_residual(mj: &MapJet, s: &MultiTimeSpray, hinv: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_spray(s, mj)?;
    let (p, n) = (mj.jet.p(), mj.jet.n());
    let hs = s.temporal.eval(&mj.jet)?;
    let gs = s.spatial.eval(&mj.jet)?;
    Ok((0..n)
        .map(|i| {
            let mut r = 0.0;
            for a in 0..p {
                for b in 0..p {
                    let k = [i * p + a, b];
                    r += hinv[(a, b)] * (mj.second(i, a, b) + 2.0 * gs.get(&k) + 2.0 * hs.get(&k));
                }
            }
            r
        })
        .collect())
}

pub fn harmonic_residual(f: &SmoothMap, s: &MultiTimeSpray, h: &Metric, t: &[f64]) -> Result<Vec<f64>> {
    harmonic_residual_at(&f.map_jet(t)?, s, h)
}

/// `S = G + H + ½ H^γ_{αβ} x^i_γ` and its h-trace, built from a spray and the
/// temporal metric.
#[derive(Debug, Clone)]
pub struct PoissonSource {
    spray: MultiTimeSpray,
    h: Metric,
}

impl PoissonSource {
    pub fn new(spray: MultiTimeSpray, h: Metric) -> Result<PoissonSource> {
        if h.dim() != spray.dims().0 {
            return Err(Error::Dimension(format!(
                "temporal metric `{}` has dimension {}, spray has p = {}",
                h.name(),
                h.dim(),
                spray.dims().0
            )));
        }
        Ok(PoissonSource { spray, h })
    }

    /// `S^{(i)}_{(α)β}` in the spray layout.
    pub fn components(&self, u: &JetPoint) -> Result<Components> {
        let (p, n) = (u.p(), u.n());
        let mut s = self.spray.spatial.eval(u)?;
        s.axpy(1.0, &self.spray.temporal.eval(u)?)?;
        let ch = self.h.christoffel(u.t())?;
        for i in 0..n {
            for a in 0..p {
                for b in 0..p {
                    let extra: f64 = (0..p).map(|g| ch.get(g, a, b) * u.v()[(i, g)]).sum();
                    let k = [i * p + a, b];
                    s.set(&k, s.get(&k) + 0.5 * extra);
                }
            }
        }
        Ok(s)
    }

    /// `S^i = h^{αβ} S^{(i)}_{(α)β}`.
    pub fn trace(&self, u: &JetPoint) -> Result<Vec<f64>> {
        let s = self.components(u)?;
        let hinv = self.h.inverse_at(u.t())?;
        let p = u.p();
        Ok((0..u.n())
            .map(|i| {
                let mut acc = 0.0;
                for a in 0..p {
                    for b in 0..p {
                        acc += hinv[(a, b)] * s.get(&[i * p + a, b]);
                    }
                }
                acc
            })
            .collect())
    }
}

/// `Δ_h x^i = h^{αβ}(x^i_{αβ} − H^γ_{αβ} x^i_γ)`.
pub fn laplacian_at(mj: &MapJet, h: &Metric) -> Result<Vec<f64>> {
    let (p, n) = (mj.jet.p(), mj.jet.n());
    let hinv = h.inverse_at(mj.jet.t())?;
    let ch = h.christoffel(mj.jet.t())?;
    let v = mj.jet.v();
    Ok((0..n)
        .map(|i| {
            let mut acc = 0.0;
            for a in 0..p {
                for b in 0..p {
                    let conn: f64 = (0..p).map(|g| ch.get(g, a, b) * v[(i, g)]).sum();
                    acc += hinv[(a, b)] * (mj.second(i, a, b) - conn);
                }
            }
            acc
        })
        .collect())
}

/// `Δ_h x^i + 2 S^i`.
pub fn poisson_residual_at(mj: &MapJet, source: &PoissonSource, h: &Metric) -> Result<Vec<f64>> {
    let lap = laplacian_at(mj, h)?;
    let s = source.trace(&mj.jet)?;
    Ok(lap.iter().zip(&s).map(|(l, s)| l + 2.0 * s).collect())
}

pub fn poisson_residual(f: &SmoothMap, source: &PoissonSource, h: &Metric, t: &[f64]) -> Result<Vec<f64>> {
    poisson_residual_at(&f.map_jet(t)?, source, h)
}

// ---------------------------------------------------------------------------
// dim T = 1: geodesic-type ODE

/// RK4 samples of a curve `t ↦ (x, ẋ)`.
#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn jet(&self, k: usize) -> Result<JetPoint> {
        let n = self.x[k].len();
        JetPoint::new(vec![self.t[k]], self.x[k].clone(), DMatrix::from_column_slice(n, 1, &self.v[k]))
    }

    /// First time at which component `i` crosses `level`, located with the
    /// cubic Hermite interpolant of the samples.
    pub fn crossing(&self, i: usize, level: f64) -> Option<f64> {
        for k in 1..self.len() {
            let (f0, f1) = (self.x[k - 1][i] - level, self.x[k][i] - level);
            if f0 == 0.0 {
                return Some(self.t[k - 1]);
            }
            if f0.signum() == f1.signum() {
                continue;
            }
            let (t0, t1) = (self.t[k - 1], self.t[k]);
            let dt = t1 - t0;
            let (d0, d1) = (self.v[k - 1][i] * dt, self.v[k][i] * dt);
            let hermite = |s: f64| {
                let (s2, s3) = (s * s, s * s * s);
                (2.0 * s3 - 3.0 * s2 + 1.0) * f0 + (s3 - 2.0 * s2 + s) * d0 + (-2.0 * s3 + 3.0 * s2) * f1 + (s3 - s2) * d1
            };
            let (mut lo, mut hi) = (0.0, 1.0);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if hermite(mid).signum() == f0.signum() {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            return Some(t0 + 0.5 * (lo + hi) * dt);
        }
        None
    }
}

impl Trajectory {
    /// Harmonic residual norm (max over components) at every sample, with
    /// `ẍ` differentiated from the sampled velocities (3-point, second order,
    /// one-sided at the ends) so the column measures the discrete solution
    /// rather than the ODE right-hand side.
    pub fn harmonic_residuals(&self, s: &MultiTimeSpray, h: &Metric) -> Result<Vec<f64>> {
        let len = self.len();
        if len < 3 {
            return Err(Error::Unsupported("need at least three samples for residuals".into()));
        }
        (0..len)
            .map(|k| {
                let c = k.clamp(1, len - 2);
                let idx = [c - 1, c, c + 1];
                let ts = idx.map(|j| self.t[j]);
                // derivative at t_k of the quadratic through the three samples
                let w: Vec<f64> = (0..3)
                    .map(|j| {
                        let (a, b) = ((j + 1) % 3, (j + 2) % 3);
                        (2.0 * self.t[k] - ts[a] - ts[b]) / ((ts[j] - ts[a]) * (ts[j] - ts[b]))
                    })
                    .collect();
                let second = (0..self.v[k].len())
                    .map(|i| (0..3).map(|j| w[j] * self.v[idx[j]][i]).sum())
                    .collect();
                let mj = MapJet {
                    jet: self.jet(k)?,
                    second,
                };
                let r = harmonic_residual_at(&mj, s, h)?;
                Ok(r.iter().fold(0.0, |m: f64, v| m.max(v.abs())))
            })
            .collect()
    }

    /// CSV with columns `t1, x1..xn, residual`.
    pub fn to_csv(&self, residuals: &[f64]) -> String {
        let n = self.x.first().map_or(0, Vec::len);
        let mut out = String::from("t1");
        for i in 0..n {
            out.push_str(&format!(",x{}", i + 1));
        }
        out.push_str(",residual\n");
        for k in 0..self.len() {
            out.push_str(&csv_num(self.t[k]));
            for x in &self.x[k] {
                out.push(',');
                out.push_str(&csv_num(*x));
            }
            out.push_str(&format!(",{}\n", csv_num(residuals[k])));
        }
        out
    }
}

/// CSV number: plain decimals in the usual range, scientific otherwise.
fn csv_num(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 || (1e-4..1e15).contains(&a) || !v.is_finite() {
        v.to_string()
    } else {
        format!("{v:e}")
    }
}

/// Acceleration `ẍ = −2G − 2H` of the `p = 1` affine-map equation.
fn acceleration(s: &MultiTimeSpray, t: f64, x: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    let n = x.len();
    let u = JetPoint::new(vec![t], x.to_vec(), DMatrix::from_column_slice(n, 1, v))?;
    let g = s.spatial.eval(&u)?;
    let h = s.temporal.eval(&u)?;
    Ok((0..n).map(|i| -2.0 * (g.data()[i] + h.data()[i])).collect())
}

/// Classical RK4 for `x'' + 2G + 2H = 0` (`dim T = 1`), sampled at `step`
/// spacing from `t0` to `t1` (the last step is shortened to land on `t1`).
pub fn solve_affine_ode(s: &MultiTimeSpray, x0: &[f64], v0: &[f64], span: (f64, f64), step: f64) -> Result<Trajectory> {
    let (p, n) = s.dims();
    if p != 1 {
        return Err(Error::Unsupported(format!("the ODE solver needs dim T = 1, spray has p = {p}")));
    }
    if x0.len() != n || v0.len() != n {
        return Err(Error::Dimension(format!("initial data must have {n} components")));
    }
    if !(step > 0.0) || !(span.1 > span.0) {
        return Err(Error::Unsupported("need step > 0 and t1 > t0".into()));
    }
    let (t0, t1) = span;
    let steps = ((t1 - t0) / step - 1e-9).ceil().max(1.0) as usize;
    let mut traj = Trajectory {
        t: vec![t0],
        x: vec![x0.to_vec()],
        v: vec![v0.to_vec()],
    };
    let axpy = |a: &[f64], c: f64, b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(a, b)| a + c * b).collect() };
    let (mut t, mut x, mut v) = (t0, x0.to_vec(), v0.to_vec());
    for k in 0..steps {
        let hstep = if k + 1 == steps { t1 - t } else { step };
        let wrap = |t: f64| move |e: Error| Error::Integration { t, source: Box::new(e) };
        let a1 = acceleration(s, t, &x, &v).map_err(wrap(t))?;
        let (x2, v2) = (axpy(&x, 0.5 * hstep, &v), axpy(&v, 0.5 * hstep, &a1));
        let a2 = acceleration(s, t + 0.5 * hstep, &x2, &v2).map_err(wrap(t))?;
        let (x3, v3) = (axpy(&x, 0.5 * hstep, &v2), axpy(&v, 0.5 * hstep, &a2));
        let a3 = acceleration(s, t + 0.5 * hstep, &x3, &v3).map_err(wrap(t))?;
        let (x4, v4) = (axpy(&x, hstep, &v3), axpy(&v, hstep, &a3));
        let a4 = acceleration(s, t + hstep, &x4, &v4).map_err(wrap(t))?;
        for i in 0..n {
            x[i] += hstep / 6.0 * (v[i] + 2.0 * v2[i] + 2.0 * v3[i] + v4[i]);
            v[i] += hstep / 6.0 * (a1[i] + 2.0 * a2[i] + 2.0 * a3[i] + a4[i]);
        }
        t = if k + 1 == steps { t1 } else { t0 + (k + 1) as f64 * step };
        traj.t.push(t);
        traj.x.push(x.clone());
        traj.v.push(v.clone());
    }
    Ok(traj)
}

// ---------------------------------------------------------------------------
// dim T = 2: Dirichlet problem on a rectangle

/// Uniform `m x m` grid on `[lo1, hi1] x [lo2, hi2]`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Grid {
    pub m: usize,
    pub lo: [f64; 2],
    pub hi: [f64; 2],
}

impl Grid {
    pub fn unit(m: usize) -> Grid {
        Grid {
            m,
            lo: [0.0, 0.0],
            hi: [1.0, 1.0],
        }
    }

    pub fn spacing(&self) -> [f64; 2] {
        let d = (self.m - 1) as f64;
        [(self.hi[0] - self.lo[0]) / d, (self.hi[1] - self.lo[1]) / d]
    }

    /// Node `(a, b)` at `t1 = lo1 + a·Δ1`, `t2 = lo2 + b·Δ2`.
    pub fn node(&self, a: usize, b: usize) -> [f64; 2] {
        let d = self.spacing();
        [self.lo[0] + a as f64 * d[0], self.lo[1] + b as f64 * d[1]]
    }

    fn is_boundary(&self, a: usize, b: usize) -> bool {
        a == 0 || b == 0 || a + 1 == self.m || b + 1 == self.m
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SolverOptions {
    pub damping: f64,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            damping: 0.8,
            max_iters: 50_000,
            tol: 1e-10,
        }
    }
}

/// Converged (or iteration-capped) grid map.
#[derive(Debug, Clone, Serialize)]
pub struct GridSolution {
    pub grid: Grid,
    pub n: usize,
    /// `values[(a·m + b)·n + i]`
    pub values: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
    /// Max interior residual before each sweep.
    pub log: Vec<f64>,
}

impl GridSolution {
    pub fn at(&self, a: usize, b: usize) -> &[f64] {
        let o = (a * self.grid.m + b) * self.n;
        &self.values[o..o + self.n]
    }

    /// Discrete residual norm per node, `[a·m + b]`; boundary nodes carry
    /// Dirichlet data and report 0.
    pub fn residuals(&self, s: &MultiTimeSpray, h: &Metric) -> Result<Vec<f64>> {
        let m = self.grid.m;
        let mut out = vec![0.0; m * m];
        for a in 1..m - 1 {
            for b in 1..m - 1 {
                let mj = grid_jet(&self.grid, self.n, &self.values, a, b)?;
                let r = harmonic_residual_at(&mj, s, h)?;
                out[a * m + b] = r.iter().fold(0.0, |w: f64, v| w.max(v.abs()));
            }
        }
        Ok(out)
    }

    /// CSV with columns `t1, t2, x1..xn, residual`.
    pub fn to_csv(&self, residuals: &[f64]) -> String {
        let m = self.grid.m;
        let mut out = String::from("t1,t2");
        for i in 0..self.n {
            out.push_str(&format!(",x{}", i + 1));
        }
        out.push_str(",residual\n");
        for a in 0..m {
            for b in 0..m {
                let [t1, t2] = self.grid.node(a, b);
                out.push_str(&format!("{},{}", csv_num(t1), csv_num(t2)));
                for x in self.at(a, b) {
                    out.push(',');
                    out.push_str(&csv_num(*x));
                }
                out.push_str(&format!(",{}\n", csv_num(residuals[a * m + b])));
            }
        }
        out
    }

    /// Convergence log as CSV `iter,residual`.
    pub fn log_csv(&self) -> String {
        let mut out = String::from("iter,residual\n");
        for (k, r) in self.log.iter().enumerate() {
            out.push_str(&format!("{k},{}\n", csv_num(*r)));
        }
        out
    }
}

/// Discrete map jet at an interior node: central differences for `x_α`,
/// `x_{αα}`, and the 4-point cross stencil for `x_{12}`.
fn grid_jet(grid: &Grid, n: usize, values: &[f64], a: usize, b: usize) -> Result<MapJet> {
    let m = grid.m;
    let [d1, d2] = grid.spacing();
    let at = |a: usize, b: usize, i: usize| values[(a * m + b) * n + i];
    let mut v = DMatrix::zeros(n, 2);
    let mut second = vec![0.0; n * 4];
    for i in 0..n {
        let c = at(a, b, i);
        v[(i, 0)] = (at(a + 1, b, i) - at(a - 1, b, i)) / (2.0 * d1);
        v[(i, 1)] = (at(a, b + 1, i) - at(a, b - 1, i)) / (2.0 * d2);
        let x11 = (at(a + 1, b, i) - 2.0 * c + at(a - 1, b, i)) / (d1 * d1);
        let x22 = (at(a, b + 1, i) - 2.0 * c + at(a, b - 1, i)) / (d2 * d2);
        let x12 = (at(a + 1, b + 1, i) - at(a + 1, b - 1, i) - at(a - 1, b + 1, i) + at(a - 1, b - 1, i)) / (4.0 * d1 * d2);
        second[i * 4] = x11;
        second[i * 4 + 1] = x12;
        second[i * 4 + 2] = x12;
        second[i * 4 + 3] = x22;
    }
    let t = grid.node(a, b);
    let x = (0..n).map(|i| at(a, b, i)).collect();
    Ok(MapJet {
        jet: JetPoint::new(t.to_vec(), x, v)?,
        second,
    })
}

/// Damped Jacobi relaxation of the discretised harmonic-map system with
/// Dirichlet data `boundary` (expressions over `t1, t2`). Spray terms are
/// evaluated at the previous iterate. Interior nodes start at the mean of
/// the boundary values.
pub fn solve_harmonic_grid(
    s: &MultiTimeSpray,
    h: &Metric,
    boundary: &SmoothMap,
    grid: Grid,
    opts: SolverOptions,
) -> Result<GridSolution> {
    let (p, n) = s.dims();
    if p != 2 || h.dim() != 2 || boundary.p() != 2 {
        return Err(Error::Unsupported("the grid solver needs dim T = 2".into()));
    }
    if boundary.n() != n {
        return Err(Error::Dimension(format!("boundary data has {} components, spray n = {n}", boundary.n())));
    }
    if grid.m < 4 {
        return Err(Error::Unsupported(format!("grid size {} is below the minimum of 4", grid.m)));
    }
    let m = grid.m;
    let [d1, d2] = grid.spacing();
    let mut values = vec![0.0; m * m * n];
    let mut mean = vec![0.0; n];
    let mut count = 0.0;
    for a in 0..m {
        for b in 0..m {
            if grid.is_boundary(a, b) {
                let x = boundary.value(&grid.node(a, b))?;
                if x.iter().any(|v| !v.is_finite()) {
                    return Err(Error::OutsideDomain(format!("boundary data is not finite at {:?}", grid.node(a, b))));
                }
                values[(a * m + b) * n..(a * m + b + 1) * n].copy_from_slice(&x);
                mean.iter_mut().zip(&x).for_each(|(s, x)| *s += x);
                count += 1.0;
            }
        }
    }
    for a in 1..m - 1 {
        for b in 1..m - 1 {
            for i in 0..n {
                values[(a * m + b) * n + i] = mean[i] / count;
            }
        }
    }
    // h⁻¹ and the diagonal of the discrete operator at each interior node
    let hinvs: Vec<DMatrix<f64>> = (1..m - 1)
        .flat_map(|a| (1..m - 1).map(move |b| (a, b)))
        .map(|(a, b)| h.inverse_at(&grid.node(a, b)))
        .collect::<Result<_>>()?;
    let diag: Vec<f64> = hinvs
        .iter()
        .map(|hinv| -2.0 * (hinv[(0, 0)] / (d1 * d1) + hinv[(1, 1)] / (d2 * d2)))
        .collect();

    let sweep = |values: &[f64]| -> Result<(Vec<f64>, f64)> {
        let rows: Vec<(Vec<f64>, f64)> = (1..m - 1)
            .into_par_iter()
            .map(|a| {
                let mut row = Vec::with_capacity((m - 2) * n);
                let mut worst: f64 = 0.0;
                for b in 1..m - 1 {
                    let mj = grid_jet(&grid, n, values, a, b)?;
                    let node = (a - 1) * (m - 2) + (b - 1);
                    let r = traced_residual(&mj, s, &hinvs[node])?;
                    let d = diag[node];
                    for (i, ri) in r.iter().enumerate() {
                        worst = worst.max(ri.abs());
                        row.push(values[(a * m + b) * n + i] - opts.damping * ri / d);
                    }
                }
                Ok((row, worst))
            })
            .collect::<Result<_>>()?;
        let residual = rows.iter().fold(0.0, |w, r| f64::max(w, r.1));
        let mut next = values.to_vec();
        for (a, (row, _)) in (1..m - 1).zip(rows) {
            let o = (a * m + 1) * n;
            next[o..o + row.len()].copy_from_slice(&row);
        }
        Ok((next, residual))
    };

    let mut log = Vec::new();
    let mut initial = None;
    for iter in 0..=opts.max_iters {
        let (next, residual) = sweep(&values)?;
        if !residual.is_finite() {
            return Err(Error::Divergence {
                iteration: iter,
                residual,
                initial: initial.unwrap_or(f64::NAN),
            });
        }
        log.push(residual);
        let init = *initial.get_or_insert(residual);
        if residual < opts.tol || iter == opts.max_iters {
            return Ok(GridSolution {
                grid,
                n,
                values,
                iterations: iter,
                residual,
                converged: residual < opts.tol,
                log,
            });
        }
        if residual > 10.0 * init {
            return Err(Error::Divergence {
                iteration: iter,
                residual,
                initial: init,
            });
        }
        values = next;
    }
    unreachable!("loop returns on the last iteration")
}

/// Continuous harmonic residual of an expression map at grid-free points,
/// convenient for comparing metrics.
pub fn residual_field(f: &SmoothMap, s: &MultiTimeSpray, h: &Metric, points: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    points.iter().map(|t| harmonic_residual(f, s, h, t)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Factor;

    fn canonical(h: &str, p: usize, phi: &str, n: usize) -> (MultiTimeSpray, Metric, Metric) {
        let h = Metric::catalog(h, Factor::Temporal, p).unwrap();
        let phi = Metric::catalog(phi, Factor::Spatial, n).unwrap();
        (MultiTimeSpray::canonical(&h, &phi).unwrap(), h, phi)
    }

    #[test]
    fn jet_lift_examples() {
        let c = SmoothMap::parse(2, &["3", "-1"]).unwrap();
        assert_eq!(jet_lift(&c, &[0.2, 0.4]).unwrap().v().amax(), 0.0);
        let lin = SmoothMap::parse(2, &["2*t1 - t2", "0.5*t2"]).unwrap();
        let u = jet_lift(&lin, &[0.2, 0.4]).unwrap();
        assert_eq!(u.v(), &DMatrix::from_row_slice(2, 2, &[2.0, -1.0, 0.0, 0.5]));
        assert!(SmoothMap::parse(1, &["x1"]).is_err());
    }

    #[test]
    fn residual_examples() {
        let (s, h, _) = canonical("euclidean:1", 1, "euclidean:1", 1);
        let line = SmoothMap::parse(1, &["3*t1 - 2"]).unwrap();
        assert_eq!(affine_residual(&line, &s, &[0.7]).unwrap().max_abs(), 0.0);
        let sq = SmoothMap::parse(1, &["t1^2"]).unwrap();
        assert_eq!(affine_residual(&sq, &s, &[0.7]).unwrap().data(), &[2.0]);
        assert_eq!(harmonic_residual(&line, &s, &h, &[0.3]).unwrap(), vec![0.0]);

        let (s2, h2, _) = canonical("euclidean:2", 2, "euclidean:1", 1);
        let hp = SmoothMap::parse(2, &["t1^2 - t2^2"]).unwrap();
        let zero = PoissonSource::new(s2.clone(), h2.clone()).unwrap();
        assert_eq!(poisson_residual(&hp, &zero, &h2, &[0.3, 0.8]).unwrap(), vec![0.0]);
        let c = SmoothMap::parse(2, &["4"]).unwrap();
        assert_eq!(poisson_residual(&c, &zero, &h2, &[0.3, 0.8]).unwrap(), vec![0.0]);
    }

    #[test]
    fn great_circle_is_affine_on_the_sphere() {
        // equator-inclined great circle through (θ, φ) = (π/2, 0), inclination 0.5
        let (s, _, _) = canonical("euclidean:1", 1, "sphere:2", 2);
        let inc: f64 = 0.5;
        // closed form through the ambient embedding: θ = acos(sin t sin i)
        let tr = solve_affine_ode(&s, &[std::f64::consts::FRAC_PI_2, 0.0], &[-inc.sin(), inc.cos()], (0.0, 1.0), 1e-3).unwrap();
        let t: f64 = 1.0;
        let z = t.sin() * inc.sin();
        let theta = z.acos();
        let phi = (t.sin() * inc.cos()).atan2(t.cos());
        let last = tr.x.last().unwrap();
        assert!((last[0] - theta).abs() < 1e-10 && (last[1] - phi).abs() < 1e-10);
        let mj = MapJet {
            jet: tr.jet(tr.len() - 1).unwrap(),
            second: acceleration(&s, 1.0, last, tr.v.last().unwrap()).unwrap(),
        };
        assert!(affine_residual_at(&mj, &s).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn flat_ode_is_a_line() {
        let (s, _, _) = canonical("euclidean:1", 1, "euclidean:2", 2);
        let tr = solve_affine_ode(&s, &[0.5, -1.0], &[1.0, 0.0], (0.0, 3.0), 0.1).unwrap();
        assert_eq!(tr.len(), 31);
        for (t, x) in tr.t.iter().zip(&tr.x) {
            assert!((x[0] - 0.5 - t).abs() < 1e-10 && (x[1] + 1.0).abs() < 1e-10);
        }
        let (s2, _, _) = canonical("euclidean:2", 2, "euclidean:2", 2);
        assert!(matches!(solve_affine_ode(&s2, &[0.0; 2], &[0.0; 2], (0.0, 1.0), 0.1), Err(Error::Unsupported(_))));
    }

    #[test]
    fn integration_failure_reports_time() {
        let (s, _, _) = canonical("euclidean:1", 1, "sphere:2", 2);
        // heads straight for the excluded pole region
        let r = solve_affine_ode(&s, &[1.0, 0.0], &[-1.0, 0.0], (0.0, 2.0), 0.01);
        match r {
            Err(Error::Integration { t, .. }) => assert!(t > 0.7 && t < 0.9, "{t}"),
            other => panic!("expected an integration error, got {other:?}"),
        }
    }

    #[test]
    fn hermite_crossing() {
        let (s, _, _) = canonical("euclidean:1", 1, "euclidean:1", 1);
        let tr = solve_affine_ode(&s, &[0.0], &[1.0], (0.0, 1.0), 0.3).unwrap();
        assert!((tr.crossing(0, 0.55).unwrap() - 0.55).abs() < 1e-12);
        assert!(tr.crossing(0, 5.0).is_none());
    }

    #[test]
    fn grid_solver_reproduces_linear_maps() {
        let (s, h, _) = canonical("euclidean:2", 2, "euclidean:2", 2);
        let f = SmoothMap::parse(2, &["1 + 2*t1 - t2", "0.5*t2 + t1"]).unwrap();
        let sol = solve_harmonic_grid(&s, &h, &f, Grid::unit(9), SolverOptions { tol: 1e-12, ..Default::default() }).unwrap();
        assert!(sol.converged);
        for a in 0..9 {
            for b in 0..9 {
                let want = f.value(&sol.grid.node(a, b)).unwrap();
                for (x, y) in sol.at(a, b).iter().zip(&want) {
                    assert!((x - y).abs() < 1e-8);
                }
            }
        }
        assert!(sol.log.windows(2).all(|w| w[1] <= w[0] * 1.0 + 1e-15));
    }

    #[test]
    fn grid_solver_rejects_bad_input() {
        let (s, h, _) = canonical("euclidean:1", 1, "euclidean:1", 1);
        let f = SmoothMap::parse(1, &["t1"]).unwrap();
        assert!(matches!(solve_harmonic_grid(&s, &h, &f, Grid::unit(9), SolverOptions::default()), Err(Error::Unsupported(_))));
        let (s, h, _) = canonical("euclidean:2", 2, "euclidean:1", 1);
        let f = SmoothMap::parse(2, &["t1"]).unwrap();
        assert!(matches!(solve_harmonic_grid(&s, &h, &f, Grid::unit(3), SolverOptions::default()), Err(Error::Unsupported(_))));
    }

    #[test]
    fn divergence_is_reported() {
        let (s, h, _) = canonical("euclidean:2", 2, "euclidean:1", 1);
        let f = SmoothMap::parse(2, &["t1^2 - t2^2 + t1*t2"]).unwrap();
        let r = solve_harmonic_grid(&s, &h, &f, Grid::unit(9), SolverOptions { damping: 2.5, ..Default::default() });
        assert!(matches!(r, Err(Error::Divergence { .. })), "{r:?}");
    }
}
