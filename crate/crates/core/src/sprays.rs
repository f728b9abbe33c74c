//! Temporal and spatial sprays: canonical sprays of metrics, their
//! inhomogeneous transformation laws, h-traces and the decomposition into a
//! canonical part plus a d-tensor.
//!
//! Coefficient arrays are `n x p x p` with axes `(j, β, α)`; as components the
//! first two axes are fused, signature `U(j,b);L(a)`.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::dtensor::{check_jet, check_law, Combination, Components, FieldRef, JetField, Signature, Verdict};
use crate::error::{Error, Result};
use crate::exprlang::Expr;
use crate::geometry::{Factor, Metric};
use crate::jetspace::{JetChange, JetPoint};
use crate::numdiff::ChangeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SprayKind {
    Temporal,
    Spatial,
}

pub fn spray_signature() -> Signature {
    "U(j,b);L(a)".parse().expect("static signature")
}

pub fn hspray_signature() -> Signature {
    "U(j)".parse().expect("static signature")
}

/// Spray coefficients `H^{(j)}_{(β)α}` or `G^{(j)}_{(β)α}`.
#[derive(Debug, Clone)]
pub struct Spray {
    kind: SprayKind,
    field: FieldRef,
}

impl Spray {
    pub fn new(kind: SprayKind, field: FieldRef) -> Result<Spray> {
        if field.signature() != &spray_signature() {
            return Err(Error::Dimension(format!(
                "spray coefficients need signature U(j,b);L(a), `{}` has {}",
                field.name(),
                field.signature()
            )));
        }
        Ok(Spray { kind, field })
    }

    pub fn temporal(field: FieldRef) -> Result<Spray> {
        Spray::new(SprayKind::Temporal, field)
    }

    pub fn spatial(field: FieldRef) -> Result<Spray> {
        Spray::new(SprayKind::Spatial, field)
    }

    pub fn kind(&self) -> SprayKind {
        self.kind
    }

    pub fn field(&self) -> &FieldRef {
        &self.field
    }

    pub fn dims(&self) -> (usize, usize) {
        self.field.dims()
    }

    pub fn eval(&self, u: &JetPoint) -> Result<Components> {
        self.field.eval(u)
    }

    /// Predicted coefficients at the image of `u` under `c`.
    pub fn transform(&self, c: &ChangeMap, u: &JetPoint) -> Result<Components> {
        let jc = JetChange::new(c, u)?;
        let values = self.eval(u)?;
        Ok(match self.kind {
            SprayKind::Temporal => transform_temporal_values(&values, &jc),
            SprayKind::Spatial => transform_spatial_values(&values, &jc),
        })
    }

    /// Recompute-vs-transform check of the spray's transformation law.
    pub fn check_law(&self, changes: &[ChangeMap], points: &[JetPoint], tol: f64) -> Verdict {
        let kind = self.kind;
        check_law(self.field.as_ref(), changes, points, tol, move |vals, jc| {
            Ok(match kind {
                SprayKind::Temporal => transform_temporal_values(vals, jc),
                SprayKind::Spatial => transform_spatial_values(vals, jc),
            })
        })
    }

    /// `λ·self + (1 − λ)·other`.
    pub fn affine_combination(&self, lambda: f64, other: &Spray) -> Result<Spray> {
        if self.kind != other.kind {
            return Err(Error::Dimension("cannot combine temporal and spatial sprays".into()));
        }
        let f = Combination::new(
            format!("{lambda}·{} + {}·{}", self.field.name(), 1.0 - lambda, other.field.name()),
            vec![(lambda, self.field.clone()), (1.0 - lambda, other.field.clone())],
        )?;
        Spray::new(self.kind, Arc::new(f))
    }
}

/// A temporal and a spatial spray on the same jet bundle.
#[derive(Debug, Clone)]
pub struct MultiTimeSpray {
    pub temporal: Spray,
    pub spatial: Spray,
}

impl MultiTimeSpray {
    pub fn new(temporal: Spray, spatial: Spray) -> Result<MultiTimeSpray> {
        if temporal.kind != SprayKind::Temporal || spatial.kind != SprayKind::Spatial {
            return Err(Error::Dimension("multi-time spray needs (temporal, spatial) parts".into()));
        }
        if temporal.dims() != spatial.dims() {
            return Err(Error::Dimension(format!(
                "spray parts live on {:?} and {:?}",
                temporal.dims(),
                spatial.dims()
            )));
        }
        Ok(MultiTimeSpray { temporal, spatial })
    }

    /// Canonical sprays of a pair of metrics.
    pub fn canonical(h: &Metric, phi: &Metric) -> Result<MultiTimeSpray> {
        MultiTimeSpray::new(canonical_temporal(h, phi.dim())?, canonical_spatial(phi, h.dim())?)
    }

    pub fn dims(&self) -> (usize, usize) {
        self.temporal.dims()
    }
}

/// `coeff · Γ^γ_{αβ}(t) x^j_γ` in the spray layout, from the Christoffel
/// symbols of a temporal metric. With `coeff = −½` this is the canonical
/// temporal spray, with `−1` the temporal part of the canonical connection.
#[derive(Debug, Clone)]
pub struct TemporalChristoffelField {
    label: &'static str,
    h: Metric,
    n: usize,
    coeff: f64,
    signature: Signature,
}

impl TemporalChristoffelField {
    pub fn new(label: &'static str, h: Metric, n: usize, coeff: f64) -> Result<TemporalChristoffelField> {
        if h.factor() != Factor::Temporal {
            return Err(Error::Dimension(format!("`{}` is not a metric on T", h.name())));
        }
        Ok(TemporalChristoffelField {
            label,
            h,
            n,
            coeff,
            signature: spray_signature(),
        })
    }
}

impl JetField for TemporalChristoffelField {
    fn name(&self) -> String {
        format!("{}[{}]", self.label, self.h.name())
    }
    fn signature(&self) -> &Signature {
        &self.signature
    }
    fn dims(&self) -> (usize, usize) {
        (self.h.dim(), self.n)
    }
    fn eval(&self, u: &JetPoint) -> Result<Components> {
        check_jet(&self.name(), self.dims(), u)?;
        let (p, n) = (u.p(), u.n());
        let ch = self.h.christoffel(u.t())?;
        let v = u.v();
        let mut out = Components::zeros(vec![n * p, p]);
        for j in 0..n {
            for beta in 0..p {
                for alpha in 0..p {
                    let s: f64 = (0..p).map(|g| ch.get(g, alpha, beta) * v[(j, g)]).sum();
                    out.set(&[j * p + beta, alpha], self.coeff * s);
                }
            }
        }
        Ok(out)
    }
    fn in_chart(&self, c: &ChangeMap) -> Result<FieldRef> {
        Ok(Arc::new(TemporalChristoffelField {
            h: self.h.pullback(c)?,
            ..self.clone()
        }))
    }
    fn exprs(&self) -> Option<Vec<Expr>> {
        let (p, n) = self.dims();
        let ch = self.h.christoffel_exprs();
        let mut out = Vec::with_capacity(n * p * p);
        for j in 0..n {
            for beta in 0..p {
                for alpha in 0..p {
                    let s = Expr::sum((0..p).map(|g| &ch[g][alpha][beta] * &Expr::jet(j, g)));
                    out.push(self.coeff * s);
                }
            }
        }
        Some(out)
    }
}

/// `½ γ^i_{jk}(x) x^j_α x^k_β`, the canonical spatial spray of `φ`.
#[derive(Debug, Clone)]
pub struct CanonicalSpatial {
    phi: Metric,
    p: usize,
    signature: Signature,
}

impl CanonicalSpatial {
    pub fn new(phi: Metric, p: usize) -> Result<CanonicalSpatial> {
        if phi.factor() != Factor::Spatial {
            return Err(Error::Dimension(format!("`{}` is not a metric on M", phi.name())));
        }
        Ok(CanonicalSpatial {
            phi,
            p,
            signature: spray_signature(),
        })
    }
}

impl JetField for CanonicalSpatial {
    fn name(&self) -> String {
        format!("canonical_spatial[{}]", self.phi.name())
    }
    fn signature(&self) -> &Signature {
        &self.signature
    }
    fn dims(&self) -> (usize, usize) {
        (self.p, self.phi.dim())
    }
    fn eval(&self, u: &JetPoint) -> Result<Components> {
        check_jet(&self.name(), self.dims(), u)?;
        let (p, n) = (u.p(), u.n());
        let ch = self.phi.christoffel(u.x())?;
        let v = u.v();
        let mut out = Components::zeros(vec![n * p, p]);
        for i in 0..n {
            for alpha in 0..p {
                for beta in 0..p {
                    let mut s = 0.0;
                    for j in 0..n {
                        for k in 0..n {
                            s += ch.get(i, j, k) * v[(j, alpha)] * v[(k, beta)];
                        }
                    }
                    out.set(&[i * p + alpha, beta], 0.5 * s);
                }
            }
        }
        Ok(out)
    }
    fn in_chart(&self, c: &ChangeMap) -> Result<FieldRef> {
        Ok(Arc::new(CanonicalSpatial {
            phi: self.phi.pullback(c)?,
            ..self.clone()
        }))
    }
    fn exprs(&self) -> Option<Vec<Expr>> {
        let (p, n) = self.dims();
        let ch = self.phi.christoffel_exprs();
        let mut out = Vec::with_capacity(n * p * p);
        for i in 0..n {
            for alpha in 0..p {
                for beta in 0..p {
                    let s = Expr::sum((0..n).flat_map(|j| {
                        (0..n).map(move |k| &(&ch[i][j][k] * &Expr::jet(j, alpha)) * &Expr::jet(k, beta))
                    }));
                    out.push(0.5 * s);
                }
            }
        }
        Some(out)
    }
}

/// `H^{(j)}_{(β)α} = −½ H^γ_{αβ} x^j_γ`.
pub fn canonical_temporal(h: &Metric, n: usize) -> Result<Spray> {
    Spray::temporal(Arc::new(TemporalChristoffelField::new("canonical_temporal", h.clone(), n, -0.5)?))
}

/// `G^{(i)}_{(α)β} = ½ γ^i_{jk} x^j_α x^k_β`.
pub fn canonical_spatial(phi: &Metric, p: usize) -> Result<Spray> {
    Spray::spatial(Arc::new(CanonicalSpatial::new(phi.clone(), p)?))
}

/// Homogeneous part shared by both laws: `Σ S[j][β][α] B[α][γ] A[k][j] B[β][μ]`
/// at `(k, μ, γ)`.
fn tensorial_part(s: &Components, jc: &JetChange) -> Components {
    let (p, n) = (jc.p(), jc.n());
    let vert = DMatrix::from_fn(n * p, n * p, |r, q| {
        let (k, mu, j, beta) = (r / p, r % p, q / p, q % p);
        jc.a[(k, j)] * jc.b[(beta, mu)]
    });
    s.contract_axis(0, &vert).contract_axis(1, &jc.b.transpose())
}

/// Predicted `H~` from `2H~ = 2H·B·A·B − B·(d x~_μ / d t)`.
pub fn transform_temporal_values(h: &Components, jc: &JetChange) -> Components {
    let (p, n) = (jc.p(), jc.n());
    let mut out = tensorial_part(h, jc);
    for k in 0..n {
        for mu in 0..p {
            for gamma in 0..p {
                let inh: f64 = (0..p).map(|a| jc.b[(a, gamma)] * jc.w_t[a][(k, mu)]).sum();
                let idx = [k * p + mu, gamma];
                out.set(&idx, out.get(&idx) - 0.5 * inh);
            }
        }
    }
    out
}

/// Predicted `G~` from `2G~ = 2G·B·A·B − (dx^i/dx~^j)(d x~^k_μ / d x^i) x~^j_γ`.
pub fn transform_spatial_values(g: &Components, jc: &JetChange) -> Components {
    let (p, n) = (jc.p(), jc.n());
    let mut out = tensorial_part(g, jc);
    let vt = jc.image.v();
    for k in 0..n {
        for mu in 0..p {
            for gamma in 0..p {
                let mut inh = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        inh += jc.a_inv[(i, j)] * jc.w_x[i][(k, mu)] * vt[(j, gamma)];
                    }
                }
                let idx = [k * p + mu, gamma];
                out.set(&idx, out.get(&idx) - 0.5 * inh);
            }
        }
    }
    out
}

pub fn transform_temporal(h: &Spray, c: &ChangeMap, u: &JetPoint) -> Result<Components> {
    let jc = JetChange::new(c, u)?;
    Ok(transform_temporal_values(&h.eval(u)?, &jc))
}

pub fn transform_spatial(g: &Spray, c: &ChangeMap, u: &JetPoint) -> Result<Components> {
    let jc = JetChange::new(c, u)?;
    Ok(transform_spatial_values(&g.eval(u)?, &jc))
}

/// `S^i = h^{αβ} S^{(i)}_{(α)β}` of a spray.
#[derive(Debug, Clone)]
pub struct HTrace {
    source: FieldRef,
    h: Metric,
    signature: Signature,
}

impl JetField for HTrace {
    fn name(&self) -> String {
        format!("trace[{}; {}]", self.source.name(), self.h.name())
    }
    fn signature(&self) -> &Signature {
        &self.signature
    }
    fn dims(&self) -> (usize, usize) {
        self.source.dims()
    }
    fn eval(&self, u: &JetPoint) -> Result<Components> {
        let s = self.source.eval(u)?;
        let hinv = self.h.inverse_at(u.t())?;
        let (p, n) = (u.p(), u.n());
        let data = (0..n)
            .map(|i| {
                let mut acc = 0.0;
                for a in 0..p {
                    for b in 0..p {
                        acc += hinv[(a, b)] * s.get(&[i * p + a, b]);
                    }
                }
                acc
            })
            .collect();
        Components::new(vec![n], data)
    }
    fn in_chart(&self, c: &ChangeMap) -> Result<FieldRef> {
        Ok(Arc::new(HTrace {
            source: self.source.in_chart(c)?,
            h: self.h.pullback(c)?,
            signature: self.signature.clone(),
        }))
    }
    fn exprs(&self) -> Option<Vec<Expr>> {
        let s = self.source.exprs()?;
        let (p, n) = self.dims();
        let hinv = self.h.inverse_exprs();
        Some(
            (0..n)
                .map(|i| {
                    Expr::sum((0..p).flat_map(|a| {
                        let s = &s;
                        (0..p).map(move |b| &hinv[a][b] * &s[(i * p + a) * p + b])
                    }))
                })
                .collect(),
        )
    }
}

/// An h-spray: `H^k` or `G^k`, one value per spatial index.
#[derive(Debug, Clone)]
pub struct HSpray {
    kind: SprayKind,
    field: FieldRef,
}

impl HSpray {
    pub fn new(kind: SprayKind, field: FieldRef) -> Result<HSpray> {
        if field.signature() != &hspray_signature() {
            return Err(Error::Dimension(format!(
                "h-spray components need signature U(j), `{}` has {}",
                field.name(),
                field.signature()
            )));
        }
        Ok(HSpray { kind, field })
    }

    pub fn kind(&self) -> SprayKind {
        self.kind
    }

    pub fn field(&self) -> &FieldRef {
        &self.field
    }

    pub fn eval(&self, u: &JetPoint) -> Result<Components> {
        self.field.eval(u)
    }
}

fn check_temporal_dim(h: &Metric, p: usize) -> Result<()> {
    if h.factor() != Factor::Temporal || h.dim() != p {
        return Err(Error::Dimension(format!(
            "`{}` is not a metric on a {p}-dimensional T",
            h.name()
        )));
    }
    Ok(())
}

pub fn h_trace(s: &Spray, h: &Metric) -> Result<HSpray> {
    check_temporal_dim(h, s.dims().0)?;
    HSpray::new(
        s.kind,
        Arc::new(HTrace {
            source: s.field.clone(),
            h: h.clone(),
            signature: hspray_signature(),
        }),
    )
}

/// Remainder `s − canonical` for the metric matching the spray's kind
/// (`h` for temporal sprays, `φ` for spatial ones); a d-tensor field with
/// signature `U(j,b);L(a)`.
pub fn decompose(s: &Spray, h: &Metric, phi: &Metric) -> Result<FieldRef> {
    let (p, n) = s.dims();
    let canonical = match s.kind {
        SprayKind::Temporal => canonical_temporal(h, n)?,
        SprayKind::Spatial => canonical_spatial(phi, p)?,
    };
    Ok(Arc::new(Combination::difference(s.field.clone(), canonical.field)?))
}

/// `S^{(k)}_{(1)1} = h_{11} S^k` (only for `p = 1`).
#[derive(Debug, Clone)]
struct SprayFromH {
    hs: FieldRef,
    h: Metric,
    signature: Signature,
}

impl JetField for SprayFromH {
    fn name(&self) -> String {
        format!("spray[{}; {}]", self.hs.name(), self.h.name())
    }
    fn signature(&self) -> &Signature {
        &self.signature
    }
    fn dims(&self) -> (usize, usize) {
        self.hs.dims()
    }
    fn eval(&self, u: &JetPoint) -> Result<Components> {
        let h11 = self.h.eval(u.t())?[(0, 0)];
        let mut out = self.hs.eval(u)?;
        out.scale(h11);
        Components::new(vec![u.n(), 1], out.into_data())
    }
    fn in_chart(&self, c: &ChangeMap) -> Result<FieldRef> {
        Ok(Arc::new(SprayFromH {
            hs: self.hs.in_chart(c)?,
            h: self.h.pullback(c)?,
            signature: self.signature.clone(),
        }))
    }
    fn exprs(&self) -> Option<Vec<Expr>> {
        let h11 = &self.h.components()[0][0];
        Some(self.hs.exprs()?.iter().map(|e| h11 * e).collect())
    }
}

/// The unique spray whose h-trace is `hs`. Only defined for one-dimensional
/// `T`; for `p ≥ 2` many sprays share a trace and the call is rejected.
pub fn spray_from_hspray(hs: &HSpray, h: &Metric) -> Result<Spray> {
    let (p, _) = hs.field.dims();
    if p != 1 {
        return Err(Error::Unsupported(format!(
            "an h-spray determines a unique spray only when dim T = 1 (got {p})"
        )));
    }
    check_temporal_dim(h, 1)?;
    Spray::new(
        hs.kind,
        Arc::new(SprayFromH {
            hs: hs.field.clone(),
            h: h.clone(),
            signature: spray_signature(),
        }),
    )
}
