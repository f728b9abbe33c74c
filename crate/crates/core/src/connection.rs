//! Nonlinear connections `Γ = (M, N)`: transformation law, canonical
//! connection of a pair of metrics, adapted frames/coframes and the
//! conversions to and from multi-time sprays.

use std::sync::{Arc, OnceLock};

use nalgebra::DMatrix;

use crate::dtensor::{check_jet, check_law, check_pairs, Combination, Components, FieldRef, JetField, Signature, Verdict};
use crate::error::{Error, Result};
use crate::exprlang::{Expr, Var};
use crate::geometry::{Factor, Metric};
use crate::jetspace::{jet_dim, JetChange, JetPoint};
use crate::numdiff::{fd_partial, ChangeMap};
use crate::sprays::{h_trace, spray_signature, MultiTimeSpray, Spray, SprayKind, TemporalChristoffelField};

pub fn spatial_connection_signature() -> Signature {
    "U(j,b);L(i)".parse().expect("static signature")
}

/// Temporal coefficients `M^{(j)}_{(β)α}` (`n x p x p`) and spatial
/// coefficients `N^{(j)}_{(β)i}` (`n x p x n`).
#[derive(Debug, Clone)]
pub struct NonlinearConnection {
    m: FieldRef,
    n: FieldRef,
}

impl NonlinearConnection {
    pub fn new(m: FieldRef, n: FieldRef) -> Result<NonlinearConnection> {
        if m.signature() != &spray_signature() || n.signature() != &spatial_connection_signature() {
            return Err(Error::Dimension(format!(
                "connection coefficients need signatures U(j,b);L(a) and U(j,b);L(i), got {} and {}",
                m.signature(),
                n.signature()
            )));
        }
        if m.dims() != n.dims() {
            return Err(Error::Dimension(format!(
                "connection parts live on {:?} and {:?}",
                m.dims(),
                n.dims()
            )));
        }
        Ok(NonlinearConnection { m, n })
    }

    /// `M = −H^γ_{αβ} x^j_γ`, `N = γ^j_{ik} x^k_β`.
    pub fn canonical(h: &Metric, phi: &Metric) -> Result<NonlinearConnection> {
        let m = TemporalChristoffelField::new("canonical_m", h.clone(), phi.dim(), -1.0)?;
        NonlinearConnection::new(Arc::new(m), Arc::new(CanonicalN::new(phi.clone(), h.dim())?))
    }

    pub fn zero(p: usize, n: usize) -> NonlinearConnection {
        use crate::dtensor::ZeroField;
        NonlinearConnection {
            m: Arc::new(ZeroField::new(spray_signature(), p, n)),
            n: Arc::new(ZeroField::new(spatial_connection_signature(), p, n)),
        }
    }

    pub fn m(&self) -> &FieldRef {
        &self.m
    }

    pub fn n(&self) -> &FieldRef {
        &self.n
    }

    pub fn dims(&self) -> (usize, usize) {
        self.m.dims()
    }

    pub fn eval(&self, u: &JetPoint) -> Result<(Components, Components)> {
        Ok((self.m.eval(u)?, self.n.eval(u)?))
    }

    pub fn in_chart(&self, c: &ChangeMap) -> Result<NonlinearConnection> {
        Ok(NonlinearConnection {
            m: self.m.in_chart(c)?,
            n: self.n.in_chart(c)?,
        })
    }

    /// Recompute-vs-transform check of the temporal and spatial laws.
    pub fn check_law(&self, changes: &[ChangeMap], points: &[JetPoint], tol: f64) -> (Verdict, Verdict) {
        let m = check_law(self.m.as_ref(), changes, points, tol, |vals, jc| Ok(transform_m_values(vals, jc)));
        let n = check_law(self.n.as_ref(), changes, points, tol, |vals, jc| Ok(transform_n_values(vals, jc)));
        (m, n)
    }
}

/// `N^{(j)}_{(β)i} = γ^j_{ik}(x) x^k_β`.
#[derive(Debug, Clone)]
pub struct CanonicalN {
    phi: Metric,
    p: usize,
    signature: Signature,
}

impl CanonicalN {
    pub fn new(phi: Metric, p: usize) -> Result<CanonicalN> {
        if phi.factor() != Factor::Spatial {
            return Err(Error::Dimension(format!("`{}` is not a metric on M", phi.name())));
        }
        Ok(CanonicalN {
            phi,
            p,
            signature: spatial_connection_signature(),
        })
    }
}

impl JetField for CanonicalN {
    fn name(&self) -> String {
        format!("canonical_n[{}]", self.phi.name())
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
        let mut out = Components::zeros(vec![n * p, n]);
        for j in 0..n {
            for beta in 0..p {
                for i in 0..n {
                    let s: f64 = (0..n).map(|k| ch.get(j, i, k) * v[(k, beta)]).sum();
                    out.set(&[j * p + beta, i], s);
                }
            }
        }
        Ok(out)
    }
    fn in_chart(&self, c: &ChangeMap) -> Result<FieldRef> {
        Ok(Arc::new(CanonicalN {
            phi: self.phi.pullback(c)?,
            ..self.clone()
        }))
    }
    fn exprs(&self) -> Option<Vec<Expr>> {
        let (p, n) = self.dims();
        let ch = self.phi.christoffel_exprs();
        let mut out = Vec::with_capacity(n * p * n);
        for j in 0..n {
            for beta in 0..p {
                for i in 0..n {
                    out.push(Expr::sum((0..n).map(|k| &ch[j][i][k] * &Expr::jet(k, beta))));
                }
            }
        }
        Some(out)
    }
}

fn vertical_matrix(jc: &JetChange) -> DMatrix<f64> {
    let (p, n) = (jc.p(), jc.n());
    DMatrix::from_fn(n * p, n * p, |r, q| {
        let (j, beta, k, gamma) = (r / p, r % p, q / p, q % p);
        jc.a[(j, k)] * jc.b[(gamma, beta)]
    })
}

/// Predicted `M~`: `M~[j][β][μ] = Σ_α (A·B·M[·][·][α] − d x~^j_β / d t^α) B[α][μ]`.
pub fn transform_m_values(m: &Components, jc: &JetChange) -> Components {
    let (p, n) = (jc.p(), jc.n());
    let mut inner = m.contract_axis(0, &vertical_matrix(jc));
    for j in 0..n {
        for beta in 0..p {
            for alpha in 0..p {
                let idx = [j * p + beta, alpha];
                inner.set(&idx, inner.get(&idx) - jc.w_t[alpha][(j, beta)]);
            }
        }
    }
    inner.contract_axis(1, &jc.b.transpose())
}

/// Predicted `N~`: `N~[j][β][k] = Σ_i (A·B·N[·][·][i] − d x~^j_β / d x^i) (dx^i/dx~^k)`.
pub fn transform_n_values(nc: &Components, jc: &JetChange) -> Components {
    let (p, n) = (jc.p(), jc.n());
    let mut inner = nc.contract_axis(0, &vertical_matrix(jc));
    for j in 0..n {
        for beta in 0..p {
            for i in 0..n {
                let idx = [j * p + beta, i];
                inner.set(&idx, inner.get(&idx) - jc.w_x[i][(j, beta)]);
            }
        }
    }
    inner.contract_axis(1, &jc.a_inv.transpose())
}

/// Predicted `(M~, N~)` at the image of `u`.
pub fn transform_connection(g: &NonlinearConnection, c: &ChangeMap, u: &JetPoint) -> Result<(Components, Components)> {
    let jc = JetChange::new(c, u)?;
    let (m, n) = g.eval(u)?;
    Ok((transform_m_values(&m, &jc), transform_n_values(&n, &jc)))
}

/// Rows are `δ/δt^α, δ/δx^i, ∂/∂x^i_α` in the natural frame `(t, x, v)`.
pub fn adapted_frame(g: &NonlinearConnection, u: &JetPoint) -> Result<DMatrix<f64>> {
    let (m, nc) = g.eval(u)?;
    let (p, n) = (u.p(), u.n());
    let vo = p + n;
    let mut f = DMatrix::identity(jet_dim(p, n), jet_dim(p, n));
    for r in 0..n * p {
        for alpha in 0..p {
            f[(alpha, vo + r)] = -m.get(&[r, alpha]);
        }
        for i in 0..n {
            f[(p + i, vo + r)] = -nc.get(&[r, i]);
        }
    }
    Ok(f)
}

/// Rows are `dt^α, dx^i, δx^i_α` in the natural coframe, with
/// `δx^i_α = dx^i_α + M^{(i)}_{(α)β} dt^β + N^{(i)}_{(α)j} dx^j`.
pub fn adapted_coframe(g: &NonlinearConnection, u: &JetPoint) -> Result<DMatrix<f64>> {
    let (m, nc) = g.eval(u)?;
    let (p, n) = (u.p(), u.n());
    let vo = p + n;
    let mut c = DMatrix::identity(jet_dim(p, n), jet_dim(p, n));
    for r in 0..n * p {
        for beta in 0..p {
            c[(vo + r, beta)] = m.get(&[r, beta]);
        }
        for j in 0..n {
            c[(vo + r, p + j)] = nc.get(&[r, j]);
        }
    }
    Ok(c)
}

/// Block-diagonal `diag(K, A, A⊗B)` with rows indexed by the new basis.
fn simple_rule(jc: &JetChange) -> DMatrix<f64> {
    let (p, n) = (jc.p(), jc.n());
    let mut s = DMatrix::zeros(jet_dim(p, n), jet_dim(p, n));
    s.view_mut((0, 0), (p, p)).copy_from(&jc.k);
    s.view_mut((p, p), (n, n)).copy_from(&jc.a);
    s.view_mut((p + n, p + n), (n * p, n * p)).copy_from(&vertical_matrix(jc));
    s
}

fn as_components(m: DMatrix<f64>) -> Components {
    let (r, c) = m.shape();
    let data = (0..r).flat_map(|i| (0..c).map(move |j| (i, j))).map(|(i, j)| m[(i, j)]).collect();
    Components::new(vec![r, c], data).expect("matrix fills its shape")
}

/// Checks that the adapted frame transforms by `δ/δt^α = K^μ_α δ/δt~^μ`,
/// `δ/δx^i = A^j_i δ/δx~^j`, `∂/∂x^i_α = A^j_i B^α_β ∂/∂x~^j_β`.
pub fn check_frame_law(g: &NonlinearConnection, changes: &[ChangeMap], points: &[JetPoint], tol: f64) -> Verdict {
    check_pairs(
        changes,
        points,
        tol,
        |c| g.in_chart(c),
        |tilde, jc| {
            // old adapted rows written in the tilde natural frame
            let lhs = adapted_frame(g, &jc.source)? * jc.jacobian().transpose();
            let rhs = simple_rule(jc).transpose() * adapted_frame(tilde, &jc.image)?;
            Ok((as_components(lhs), as_components(rhs)))
        },
    )
}

/// Checks `dt~ = K dt`, `dx~ = A dx`, `δx~^j_β = A^j_i B^α_β δx^i_α`.
pub fn check_coframe_law(g: &NonlinearConnection, changes: &[ChangeMap], points: &[JetPoint], tol: f64) -> Verdict {
    check_pairs(
        changes,
        points,
        tol,
        |c| g.in_chart(c),
        |tilde, jc| {
            // new adapted forms pulled back to the old natural coframe
            let lhs = simple_rule(jc) * adapted_coframe(g, &jc.source)?;
            let rhs = adapted_coframe(tilde, &jc.image)? * jc.jacobian();
            Ok((as_components(lhs), as_components(rhs)))
        },
    )
}

/// `N^{(i)}_{(α)j} = (∂G^i/∂x^j_γ) h_{γα}` where `G^i` is the h-trace of a
/// spatial spray. Symbolic when the spray is expression-backed, else central
/// differences in the jet variables.
#[derive(Debug, Clone)]
pub struct NFromSpatial {
    trace: FieldRef,
    h: Metric,
    signature: Signature,
    derivs: Arc<OnceLock<Option<Vec<Expr>>>>,
}

impl NFromSpatial {
    fn new(trace: FieldRef, h: Metric) -> NFromSpatial {
        NFromSpatial {
            trace,
            h,
            signature: spatial_connection_signature(),
            derivs: Arc::new(OnceLock::new()),
        }
    }

    /// `[(i·n + j)·p + γ]` = ∂G^i/∂x^j_γ as expressions.
    fn symbolic(&self) -> Option<&Vec<Expr>> {
        self.derivs
            .get_or_init(|| {
                let (p, n) = self.trace.dims();
                let g = self.trace.exprs()?;
                Some(
                    (0..n)
                        .flat_map(|i| (0..n).flat_map(move |j| (0..p).map(move |c| (i, j, c))))
                        .map(|(i, j, c)| g[i].diff(Var::jet(j, c).name()))
                        .collect(),
                )
            })
            .as_ref()
    }

    fn vertical_gradient(&self, u: &JetPoint) -> Result<Vec<f64>> {
        let (p, n) = (u.p(), u.n());
        if let Some(d) = self.symbolic() {
            let env = u.env();
            return d.iter().map(|e| Ok(e.eval(&env)?)).collect();
        }
        let coords = u.coords();
        let mut out = vec![0.0; n * n * p];
        for j in 0..n {
            for c in 0..p {
                let idx = p + n + j * p + c;
                let col = (0..n)
                    .map(|i| {
                        fd_partial(
                            |q: &[f64]| -> Result<f64> {
                                let w = JetPoint::from_coords(p, n, q)?;
                                Ok(self.trace.eval(&w)?.data()[i])
                            },
                            &coords,
                            idx,
                        )
                    })
                    .collect::<Result<Vec<_>>>()?;
                for (i, d) in col.into_iter().enumerate() {
                    out[(i * n + j) * p + c] = d;
                }
            }
        }
        Ok(out)
    }
}

impl JetField for NFromSpatial {
    fn name(&self) -> String {
        format!("n_from[{}]", self.trace.name())
    }
    fn signature(&self) -> &Signature {
        &self.signature
    }
    fn dims(&self) -> (usize, usize) {
        self.trace.dims()
    }
    fn eval(&self, u: &JetPoint) -> Result<Components> {
        check_jet(&self.name(), self.dims(), u)?;
        let (p, n) = (u.p(), u.n());
        let d = self.vertical_gradient(u)?;
        let h = self.h.eval(u.t())?;
        let mut out = Components::zeros(vec![n * p, n]);
        for i in 0..n {
            for alpha in 0..p {
                for j in 0..n {
                    let s: f64 = (0..p).map(|c| d[(i * n + j) * p + c] * h[(c, alpha)]).sum();
                    out.set(&[i * p + alpha, j], s);
                }
            }
        }
        Ok(out)
    }
    fn in_chart(&self, c: &ChangeMap) -> Result<FieldRef> {
        Ok(Arc::new(NFromSpatial::new(self.trace.in_chart(c)?, self.h.pullback(c)?)))
    }
}

/// `2G^{(i)}_{(α)β} = N^{(i)}_{(α)j} x^j_β`.
#[derive(Debug, Clone)]
pub struct SpatialFromN {
    n: FieldRef,
    signature: Signature,
}

impl JetField for SpatialFromN {
    fn name(&self) -> String {
        format!("spray_from[{}]", self.n.name())
    }
    fn signature(&self) -> &Signature {
        &self.signature
    }
    fn dims(&self) -> (usize, usize) {
        self.n.dims()
    }
    fn eval(&self, u: &JetPoint) -> Result<Components> {
        let (p, n) = (u.p(), u.n());
        let nc = self.n.eval(u)?;
        let v = u.v();
        let mut out = Components::zeros(vec![n * p, p]);
        for r in 0..n * p {
            for beta in 0..p {
                let s: f64 = (0..n).map(|j| nc.get(&[r, j]) * v[(j, beta)]).sum();
                out.set(&[r, beta], 0.5 * s);
            }
        }
        Ok(out)
    }
    fn in_chart(&self, c: &ChangeMap) -> Result<FieldRef> {
        Ok(Arc::new(SpatialFromN {
            n: self.n.in_chart(c)?,
            signature: self.signature.clone(),
        }))
    }
    fn exprs(&self) -> Option<Vec<Expr>> {
        let nc = self.n.exprs()?;
        let (p, n) = self.dims();
        Some(
            (0..n * p)
                .flat_map(|r| (0..p).map(move |beta| (r, beta)))
                .map(|(r, beta)| 0.5 * Expr::sum((0..n).map(|j| &nc[r * n + j] * &Expr::jet(j, beta))))
                .collect(),
        )
    }
}

/// `M = 2H` and `N^{(i)}_{(α)j} = (∂G^i/∂x^j_γ) h_{γα}`.
pub fn connection_from_sprays(s: &MultiTimeSpray, h: &Metric) -> Result<NonlinearConnection> {
    let m = Combination::new(format!("2·{}", s.temporal.field().name()), vec![(2.0, s.temporal.field().clone())])?;
    let trace = h_trace(&s.spatial, h)?;
    let n = NFromSpatial::new(trace.field().clone(), h.clone());
    NonlinearConnection::new(Arc::new(m), Arc::new(n))
}

/// `H = ½M` and `2G^{(i)}_{(α)β} = N^{(i)}_{(α)j} x^j_β`.
pub fn sprays_from_connection(g: &NonlinearConnection) -> Result<MultiTimeSpray> {
    let h = Combination::new(format!("½·{}", g.m.name()), vec![(0.5, g.m.clone())])?;
    let spatial = SpatialFromN {
        n: g.n.clone(),
        signature: spray_signature(),
    };
    MultiTimeSpray::new(
        Spray::new(SprayKind::Temporal, Arc::new(h))?,
        Spray::new(SprayKind::Spatial, Arc::new(spatial))?,
    )
}
