//! Points of `J¹(T, M)`, the induced jet coordinate change and the natural
//! frame/coframe transition matrices.
//!
//! Jet coordinates are an `n x p` matrix, row `i` spatial, column `α`
//! temporal. Where the vertical coordinates are flattened the fused index is
//! `i·p + α`, and full coordinate vectors are ordered `(t, x, v)`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exprlang::{Env, Var, VarKind};
use crate::numdiff::{ChangeMap, JacobianBlocks};

/// A point `(t^α, x^i, x^i_α)` of the jet bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawJet", into = "RawJet")]
pub struct JetPoint {
    t: Vec<f64>,
    x: Vec<f64>,
    v: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawJet {
    t: Vec<f64>,
    x: Vec<f64>,
    v: Vec<Vec<f64>>,
}

impl TryFrom<RawJet> for JetPoint {
    type Error = Error;

    fn try_from(raw: RawJet) -> Result<JetPoint> {
        JetPoint::from_rows(raw.t, raw.x, &raw.v)
    }
}

impl From<JetPoint> for RawJet {
    fn from(u: JetPoint) -> RawJet {
        let v = (0..u.n()).map(|i| u.v.row(i).iter().copied().collect()).collect();
        RawJet { t: u.t, x: u.x, v }
    }
}

impl JetPoint {
    pub fn new(t: Vec<f64>, x: Vec<f64>, v: DMatrix<f64>) -> Result<JetPoint> {
        if t.is_empty() || x.is_empty() {
            return Err(Error::Dimension("jet points need p ≥ 1 and n ≥ 1".into()));
        }
        if v.nrows() != x.len() || v.ncols() != t.len() {
            return Err(Error::Dimension(format!(
                "jet matrix is {}x{}, expected {}x{} (n x p)",
                v.nrows(),
                v.ncols(),
                x.len(),
                t.len()
            )));
        }
        if !t.iter().chain(&x).chain(v.iter()).all(|c| c.is_finite()) {
            return Err(Error::Dimension("jet coordinates must be finite".into()));
        }
        Ok(JetPoint { t, x, v })
    }

    /// Builds a jet from `v` given row by row (row `i` = spatial index).
    pub fn from_rows(t: Vec<f64>, x: Vec<f64>, rows: &[Vec<f64>]) -> Result<JetPoint> {
        let p = t.len();
        if rows.len() != x.len() || rows.iter().any(|r| r.len() != p) {
            return Err(Error::Dimension(format!(
                "jet matrix must have {} rows of length {p}",
                x.len()
            )));
        }
        let v = DMatrix::from_fn(x.len(), p, |i, a| rows[i][a]);
        JetPoint::new(t, x, v)
    }

    /// Inverse of [`JetPoint::coords`].
    pub fn from_coords(p: usize, n: usize, coords: &[f64]) -> Result<JetPoint> {
        if coords.len() != jet_dim(p, n) {
            return Err(Error::Dimension(format!(
                "expected {} jet coordinates, got {}",
                jet_dim(p, n),
                coords.len()
            )));
        }
        let v = DMatrix::from_fn(n, p, |i, a| coords[p + n + i * p + a]);
        JetPoint::new(coords[..p].to_vec(), coords[p..p + n].to_vec(), v)
    }

    pub fn p(&self) -> usize {
        self.t.len()
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn t(&self) -> &[f64] {
        &self.t
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    /// Vertical coordinates flattened with index `i·p + α`.
    pub fn fused(&self) -> Vec<f64> {
        let p = self.p();
        (0..self.n() * p).map(|k| self.v[(k / p, k % p)]).collect()
    }

    /// All coordinates in natural order `(t, x, v fused)`.
    pub fn coords(&self) -> Vec<f64> {
        let mut c = self.t.clone();
        c.extend_from_slice(&self.x);
        c.extend(self.fused());
        c
    }

    pub fn env(&self) -> JetEnv<'_> {
        JetEnv(self)
    }
}

/// Total dimension `p + n + n·p` of `J¹(T, M)`.
pub fn jet_dim(p: usize, n: usize) -> usize {
    p + n + n * p
}

/// Binds `t1.., x1.., x{i}_{α}` to the coordinates of a jet.
#[derive(Debug, Clone, Copy)]
pub struct JetEnv<'a>(pub &'a JetPoint);

impl Env for JetEnv<'_> {
    fn value(&self, var: &Var) -> Option<f64> {
        let u = self.0;
        match var.kind() {
            VarKind::Time(a) => u.t.get(a).copied(),
            VarKind::Space(i) => u.x.get(i).copied(),
            VarKind::Jet { space, time } if space < u.n() && time < u.p() => Some(u.v[(space, time)]),
            _ => None,
        }
    }
}

/// Everything the transformation laws need about a chart change at one jet.
///
/// With `K = dt~/dt`, `A = dx~/dx`, `B = dt/dt~` and `Ainv = dx/dx~`, the jet
/// rule reads `v~ = A v B`.
#[derive(Debug, Clone)]
pub struct JetChange {
    /// `[(mu, a)]` = d t~^mu / d t^a
    pub k: DMatrix<f64>,
    /// `[(j, i)]` = d x~^j / d x^i
    pub a: DMatrix<f64>,
    /// `[(a, mu)]` = d t^a / d t~^mu
    pub b: DMatrix<f64>,
    /// `[(i, j)]` = d x^i / d x~^j
    pub a_inv: DMatrix<f64>,
    /// `w_t[α][(j, β)]` = d v~^j_β / d t^α
    pub w_t: Vec<DMatrix<f64>>,
    /// `w_x[i][(j, β)]` = d v~^j_β / d x^i
    pub w_x: Vec<DMatrix<f64>>,
    pub source: JetPoint,
    pub image: JetPoint,
}

impl JetChange {
    pub fn new(c: &ChangeMap, u: &JetPoint) -> Result<JetChange> {
        check_dims(c, u)?;
        let JacobianBlocks {
            temporal: k,
            spatial: a,
            temporal_inv: b,
            spatial_inv: a_inv,
            image_t,
            image_x,
        } = c.blocks(u.t(), u.x())?;
        let second = c.second_blocks(u.t(), u.x())?;
        let av = &a * u.v();
        let w_t = second
            .temporal
            .iter()
            .map(|dk| {
                let db = -(&b * dk * &b);
                &av * db
            })
            .collect();
        let vb = u.v() * &b;
        let w_x = second.spatial.iter().map(|da| da * &vb).collect();
        let image = JetPoint::new(image_t, image_x, &av * &b)?;
        Ok(JetChange {
            k,
            a,
            b,
            a_inv,
            w_t,
            w_x,
            source: u.clone(),
            image,
        })
    }

    pub fn p(&self) -> usize {
        self.source.p()
    }

    pub fn n(&self) -> usize {
        self.source.n()
    }

    /// `d v~^j_β / d v^i_α = A[j][i] B[α][β]`.
    pub fn vertical(&self, j: usize, beta: usize, i: usize, alpha: usize) -> f64 {
        self.a[(j, i)] * self.b[(alpha, beta)]
    }

    /// Full Jacobian `[new][old]` of `(t, x, v) -> (t~, x~, v~)`.
    pub fn jacobian(&self) -> DMatrix<f64> {
        let (p, n) = (self.p(), self.n());
        let dim = jet_dim(p, n);
        let vo = p + n;
        let mut j = DMatrix::zeros(dim, dim);
        j.view_mut((0, 0), (p, p)).copy_from(&self.k);
        j.view_mut((p, p), (n, n)).copy_from(&self.a);
        for jj in 0..n {
            for beta in 0..p {
                let row = vo + jj * p + beta;
                for alpha in 0..p {
                    j[(row, alpha)] = self.w_t[alpha][(jj, beta)];
                }
                for i in 0..n {
                    j[(row, p + i)] = self.w_x[i][(jj, beta)];
                    for alpha in 0..p {
                        j[(row, vo + i * p + alpha)] = self.vertical(jj, beta, i, alpha);
                    }
                }
            }
        }
        j
    }
}

fn check_dims(c: &ChangeMap, u: &JetPoint) -> Result<()> {
    if c.p() != u.p() || c.n() != u.n() {
        return Err(Error::Dimension(format!(
            "jet has (p, n) = ({}, {}), change `{}` acts on ({}, {})",
            u.p(),
            u.n(),
            c.name(),
            c.p(),
            c.n()
        )));
    }
    Ok(())
}

/// `x~^i_α = (dx~^i/dx^j)(dt^β/dt~^α) x^j_β` together with the base map.
pub fn transform_jet(c: &ChangeMap, u: &JetPoint) -> Result<JetPoint> {
    check_dims(c, u)?;
    let b = c.blocks(u.t(), u.x())?;
    JetPoint::new(b.image_t, b.image_x, &b.spatial * u.v() * &b.temporal_inv)
}

/// Rows express `∂/∂t^α, ∂/∂x^i, ∂/∂x^i_α` in the tilde natural frame.
pub fn natural_frame_change(c: &ChangeMap, u: &JetPoint) -> Result<DMatrix<f64>> {
    Ok(JetChange::new(c, u)?.jacobian().transpose())
}

/// Rows express `dt^α, dx^i, dx^i_α` in the tilde natural coframe. Built from
/// the inverse change at the image jet, independently of the frame matrix.
pub fn natural_coframe_change(c: &ChangeMap, u: &JetPoint) -> Result<DMatrix<f64>> {
    natural_coframe_change_via(&c.inverse(), &transform_jet(c, u)?)
}

/// As [`natural_coframe_change`], given the inverse change and the image jet.
pub fn natural_coframe_change_via(inverse: &ChangeMap, image: &JetPoint) -> Result<DMatrix<f64>> {
    Ok(JetChange::new(inverse, image)?.jacobian())
}
