use std::sync::Arc;

use nalgebra::DMatrix;

use crate::domain::DomainBox;
use crate::error::{Error, Result};
use crate::exprlang::{parse, BaseEnv, Expr, Var, VarKind};

/// Tolerance on `J·J⁻¹ = I` when the inverse block comes from the inverse map.
const INVERSE_TOL: f64 = 1e-9;
const SINGULAR_DET: f64 = 1e-12;

#[derive(Debug)]
struct Derivatives {
    /// `[mu][a]` = d t~^mu / d t^a
    dt: Vec<Vec<Expr>>,
    /// `[mu][a][b]` = d² t~^mu / d t^a d t^b
    d2t: Vec<Vec<Vec<Expr>>>,
    dx: Vec<Vec<Expr>>,
    d2x: Vec<Vec<Vec<Expr>>>,
    /// `[a][mu]` = d t^a / d t~^mu, written over the tilde coordinates
    dt_inv: Vec<Vec<Expr>>,
    dx_inv: Vec<Vec<Expr>>,
}

impl Derivatives {
    fn new(ft: &[Expr], fx: &[Expr], it: &[Expr], ix: &[Expr]) -> Derivatives {
        let first = |f: &[Expr], var: fn(usize) -> Var| -> Vec<Vec<Expr>> {
            f.iter()
                .map(|e| (0..f.len()).map(|a| e.diff(var(a).name())).collect())
                .collect()
        };
        let second = |d: &[Vec<Expr>], var: fn(usize) -> Var| -> Vec<Vec<Vec<Expr>>> {
            d.iter()
                .map(|row| {
                    row.iter()
                        .map(|e| (0..row.len()).map(|b| e.diff(var(b).name())).collect())
                        .collect()
                })
                .collect()
        };
        let dt = first(ft, Var::time);
        let dx = first(fx, Var::space);
        Derivatives {
            d2t: second(&dt, Var::time),
            d2x: second(&dx, Var::space),
            dt,
            dx,
            dt_inv: first(it, Var::time),
            dx_inv: first(ix, Var::space),
        }
    }
}

/// A product-form chart change `t~ = t~(t)`, `x~ = x~(x)` on `T x M`, with
/// a user-supplied inverse.
///
/// The inverse expressions are written over the same variable names
/// (`t1.., x1..`), read as the tilde coordinates.
#[derive(Debug, Clone)]
pub struct ChangeMap {
    name: String,
    forward_t: Vec<Expr>,
    forward_x: Vec<Expr>,
    inverse_t: Vec<Expr>,
    inverse_x: Vec<Expr>,
    domain: DomainBox,
    image: DomainBox,
    derivs: Arc<Derivatives>,
}

/// Jacobian blocks of a chart change at one base point.
#[derive(Debug, Clone)]
pub struct JacobianBlocks {
    /// `[(mu, a)]` = d t~^mu / d t^a
    pub temporal: DMatrix<f64>,
    /// `[(j, i)]` = d x~^j / d x^i
    pub spatial: DMatrix<f64>,
    /// `[(a, mu)]` = d t^a / d t~^mu, from the inverse map at the image point
    pub temporal_inv: DMatrix<f64>,
    /// `[(i, j)]` = d x^i / d x~^j, from the inverse map at the image point
    pub spatial_inv: DMatrix<f64>,
    pub image_t: Vec<f64>,
    pub image_x: Vec<f64>,
}

/// Derivatives of the Jacobian blocks along the base coordinates.
#[derive(Debug, Clone)]
pub struct SecondBlocks {
    /// `temporal[a][(mu, b)]` = d² t~^mu / d t^b d t^a
    pub temporal: Vec<DMatrix<f64>>,
    /// `spatial[i][(j, k)]` = d² x~^j / d x^k d x^i
    pub spatial: Vec<DMatrix<f64>>,
}

fn check_vars(exprs: &[Expr], allowed: impl Fn(VarKind) -> bool, what: &str) -> Result<()> {
    for e in exprs {
        for kind in e.var_kinds() {
            if !allowed(kind) {
                return Err(Error::InvalidChange(format!(
                    "{what} component `{e}` depends on a variable outside its factor; \
                     chart changes must have the product form t~(t), x~(x)"
                )));
            }
        }
    }
    Ok(())
}

fn eval_matrix(rows: &[Vec<Expr>], env: &BaseEnv) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, |row| row.len());
    let mut m = DMatrix::zeros(r, c);
    for (i, row) in rows.iter().enumerate() {
        for (j, e) in row.iter().enumerate() {
            m[(i, j)] = e.eval(env)?;
        }
    }
    Ok(m)
}

fn eval_all(exprs: &[Expr], env: &BaseEnv) -> Result<Vec<f64>> {
    exprs.iter().map(|e| Ok(e.eval(env)?)).collect()
}

impl ChangeMap {
    pub fn new(
        name: impl Into<String>,
        forward_t: Vec<Expr>,
        forward_x: Vec<Expr>,
        inverse_t: Vec<Expr>,
        inverse_x: Vec<Expr>,
        domain: DomainBox,
    ) -> Result<ChangeMap> {
        let p = forward_t.len();
        let n = forward_x.len();
        if inverse_t.len() != p || inverse_x.len() != n {
            return Err(Error::Dimension(format!(
                "forward map has ({p}, {n}) components, inverse has ({}, {})",
                inverse_t.len(),
                inverse_x.len()
            )));
        }
        if domain.t.len() != p || domain.x.len() != n {
            return Err(Error::Dimension("domain box does not match map dimensions".into()));
        }
        let in_t = |k: VarKind| matches!(k, VarKind::Time(a) if a < p);
        let in_x = |k: VarKind| matches!(k, VarKind::Space(i) if i < n);
        check_vars(&forward_t, in_t, "temporal")?;
        check_vars(&inverse_t, in_t, "inverse temporal")?;
        check_vars(&forward_x, in_x, "spatial")?;
        check_vars(&inverse_x, in_x, "inverse spatial")?;
        let derivs = Arc::new(Derivatives::new(&forward_t, &forward_x, &inverse_t, &inverse_x));
        Ok(ChangeMap {
            name: name.into(),
            forward_t,
            forward_x,
            inverse_t,
            inverse_x,
            image: DomainBox::unbounded(p, n),
            domain,
            derivs,
        })
    }

    /// Builds a change from expression sources.
    pub fn parse(
        name: impl Into<String>,
        forward_t: &[&str],
        forward_x: &[&str],
        inverse_t: &[&str],
        inverse_x: &[&str],
        domain: DomainBox,
    ) -> Result<ChangeMap> {
        let p = |v: &[&str]| -> Result<Vec<Expr>> { v.iter().map(|s| Ok(parse(s)?)).collect() };
        ChangeMap::new(name, p(forward_t)?, p(forward_x)?, p(inverse_t)?, p(inverse_x)?, domain)
    }

    pub fn identity(p: usize, n: usize) -> ChangeMap {
        let t: Vec<Expr> = (0..p).map(Expr::time).collect();
        let x: Vec<Expr> = (0..n).map(Expr::space).collect();
        ChangeMap::new("identity", t.clone(), x.clone(), t, x, DomainBox::unbounded(p, n))
            .expect("identity map is well formed")
    }

    /// Declares the box containing the image of the domain; points handed to
    /// the inverse map are checked against it.
    pub fn with_image(mut self, image: DomainBox) -> ChangeMap {
        self.image = image;
        self
    }

    pub fn with_name(mut self, name: impl Into<String>) -> ChangeMap {
        self.name = name.into();
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn p(&self) -> usize {
        self.forward_t.len()
    }

    pub fn n(&self) -> usize {
        self.forward_x.len()
    }

    pub fn domain(&self) -> &DomainBox {
        &self.domain
    }

    pub fn forward_t(&self) -> &[Expr] {
        &self.forward_t
    }

    pub fn forward_x(&self) -> &[Expr] {
        &self.forward_x
    }

    pub fn inverse_t(&self) -> &[Expr] {
        &self.inverse_t
    }

    pub fn inverse_x(&self) -> &[Expr] {
        &self.inverse_x
    }

    fn check_domain(&self, t: &[f64], x: &[f64]) -> Result<()> {
        if t.len() != self.p() || x.len() != self.n() {
            return Err(Error::Dimension(format!(
                "point has ({}, {}) coordinates, change `{}` expects ({}, {})",
                t.len(),
                x.len(),
                self.name,
                self.p(),
                self.n()
            )));
        }
        if !self.domain.contains(t, x) {
            return Err(Error::OutsideDomain(format!(
                "(t = {t:?}, x = {x:?}) is outside the domain of `{}`",
                self.name
            )));
        }
        Ok(())
    }

    /// Image of a base point.
    pub fn forward(&self, t: &[f64], x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_domain(t, x)?;
        let env = BaseEnv { t, x };
        Ok((eval_all(&self.forward_t, &env)?, eval_all(&self.forward_x, &env)?))
    }

    /// Preimage of a point given in the tilde chart.
    pub fn backward(&self, t: &[f64], x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if !self.image.contains(t, x) {
            return Err(Error::OutsideDomain(format!(
                "(t = {t:?}, x = {x:?}) is outside the image of `{}`",
                self.name
            )));
        }
        let env = BaseEnv { t, x };
        Ok((eval_all(&self.inverse_t, &env)?, eval_all(&self.inverse_x, &env)?))
    }

    pub fn blocks(&self, t: &[f64], x: &[f64]) -> Result<JacobianBlocks> {
        let (image_t, image_x) = self.forward(t, x)?;
        let env = BaseEnv { t, x };
        let temporal = eval_matrix(&self.derivs.dt, &env)?;
        let spatial = eval_matrix(&self.derivs.dx, &env)?;
        for (block, m) in [("temporal", &temporal), ("spatial", &spatial)] {
            let det = m.determinant();
            if det.abs() < SINGULAR_DET {
                return Err(Error::SingularJacobian { block, det });
            }
        }
        let image_env = BaseEnv {
            t: &image_t,
            x: &image_x,
        };
        let temporal_inv = eval_matrix(&self.derivs.dt_inv, &image_env)?;
        let spatial_inv = eval_matrix(&self.derivs.dx_inv, &image_env)?;
        let dev = |m: &DMatrix<f64>, inv: &DMatrix<f64>| {
            let prod = m * inv;
            (prod - DMatrix::identity(m.nrows(), m.ncols())).amax()
        };
        let worst = dev(&temporal, &temporal_inv).max(dev(&spatial, &spatial_inv));
        if !(worst <= INVERSE_TOL) {
            return Err(Error::InverseMismatch(worst));
        }
        Ok(JacobianBlocks {
            temporal,
            spatial,
            temporal_inv,
            spatial_inv,
            image_t,
            image_x,
        })
    }

    pub fn second_blocks(&self, t: &[f64], x: &[f64]) -> Result<SecondBlocks> {
        self.check_domain(t, x)?;
        let env = BaseEnv { t, x };
        let slice = |d2: &[Vec<Vec<Expr>>], k: usize| -> Result<DMatrix<f64>> {
            let rows: Vec<Vec<Expr>> = d2
                .iter()
                .map(|row| row.iter().map(|col| col[k].clone()).collect())
                .collect();
            eval_matrix(&rows, &env)
        };
        Ok(SecondBlocks {
            temporal: (0..self.p())
                .map(|a| slice(&self.derivs.d2t, a))
                .collect::<Result<_>>()?,
            spatial: (0..self.n())
                .map(|i| slice(&self.derivs.d2x, i))
                .collect::<Result<_>>()?,
        })
    }

    /// True when every second derivative of the temporal part vanishes
    /// identically (symbolically).
    pub fn temporal_is_affine(&self) -> bool {
        self.derivs.d2t.iter().flatten().flatten().all(Expr::is_zero)
    }

    pub fn spatial_is_affine(&self) -> bool {
        self.derivs.d2x.iter().flatten().flatten().all(Expr::is_zero)
    }

    /// The inverse change (forward and inverse swapped, domain and image swapped).
    pub fn inverse(&self) -> ChangeMap {
        let derivs = Arc::new(Derivatives::new(
            &self.inverse_t,
            &self.inverse_x,
            &self.forward_t,
            &self.forward_x,
        ));
        ChangeMap {
            name: format!("{}^-1", self.name),
            forward_t: self.inverse_t.clone(),
            forward_x: self.inverse_x.clone(),
            inverse_t: self.forward_t.clone(),
            inverse_x: self.forward_x.clone(),
            domain: self.image.clone(),
            image: self.domain.clone(),
            derivs,
        }
    }

    /// `after ∘ self`, built by substituting expressions.
    pub fn then(&self, after: &ChangeMap) -> Result<ChangeMap> {
        if after.p() != self.p() || after.n() != self.n() {
            return Err(Error::Dimension("composed changes have different dimensions".into()));
        }
        let fwd = |v: &Var| base_substitution(v, &self.forward_t, &self.forward_x);
        let inv = |v: &Var| base_substitution(v, &after.inverse_t, &after.inverse_x);
        let forward_t = after.forward_t.iter().map(|e| e.substitute(&fwd)).collect();
        let forward_x = after.forward_x.iter().map(|e| e.substitute(&fwd)).collect();
        let inverse_t = self.inverse_t.iter().map(|e| e.substitute(&inv)).collect();
        let inverse_x = self.inverse_x.iter().map(|e| e.substitute(&inv)).collect();
        Ok(ChangeMap::new(
            format!("{}∘{}", after.name, self.name),
            forward_t,
            forward_x,
            inverse_t,
            inverse_x,
            self.domain.clone(),
        )?
        .with_image(after.image.clone()))
    }

    /// Rewrites an expression over the old coordinates `(t, x)` as an
    /// expression over the tilde coordinates, via the inverse map.
    pub fn pull(&self, e: &Expr) -> Expr {
        e.substitute(&|v: &Var| base_substitution(v, &self.inverse_t, &self.inverse_x))
    }

    /// `d t^a / d t~^mu` as expressions over the tilde coordinates, `[a][mu]`.
    pub fn temporal_inv_exprs(&self) -> &[Vec<Expr>] {
        &self.derivs.dt_inv
    }

    /// `d x^i / d x~^j` as expressions over the tilde coordinates, `[i][j]`.
    pub fn spatial_inv_exprs(&self) -> &[Vec<Expr>] {
        &self.derivs.dx_inv
    }

    /// `d t~^mu / d t^a` as expressions over the old coordinates, `[mu][a]`.
    pub fn temporal_exprs(&self) -> &[Vec<Expr>] {
        &self.derivs.dt
    }

    /// `d x~^j / d x^i` as expressions over the old coordinates, `[j][i]`.
    pub fn spatial_exprs(&self) -> &[Vec<Expr>] {
        &self.derivs.dx
    }

    /// Checks the chart-change invariants at the given base points: both
    /// Jacobian blocks nonsingular and `inverse ∘ forward = id` to 1e-9.
    pub fn validate(&self, points: &[(Vec<f64>, Vec<f64>)]) -> Result<()> {
        for (t, x) in points {
            let blocks = self.blocks(t, x)?;
            let (bt, bx) = self.backward(&blocks.image_t, &blocks.image_x)?;
            let err = bt
                .iter()
                .zip(t)
                .chain(bx.iter().zip(x))
                .map(|(a, b)| (a - b).abs() / b.abs().max(1.0))
                .fold(0.0, f64::max);
            if !(err <= 1e-9) {
                return Err(Error::InvalidChange(format!(
                    "`{}`: inverse∘forward deviates from identity by {err:e} at t = {t:?}, x = {x:?}",
                    self.name
                )));
            }
        }
        Ok(())
    }
}

fn base_substitution(v: &Var, t: &[Expr], x: &[Expr]) -> Option<Expr> {
    match v.kind() {
        VarKind::Time(a) => t.get(a).cloned(),
        VarKind::Space(i) => x.get(i).cloned(),
        _ => None,
    }
}

/// Exact Jacobian blocks of `c` at the base point `(t, x)`.
pub fn jacobian_blocks(c: &ChangeMap, t: &[f64], x: &[f64]) -> Result<JacobianBlocks> {
    c.blocks(t, x)
}
