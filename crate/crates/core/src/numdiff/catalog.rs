//! Seeded families of invertible chart changes used by the property suites.
//!
//! * [`affine`]: `t~ = K t + k`, `x~ = A x + a` with random matrices of
//!   condition number below 50.
//! * [`perturbed`]: affine maps composed with a bounded triangular sine shear
//!   and a componentwise `c·sinh(s/c)` stretch. Every piece has a closed-form
//!   inverse, so the inverse expressions are exact.

use nalgebra::DMatrix;
use rand::Rng;

use super::ChangeMap;
use crate::domain::DomainBox;
use crate::error::Result;
use crate::exprlang::Expr;

pub const MAX_CONDITION: f64 = 50.0;
pub const MAX_SHEAR: f64 = 0.1;

/// Random square matrix with condition number below [`MAX_CONDITION`].
pub fn well_conditioned<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> DMatrix<f64> {
    loop {
        let m = DMatrix::from_fn(dim, dim, |i, j| {
            let off = rng.random_range(-0.6..0.6);
            if i == j {
                let mag = rng.random_range(0.6..1.8);
                if rng.random_bool(0.5) {
                    mag
                } else {
                    -mag
                }
            } else {
                off
            }
        });
        if condition_number(&m) < MAX_CONDITION {
            return m;
        }
    }
}

pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

fn affine_exprs(m: &DMatrix<f64>, shift: &[f64], v: &[Expr]) -> Vec<Expr> {
    (0..m.nrows())
        .map(|i| {
            let lin = Expr::sum((0..m.ncols()).map(|j| Expr::num(m[(i, j)]) * v[j].clone()));
            lin + Expr::num(shift[i])
        })
        .collect()
}

fn affine_inverse_exprs(m: &DMatrix<f64>, shift: &[f64], v: &[Expr]) -> Vec<Expr> {
    let inv = m.clone().try_inverse().expect("well-conditioned matrix is invertible");
    let centred: Vec<Expr> = v.iter().zip(shift).map(|(e, s)| e.clone() - *s).collect();
    affine_exprs(&inv, &vec![0.0; shift.len()], &centred)
}

/// `c·sinh(s/c)` componentwise.
fn stretch(scales: &[f64], v: &[Expr]) -> Vec<Expr> {
    v.iter()
        .zip(scales)
        .map(|(e, &c)| c * Expr::sinh(e.clone() / c))
        .collect()
}

/// `c·asinh(s/c)` written as `c·log(s/c + sqrt((s/c)^2 + 1))`.
fn unstretch(scales: &[f64], v: &[Expr]) -> Vec<Expr> {
    v.iter()
        .zip(scales)
        .map(|(e, &c)| {
            let w = e.clone() / c;
            c * Expr::log(w.clone() + Expr::sqrt(Expr::pow(w, 2) + 1.0))
        })
        .collect()
}

/// `y_i = s_i + eps_i·sin(s_{i+1} + phase_i)`, last component unchanged.
fn shear(eps: &[f64], phase: &[f64], v: &[Expr]) -> Vec<Expr> {
    let n = v.len();
    (0..n)
        .map(|i| {
            if i + 1 < n {
                v[i].clone() + eps[i] * Expr::sin(v[i + 1].clone() + phase[i])
            } else {
                v[i].clone()
            }
        })
        .collect()
}

fn unshear(eps: &[f64], phase: &[f64], y: &[Expr]) -> Vec<Expr> {
    let n = y.len();
    let mut s = y.to_vec();
    for i in (0..n.saturating_sub(1)).rev() {
        s[i] = y[i].clone() - eps[i] * Expr::sin(s[i + 1].clone() + phase[i]);
    }
    s
}

fn random_shift<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.random_range(-0.5..0.5)).collect()
}

/// Block-affine chart change with well-conditioned random blocks.
pub fn affine<R: Rng + ?Sized>(
    rng: &mut R,
    name: &str,
    p: usize,
    n: usize,
    domain: DomainBox,
) -> Result<ChangeMap> {
    let t: Vec<Expr> = (0..p).map(Expr::time).collect();
    let x: Vec<Expr> = (0..n).map(Expr::space).collect();
    let k = well_conditioned(rng, p);
    let ks = random_shift(rng, p);
    let a = well_conditioned(rng, n);
    let as_ = random_shift(rng, n);
    ChangeMap::new(
        name,
        affine_exprs(&k, &ks, &t),
        affine_exprs(&a, &as_, &x),
        affine_inverse_exprs(&k, &ks, &t),
        affine_inverse_exprs(&a, &as_, &x),
        domain,
    )
}

struct Warp {
    matrix: DMatrix<f64>,
    shift: Vec<f64>,
    eps: Vec<f64>,
    phase: Vec<f64>,
    scales: Vec<f64>,
}

impl Warp {
    fn random<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Warp {
        Warp {
            matrix: well_conditioned(rng, dim),
            shift: random_shift(rng, dim),
            eps: (0..dim).map(|_| rng.random_range(0.5 * MAX_SHEAR..=MAX_SHEAR)).collect(),
            phase: (0..dim).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect(),
            scales: (0..dim).map(|_| rng.random_range(1.0..2.5)).collect(),
        }
    }

    fn forward(&self, v: &[Expr]) -> Vec<Expr> {
        let s = stretch(&self.scales, v);
        let s = shear(&self.eps, &self.phase, &s);
        affine_exprs(&self.matrix, &self.shift, &s)
    }

    fn inverse(&self, v: &[Expr]) -> Vec<Expr> {
        let s = affine_inverse_exprs(&self.matrix, &self.shift, v);
        let s = unshear(&self.eps, &self.phase, &s);
        unstretch(&self.scales, &s)
    }
}

/// Nonlinear chart change: affine after a sine shear after a sinh stretch,
/// in both factors.
pub fn perturbed<R: Rng + ?Sized>(
    rng: &mut R,
    name: &str,
    p: usize,
    n: usize,
    domain: DomainBox,
) -> Result<ChangeMap> {
    let t: Vec<Expr> = (0..p).map(Expr::time).collect();
    let x: Vec<Expr> = (0..n).map(Expr::space).collect();
    let wt = Warp::random(rng, p);
    let wx = Warp::random(rng, n);
    ChangeMap::new(name, wt.forward(&t), wx.forward(&x), wt.inverse(&t), wx.inverse(&x), domain)
}

/// Named catalog families accepted in scenario files.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Affine,
    Perturbed,
}

impl Family {
    pub fn from_name(name: &str) -> Option<Family> {
        match name {
            "affine" => Some(Family::Affine),
            "perturbed" | "nonlinear" => Some(Family::Perturbed),
            _ => None,
        }
    }

    pub fn build<R: Rng + ?Sized>(
        self,
        rng: &mut R,
        name: &str,
        p: usize,
        n: usize,
        domain: DomainBox,
    ) -> Result<ChangeMap> {
        match self {
            Family::Affine => affine(rng, name, p, n, domain),
            Family::Perturbed => perturbed(rng, name, p, n, domain),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matrices_are_well_conditioned() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for dim in 1..=4 {
            for _ in 0..20 {
                assert!(condition_number(&well_conditioned(&mut rng, dim)) < MAX_CONDITION);
            }
        }
    }

    #[test]
    fn catalog_maps_invert_on_the_box() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let dom = DomainBox::cube(2, 3, -1.0, 1.0);
        for family in [Family::Affine, Family::Perturbed] {
            for k in 0..5 {
                let c = family.build(&mut rng, &format!("c{k}"), 2, 3, dom.clone()).unwrap();
                let pts: Vec<_> = (0..20).map(|_| dom.sample(&mut rng)).collect();
                c.validate(&pts).unwrap();
                assert_eq!(c.temporal_is_affine(), family == Family::Affine);
            }
        }
    }
}
