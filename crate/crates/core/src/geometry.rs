//! Semi-Riemannian metrics on the temporal manifold `T` and the spatial
//! manifold `M`, with inverses and Christoffel symbols.

use std::sync::{Arc, OnceLock};

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::domain::Interval;
use crate::error::{Error, Result};
use crate::exprlang::{parse, BaseEnv, Expr, Var};
use crate::numdiff::ChangeMap;

const SINGULAR_DET: f64 = 1e-12;
const SYMMETRY_TOL: f64 = 1e-12;
const CHECK_POINTS: usize = 8;

/// Which factor of `T x M` a metric lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Factor {
    Temporal,
    Spatial,
}

impl Factor {
    pub fn coordinate(self, k: usize) -> Var {
        match self {
            Factor::Temporal => Var::time(k),
            Factor::Spatial => Var::space(k),
        }
    }

    pub fn coordinate_expr(self, k: usize) -> Expr {
        Expr::Var(self.coordinate(k))
    }
}

#[derive(Debug)]
struct MetricCache {
    /// `[c][a][b]` = d_c g_ab
    derivs: Vec<Vec<Vec<Expr>>>,
    inverse: OnceLock<Vec<Vec<Expr>>>,
    christoffel: OnceLock<Vec<Vec<Vec<Expr>>>>,
}

/// Symmetric nondegenerate matrix of expressions over one factor's
/// coordinates.
#[derive(Debug, Clone)]
pub struct Metric {
    name: String,
    factor: Factor,
    components: Vec<Vec<Expr>>,
    domain: Vec<Interval>,
    cache: Arc<MetricCache>,
}

/// Christoffel symbols `Γ^a_{bc}` at one point, stored `[a][b][c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Christoffel {
    dim: usize,
    data: Vec<f64>,
}

impl Christoffel {
    pub fn zeros(dim: usize) -> Christoffel {
        Christoffel {
            dim,
            data: vec![0.0; dim * dim * dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, a: usize, b: usize, c: usize) -> f64 {
        self.data[(a * self.dim + b) * self.dim + c]
    }

    fn set(&mut self, a: usize, b: usize, c: usize, v: f64) {
        let d = self.dim;
        self.data[(a * d + b) * d + c] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

fn determinant_expr(m: &[Vec<Expr>]) -> Expr {
    match m.len() {
        0 => Expr::one(),
        1 => m[0][0].clone(),
        2 => &m[0][0] * &m[1][1] - &m[0][1] * &m[1][0],
        n => Expr::sum((0..n).map(|j| {
            let term = &m[0][j] * &determinant_expr(&minor(m, 0, j));
            if j % 2 == 0 {
                term
            } else {
                -term
            }
        })),
    }
}

fn minor(m: &[Vec<Expr>], row: usize, col: usize) -> Vec<Vec<Expr>> {
    m.iter()
        .enumerate()
        .filter(|(i, _)| *i != row)
        .map(|(_, r)| {
            r.iter()
                .enumerate()
                .filter(|(j, _)| *j != col)
                .map(|(_, e)| e.clone())
                .collect()
        })
        .collect()
}

impl Metric {
    pub fn new(
        name: impl Into<String>,
        factor: Factor,
        components: Vec<Vec<Expr>>,
        domain: Vec<Interval>,
    ) -> Result<Metric> {
        let dim = components.len();
        if dim == 0 || components.iter().any(|row| row.len() != dim) {
            return Err(Error::Dimension("metric components must form a square matrix".into()));
        }
        if domain.len() != dim {
            return Err(Error::Dimension(format!(
                "metric of dimension {dim} has a {}-dimensional domain",
                domain.len()
            )));
        }
        for e in components.iter().flatten() {
            for v in e.variables() {
                let ok = (0..dim).any(|k| factor.coordinate(k).name() == v);
                if !ok {
                    return Err(Error::Dimension(format!(
                        "metric component `{e}` references `{v}`, which is not a coordinate of this factor"
                    )));
                }
            }
        }
        let derivs = (0..dim)
            .map(|c| {
                let var = factor.coordinate(c);
                components
                    .iter()
                    .map(|row| row.iter().map(|e| e.diff(var.name())).collect())
                    .collect()
            })
            .collect();
        let metric = Metric {
            name: name.into(),
            factor,
            components,
            domain,
            cache: Arc::new(MetricCache {
                derivs,
                inverse: OnceLock::new(),
                christoffel: OnceLock::new(),
            }),
        };
        metric.validate_seeded()?;
        Ok(metric)
    }

    /// Builds a metric from component sources.
    pub fn parse(
        name: impl Into<String>,
        factor: Factor,
        components: &[Vec<&str>],
        domain: Vec<Interval>,
    ) -> Result<Metric> {
        let comps = components
            .iter()
            .map(|row| row.iter().map(|s| Ok(parse(s)?)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        Metric::new(name, factor, comps, domain)
    }

    /// Builtin metrics by name: `euclidean[:n]`, `sphere:2`, `hyperbolic:2`,
    /// `exp1d`, `conformal2d:<expr>`.
    pub fn catalog(spec: &str, factor: Factor, dim: usize) -> Result<Metric> {
        let (head, arg) = match spec.split_once(':') {
            Some((h, a)) => (h.trim(), Some(a.trim())),
            None => (spec.trim(), None),
        };
        let c = |k: usize| factor.coordinate_expr(k);
        let mismatch = |want: usize| {
            Error::Dimension(format!("catalog metric `{spec}` has dimension {want}, expected {dim}"))
        };
        let diag = |entries: Vec<Expr>| -> Vec<Vec<Expr>> {
            let d = entries.len();
            (0..d)
                .map(|i| (0..d).map(|j| if i == j { entries[i].clone() } else { Expr::zero() }).collect())
                .collect()
        };
        let metric = match head {
            "euclidean" => {
                if let Some(a) = arg {
                    let want: usize = a.parse().map_err(|_| Error::UnknownCatalog(spec.into()))?;
                    if want != dim {
                        return Err(mismatch(want));
                    }
                }
                Metric::new(
                    spec,
                    factor,
                    diag(vec![Expr::one(); dim]),
                    vec![Interval::UNBOUNDED; dim],
                )?
            }
            "sphere" => {
                if arg.is_some_and(|a| a != "2") {
                    return Err(Error::UnknownCatalog(spec.into()));
                }
                if dim != 2 {
                    return Err(mismatch(2));
                }
                Metric::new(
                    spec,
                    factor,
                    diag(vec![Expr::one(), Expr::pow(Expr::sin(c(0)), 2)]),
                    vec![
                        Interval::new(0.2, std::f64::consts::PI - 0.2),
                        Interval::UNBOUNDED,
                    ],
                )?
            }
            "hyperbolic" => {
                if arg.is_some_and(|a| a != "2") {
                    return Err(Error::UnknownCatalog(spec.into()));
                }
                if dim != 2 {
                    return Err(mismatch(2));
                }
                let g = Expr::div(Expr::one(), Expr::pow(c(1), 2));
                Metric::new(
                    spec,
                    factor,
                    diag(vec![g.clone(), g]),
                    vec![Interval::UNBOUNDED, Interval::new(0.1, f64::INFINITY)],
                )?
            }
            "exp1d" => {
                if dim != 1 {
                    return Err(mismatch(1));
                }
                Metric::new(
                    spec,
                    factor,
                    vec![vec![Expr::exp(2.0 * c(0))]],
                    vec![Interval::UNBOUNDED],
                )?
            }
            "conformal2d" => {
                if dim != 2 {
                    return Err(mismatch(2));
                }
                let lambda = parse(arg.ok_or_else(|| Error::UnknownCatalog(spec.into()))?)?;
                let g = Expr::exp(2.0 * lambda);
                Metric::new(spec, factor, diag(vec![g.clone(), g]), vec![Interval::UNBOUNDED; 2])?
            }
            _ => return Err(Error::UnknownCatalog(spec.into())),
        };
        Ok(metric)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn factor(&self) -> Factor {
        self.factor
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn domain(&self) -> &[Interval] {
        &self.domain
    }

    pub fn components(&self) -> &[Vec<Expr>] {
        &self.components
    }

    /// True when every component is a constant expression.
    pub fn is_constant(&self) -> bool {
        self.components.iter().flatten().all(|e| e.as_num().is_some())
    }

    fn env<'a>(&self, point: &'a [f64]) -> BaseEnv<'a> {
        match self.factor {
            Factor::Temporal => BaseEnv { t: point, x: &[] },
            Factor::Spatial => BaseEnv { t: &[], x: point },
        }
    }

    fn check_point(&self, point: &[f64]) -> Result<()> {
        if point.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "metric `{}` has dimension {}, point has {} coordinates",
                self.name,
                self.dim(),
                point.len()
            )));
        }
        if !self.domain.iter().zip(point).all(|(i, v)| i.contains(*v)) {
            return Err(Error::OutsideDomain(format!(
                "{point:?} is outside the domain of metric `{}`",
                self.name
            )));
        }
        Ok(())
    }

    fn eval_grid(&self, rows: &[Vec<Expr>], point: &[f64]) -> Result<DMatrix<f64>> {
        let env = self.env(point);
        let d = rows.len();
        let mut m = DMatrix::zeros(d, d);
        for (a, row) in rows.iter().enumerate() {
            for (b, e) in row.iter().enumerate() {
                m[(a, b)] = e.eval(&env)?;
            }
        }
        Ok(m)
    }

    /// Component matrix at a point.
    pub fn eval(&self, point: &[f64]) -> Result<DMatrix<f64>> {
        self.check_point(point)?;
        self.eval_grid(&self.components, point)
    }

    /// `d_c g` for each coordinate `c`.
    pub fn derivatives(&self, point: &[f64]) -> Result<Vec<DMatrix<f64>>> {
        self.check_point(point)?;
        self.cache
            .derivs
            .iter()
            .map(|d| self.eval_grid(d, point))
            .collect()
    }

    /// Numeric inverse `g^{ab}`.
    pub fn inverse_at(&self, point: &[f64]) -> Result<DMatrix<f64>> {
        let g = self.eval(point)?;
        invert(&g)
    }

    /// `Γ^a_{bc} = ½ g^{ad}(d_b g_{dc} + d_c g_{bd} − d_d g_{bc})` from the
    /// symbolic component derivatives.
    pub fn christoffel(&self, point: &[f64]) -> Result<Christoffel> {
        let ginv = self.inverse_at(point)?;
        let dg = self.derivatives(point)?;
        Ok(christoffel_from(&ginv, &dg))
    }

    fn check_at(&self, point: &[f64]) -> Result<()> {
        let g = self.eval(point)?;
        let asym = (&g - g.transpose()).amax();
        if asym > SYMMETRY_TOL * g.amax().max(1.0) {
            return Err(Error::AsymmetricMetric(format!(
                "`{}` at {point:?} deviates by {asym:e}",
                self.name
            )));
        }
        let det = g.determinant();
        if !(det.abs() > SINGULAR_DET) {
            return Err(Error::SingularMetric(det.abs()));
        }
        Ok(())
    }

    fn validate_seeded(&self) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(0x6d65_7472_6963);
        for _ in 0..CHECK_POINTS {
            let point: Vec<f64> = self.domain.iter().map(|i| i.sample(&mut rng)).collect();
            self.check_at(&point)?;
        }
        Ok(())
    }

    /// Checks symmetry and nondegeneracy at the given points.
    pub fn validate(&self, points: &[Vec<f64>]) -> Result<()> {
        points.iter().try_for_each(|p| self.check_at(p))
    }

    /// `g^{ab}` as expressions (cofactor expansion).
    pub fn inverse_exprs(&self) -> &[Vec<Expr>] {
        self.cache.inverse.get_or_init(|| {
            let m = &self.components;
            let d = m.len();
            let det = determinant_expr(m);
            (0..d)
                .map(|a| {
                    (0..d)
                        .map(|b| {
                            // inverse[a][b] = cofactor[b][a] / det
                            let cof = determinant_expr(&minor(m, b, a));
                            let cof = if (a + b) % 2 == 0 { cof } else { -cof };
                            Expr::div(cof, det.clone())
                        })
                        .collect()
                })
                .collect()
        })
    }

    /// `Γ^a_{bc}` as expressions, `[a][b][c]`.
    pub fn christoffel_exprs(&self) -> &[Vec<Vec<Expr>>] {
        self.cache.christoffel.get_or_init(|| {
            let d = self.dim();
            let ginv = self.inverse_exprs();
            let dg = &self.cache.derivs;
            (0..d)
                .map(|a| {
                    (0..d)
                        .map(|b| {
                            (0..d)
                                .map(|c| {
                                    let s = Expr::sum((0..d).map(|e| {
                                        let bracket =
                                            &(&dg[b][e][c] + &dg[c][b][e]) - &dg[e][b][c];
                                        &ginv[a][e] * &bracket
                                    }));
                                    0.5 * s
                                })
                                .collect()
                        })
                        .collect()
                })
                .collect()
        })
    }

    /// Components in the tilde chart of `c`:
    /// `g~_ab(y~) = g_cd(y(y~)) (dy^c/dy~^a)(dy^d/dy~^b)`.
    pub fn pullback(&self, c: &ChangeMap) -> Result<Metric> {
        let jac = match self.factor {
            Factor::Temporal => c.temporal_inv_exprs(),
            Factor::Spatial => c.spatial_inv_exprs(),
        };
        if jac.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "metric `{}` of dimension {} cannot be pulled back along `{}`",
                self.name,
                self.dim(),
                c.name()
            )));
        }
        let d = self.dim();
        let pulled: Vec<Vec<Expr>> = self.components.iter().map(|row| row.iter().map(|e| c.pull(e)).collect()).collect();
        let comps = (0..d)
            .map(|a| {
                (0..d)
                    .map(|b| {
                        Expr::sum((0..d).flat_map(|k| {
                            let pulled = &pulled;
                            (0..d).map(move |l| &(&pulled[k][l] * &jac[k][a]) * &jac[l][b])
                        }))
                    })
                    .collect()
            })
            .collect();
        Metric::new(
            format!("{}@{}", self.name, c.name()),
            self.factor,
            comps,
            vec![Interval::UNBOUNDED; d],
        )
    }
}

fn invert(g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let det = g.determinant();
    if !(det.abs() > SINGULAR_DET) {
        return Err(Error::SingularMetric(det.abs()));
    }
    g.clone()
        .try_inverse()
        .ok_or(Error::SingularMetric(det.abs()))
}

/// Numeric inverse of a metric at a point.
pub fn metric_inverse(g: &Metric, point: &[f64]) -> Result<DMatrix<f64>> {
    g.inverse_at(point)
}

/// Christoffel symbols of a metric at a point.
pub fn christoffel(g: &Metric, point: &[f64]) -> Result<Christoffel> {
    g.christoffel(point)
}

/// Christoffel symbols from an inverse metric and component derivatives
/// (`dg[c]` = d_c g).
pub fn christoffel_from(ginv: &DMatrix<f64>, dg: &[DMatrix<f64>]) -> Christoffel {
    let d = ginv.nrows();
    let mut out = Christoffel::zeros(d);
    for a in 0..d {
        for b in 0..d {
            for c in b..d {
                let mut s = 0.0;
                for e in 0..d {
                    s += ginv[(a, e)] * (dg[b][(e, c)] + dg[c][(b, e)] - dg[e][(b, c)]);
                }
                out.set(a, b, c, 0.5 * s);
                out.set(a, c, b, 0.5 * s);
            }
        }
    }
    out
}
