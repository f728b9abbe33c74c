//! Solver and prolongation commands.

use serde::Serialize;

use crate::connection::NonlinearConnection;
use crate::error::{Error, Result};
use crate::exprlang::parse;
use crate::jetspace::JetPoint;
use crate::maps::{solve_affine_ode, solve_harmonic_grid, Grid, GridSolution, SmoothMap, SolverOptions, Trajectory};
use crate::prolong::{flow_prolong_check_in, horizontal_lift, olver_prolong, vertical_gap, BaseVectorField, JetVector};
use crate::sprays::MultiTimeSpray;

use super::scenario::Setup;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone)]
pub struct GeodesicRequest {
    pub x0: Vec<f64>,
    pub v0: Vec<f64>,
    pub t0: f64,
    pub tmax: f64,
    pub step: f64,
}

#[derive(Debug, Serialize)]
struct TrajectoryJson<'a> {
    #[serde(flatten)]
    trajectory: &'a Trajectory,
    residual: &'a [f64],
}

pub fn geodesic(setup: &Setup, req: &GeodesicRequest) -> Result<Trajectory> {
    let (p, _) = setup.dims();
    if p != 1 {
        return Err(Error::Unsupported(format!("geodesic needs a one-dimensional temporal factor, scenario has p = {p}")));
    }
    let s = MultiTimeSpray::canonical(&setup.h, &setup.phi)?;
    solve_affine_ode(&s, &req.x0, &req.v0, (req.t0, req.tmax), req.step)
}

pub fn render_trajectory(setup: &Setup, tr: &Trajectory, format: Format) -> Result<String> {
    let s = MultiTimeSpray::canonical(&setup.h, &setup.phi)?;
    let residual = tr.harmonic_residuals(&s, &setup.h)?;
    Ok(match format {
        Format::Csv => tr.to_csv(&residual),
        Format::Json => {
            let v = serde_json::to_value(TrajectoryJson {
                trajectory: tr,
                residual: &residual,
            })
            .expect("trajectory is serialisable");
            serde_json::to_string(&v).expect("value is serialisable") + "\n"
        }
    })
}

/// Named boundary data or `;`-separated component expressions over `t1, t2`.
pub fn boundary(spec: &str, n: usize) -> Result<SmoothMap> {
    let exprs: Vec<String> = match spec {
        "linear" => (0..n).map(|i| format!("{} * t1 - t2 + 0.5", i + 1)).collect(),
        "saddle" => (0..n).map(|i| format!("t1^2 - t2^2 + {i}")).collect(),
        other => other.split(';').map(|s| s.trim().to_string()).collect(),
    };
    if exprs.len() != n {
        return Err(Error::Dimension(format!("boundary needs {n} components, got {}", exprs.len())));
    }
    let refs: Vec<&str> = exprs.iter().map(String::as_str).collect();
    SmoothMap::parse(2, &refs)
}

pub fn harmonic(setup: &Setup, boundary_spec: &str, grid: Grid, opts: SolverOptions) -> Result<GridSolution> {
    let (p, n) = setup.dims();
    if p != 2 {
        return Err(Error::Unsupported(format!("harmonic needs a two-dimensional temporal factor, scenario has p = {p}")));
    }
    let s = MultiTimeSpray::canonical(&setup.h, &setup.phi)?;
    solve_harmonic_grid(&s, &setup.h, &boundary(boundary_spec, n)?, grid, opts)
}

pub fn render_grid(setup: &Setup, sol: &GridSolution) -> Result<String> {
    let s = MultiTimeSpray::canonical(&setup.h, &setup.phi)?;
    Ok(sol.to_csv(&sol.residuals(&s, &setup.h)?))
}

#[derive(Debug, Serialize)]
pub struct ProlongReport {
    pub at: JetPoint,
    pub field: FieldSource,
    pub prolongation: JetVector,
    pub horizontal_lift: JetVector,
    pub vertical_gap: Vec<f64>,
    pub eps: f64,
    pub flow_discrepancy: f64,
    pub flow_discrepancy_half: f64,
}

#[derive(Debug, Serialize)]
pub struct FieldSource {
    pub temporal: Vec<String>,
    pub spatial: Vec<String>,
}

/// `spec` lists `X^1..X^p` then `X^1..X^n`, separated by `;`.
pub fn parse_field(spec: &str, p: usize, n: usize) -> Result<BaseVectorField> {
    let parts: Vec<&str> = spec.split(';').map(str::trim).collect();
    if parts.len() != p + n {
        return Err(Error::Dimension(format!(
            "vector field needs {} components (p = {p}, n = {n}), got {}",
            p + n,
            parts.len()
        )));
    }
    let exprs = parts.iter().map(|s| Ok(parse(s)?)).collect::<Result<Vec<_>>>()?;
    BaseVectorField::new(exprs[..p].to_vec(), exprs[p..].to_vec())
}

pub fn parse_jet(src: &str) -> Result<JetPoint> {
    serde_json::from_str(src).map_err(|e| Error::Scenario {
        pointer: "--at".into(),
        message: e.to_string(),
    })
}

pub fn prolong(setup: &Setup, x: &BaseVectorField, u: &JetPoint, eps: f64) -> Result<ProlongReport> {
    if (u.p(), u.n()) != setup.dims() {
        return Err(Error::Dimension(format!("jet has (p, n) = ({}, {}), scenario {:?}", u.p(), u.n(), setup.dims())));
    }
    let g = NonlinearConnection::canonical(&setup.h, &setup.phi)?;
    let domain = setup.sample_box();
    Ok(ProlongReport {
        at: u.clone(),
        field: FieldSource {
            temporal: x.temporal().iter().map(ToString::to_string).collect(),
            spatial: x.spatial().iter().map(ToString::to_string).collect(),
        },
        prolongation: olver_prolong(x).eval(u)?,
        horizontal_lift: horizontal_lift(x, &g)?.eval(u)?,
        vertical_gap: vertical_gap(x, &g, u)?.into_data(),
        eps,
        flow_discrepancy: flow_prolong_check_in(x, u, eps, &domain)?,
        flow_discrepancy_half: flow_prolong_check_in(x, u, eps / 2.0, &domain)?,
    })
}
