//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on failure.

use std::f64::consts::PI;
use std::path::PathBuf;
use std::process::{Command, ExitCode};
use std::sync::Arc;

use jetflow::connection::{check_coframe_law, check_frame_law, connection_from_sprays, sprays_from_connection, NonlinearConnection};
use jetflow::domain::DomainBox;
use jetflow::dtensor::{
    energy_lagrangian, is_dtensor, Combination, Components, FieldRef, LagrangianMetric, LiouvilleC, TemporalMetricField,
};
use jetflow::geometry::{Factor, Metric};
use jetflow::jetspace::JetPoint;
use jetflow::maps::{
    harmonic_residual, poisson_residual, residual_field, solve_affine_ode, solve_harmonic_grid, Grid, PoissonSource,
    SmoothMap, SolverOptions, Trajectory,
};
use jetflow::numdiff::ChangeMap;
use jetflow::prolong::{flow_prolong_check_in, BaseVectorField, VerticalGap};
use jetflow::sprays::{canonical_temporal, decompose, MultiTimeSpray};
use jetflow::suite::{catalog_changes, metric_box, seeded_jets, stream};
use jetflow::Result;
use rand::Rng;

const SEED: u64 = 20240611;

struct Suite {
    h: Metric,
    phi: Metric,
    changes: Vec<ChangeMap>,
    jets: Vec<JetPoint>,
}

impl Suite {
    fn new(h: (&str, usize), phi: (&str, usize), name: &str) -> Result<Suite> {
        let h = Metric::catalog(h.0, Factor::Temporal, h.1)?;
        let phi = Metric::catalog(phi.0, Factor::Spatial, phi.1)?;
        let mut rng = stream(SEED, name);
        let changes = catalog_changes(&mut rng, h.dim(), phi.dim(), 10)?;
        let jets = seeded_jets(&mut rng, &metric_box(&h, &phi), 10);
        Ok(Suite { h, phi, changes, jets })
    }

    fn dims(&self) -> (usize, usize) {
        (self.h.dim(), self.phi.dim())
    }

    fn box_(&self) -> DomainBox {
        metric_box(&self.h, &self.phi)
    }
}

type Outcome = Result<(bool, String)>;
type Criterion = (&'static str, fn() -> Outcome);

fn tensoriality() -> Outcome {
    let mut worst = 0.0f64;
    let mut min_pairs = usize::MAX;
    let mut ok = true;
    for (h, phi) in [(("conformal2d:0.3*t1 + 0.2*t2^2", 2), ("sphere:2", 2)), (("exp1d", 1), ("hyperbolic:2", 2))] {
        let s = Suite::new(h, phi, "tensoriality")?;
        let (p, n) = s.dims();
        let fields: Vec<FieldRef> = vec![
            Arc::new(LiouvilleC::new(p, n)),
            Arc::new(TemporalMetricField::liouville_l(s.h.clone(), n)),
            Arc::new(TemporalMetricField::normalization_j(s.h.clone(), n)),
            Arc::new(LagrangianMetric::new(energy_lagrangian(&s.h, &s.phi), p, n)),
        ];
        for f in fields {
            let v = is_dtensor(f.as_ref(), &s.changes, &s.jets, 1e-8);
            ok &= v.pass && v.pairs >= 100;
            worst = worst.max(v.max_rel_err);
            min_pairs = min_pairs.min(v.pairs);
        }
    }
    Ok((ok, format!("C, L, J, hessian on 2 metric pairs, >= {min_pairs} pairs each, max rel err {worst:.2e} (< 1e-8)")))
}

fn spray_laws() -> Outcome {
    let mut worst = 0.0f64;
    let mut ok = true;
    let mut controls = 0;
    for phi in ["sphere:2", "hyperbolic:2"] {
        let s = Suite::new(("exp1d", 1), (phi, 2), "spray-laws")?;
        let spray = MultiTimeSpray::canonical(&s.h, &s.phi)?;
        for part in [&spray.temporal, &spray.spatial] {
            let law = part.check_law(&s.changes, &s.jets, 1e-8);
            ok &= law.pass && law.pairs >= 100;
            worst = worst.max(law.max_rel_err);
            let control = is_dtensor(part.field().as_ref(), &s.changes, &s.jets, 1e-8);
            ok &= !control.pass && control.witness.is_some();
            controls += usize::from(!control.pass);
        }
    }
    Ok((ok, format!("exp1d temporal, sphere/hyperbolic spatial laws max rel err {worst:.2e} (< 1e-8); {controls}/4 negative controls fail with a witness")))
}

fn decomposition() -> Outcome {
    let s = Suite::new(("exp1d", 1), ("sphere:2", 2), "decomposition")?;
    let other = Metric::parse("1 + t1^2", Factor::Temporal, &[vec!["1 + t1^2"]], s.h.domain().to_vec())?;
    let a = canonical_temporal(&s.h, 2)?;
    let b = canonical_temporal(&other, 2)?;
    let diff = Combination::difference(a.field().clone(), b.field().clone())?;
    let v = is_dtensor(&diff, &s.changes, &s.jets, 1e-8);
    let mixed = b.affine_combination(0.4, &a)?;
    let remainder = decompose(&mixed, &s.h, &s.phi)?;
    let mut gap = 0.0f64;
    for u in &s.jets {
        let mut r = mixed.eval(u)?;
        r.axpy(-1.0, &a.eval(u)?)?;
        r.axpy(-1.0, &remainder.eval(u)?)?;
        gap = gap.max(r.max_abs());
    }
    Ok((
        v.pass && gap < 1e-12,
        format!("difference of exp1d and 1+t1^2 sprays: rel err {:.2e} (< 1e-8); |spray - canonical - remainder| = {gap:.1e} (< 1e-12)", v.max_rel_err),
    ))
}

fn connection_round_trips() -> Outcome {
    let s = Suite::new(("conformal2d:0.3*t1 + 0.2*t2^2", 2), ("sphere:2", 2), "round-trip")?;
    let mut rng = stream(SEED, "round-trip-jets");
    let jets = seeded_jets(&mut rng, &s.box_(), 20);
    let spray = MultiTimeSpray::canonical(&s.h, &s.phi)?;
    let g = connection_from_sprays(&spray, &s.h)?;
    let back = sprays_from_connection(&g)?;
    let (mut m_err, mut s_err) = (0.0f64, 0.0f64);
    for u in &jets {
        let mut two_h = spray.temporal.eval(u)?;
        two_h.scale(2.0);
        m_err = m_err.max(Components::max_rel_err(&g.m().eval(u)?, &two_h).0);
        m_err = m_err.max(Components::max_rel_err(&back.temporal.eval(u)?, &spray.temporal.eval(u)?).0);
        s_err = s_err.max(Components::max_rel_err(&back.spatial.eval(u)?, &spray.spatial.eval(u)?).0);
    }
    Ok((
        m_err <= 4.0 * f64::EPSILON && s_err < 1e-10,
        format!("M = 2H rel err {m_err:.1e} (machine precision); spatial round trip {s_err:.2e} (< 1e-10) at 20 jets"),
    ))
}

fn adapted_laws() -> Outcome {
    let mut worst = 0.0f64;
    let mut ok = true;
    for (h, phi) in [(("conformal2d:0.3*t1 + 0.2*t2^2", 2), ("hyperbolic:2", 2)), (("exp1d", 1), ("sphere:2", 2))] {
        let s = Suite::new(h, phi, "adapted")?;
        let g = NonlinearConnection::canonical(&s.h, &s.phi)?;
        for v in [check_frame_law(&g, &s.changes, &s.jets, 1e-8), check_coframe_law(&g, &s.changes, &s.jets, 1e-8)] {
            ok &= v.pass;
            worst = worst.max(v.max_rel_err);
        }
    }
    Ok((ok, format!("frame and coframe laws max rel err {worst:.2e} (< 1e-8)")))
}

fn poisson_identity() -> Outcome {
    let pool = [
        "1.2 + 0.3*sin(t1) * t2",
        "1.5 + 0.2*t1^2 - 0.1*t2",
        "0.4*cos(t1 + t2) + 0.8",
        "t1*t2 + 1.5",
        "exp(0.2*t1) - 0.3*t2^2",
    ];
    let h = Metric::catalog("conformal2d:0.3*t1 + 0.2*t2^2", Factor::Temporal, 2)?;
    let phi = Metric::catalog("hyperbolic:2", Factor::Spatial, 2)?;
    let s = MultiTimeSpray::canonical(&h, &phi)?;
    let source = PoissonSource::new(s.clone(), h.clone())?;
    let mut rng = stream(SEED, "poisson");
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let f = SmoothMap::parse(2, &[pool[rng.random_range(0..pool.len())], pool[rng.random_range(0..pool.len())]])?;
        let t = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let a = harmonic_residual(&f, &s, &h, &t)?;
        let b = poisson_residual(&f, &source, &h, &t)?;
        for (x, y) in a.iter().zip(&b) {
            worst = worst.max((x - y).abs() / x.abs().max(1.0));
        }
    }
    Ok((worst < 1e-12, format!("50 tuples, max discrepancy {worst:.1e} (< 1e-12)")))
}

fn sphere_spray() -> Result<MultiTimeSpray> {
    let h = Metric::catalog("euclidean:1", Factor::Temporal, 1)?;
    let phi = Metric::catalog("sphere:2", Factor::Spatial, 2)?;
    MultiTimeSpray::canonical(&h, &phi)
}

fn orbit(inc: f64, step: f64, tmax: f64) -> Result<Trajectory> {
    solve_affine_ode(&sphere_spray()?, &[PI / 2.0, 0.0], &[-inc.sin(), inc.cos()], (0.0, tmax), step)
}

fn energy_drift(tr: &Trajectory, until: f64) -> f64 {
    let e = |k: usize| tr.v[k][0].powi(2) + tr.x[k][0].sin().powi(2) * tr.v[k][1].powi(2);
    (0..tr.len()).filter(|&k| tr.t[k] <= until).map(|k| (e(k) - e(0)).abs()).fold(0.0, f64::max)
}

/// Endpoint error against the closed-form inclined great circle.
fn great_circle_error(inc: f64, step: f64, tmax: f64) -> Result<f64> {
    let tr = orbit(inc, step, tmax)?;
    let last = tr.x.last().expect("nonempty");
    let (x, y, z) = (tmax.cos(), tmax.sin() * inc.cos(), tmax.sin() * inc.sin());
    Ok((last[0] - z.acos()).abs().max((last[1] - y.atan2(x)).abs()))
}

fn geodesics() -> Outcome {
    let equator = orbit(0.0, 1e-3, 2.0 * PI + 0.1)?;
    let period = equator.crossing(1, 2.0 * PI).unwrap_or(f64::NAN);
    let inclined = orbit(0.5, 1e-3, 2.0 * PI + 0.1)?;
    let inclined_period = inclined.crossing(1, 2.0 * PI).unwrap_or(f64::NAN);
    let drift = energy_drift(&equator, period).max(energy_drift(&inclined, inclined_period));
    let ratio = great_circle_error(0.5, 0.05, 2.0)? / great_circle_error(0.5, 0.025, 2.0)?;
    let period_err = (period - 2.0 * PI).abs().max((inclined_period - 2.0 * PI).abs());
    Ok((
        period_err < 1e-6 && drift < 1e-6 && (12.0..=20.0).contains(&ratio),
        format!("period error {period_err:.1e} (< 1e-6), energy drift {drift:.1e} (< 1e-6), RK4 halving ratio {ratio:.2} (in [12, 20])"),
    ))
}

fn harmonic_grid() -> Outcome {
    let euclid = Metric::catalog("euclidean:2", Factor::Temporal, 2)?;
    let conformal = Metric::catalog("conformal2d:0.4*t1 - 0.3*t2", Factor::Temporal, 2)?;
    let target = Metric::catalog("euclidean:1", Factor::Spatial, 1)?;
    let flat = MultiTimeSpray::canonical(&euclid, &target)?;
    let conf = MultiTimeSpray::canonical(&conformal, &target)?;
    let boundary = SmoothMap::parse(2, &["t1^2 - t2^2"])?;
    let opts = SolverOptions {
        tol: 1e-10,
        ..SolverOptions::default()
    };
    let a = solve_harmonic_grid(&flat, &euclid, &boundary, Grid::unit(33), opts)?;
    let b = solve_harmonic_grid(&conf, &conformal, &boundary, Grid::unit(33), opts)?;
    let m = a.grid.m;
    let (mut err, mut same) = (0.0f64, 0.0f64);
    for i in 1..m - 1 {
        for j in 1..m - 1 {
            let [t1, t2] = a.grid.node(i, j);
            err = err.max((a.at(i, j)[0] - (t1 * t1 - t2 * t2)).abs());
            same = same.max((a.at(i, j)[0] - b.at(i, j)[0]).abs());
        }
    }
    let probe = SmoothMap::parse(2, &["t1^2 + t1*t2^2 + sin(t2)"])?;
    let mut rng = stream(SEED, "conformal-probe");
    let points: Vec<Vec<f64>> = (0..10).map(|_| vec![rng.random_range(0.1..0.9), rng.random_range(0.1..0.9)]).collect();
    let rf = residual_field(&probe, &flat, &euclid, &points)?;
    let rc = residual_field(&probe, &conf, &conformal, &points)?;
    let mut scale_err = 0.0f64;
    for ((t, f), c) in points.iter().zip(&rf).zip(&rc) {
        let factor = (-2.0 * (0.4 * t[0] - 0.3 * t[1])).exp();
        scale_err = scale_err.max(((c[0] - factor * f[0]) / (factor * f[0])).abs());
    }
    let converged = a.converged && b.converged && a.residual < 1e-8 && b.residual < 1e-8;
    Ok((
        converged && err < 1e-3 && same < 1e-8 && scale_err < 1e-4,
        format!(
            "m = 33 max error {err:.1e} (< 1e-3), residuals {:.1e}/{:.1e} (< 1e-8), conformal map difference {same:.1e} (< 1e-8), residual scaling rel err {scale_err:.1e} (< 1e-4)",
            a.residual, b.residual
        ),
    ))
}

fn prolongation() -> Outcome {
    let s = Suite::new(("conformal2d:0.3*t1 + 0.2*t2^2", 2), ("hyperbolic:2", 2), "prolongation")?;
    let (p, n) = s.dims();
    let g = NonlinearConnection::canonical(&s.h, &s.phi)?;
    let dom = s.box_();
    let (mut lo, mut hi, mut count) = (f64::INFINITY, f64::NEG_INFINITY, 0);
    let mut gap_ok = true;
    let mut gap_err = 0.0f64;
    for name in ["t1dt1", "x1dx1", "mixed"] {
        let x = BaseVectorField::catalog(name, p, n)?;
        for u in &s.jets {
            let ratio = flow_prolong_check_in(&x, u, 1e-2, &dom)? / flow_prolong_check_in(&x, u, 5e-3, &dom)?;
            lo = lo.min(ratio);
            hi = hi.max(ratio);
            count += 1;
        }
        let v = is_dtensor(&VerticalGap::new(x, g.clone())?, &s.changes, &s.jets, 1e-8);
        gap_ok &= v.pass;
        gap_err = gap_err.max(v.max_rel_err);
    }
    Ok((
        gap_ok && lo >= 3.5 && hi <= 4.5 && count == 30,
        format!("{count} flow ratios in [{lo:.3}, {hi:.3}] (within [3.5, 4.5]); vertical gap rel err {gap_err:.2e} (< 1e-8)"),
    ))
}

fn cli_determinism() -> Outcome {
    let scenarios = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let run = |name: &str| {
        Command::new(env!("CARGO_BIN_EXE_jetflow"))
            .arg("verify")
            .arg(scenarios.join(name))
            .env_remove("JETFLOW_SEED")
            .output()
    };
    let a = run("conformal_hyperbolic.json")?;
    let b = run("conformal_hyperbolic.json")?;
    let control = run("negative_control.json")?;
    let identical = a.stdout == b.stdout && !a.stdout.is_empty();
    let code = control.status.code();
    Ok((
        identical && a.status.success() && code.is_some_and(|c| c != 0),
        format!("repeated reports identical: {identical}; negative control exit status {code:?}"),
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("tensoriality", tensoriality),
        ("spray laws", spray_laws),
        ("decomposition", decomposition),
        ("connection round trips", connection_round_trips),
        ("adapted basis laws", adapted_laws),
        ("poisson identity", poisson_identity),
        ("geodesic solver", geodesics),
        ("harmonic grid solver", harmonic_grid),
        ("prolongation", prolongation),
        ("cli determinism", cli_determinism),
    ];
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let (pass, detail) = check().unwrap_or_else(|e| (false, format!("error: {e}")));
        println!("{} criterion {}: {name}: {detail}", if pass { "PASS" } else { "FAIL" }, k + 1);
        failed += usize::from(!pass);
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
