use std::f64::consts::PI;

use jetflow::geometry::{Factor, Metric};
use jetflow::maps::{
    harmonic_residual, poisson_residual, solve_affine_ode, solve_harmonic_grid, Grid, PoissonSource, SmoothMap,
    SolverOptions, Trajectory,
};
use jetflow::sprays::MultiTimeSpray;
use jetflow::suite::stream;
use rand::Rng;

fn metrics(h: (&str, usize), phi: (&str, usize)) -> (Metric, Metric, MultiTimeSpray) {
    let h = Metric::catalog(h.0, Factor::Temporal, h.1).unwrap();
    let phi = Metric::catalog(phi.0, Factor::Spatial, phi.1).unwrap();
    let s = MultiTimeSpray::canonical(&h, &phi).unwrap();
    (h, phi, s)
}

const POOL: [&str; 6] = [
    "1.2 + 0.3*sin(t1) * t2",
    "1.5 + 0.2*t1^2 - 0.1*t2",
    "0.4*cos(t1 + t2) + 0.8",
    "t1*t2 + 1.5",
    "exp(0.2*t1) - 0.3*t2^2",
    "1 + 0.1*sin(3*t1)",
];

#[test]
fn poisson_form_matches_the_harmonic_residual() {
    let (h, _, s) = metrics(("conformal2d:0.3*t1 + 0.2*t2^2", 2), ("hyperbolic:2", 2));
    let source = PoissonSource::new(s.clone(), h.clone()).unwrap();
    let mut rng = stream(11, "poisson");
    for _ in 0..50 {
        let comps = [POOL[rng.random_range(0..POOL.len())], POOL[rng.random_range(0..POOL.len())]];
        let f = SmoothMap::parse(2, &comps).unwrap();
        let t = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let a = harmonic_residual(&f, &s, &h, &t).unwrap();
        let b = poisson_residual(&f, &source, &h, &t).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12 * x.abs().max(1.0), "{comps:?} at {t:?}: {x} vs {y}");
        }
    }
}

#[test]
fn exponential_time_residuals_have_closed_forms() {
    // h = e^{2t} has Γ = 1, so affine maps solve x'' = x'
    let (h, _, s) = metrics(("exp1d", 1), ("euclidean:1", 1));
    let exp = SmoothMap::parse(1, &["exp(t1)"]).unwrap();
    let line = SmoothMap::parse(1, &["t1"]).unwrap();
    for t in [-1.0, -0.3, 0.0, 0.7, 1.4] {
        assert!(harmonic_residual(&exp, &s, &h, &[t]).unwrap()[0].abs() < 1e-14 * t.exp().max(1.0));
        let r = harmonic_residual(&line, &s, &h, &[t]).unwrap()[0];
        assert!((r + (-2.0 * t).exp()).abs() < 1e-14);
    }
}

/// Unit-speed great circle through the equator at inclination `inc`, in polar
/// coordinates `(θ, φ)`, with `φ` unwrapped.
fn great_circle(inc: f64, s: f64) -> [f64; 2] {
    let (x, y, z) = (s.cos(), s.sin() * inc.cos(), s.sin() * inc.sin());
    let mut phi = y.atan2(x);
    let turns = ((s - phi) / (2.0 * PI)).round();
    phi += turns * 2.0 * PI;
    [z.acos(), phi]
}

fn sphere_orbit(inc: f64, step: f64, tmax: f64) -> Trajectory {
    let (_, _, s) = metrics(("euclidean:1", 1), ("sphere:2", 2));
    solve_affine_ode(&s, &[PI / 2.0, 0.0], &[-inc.sin(), inc.cos()], (0.0, tmax), step).unwrap()
}

fn endpoint_error(inc: f64, step: f64, tmax: f64) -> f64 {
    let tr = sphere_orbit(inc, step, tmax);
    let exact = great_circle(inc, tmax);
    let last = tr.x.last().unwrap();
    (last[0] - exact[0]).abs().max((last[1] - exact[1]).abs())
}

#[test]
fn rk4_converges_at_fourth_order_on_a_great_circle() {
    let coarse = endpoint_error(0.5, 0.05, 2.0);
    let fine = endpoint_error(0.5, 0.025, 2.0);
    let ratio = coarse / fine;
    assert!((12.0..=20.0).contains(&ratio), "ratio {ratio} ({coarse:e} / {fine:e})");
}

#[test]
fn great_circle_closes_and_conserves_energy() {
    let tr = sphere_orbit(0.5, 1e-3, 2.0 * PI + 0.1);
    let period = tr.crossing(1, 2.0 * PI).expect("the orbit winds once");
    assert!((period - 2.0 * PI).abs() < 1e-6, "period {period}");
    let energy = |k: usize| tr.v[k][0].powi(2) + tr.x[k][0].sin().powi(2) * tr.v[k][1].powi(2);
    let e0 = energy(0);
    let drift = (0..tr.len()).map(|k| (energy(k) - e0).abs()).fold(0.0, f64::max);
    assert!(drift < 1e-6, "drift {drift:e}");
    for k in (0..tr.len()).step_by(250) {
        let exact = great_circle(0.5, tr.t[k]);
        assert!((tr.x[k][0] - exact[0]).abs() < 1e-9 && (tr.x[k][1] - exact[1]).abs() < 1e-9);
    }
}

#[test]
fn integrated_affine_maps_have_small_harmonic_residual() {
    for (h, phi) in [(("exp1d", 1), ("sphere:2", 2)), (("euclidean:1", 1), ("hyperbolic:2", 2))] {
        let (hm, _, s) = metrics(h, phi);
        let tr = solve_affine_ode(&s, &[1.0, 0.8], &[0.3, -0.2], (0.0, 1.0), 1e-3).unwrap();
        let worst = tr.harmonic_residuals(&s, &hm).unwrap().into_iter().fold(0.0, f64::max);
        assert!(worst < 1e-6, "{}/{}: {worst:e}", h.0, phi.0);
    }
}

#[test]
fn grid_solver_matches_the_flat_saddle() {
    let (h, _, s) = metrics(("euclidean:2", 2), ("euclidean:1", 1));
    let boundary = SmoothMap::parse(2, &["t1^2 - t2^2"]).unwrap();
    let opts = SolverOptions {
        tol: 1e-10,
        ..SolverOptions::default()
    };
    let sol = solve_harmonic_grid(&s, &h, &boundary, Grid::unit(17), opts).unwrap();
    assert!(sol.converged);
    let m = sol.grid.m;
    for a in 0..m {
        for b in 0..m {
            let [t1, t2] = sol.grid.node(a, b);
            assert!((sol.at(a, b)[0] - (t1 * t1 - t2 * t2)).abs() < 1e-8);
        }
    }
    assert!(sol.log.windows(2).all(|w| w[1] <= w[0] * 1.0001), "residual should decrease monotonically");
}
