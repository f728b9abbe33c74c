use jetflow::domain::{DomainBox, Interval};
use jetflow::Error;
use jetflow::geometry::{Factor, Metric};
use jetflow::suite::{catalog_changes, stream};
use nalgebra::DMatrix;

fn catalog() -> Vec<Metric> {
    [
        ("euclidean:3", Factor::Spatial, 3),
        ("sphere:2", Factor::Spatial, 2),
        ("hyperbolic:2", Factor::Spatial, 2),
        ("exp1d", Factor::Temporal, 1),
        ("conformal2d:0.3*t1 + 0.2*t2^2", Factor::Temporal, 2),
        ("conformal2d:sin(t1)*t2", Factor::Temporal, 2),
    ]
    .into_iter()
    .map(|(spec, f, d)| Metric::catalog(spec, f, d).unwrap())
    .collect()
}

fn points(g: &Metric, count: usize) -> Vec<Vec<f64>> {
    let mut rng = stream(5, g.name());
    (0..count).map(|_| g.domain().iter().map(|i| i.sample(&mut rng)).collect()).collect()
}

/// `d_c g` by central differences of the numeric metric.
fn fd_derivatives(g: &Metric, y: &[f64]) -> Vec<DMatrix<f64>> {
    (0..g.dim())
        .map(|c| {
            let h = 1e-5 * y[c].abs().max(1.0);
            let (mut up, mut down) = (y.to_vec(), y.to_vec());
            up[c] += h;
            down[c] -= h;
            (g.eval(&up).unwrap() - g.eval(&down).unwrap()) / (2.0 * h)
        })
        .collect()
}

#[test]
fn levi_civita_connection_is_metric_compatible() {
    for g in catalog() {
        let d = g.dim();
        for y in points(&g, 20) {
            let gm = g.eval(&y).unwrap();
            let dg = g.derivatives(&y).unwrap();
            let gamma = g.christoffel(&y).unwrap();
            for c in 0..d {
                for a in 0..d {
                    for b in 0..d {
                        let rhs: f64 = (0..d)
                            .map(|e| gamma.get(e, c, a) * gm[(e, b)] + gamma.get(e, c, b) * gm[(a, e)])
                            .sum();
                        let lhs = dg[c][(a, b)];
                        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0), "{} at {y:?}", g.name());
                    }
                }
            }
        }
    }
}

#[test]
fn christoffel_symbols_match_finite_differences() {
    for g in catalog() {
        let d = g.dim();
        for y in points(&g, 20) {
            let ginv = g.eval(&y).unwrap().try_inverse().unwrap();
            let dg = fd_derivatives(&g, &y);
            let gamma = g.christoffel(&y).unwrap();
            for a in 0..d {
                for b in 0..d {
                    for c in 0..d {
                        let fd: f64 = 0.5
                            * (0..d)
                                .map(|e| ginv[(a, e)] * (dg[b][(e, c)] + dg[c][(b, e)] - dg[e][(b, c)]))
                                .sum::<f64>();
                        let got = gamma.get(a, b, c);
                        assert!((got - fd).abs() < 1e-6 * fd.abs().max(1.0), "{} Γ[{a}][{b}][{c}] at {y:?}", g.name());
                    }
                }
            }
        }
    }
}

#[test]
fn inverse_metric_is_an_inverse() {
    for g in catalog() {
        for y in points(&g, 20) {
            let prod = g.eval(&y).unwrap() * g.inverse_at(&y).unwrap();
            assert!((prod - DMatrix::identity(g.dim(), g.dim())).amax() < 1e-12, "{}", g.name());
        }
    }
}

#[test]
fn pullback_is_the_tensorial_transform() {
    let g = Metric::catalog("conformal2d:0.3*t1 + 0.2*t2^2", Factor::Temporal, 2).unwrap();
    let mut rng = stream(5, "pullback");
    for c in catalog_changes(&mut rng, 2, 1, 6).unwrap() {
        let pulled = g.pullback(&c).unwrap();
        let (t, x) = DomainBox::cube(2, 1, -1.0, 1.0).sample(&mut rng);
        let (tt, _) = c.forward(&t, &x).unwrap();
        let b = c.blocks(&t, &x).unwrap();
        let expected = b.temporal_inv.transpose() * g.eval(&t).unwrap() * &b.temporal_inv;
        let got = pulled.eval(&tt).unwrap();
        assert!((got - &expected).amax() < 1e-10 * expected.amax().max(1.0), "{}", c.name());
    }
}

#[test]
fn malformed_metrics_are_rejected() {
    assert!(Metric::catalog("sphere:3", Factor::Spatial, 3).is_err());
    assert!(Metric::catalog("exp1d", Factor::Temporal, 2).is_err());
    assert!(Metric::catalog("torus", Factor::Spatial, 2).is_err());
    let unbounded = vec![Interval::UNBOUNDED; 2];
    let asym = Metric::parse("asym", Factor::Spatial, &[vec!["1", "x1"], vec!["0", "1"]], unbounded.clone());
    assert!(matches!(asym, Err(Error::AsymmetricMetric(_))), "{asym:?}");
    let singular = Metric::parse("singular", Factor::Spatial, &[vec!["1", "1"], vec!["1", "1"]], unbounded);
    assert!(matches!(singular, Err(Error::SingularMetric(_))), "{singular:?}");
}
