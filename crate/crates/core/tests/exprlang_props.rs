use jetflow::exprlang::{parse, Expr};
use jetflow::suite::stream;
use rand::Rng;

const VARS: [&str; 5] = ["t1", "t2", "x1", "x2", "x1_2"];

/// Random source text whose value is smooth and finite on `[-1, 1]^5`.
fn random_source<R: Rng>(rng: &mut R, depth: usize) -> String {
    if depth == 0 || rng.random_bool(0.25) {
        return if rng.random_bool(0.6) {
            VARS[rng.random_range(0..VARS.len())].to_string()
        } else {
            format!("{:.3}", rng.random_range(-3.0..3.0))
        };
    }
    let a = random_source(rng, depth - 1);
    match rng.random_range(0..11) {
        0 => format!("{a} + {}", random_source(rng, depth - 1)),
        1 => format!("{a} - ({})", random_source(rng, depth - 1)),
        2 => format!("({a}) * ({})", random_source(rng, depth - 1)),
        3 => format!("({a}) / (2 + sin({}))", random_source(rng, depth - 1)),
        4 => format!("({a})^{}", rng.random_range(2..4)),
        5 => format!("sin({a})"),
        6 => format!("cos({a})"),
        7 => format!("exp(0.3 * sin({a}))"),
        8 => format!("log(1.5 + cos({a}))"),
        9 => format!("sqrt(1 + ({a})^2)"),
        _ => format!("-({a})"),
    }
}

fn eval_at(e: &Expr, point: &[f64]) -> f64 {
    let vars: Vec<(&str, f64)> = VARS.iter().copied().zip(point.iter().copied()).collect();
    e.eval(vars.as_slice()).unwrap()
}

#[test]
fn symbolic_derivatives_match_central_differences() {
    let mut rng = stream(2024, "exprlang-diff");
    let mut checked = 0;
    for _ in 0..200 {
        let src = random_source(&mut rng, 4);
        let e = parse(&src).unwrap();
        let point: Vec<f64> = (0..VARS.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        for (k, var) in VARS.iter().enumerate() {
            let d = eval_at(&e.diff(var), &point);
            let h = 1e-5 * point[k].abs().max(1.0);
            let (mut up, mut down) = (point.clone(), point.clone());
            up[k] += h;
            down[k] -= h;
            let fd = (eval_at(&e, &up) - eval_at(&e, &down)) / (2.0 * h);
            let scale = d.abs().max(fd.abs()).max(1.0);
            assert!((d - fd).abs() / scale < 1e-6, "d/d{var} of `{src}` at {point:?}: symbolic {d}, fd {fd}");
        }
        checked += 1;
    }
    assert_eq!(checked, 200);
}

#[test]
fn print_parse_round_trip_is_stable() {
    let mut rng = stream(2024, "exprlang-print");
    for _ in 0..200 {
        let src = random_source(&mut rng, 5);
        let ast = parse(&src).unwrap();
        let reparsed = parse(&ast.to_string()).unwrap_or_else(|e| panic!("`{ast}` does not reparse: {e}"));
        assert_eq!(reparsed, ast, "source `{src}` printed as `{ast}`");
    }
}
