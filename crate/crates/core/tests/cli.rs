use std::path::PathBuf;
use std::process::{Command, Output};

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn jetflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jetflow"))
        .args(args)
        .env_remove("JETFLOW_SEED")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

#[test]
fn verify_is_deterministic_and_passes_on_catalog_scenarios() {
    for name in ["flat.json", "sphere_exp1d.json", "conformal_hyperbolic.json"] {
        let path = scenario(name);
        let path = path.to_str().unwrap();
        let a = jetflow(&["verify", path]);
        let b = jetflow(&["verify", path]);
        assert_eq!(a.status.code(), Some(0), "{name}: {}", stdout(&a));
        assert_eq!(a.stdout, b.stdout, "{name}: reports differ between runs");
        let report: serde_json::Value = serde_json::from_slice(&a.stdout).unwrap();
        assert!(report["checks"].as_array().unwrap().iter().all(|c| c["pass"] == true));
    }
}

#[test]
fn seed_override_changes_the_sample() {
    let path = scenario("sphere_exp1d.json");
    let path = path.to_str().unwrap();
    let base = jetflow(&["verify", path, "--suite", "sprays"]);
    let other = Command::new(env!("CARGO_BIN_EXE_jetflow"))
        .args(["verify", path, "--suite", "sprays"])
        .env("JETFLOW_SEED", "12345")
        .output()
        .unwrap();
    assert_eq!(other.status.code(), Some(0));
    assert_ne!(base.stdout, other.stdout);
}

#[test]
fn negative_control_exits_one_with_a_witness() {
    let path = scenario("negative_control.json");
    let out = jetflow(&["verify", path.to_str().unwrap(), "--suite", "dtensors"]);
    assert_eq!(out.status.code(), Some(1));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let check = report["checks"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["name"] == "dtensors.candidate.position")
        .expect("candidate is checked");
    assert_eq!(check["pass"], false);
    assert!(check["witness"]["change"].is_string());
    assert!(check["witness"]["point"]["x"].is_array());
}

#[test]
fn schema_errors_name_the_offending_field() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(
        &bad,
        r#"{"temporal": {"dim": 1, "metric": "euclidean"}, "spatial": {"dim": 2, "metric": "euclidean", "colour": 1}}"#,
    )
    .unwrap();
    let out = jetflow(&["verify", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("/spatial"), "{}", stderr(&out));

    std::fs::write(&bad, r#"{"temporal": {"dim": 1, "metric": "sphere:2"}, "spatial": {"dim": 2, "metric": "euclidean"}}"#)
        .unwrap();
    let out = jetflow(&["verify", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("/temporal/metric"), "{}", stderr(&out));

    let missing = dir.path().join("missing.json");
    let out = jetflow(&["verify", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("missing.json"));
}

#[test]
fn geodesic_writes_csv_and_json() {
    let path = scenario("sphere_flat_time.json");
    let path = path.to_str().unwrap();
    let csv = jetflow(&["geodesic", path, "--x0", "1.5707963267948966,0", "--v0", "0,1", "--tmax", "1", "--step", "0.1"]);
    assert_eq!(csv.status.code(), Some(0), "{}", stderr(&csv));
    let text = stdout(&csv);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t1,x1,x2,residual"));
    assert_eq!(lines.count(), 11);

    let json = jetflow(&["geodesic", path, "--x0", "1.2,0", "--v0", "0.1,1", "--tmax", "0.5", "--format", "json"]);
    let v: serde_json::Value = serde_json::from_slice(&json.stdout).unwrap();
    assert_eq!(v["t"].as_array().unwrap().len(), v["residual"].as_array().unwrap().len());

    let wrong = jetflow(&["geodesic", scenario("plane.json").to_str().unwrap(), "--x0", "0", "--v0", "1", "--tmax", "1"]);
    assert_eq!(wrong.status.code(), Some(2));
}

#[test]
fn harmonic_reports_convergence_through_the_exit_status() {
    let path = scenario("plane.json");
    let path = path.to_str().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("log.csv");
    let ok = jetflow(&["harmonic", path, "--grid", "9", "--log", log.to_str().unwrap()]);
    assert_eq!(ok.status.code(), Some(0), "{}", stderr(&ok));
    assert_eq!(stdout(&ok).lines().count(), 1 + 81);
    assert!(std::fs::read_to_string(&log).unwrap().starts_with("iter,residual"));

    let capped = jetflow(&["harmonic", path, "--grid", "9", "--max-iters", "3"]);
    assert_eq!(capped.status.code(), Some(1));
    assert!(stderr(&capped).contains("iteration cap"));
}

#[test]
fn prolong_prints_the_jet_vectors() {
    let path = scenario("sphere_exp1d.json");
    let out = jetflow(&[
        "prolong",
        path.to_str().unwrap(),
        "--field",
        "t1; sin(x1); x2*t1",
        "--at",
        r#"{"t":[0.2],"x":[1.1,0.4],"v":[[0.3],[-0.5]]}"#,
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    for key in ["prolongation", "horizontal_lift", "vertical_gap", "flow_discrepancy", "flow_discrepancy_half"] {
        assert!(!v[key].is_null(), "missing {key}");
    }
    let (a, b) = (v["flow_discrepancy"].as_f64().unwrap(), v["flow_discrepancy_half"].as_f64().unwrap());
    assert!((3.5..=4.5).contains(&(a / b)));

    let bad = jetflow(&["prolong", path.to_str().unwrap(), "--field", "t1; x1", "--at", "{}"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn shipped_scenarios_use_only_schema_keys() {
    let dir = scenario("");
    let schema: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("scenario.schema.json")).unwrap()).unwrap();
    let top = schema["properties"].as_object().unwrap();
    let change = schema["$defs"]["change"]["properties"].as_object().unwrap();
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.file_name().unwrap() == "scenario.schema.json" {
            continue;
        }
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        for key in v.as_object().unwrap().keys() {
            assert!(top.contains_key(key), "{}: `{key}` is not in the schema", path.display());
        }
        for c in v["changes"].as_array().into_iter().flatten() {
            for key in c.as_object().unwrap().keys() {
                assert!(change.contains_key(key), "{}: change key `{key}`", path.display());
            }
        }
        let out = jetflow(&["verify", path.to_str().unwrap(), "--suite", "dtensors"]);
        assert_ne!(out.status.code(), Some(2), "{}: {}", path.display(), stderr(&out));
    }
}
