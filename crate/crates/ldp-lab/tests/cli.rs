use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

use geoldp::geometry::Manifold;
use geoldp::variational::Curve;

fn ldp_lab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ldp-lab"))
        .args(args)
        .env("GEOLDP_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> serde_json::Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

const SMOKE: &str = r#"
experiment = "rare_event"
seed = 42
samples = 1000
n_list = [4, 8]
output = "out/smoke"

[model]
manifold = "euclidean:1"
family = "twostate{a=2, beta=1}"

[event]
radius = 0.5
horizon = 1.0
"#;

#[test]
fn missing_config_exits_with_code_2() {
    let out = ldp_lab(&["run", "/nonexistent/config.toml"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_errors_exit_with_code_2_and_position() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, SMOKE.replace("twostate{a=2, beta=1}", "twostate{a=2, gamma=1}")).unwrap();
    let out = ldp_lab(&["run", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.toml:10:25"), "{err}");
    assert!(err.contains("gamma"), "{err}");
}

#[test]
fn numerical_failures_exit_with_code_3_naming_the_stage() {
    // a sphere event too wide for the shooting search
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("wide.toml");
    let text = r#"
experiment = "rate_curve"

[model]
manifold = "sphere2"
family = "twostate{a=1, beta=0.5}"

[event]
center = "start"
radius = 3.1
horizon = 0.05

[rate_curve]
radii = [3.1]
"#;
    std::fs::write(&path, text).unwrap();
    let out = ldp_lab(&["run", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("theoretical_rate"), "{err}");
}

#[test]
fn smoke_run_is_fast_and_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("smoke.toml");
    std::fs::write(&path, SMOKE).unwrap();
    let start = Instant::now();
    let out = ldp_lab(&["run", path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(start.elapsed().as_secs_f64() < 60.0);

    let csv_path = dir.path().join("out/smoke.csv");
    let json_path = dir.path().join("out/smoke.json");
    let first_csv = std::fs::read(&csv_path).unwrap();
    let first_json = std::fs::read(&json_path).unwrap();
    let text = String::from_utf8(first_csv.clone()).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# ldp-lab rare_event csv v1 config="));
    assert_eq!(lines.next().unwrap(), "n,p_hat,lo,hi,neg_log_p_over_n,hits,samples");
    assert_eq!(lines.count(), 2);

    let record: serde_json::Value = serde_json::from_slice(&first_json).unwrap();
    assert_eq!(record["schema"], "ldp-lab/result/v1");
    assert_eq!(record["config_hash"].as_str().unwrap().len(), 64);
    for e in record["result"]["estimates"].as_array().unwrap() {
        let (p, lo, hi) = (e["p_hat"].as_f64().unwrap(), e["lo"].as_f64().unwrap(), e["hi"].as_f64().unwrap());
        assert!(lo <= p && p <= hi && (0.0..=1.0).contains(&p));
    }

    let out = ldp_lab(&["run", path.to_str().unwrap()]);
    assert!(out.status.success());
    assert_eq!(std::fs::read(&csv_path).unwrap(), first_csv);
    assert_eq!(std::fs::read(&json_path).unwrap(), first_json);
}

#[test]
fn every_experiment_kind_runs_from_a_config() {
    let dir = tempfile::tempdir().unwrap();
    let configs = [
        (
            "averaging",
            "experiment = \"averaging\"\nsamples = 20\nn_list = [4, 16]\n\n[model]\nmanifold = \"sphere2\"\nfamily = \"twostate{a=1, beta=0.5}\"\n",
            "n,dt,median,p90,mean",
        ),
        (
            "operator",
            "experiment = \"operator_convergence\"\nn_list = [16, 64]\n\n[model]\nmanifold = \"torus2\"\ndrift = \"relax{k=1}\"\nrates = \"cycle3{rate=1}\"\n",
            "n,gap",
        ),
        (
            "resolvent",
            "experiment = \"resolvent_check\"\n\n[model]\nmanifold = \"euclidean:1\"\nfamily = \"brownian\"\n\n[resolvent]\nlambda = 0.5\nh = \"gauss\"\npoints = 5\nradius = 1.0\n",
            "index,z1,value",
        ),
        (
            "curve",
            "experiment = \"rate_curve\"\n\n[model]\nmanifold = \"euclidean:1\"\nfamily = \"brownian\"\n\n[event]\ncenter = \"start\"\nradius = 1.0\nhorizon = 2.0\n\n[rate_curve]\nradii = [0.5, 1.0]\n",
            "radius,rate",
        ),
    ];
    for (name, text, header) in configs {
        let path = dir.path().join(format!("{name}.toml"));
        std::fs::write(&path, text).unwrap();
        let out = ldp_lab(&["run", path.to_str().unwrap()]);
        assert!(out.status.success(), "{name}: {}", String::from_utf8_lossy(&out.stderr));
        let csv = std::fs::read_to_string(dir.path().join(format!("{name}.csv"))).unwrap();
        assert_eq!(csv.lines().nth(1).unwrap(), header, "{name}");
        assert!(dir.path().join(format!("{name}.json")).exists());
    }
    let curve = std::fs::read_to_string(dir.path().join("curve.csv")).unwrap();
    assert!(curve.contains("0.5,0.0625\n") && curve.contains("1,0.25\n"), "{curve}");
}

#[test]
fn hamiltonian_eval_reports_the_closed_form() {
    let out = ldp_lab(&[
        "hamiltonian", "eval", "--family", "twostate{a=1, beta=2}", "--x", "0.3", "--p", "-0.5",
    ]);
    let v = stdout_json(&out);
    let p: f64 = -0.5;
    let expected = 0.5 * p * p - 1.0 + (1.0 + 4.0 * p * p).sqrt();
    assert!((v["value"].as_f64().unwrap() - expected).abs() < 1e-10);
    assert_eq!(v["inputs_hash"].as_str().unwrap().len(), 64);
    assert_eq!(v["diagnostics"]["right_vector"].as_array().unwrap().len(), 2);

    let bad = ldp_lab(&["hamiltonian", "eval", "--manifold", "sphere2", "--x", "0,0,2", "--p", "1,0"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn rate_of_a_geodesic_curve() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("curve.jsonl");
    let e = Manifold::Euclidean(2);
    let c = Curve::geodesic(&e.point(&[0.0, 0.0]).unwrap(), &e.point(&[3.0, 4.0]).unwrap(), 2.0, 10).unwrap();
    let mut buf = Vec::new();
    c.write_jsonl(&mut buf).unwrap();
    std::fs::write(&path, buf).unwrap();
    let out = ldp_lab(&["rate", "--curve", path.to_str().unwrap(), "--manifold", "euclidean:2"]);
    let v = stdout_json(&out);
    // |v| = 2.5 for T = 2: action 25 / 4
    assert!((v["value"].as_f64().unwrap() - 6.25).abs() < 1e-8);
    assert_eq!(v["diagnostics"]["segments"], 10);

    let mismatch = ldp_lab(&["rate", "--curve", path.to_str().unwrap(), "--manifold", "sphere2"]);
    assert_eq!(mismatch.status.code(), Some(2));
}

#[test]
fn resolvent_of_a_constant() {
    let out = ldp_lab(&["resolvent", "--lambda", "0.5", "--h", "const{c=2.5}", "--x", "-0.3"]);
    let v = stdout_json(&out);
    assert!((v["value"].as_f64().unwrap() - 2.5).abs() < 1e-4);
}

#[test]
fn simulate_writes_paths() {
    let dir = tempfile::tempdir().unwrap();
    let jsonl = dir.path().join("path.jsonl");
    let out = ldp_lab(&[
        "simulate", "--n", "16", "--T", "0.5", "--dt", "0.01", "--seed", "3", "--family", "twostate{a=1, beta=1}",
        "--out", jsonl.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&jsonl).unwrap();
    assert_eq!(text.lines().count(), 51);
    let last: serde_json::Value = serde_json::from_str(text.lines().last().unwrap()).unwrap();
    assert!((last["t"].as_f64().unwrap() - 0.5).abs() < 1e-12);

    let bin = dir.path().join("path.bin");
    let out = ldp_lab(&[
        "simulate", "--n", "16", "--T", "0.5", "--dt", "0.01", "--seed", "3", "--format", "binary", "--family",
        "twostate{a=1, beta=1}", "--out", bin.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    // f64 time, one f64 coordinate, u32 switch state per record
    assert_eq!(std::fs::metadata(&bin).unwrap().len(), 51 * 20);

    let again = ldp_lab(&[
        "simulate", "--n", "16", "--T", "0.5", "--dt", "0.01", "--seed", "3", "--family", "twostate{a=1, beta=1}",
    ]);
    assert_eq!(String::from_utf8(again.stdout).unwrap(), text);
}

#[test]
fn bad_thread_count_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("smoke.toml");
    std::fs::write(&path, SMOKE).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_ldp-lab"))
        .args(["run", path.to_str().unwrap()])
        .env("GEOLDP_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(!Path::new(&dir.path().join("out/smoke.csv")).exists());
}
