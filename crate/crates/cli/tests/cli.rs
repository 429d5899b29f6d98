use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn cacao(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cacao"))
        .current_dir(dir)
        .env_remove("CACAO_OUT_DIR")
        .args(args)
        .output()
        .unwrap()
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "status {:?}\nstdout: {}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn column(csv: &Path, name: &str) -> Vec<String> {
    let text = fs::read_to_string(csv).unwrap();
    let mut lines = text.lines();
    let idx = lines
        .next()
        .unwrap()
        .split(',')
        .position(|h| h == name)
        .unwrap();
    lines
        .map(|l| l.split(',').nth(idx).unwrap().to_string())
        .collect()
}

#[test]
fn generate_is_deterministic_and_guarded() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&cacao(
        d,
        &["generate", "--L", "3", "--seed", "7", "--out", "a.json"],
    ));
    ok(&cacao(
        d,
        &["generate", "--L", "3", "--seed", "7", "--out", "b.json"],
    ));
    let a = fs::read(d.join("a.json")).unwrap();
    assert_eq!(a, fs::read(d.join("b.json")).unwrap());
    let v = json(&d.join("a.json"));
    assert_eq!(v["format"], "cacao-instance-v1");
    assert_eq!(v["clauses"].as_array().unwrap().len(), 18);

    let out = cacao(
        d,
        &["generate", "--L", "1", "--seed", "7", "--out", "c.json"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(!d.join("c.json").exists());
}

#[test]
fn solve_cacao_writes_summary_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&cacao(
        d,
        &["generate", "--L", "3", "--seed", "4", "--out", "inst.json"],
    ));
    ok(&cacao(
        d,
        &[
            "solve",
            "--method",
            "cacao",
            "--instance",
            "inst.json",
            "--T",
            "50",
        ],
    ));
    let summary = json(&d.join("cacao-out/inst_cacao_summary.json"));
    assert!(summary["rounded_energy"].as_f64().unwrap() >= 0.0);
    assert!(summary["final_energy"].as_f64().unwrap() > -1e-9);
    assert_eq!(summary["steps"], 5000);
    assert_eq!(summary["rounded_bits"].as_str().unwrap().len(), 9);

    let manifest = json(&d.join("cacao-out/inst_cacao_manifest.json"));
    assert_eq!(manifest["command"], "solve");
    assert_eq!(manifest["seeds"], serde_json::json!([4]));
    for p in manifest["artifact_paths"].as_array().unwrap() {
        assert!(d.join(p.as_str().unwrap()).exists(), "{p}");
    }
    let t = column(&d.join("cacao-out/inst_cacao_trajectory.csv"), "t");
    assert_eq!(t.len(), 501);
}

#[test]
fn quantum_guard_refuses_large_instances() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&cacao(
        d,
        &["generate", "--L", "10", "--seed", "1", "--out", "big.json"],
    ));
    let out = cacao(d, &["solve", "--method", "qa", "--instance", "big.json"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("100 qubits"));
}

#[test]
fn zero_field_cdfqa_matches_falqon_driver_trace() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let model = r#"{"format":"cacao-ising-v1","n_vertices":4,"offset":0.0,
        "fields":[0.0,0.0,0.0,0.0],
        "couplings":[[0,1,1.0],[1,2,-0.5],[2,3,1.0],[3,0,0.25]]}"#;
    fs::write(d.join("zero.json"), model).unwrap();
    for m in ["falqon", "cdfqa"] {
        ok(&cacao(
            d,
            &[
                "solve",
                "--method",
                m,
                "--instance",
                "zero.json",
                "--T",
                "2",
            ],
        ));
    }
    let f = column(&d.join("cacao-out/zero_falqon_trace.csv"), "beta");
    let c = column(&d.join("cacao-out/zero_cdfqa_trace.csv"), "beta");
    assert_eq!(f.len(), 201);
    assert_eq!(f, c);
}

#[test]
fn saved_statevector_has_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&cacao(
        d,
        &["generate", "--L", "2", "--seed", "3", "--out", "i.json"],
    ));
    ok(&cacao(
        d,
        &[
            "solve",
            "--method",
            "qa",
            "--instance",
            "i.json",
            "--T",
            "1",
            "--save-state",
        ],
    ));
    let bin = fs::read(d.join("cacao-out/i_qa_state.bin")).unwrap();
    assert_eq!(bin.len(), 16 * 16);
    let side = json(&d.join("cacao-out/i_qa_state.bin.json"));
    assert_eq!(side["format"], "cacao-statevector-v1");
    assert_eq!(side["n_qubits"], 4);
}

#[test]
fn unknown_experiment_lists_names() {
    let dir = tempfile::tempdir().unwrap();
    let out = cacao(dir.path(), &["experiment", "fig9"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    for name in ["two-spin", "gap-scan", "benchmark-l3", "scaling"] {
        assert!(err.contains(name), "{err}");
    }
}

#[test]
fn benchmark_quick_run_replays_from_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let args = [
        "experiment",
        "benchmark-l3",
        "--instances",
        "2",
        "--seeds",
        "1,2",
        "--times",
        "1,2",
    ];
    ok(&cacao(d, &args));
    let manifest = json(&d.join("cacao-out/benchmark_l3_manifest.json"));
    assert_eq!(manifest["seeds"], serde_json::json!([1, 2]));
    assert_eq!(manifest["results"]["n_instances"], 2);
    let rows = column(&d.join("cacao-out/benchmark_l3.csv"), "method");
    assert_eq!(rows.len(), 4 * 2);

    ok(&cacao(
        d,
        &[
            "--out-dir",
            "replay",
            "--config",
            "cacao-out/benchmark_l3_manifest.json",
            "experiment",
            "benchmark-l3",
        ],
    ));
    assert_eq!(
        fs::read(d.join("cacao-out/benchmark_l3.csv")).unwrap(),
        fs::read(d.join("replay/benchmark_l3.csv")).unwrap()
    );
}

#[test]
fn gap_scan_exponent_from_csv() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&cacao(d, &["experiment", "gap-scan"]));
    let csv = d.join("cacao-out/gap_scan.csv");
    let gaps: Vec<f64> = column(&csv, "dE")
        .iter()
        .map(|s| s.parse().unwrap())
        .collect();
    let times: Vec<f64> = column(&csv, "T_conv")
        .iter()
        .map(|s| s.parse().unwrap())
        .collect();
    assert_eq!(gaps.len(), 20);
    let (x, y): (Vec<f64>, Vec<f64>) = gaps
        .iter()
        .zip(&times)
        .map(|(g, t)| (g.ln(), t.ln()))
        .unzip();
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let slope = sxy / sxx;
    assert!((-1.25..=-0.90).contains(&slope), "{slope}");
    let fit = json(&d.join("cacao-out/gap_scan_manifest.json"))["results"]["fit"]["exponent"]
        .as_f64()
        .unwrap();
    assert!((fit - slope).abs() < 1e-9);
}

#[test]
fn scaling_single_size_and_two_spin() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&cacao(
        d,
        &["experiment", "scaling", "--L", "10", "--instances", "3"],
    ));
    let l = column(&d.join("cacao-out/scaling.csv"), "L");
    assert!(!l.is_empty() && l.iter().all(|v| v == "10"));
    assert_eq!(
        json(&d.join("cacao-out/scaling_manifest.json"))["seeds"],
        serde_json::json!([1, 2, 3])
    );

    ok(&cacao(
        d,
        &["experiment", "two-spin", "--h2", "0.9", "--T", "20"],
    ));
    let mz = column(&d.join("cacao-out/two_spin_h2_0.9.csv"), "mz_1");
    let mz: Vec<f64> = mz.iter().map(|s| s.parse().unwrap()).collect();
    // spin 2 first leans toward the excited state, then reverses
    assert!(mz.iter().any(|&z| z < -0.1));
    assert!(*mz.last().unwrap() > 0.99);
}

#[test]
fn config_file_sits_between_defaults_and_flags() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&cacao(
        d,
        &["generate", "--L", "2", "--seed", "1", "--out", "i.json"],
    ));
    fs::write(
        d.join("run.toml"),
        "[solve]\nmethod = \"cacao\"\ninstance = \"i.json\"\nT = 3.0\n\n[cacao]\ndt = 0.05\nscheme = \"rk4\"\n",
    )
    .unwrap();
    ok(&cacao(
        d,
        &["--config", "run.toml", "solve", "--dt", "0.02"],
    ));
    let cfg = &json(&d.join("cacao-out/i_cacao_manifest.json"))["config"];
    assert_eq!(cfg["cacao"]["dt"], 0.02);
    assert_eq!(cfg["cacao"]["scheme"], "rk4");
    assert_eq!(cfg["cacao"]["t_max"], 3.0);
    assert_eq!(cfg["solve"]["T"], 3.0);
    assert_eq!(cfg["quantum"]["max_qubits"], 20);

    fs::write(d.join("bad.toml"), "[cacoa]\ndt = 0.1\n").unwrap();
    let out = cacao(d, &["--config", "bad.toml", "solve"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cacoa"));
}

#[test]
fn out_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = Command::new(env!("CARGO_BIN_EXE_cacao"))
        .current_dir(d)
        .env("CACAO_OUT_DIR", "from-env")
        .args(["generate", "--L", "2", "--seed", "5"])
        .output()
        .unwrap();
    ok(&out);
    assert!(d.join("from-env/instance_L2_seed5.json").exists());
    assert!(d.join("from-env/generate_manifest.json").exists());
}

#[test]
fn missing_input_reports_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = cacao(
        dir.path(),
        &["solve", "--method", "cacao", "--instance", "nope.json"],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.json"));
}

#[test]
fn diverging_integration_exits_with_numerical_status() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&cacao(
        d,
        &["generate", "--L", "3", "--seed", "7", "--out", "i.json"],
    ));
    let out = cacao(
        d,
        &[
            "solve",
            "--method",
            "cacao",
            "--instance",
            "i.json",
            "--scheme",
            "rk4",
            "--dt",
            "5",
            "--T",
            "500",
        ],
    );
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("non-finite"));
}
