use std::path::Path;
use std::process::{Command, Output};

use gpe_core::bench::records_from_jsonl;
use gpe_core::dataset::read_dataset;
use gpe_core::nn::{NetworkSpec, WeightArchive};

fn gpe(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_gpe")).args(args).output().unwrap();
    if !out.status.success() {
        eprintln!("stderr: {}", String::from_utf8_lossy(&out.stderr));
    }
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn solve_writes_trace_state_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"n": 32, "omega": 0, "kappa": 0}"#).unwrap();
    let (trace, state, img, img2) =
        (dir.path().join("t.jsonl"), dir.path().join("s.gpst"), dir.path().join("a.ppm"), dir.path().join("b.ppm"));
    let out = gpe(&[
        "solve", "--params-file", p(&cfg), "--tol", "1e-8", "--out-trace", p(&trace), "--out-state", p(&state), "--plot", p(&img),
    ]);
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("Converged"), "{stdout}");
    let energy: f64 = stdout.lines().find(|l| l.starts_with("energy")).unwrap().split_whitespace().nth(1).unwrap().parse().unwrap();
    assert!((energy - 1.0).abs() < 1e-6);
    assert!(std::fs::read_to_string(&trace).unwrap().lines().count() >= 2);
    assert!(std::fs::read(&img).unwrap().starts_with(b"P6\n128 128\n255\n"));

    assert!(gpe(&["plot", "--state-file", p(&state), "--out", p(&img2)]).status.success());
    assert_eq!(std::fs::read(&img).unwrap(), std::fs::read(&img2).unwrap());
}

#[test]
fn bad_config_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"n": 20}"#).unwrap();
    let out = gpe(&["solve", "--params-file", p(&cfg)]);
    assert!(!out.status.success());
    assert!(!out.stderr.is_empty());
}

#[test]
fn gen_data_writes_dataset_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.gpds");
    let out = gpe(&["--jobs", "2", "gen-data", "--group", "mild", "--runs", "2", "--seed", "3", "--n", "32", "--out", p(&data)]);
    assert!(out.status.success());
    let samples = read_dataset(&data).unwrap();
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("d.gpds.manifest.json")).unwrap()).unwrap();
    let runs = manifest["runs"].as_array().unwrap();
    assert_eq!(runs.len(), 2);
    let total: u64 = runs.iter().map(|r| r["samples"].as_u64().unwrap()).sum();
    assert_eq!(samples.len() as u64, total);
    assert!(samples.iter().all(|s| s.phi.len() == 32 * 32 * 2 && (1..=20).contains(&s.j)));
}

#[test]
fn bench_with_oracle_and_network() {
    let dir = tempfile::tempdir().unwrap();
    let records = dir.path().join("r.jsonl");
    let out = gpe(&["bench", "--cases", "mild:2:1", "--n", "32", "--model", "oracle", "--out", p(&records)]);
    assert!(out.status.success());
    let rs = records_from_jsonl(&std::fs::read_to_string(&records).unwrap()).unwrap();
    assert_eq!(rs.len(), 4);
    let csv = std::fs::read_to_string(dir.path().join("r.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(String::from_utf8(out.stdout).unwrap().contains("impr_rho"));

    let spec = NetworkSpec { input_size: Some(32), ..NetworkSpec::with_base_width(2) };
    let (w, s) = (dir.path().join("m.gpuw"), dir.path().join("m.json"));
    WeightArchive::random(&spec, 1).write(&w).unwrap();
    spec.write(&s).unwrap();
    let out = gpe(&["bench", "--cases", "mild:1", "--n", "32", "--model", p(&w), "--mode", "strategy", "--out", p(&records)]);
    assert!(out.status.success());
    let rs = records_from_jsonl(&std::fs::read_to_string(&records).unwrap()).unwrap();
    assert_eq!(rs.len(), 1);
    assert!(rs[0].accelerated.converged);

    let out = gpe(&["accel-solve", "--model", p(&w), "--params-file", p(&s), "--tol", "1e-6"]);
    assert!(!out.status.success(), "a network spec is not a run configuration");

    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"n": 32, "kappa": 100, "omega": 0.5}"#).unwrap();
    let out = gpe(&["accel-solve", "--model", p(&w), "--params-file", p(&cfg), "--tol", "1e-7"]);
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("Converged") && stdout.contains("accel k="), "{stdout}");
}

#[test]
fn bad_case_spec_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = gpe(&["bench", "--cases", "nowhere", "--model", "oracle", "--out", p(&dir.path().join("r.jsonl"))]);
    assert!(!out.status.success());
}
