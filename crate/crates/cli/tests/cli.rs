use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dmimo-isac"))
}

fn quick_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/quick.toml")
}

fn run(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("spawn");
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

#[test]
fn simulate_then_estimate_from_stored_echoes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config();
    let cfg = cfg.to_str().unwrap();
    let out = dir.path().to_str().unwrap();
    run(&["simulate", "--config", cfg, "--seed", "3", "--out", out]);
    for f in ["record.json", "timings.json", "echoes.dmec", "cost_map.txt", "config.toml"] {
        assert!(dir.path().join(f).is_file(), "missing {f}");
    }
    let record: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("record.json")).unwrap()).unwrap();
    assert_eq!(record["seed"], 3);

    let est_dir = dir.path().join("est");
    let echoes = dir.path().join("echoes.dmec");
    run(&[
        "estimate",
        "--config",
        cfg,
        "--seed",
        "3",
        "--out",
        est_dir.to_str().unwrap(),
        "--echoes",
        echoes.to_str().unwrap(),
    ]);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(est_dir.join("estimate.json")).unwrap()).unwrap();
    // Same echoes and geometry, so the same estimate as the full trial.
    assert_eq!(report["refined_positions"], record["estimation"]["refined_positions"]);
}

#[test]
fn select_prints_a_partition() {
    let cfg = quick_config();
    let out = run(&["select", "--config", cfg.to_str().unwrap(), "--strategy", "comm-centric"]);
    let a: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let tx = a["transmit_set"].as_array().unwrap().len();
    let rx = a["receive_set"].as_array().unwrap().len();
    assert_eq!((tx, rx), (6, 6));
    assert_eq!(a["strategy"], "comm_centric");
}

#[test]
fn coverage_and_sweep_write_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config();
    let (cfg, out) = (cfg.to_str().unwrap(), dir.path().to_str().unwrap());
    run(&["coverage", "--config", cfg, "--out", out, "--samples", "25"]);
    let cov = std::fs::read_to_string(dir.path().join("coverage.csv")).unwrap();
    assert_eq!(cov.lines().count(), 26);
    run(&[
        "sweep", "--config", cfg, "--out", out, "--workers", "2", "--axis", "rho", "--values", "0.3,0.7", "--trials", "2",
        "--metrics", "sum_se,peb_coherent",
    ]);
    let table = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(table.lines().count(), 1 + 2 * 2);
}

#[test]
fn bad_input_is_reported() {
    let out = bin().args(["sweep", "--axis", "bogus", "--values", "1"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown sweep axis"));
    let dir = tempfile::tempdir().unwrap();
    let bogus = dir.path().join("x.dmec");
    std::fs::write(&bogus, b"nope").unwrap();
    let out = bin()
        .args(["estimate", "--out", dir.path().to_str().unwrap(), "--echoes", bogus.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn validate_suite_passes() {
    let out = run(&["validate"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.lines().count() >= 9);
    assert!(text.lines().all(|l| l.starts_with("PASS")), "{text}");
}
