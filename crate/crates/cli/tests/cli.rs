use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use kising_core::glauber::read_trajectory;
use kising_core::moments::MomentEstimates;
use kising_core::sk_model::CouplingMatrix;
use tempfile::TempDir;

fn kising(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kising"))
        .current_dir(dir)
        .env_remove("KISING_WORKERS")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = kising(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn delta(stdout: &str) -> f64 {
    let line = stdout.lines().find_map(|l| l.strip_prefix("delta=")).expect("delta line");
    line.parse().unwrap()
}

fn manifest_value(dir: &Path, output: &str, key: &str) -> String {
    let text = fs::read_to_string(dir.join(format!("{output}.manifest"))).unwrap();
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("{key} missing from manifest"))
        .to_owned()
}

#[test]
fn generate_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(d, &["generate", "--n-spins", "12", "--seed", "7", "--output", "a.txt"]);
    ok(d, &["generate", "--n-spins", "12", "--seed", "7", "--output", "b.txt"]);
    ok(d, &["generate", "--n-spins", "12", "--seed", "8", "--output", "c.txt"]);
    let a = fs::read(d.join("a.txt")).unwrap();
    assert_eq!(a, fs::read(d.join("b.txt")).unwrap());
    assert_ne!(a, fs::read(d.join("c.txt")).unwrap());
    let j = CouplingMatrix::read_from(a.as_slice()).unwrap();
    assert_eq!(j.dim(), 12);
    assert!((0..12).all(|i| j.as_matrix()[(i, i)] == 0.0));
}

#[test]
fn manifest_records_provenance() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(d, &["generate", "--n-spins", "6", "--seed", "11", "--output", "a.txt"]);
    ok(d, &["generate", "--n-spins", "6", "--seed", "11", "--output", "b.txt"]);
    ok(d, &["generate", "--n-spins", "6", "--seed", "12", "--output", "c.txt"]);
    let digest = manifest_value(d, "a.txt", "config_digest");
    assert!(digest.starts_with("sha256:") && digest.len() == "sha256:".len() + 64);
    // The output path is not part of the content-determining configuration.
    assert_eq!(digest, manifest_value(d, "b.txt", "config_digest"));
    assert_ne!(digest, manifest_value(d, "c.txt", "config_digest"));
    assert_eq!(manifest_value(d, "a.txt", "base_seed"), "11");
    assert_eq!(manifest_value(d, "a.txt", "output_files"), "a.txt");
    assert_eq!(manifest_value(d, "a.txt", "tool_version"), env!("CARGO_PKG_VERSION"));
    assert!(manifest_value(d, "a.txt", "timestamp").ends_with('Z'));
    assert_eq!(manifest_value(d, "a.txt", "config.n_spins"), "6");
}

#[test]
fn tap_beats_nmf_on_simulated_data() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let model = ["--n-spins", "20", "--temperature", "3.7", "--seed", "3"];
    ok(d, &[&["generate", "--output", "j.txt"][..], &model].concat());
    ok(d, &[&["simulate", "--couplings", "j.txt", "--data-length", "2e7", "--output", "m.txt"][..], &model].concat());
    let moments_before = fs::read(d.join("m.txt")).unwrap();
    let moments = MomentEstimates::read_from(moments_before.as_slice()).unwrap();
    assert_eq!(moments.sample_count, 20_000_000);
    let mut deltas = Vec::new();
    let mut outputs = Vec::new();
    for method in ["nmf", "tap-cubic", "tap-iterative"] {
        let out = ok(
            d,
            &[
                &["infer", "--moments", "m.txt", "--truth", "j.txt", "--method", method, "--output", "inf.txt"][..],
                &model,
            ]
            .concat(),
        );
        deltas.push(delta(&out));
        outputs.push(out);
    }
    assert!(deltas[1] < deltas[0], "tap-cubic {} vs nmf {}", deltas[1], deltas[0]);
    assert!(outputs[2].lines().any(|l| l.starts_with("converged=true")), "{}", outputs[2]);
    assert!(deltas[2] < deltas[0], "tap-iterative {} vs nmf {}", deltas[2], deltas[0]);
    // Inputs are read only.
    assert_eq!(fs::read(d.join("m.txt")).unwrap(), moments_before);
}

#[test]
fn trajectory_dump_covers_measured_attempts() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(
        d,
        &[
            "simulate",
            "--n-spins",
            "5",
            "--temperature",
            "2",
            "--data-length",
            "3000",
            "--burn-in-sweeps",
            "10",
            "--trajectory",
            "traj.bin",
            "--output",
            "m.txt",
        ],
    );
    let (n, records) = read_trajectory(fs::File::open(d.join("traj.bin")).unwrap()).unwrap();
    assert_eq!(n, 5);
    assert_eq!(records.len(), 3000);
    assert!(manifest_value(d, "m.txt", "output_files").contains("traj.bin"));
}

#[test]
fn oracle_check_passes() {
    let dir = TempDir::new().unwrap();
    let out = ok(dir.path(), &["oracle-check"]);
    let report = fs::read_to_string(dir.path().join("oracle-check.txt")).unwrap();
    assert_eq!(report.lines().filter(|l| l.starts_with("PASS")).count(), 4, "{out}{report}");
}

#[test]
fn invalid_input_is_reported_with_its_key() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let out = kising(d, &["simulate", "--n-spins", "4", "--temperature", "-1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("temperature"));

    fs::write(d.join("bad.toml"), "[model]\nn_spins = 4\ntemprature = 2.0\n").unwrap();
    let out = kising(d, &["generate", "--config", "bad.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("temprature"));

    let out = kising(d, &["simulate", "--n-spins", "4"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("temperature"));
}

#[test]
fn flags_override_the_config_file() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    fs::write(d.join("run.toml"), "[model]\nn_spins = 4\ntemperature = 2.0\nseed = 5\n").unwrap();
    ok(d, &["simulate", "--config", "run.toml", "--temperature", "3", "--data-length", "1000", "--output", "m.txt"]);
    assert_eq!(manifest_value(d, "m.txt", "config.temperature"), "3");
    assert_eq!(manifest_value(d, "m.txt", "config.seed"), "5");
    let moments = MomentEstimates::read_from(fs::read(d.join("m.txt")).unwrap().as_slice()).unwrap();
    assert_eq!(moments.m.len(), 4);
}

#[test]
fn sweeps_do_not_depend_on_worker_count() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let common = [
        "sweep-temperature",
        "--n-spins",
        "6",
        "--sweep-values",
        "1.5,3",
        "--realizations",
        "3",
        "--data-length",
        "2e4",
        "--burn-in-sweeps",
        "20",
    ];
    ok(d, &[&common[..], &["--workers", "1", "--output", "one.csv"]].concat());
    ok(d, &[&common[..], &["--workers", "3", "--output", "three.csv"]].concat());
    let one = fs::read_to_string(d.join("one.csv")).unwrap();
    assert_eq!(one, fs::read_to_string(d.join("three.csv")).unwrap());
    assert_eq!(fs::read(d.join("one.csv.failures.log")).unwrap(), fs::read(d.join("three.csv.failures.log")).unwrap());
    // Header plus one row per (temperature, method).
    assert_eq!(one.lines().count(), 1 + 2 * 3);
    assert_eq!(manifest_value(d, "one.csv", "config_digest"), manifest_value(d, "three.csv", "config_digest"));
}
