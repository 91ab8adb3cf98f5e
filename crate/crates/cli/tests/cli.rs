use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mirrorquant"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn mirrorquant")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn gamma_examples() {
    let out = run(&["gamma", "--B", "10", "--eps", "0.01", "--quiet"]);
    assert!(out.status.success());
    let g: f64 = stdout(&out).trim().parse().unwrap();
    // atanh(0.99) / 10 = ln(199) / 20
    assert!((g - 199f64.ln() / 20.0).abs() < 1e-12);
    assert!(stdout(&out).starts_with("0.264665"));

    let out = run(&["gamma", "--B", "1", "--eps", "0.5", "--quiet"]);
    let g: f64 = stdout(&out).trim().parse().unwrap();
    assert!((g - 0.5 * 3f64.ln()).abs() < 1e-12);

    let out = run(&["gamma", "--B", "10", "--eps", "0.01"]);
    assert!(stdout(&out).contains("1 - |tanh(10 x)| < 0.01"));
}

#[test]
fn gamma_usage_errors() {
    assert_eq!(run(&["gamma", "--B", "1", "--eps", "1.5"]).status.code(), Some(2));
    assert_eq!(run(&["gamma", "--B", "-1", "--eps", "0.1"]).status.code(), Some(2));
    assert_eq!(run(&["gamma", "--eps", "0.1"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn check_passes_and_reports_deviation() {
    let out = run(&["check"]);
    assert!(out.status.success(), "{}", stdout(&out));
    let text = stdout(&out);
    let line = text
        .lines()
        .find(|l| l.contains("closed_vs_stable"))
        .expect("equivalence line");
    assert!(line.starts_with("PASS"));
    let worst = line
        .split_whitespace()
        .find_map(|w| w.strip_prefix("worst="))
        .unwrap();
    assert!(worst.parse::<f64>().unwrap() < 1e-9);
}

#[test]
fn injected_ste_bug_fails_equivalence() {
    let out = run(&["check", "--inject-ste-bug"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stdout(&out).contains("FAIL closed_vs_stable"));
    assert!(stderr(&out).contains("closed_vs_stable"));
}

#[test]
fn convex_default_suite() {
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let out = run(&["convex", "--quiet", "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(start.elapsed().as_secs_f64() < 60.0);

    let csv = fs::read_to_string(dir.path().join("convex_square_box_tanh_entropy_B100.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t,gap,bound,beta,eta"));
    assert_eq!(lines.count(), 4);

    // recompute every bound from the logged constants
    let summary = fs::read_to_string(dir.path().join("convex_summary.csv")).unwrap();
    let rows: Vec<&str> = summary.lines().skip(1).collect();
    assert_eq!(rows.len(), 16);
    for row in rows {
        let f: Vec<&str> = row.split(',').collect();
        let num = |i: usize| f[i].parse::<f64>().unwrap();
        let (cap, t, r, l, rho, eta, gap, bound) = (num(2), num(3), num(4), num(5), num(6), num(7), num(8), num(9));
        let expected = r * l * (2.0 * cap / (rho * t)).sqrt();
        assert!((bound - expected).abs() <= 1e-12 * expected, "{row}");
        let expected_eta = r / l * (2.0 * rho / (cap * t)).sqrt();
        assert!((eta - expected_eta).abs() <= 1e-12 * expected_eta, "{row}");
        assert!(gap <= bound);
        assert_eq!(f[10], "true");
    }
}

#[test]
fn convex_rejects_bad_configs() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    fs::write(&path, r#"{"suites": [{"problem": "square_box", "map": "tanh_entropy", "tlist": [10]}]}"#).unwrap();
    let out = run(&["convex", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("tlist"));

    fs::write(&path, r#"{"suites": [{"problem": "square_box", "map": "bogus"}]}"#).unwrap();
    let out = run(&["convex", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));

    let out = bin()
        .args(["convex", "--out", dir.path().to_str().unwrap()])
        .env("MIRRORQUANT_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn convex_single_thread_matches_parallel() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for (dir, threads) in [(&a, "1"), (&b, "4")] {
        let out = bin()
            .args(["convex", "--quiet", "--out", dir.path().to_str().unwrap()])
            .env("MIRRORQUANT_THREADS", threads)
            .output()
            .unwrap();
        assert!(out.status.success());
    }
    let read = |d: &tempfile::TempDir| fs::read(d.path().join("convex_summary.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
}

#[test]
fn train_shipped_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = configs_dir().join("xor_md_tanh_s.json");
    let out = run(&["train", config.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("quantized_test_acc"));
    let csv = fs::read_to_string(dir.path().join("train.csv")).unwrap();
    assert!(csv.starts_with(
        "iter,epoch,train_loss,train_acc,test_acc,beta,eta,frac_quantized,grad_norm,quantized_test_acc\n"
    ));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["final_frac_quantized"], 1.0);
}

fn short_config(dir: &Path) -> PathBuf {
    let path = dir.join("short.json");
    fs::write(
        &path,
        r#"{"optimizer": "md_stable", "epochs": 5, "dataset": {"kind": "xor-blobs", "n": 300, "noise": 0.25}, "seed": 7}"#,
    )
    .unwrap();
    path
}

#[test]
fn seed_override_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let config = short_config(dir.path());
    let csv_for = |seed: &str, name: &str| {
        let out_dir = dir.path().join(name);
        let out = run(&[
            "train",
            config.to_str().unwrap(),
            "--seed",
            seed,
            "--quiet",
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", stderr(&out));
        fs::read(out_dir.join("train.csv")).unwrap()
    };
    let a = csv_for("3", "a");
    let b = csv_for("3", "b");
    let c = csv_for("7", "c");
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn train_rejects_schema_violations_with_key_path() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(&path, r#"{"beta": {"beta0": 1.0, "scal": 1.1}}"#).unwrap();
    let out = run(&["train", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("beta") && err.contains("scal"), "{err}");

    fs::write(&path, r#"{"space": "u", "projection": "tanh"}"#).unwrap();
    let out = run(&["train", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));

    let out = run(&["train", dir.path().join("missing.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}
