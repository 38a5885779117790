use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn gmsp(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gmsp"))
        .arg("--out-dir")
        .arg(dir)
        .args(args)
        .env("GMSP_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn manifest(dir: &Path, cmd: &str) -> serde_json::Value {
    serde_json::from_slice(&fs::read(dir.join(format!("{cmd}.manifest.json"))).unwrap()).unwrap()
}

#[test]
fn sample_then_estimate_recovers_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let out = gmsp(dir.path(), &["--seed", "4", "sample", "--family", "mvnormal", "--theta", "1,-2,1,0.5,0.3", "--n", "400"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let data = dir.path().join("sample.csv");
    let out = gmsp(dir.path(), &["estimate", data.to_str().unwrap(), "--family", "mvnormal", "--h", "h5:0.5", "--std-errors"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rep: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("estimate.json")).unwrap()).unwrap();
    assert_eq!(rep["schema"], "gmsp.estimate.v1");
    let th: Vec<f64> = serde_json::from_value(rep["result"]["theta_hat"].clone()).unwrap();
    for (a, b) in th.iter().zip([1.0, -2.0, 1.0, 0.5, 0.3]) {
        assert!((a - b).abs() < 0.25, "{th:?}");
    }
    assert_eq!(rep["std_errors"].as_array().unwrap().len(), 5);
    let m = manifest(dir.path(), "estimate");
    assert_eq!(m["inputs"][0]["path"], fs::canonicalize(&data).unwrap().to_str().unwrap());
}

#[test]
fn identical_seeds_give_identical_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [a.path(), b.path()] {
        let out = gmsp(d, &["--seed", "12", "sample", "--theta", "0,1", "--n", "300"]);
        assert!(out.status.success());
    }
    assert_eq!(fs::read(a.path().join("sample.csv")).unwrap(), fs::read(b.path().join("sample.csv")).unwrap());
    let c = tempfile::tempdir().unwrap();
    gmsp(c.path(), &["--seed", "13", "sample", "--theta", "0,1", "--n", "300"]);
    assert_ne!(fs::read(a.path().join("sample.csv")).unwrap(), fs::read(c.path().join("sample.csv")).unwrap());
}

#[test]
fn replay_reproduces_outputs() {
    let dir = tempfile::tempdir().unwrap();
    assert!(gmsp(dir.path(), &["sample", "--theta", "2,0.5", "--n", "150"]).status.success());
    let data = dir.path().join("sample.csv");
    assert!(gmsp(dir.path(), &["--seed", "5", "estimate", data.to_str().unwrap(), "--h", "h2"]).status.success());
    let again = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_gmsp"))
        .args(["replay", dir.path().join("estimate.manifest.json").to_str().unwrap(), "--into", again.path().to_str().unwrap()])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("match    estimate.json"));

    // a changed input is detected before anything runs
    fs::write(&data, "1\n2\n3\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_gmsp"))
        .args(["replay", dir.path().join("estimate.manifest.json").to_str().unwrap(), "--into", again.path().to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("changed"));
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "1.0\n2.0\nabc\n").unwrap();
    let cases: Vec<Vec<&str>> = vec![
        vec!["estimate", bad.to_str().unwrap()],
        vec!["estimate"],
        vec!["sample", "--theta", "0,-1"],
        vec!["sample", "--theta", "0,1,2"],
        vec!["sample", "--family", "cauchy", "--theta", "0,1"],
        vec!["constants", "--h-list", "h7"],
        vec!["constants", "--dims", "0"],
        vec!["lambda-scan", "--m", "10"],
        vec!["empproc", "--weight", "score"],
        vec!["frobnicate"],
    ];
    for args in cases {
        let out = gmsp(dir.path(), &args);
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let out = gmsp(dir.path(), &["estimate", bad.to_str().unwrap()]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));
}

#[test]
fn constants_table_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = gmsp(dir.path(), &["constants", "--h-list", "h1,h5:0.5", "--dims", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("constants.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("h1,1,1.66666666666"));
    assert!(lines.iter().skip(1).all(|l| l.ends_with(",ok")));
    let m = manifest(dir.path(), "constants");
    assert_eq!(m["outputs"].as_array().unwrap().len(), 2);
}

#[test]
fn stdin_and_stdout_streams() {
    let dir = tempfile::tempdir().unwrap();
    let out = gmsp(dir.path(), &["sample", "--theta", "0,1", "--n", "5", "--out", "-"]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 5);
    assert!(!dir.path().join("sample.csv").exists());

    use std::io::Write;
    let mut child = Command::new(env!("CARGO_BIN_EXE_gmsp"))
        .args(["--out-dir", dir.path().to_str().unwrap(), "estimate", "-", "--starts", "2"])
        .stdin(std::process::Stdio::piped())
        .stderr(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    let data: String = (0..60).map(|i| format!("{}\n", ((i * 37) % 60) as f64 / 10.0)).collect();
    child.stdin.take().unwrap().write_all(data.as_bytes()).unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(manifest(dir.path(), "estimate")["inputs"][0]["path"], "-");
}

#[test]
fn small_lambda_scan_and_empproc_runs() {
    let dir = tempfile::tempdir().unwrap();
    let out = gmsp(
        dir.path(),
        &["lambda-scan", "--family", "normal", "--theta0", "0,1", "--component", "sigma", "--sqrt-n", "10", "--m", "100", "--repetitions", "2", "--h-list", "h1"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = fs::read_to_string(dir.path().join("lambda_scan_table.csv")).unwrap();
    assert_eq!(table.lines().next().unwrap(), "sqrt_n,h1");
    assert_eq!(fs::read_to_string(dir.path().join("lambda_scan.csv")).unwrap().lines().count(), 2);

    let out = gmsp(
        dir.path(),
        &["empproc", "--mode", "both", "--n", "200", "--replicates", "40", "--calibration", "20000", "--t-grid", "0.5,2"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rep: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("empproc.json")).unwrap()).unwrap();
    assert!(rep["kernel"]["covariance"].as_array().unwrap().len() >= 3);
    assert!(rep["score"]["frobenius_relative"].is_number());
}
