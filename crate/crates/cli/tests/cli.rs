use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const EUCLIDEAN: &str = r#"{"family":"q_norm","q":2,"dim":2}"#;

fn wulff(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wulff")).args(args).output().unwrap()
}

fn family(dir: &Path, grid: Option<usize>) -> String {
    let mut f = serde_json::json!({
        "N": 2,
        "norm": {"family": "q_norm", "q": 2, "dim": 2},
        "centers": [[0.25, 0.0], [-0.25, 0.0]],
        "lambda_schedule": [100.0, 1000.0, 10000.0],
        "V0": 1.0,
        "domain": {"lo": [-1.0, -1.0], "hi": [1.0, 1.0]},
    });
    if let Some(g) = grid {
        f["grid"] = g.into();
    }
    let path = dir.join(if grid.is_some() { "grid.json" } else { "family.json" });
    fs::write(&path, f.to_string()).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn kappa_to_stdout() {
    let out = wulff(&["kappa", "--norm", EUCLIDEAN]);
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((report["kappa"].as_f64().unwrap() - std::f64::consts::PI).abs() < 1e-10);
}

#[test]
fn quantize_report_files_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let fam = family(dir.path(), None);
    let mut bytes = Vec::new();
    for name in ["a.json", "b.json"] {
        let path = dir.path().join(name);
        let out = wulff(&["quantize", "--family", &fam, "--radii", "0.1", "--out", path.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        bytes.push(fs::read(path).unwrap());
    }
    assert_eq!(bytes[0], bytes[1]);
    // A bare family file works as --config too.
    let path = dir.path().join("q.csv");
    let out = wulff(&["quantize", "--config", &fam, "--radii", "0.1", "--out", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert!(fs::read_to_string(path).unwrap().starts_with("lambda,radius,mass\n"));
}

#[test]
fn invalid_input_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let broken = dir.path().join("broken.json");
    fs::write(&broken, "{\"command\": \"kappa\",").unwrap();
    let out = wulff(&["kappa", "--config", broken.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
    // Config for another command.
    let other = dir.path().join("other.json");
    fs::write(&other, r#"{"command": "dual", "norm": {"family":"q_norm","q":2,"dim":2}}"#).unwrap();
    assert_eq!(wulff(&["kappa", "--config", other.to_str().unwrap()]).status.code(), Some(2));
    // No norm, bad q, dimension mismatch, missing directory.
    assert_eq!(wulff(&["kappa"]).status.code(), Some(2));
    assert_eq!(wulff(&["kappa", "--norm", r#"{"family":"q_norm","q":0.5,"dim":2}"#]).status.code(), Some(2));
    assert_eq!(wulff(&["kappa", "--norm", EUCLIDEAN, "--N", "3"]).status.code(), Some(2));
    let missing = dir.path().join("nope").join("k.json");
    let out = wulff(&["kappa", "--norm", EUCLIDEAN, "--out", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!missing.exists());
    // Unknown flag.
    assert_eq!(wulff(&["kappa", "--bogus"]).status.code(), Some(2));
}

#[test]
fn unresolved_family_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let fam = family(dir.path(), Some(33));
    let path = dir.path().join("q.json");
    let out = wulff(&["quantize", "--family", &fam, "--radii", "0.1", "--out", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unresolved concentration"));
    assert!(!path.exists());
}

#[test]
fn solve_writes_grid_csv() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("u.csv");
    let out = wulff(&[
        "solve",
        "--norm",
        EUCLIDEAN,
        "--grid",
        "17",
        "--domain",
        "[-0.5,0.5]^2",
        "--boundary",
        "bubble:lambda=1",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read_to_string(&path).unwrap().lines().count(), 1 + 17 * 17);
}

#[test]
fn reports_do_not_depend_on_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let fam = family(dir.path(), None);
    let mut bytes = Vec::new();
    for threads in ["1", "4"] {
        let path = dir.path().join(format!("t{threads}.json"));
        let out = Command::new(env!("CARGO_BIN_EXE_wulff"))
            .env("WULFF_THREADS", threads)
            .args(["supinf", "--family", &fam, "--sigma", "[-0.5,0.5]^2", "--C1", "2", "--out"])
            .arg(&path)
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        bytes.push(fs::read(path).unwrap());
    }
    assert_eq!(bytes[0], bytes[1]);
}
