use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tobitlvm"))
}

fn designs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../designs")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Simulates the mixed factor design into `dir` and returns the data path.
fn mixed_data(dir: &Path) -> PathBuf {
    let out = dir.join("d.csv");
    let design = designs().join("mixed_factor.toml");
    let o = run(&["simulate", "--design", path(&design), "--seed", "1", "--out", path(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn fit_prints_the_parameter_table() {
    let dir = tempfile::tempdir().unwrap();
    let data = mixed_data(dir.path());
    let model = designs().join("mixed_factor.lvm");
    let o = run(&["fit", "--model", path(&model), "--data", path(&data)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    for heading in ["Measurements:", "Regressions:", "Intercepts:", "Residual Variances:"] {
        assert!(text.contains(heading), "{text}");
    }
    let rows = text.lines().filter(|l| l.starts_with("   ") && !l.trim_start().starts_with("Estimate")).count();
    assert_eq!(rows, 10, "{text}");
}

#[test]
fn fit_json_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let data = mixed_data(dir.path());
    let model = designs().join("mixed_factor.lvm");
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for out in [&a, &b] {
        let o = run(&["--quiet", "fit", "--model", path(&model), "--data", path(&data), "--out", path(out)]);
        assert_eq!(code(&o), 0);
    }
    let (ta, tb) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(ta, tb);
    let v: serde_json::Value = serde_json::from_slice(&ta).unwrap();
    assert_eq!(v["schema"], 1);
    assert_eq!(v["converged"], true);
    assert_eq!(v["parameters"].as_array().unwrap().len(), 10);
    assert!(v["parameters"][9]["p"].is_null());
}

#[test]
fn clfit_reports_blocks() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    let design = designs().join("mixed_factor_binary.toml");
    let o = run(&["simulate", "--design", path(&design), "--seed", "2", "--out", path(&data)]);
    assert_eq!(code(&o), 0);
    let model = designs().join("mixed_factor_binary.lvm");
    let out = dir.path().join("cl.json");
    let o = run(&["clfit", "--model", path(&model), "--data", path(&data), "--out", path(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8(o.stdout).unwrap().contains("blocks: (Y1,Y2) (Y2,Y3)"));
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    assert_eq!(v["estimator"], "composite");
    assert_eq!(v["blocks"].as_array().unwrap().len(), 2);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let model = designs().join("mixed_factor.lvm");
    let missing = dir.path().join("nope.csv");
    assert_eq!(code(&run(&["fit", "--model", path(&model), "--data", path(&missing)])), 3);

    let bad = dir.path().join("bad.lvm");
    std::fs::write(&bad, "Y <- <- X\n").unwrap();
    let data = mixed_data(dir.path());
    assert_eq!(code(&run(&["fit", "--model", path(&bad), "--data", path(&data)])), 2);

    let aliased = dir.path().join("aliased.lvm");
    let adata = dir.path().join("aliased.csv");
    let rows: String = (0..50)
        .map(|i| {
            let x = (i as f64 * 0.37).sin();
            format!("{},{x},{}\n", x + (i as f64).cos(), 2.0 * x)
        })
        .collect();
    std::fs::write(&adata, format!("Y,X1,X2\n{rows}")).unwrap();
    std::fs::write(&aliased, "Y <- X1 + X2\n").unwrap();
    assert_eq!(code(&run(&["--quiet", "fit", "--model", path(&aliased), "--data", path(&adata)])), 4);

    assert_eq!(code(&run(&["fit", "--model"])), 1);
    assert_eq!(code(&run(&["--help"])), 0);
}

#[test]
fn simulate_is_deterministic() {
    let design = designs().join("mixed_factor.toml");
    let a = run(&["simulate", "--design", path(&design), "--seed", "7", "--n", "50"]);
    let b = run(&["simulate", "--design", path(&design), "--seed", "7", "--n", "50"]);
    let c = run(&["simulate", "--design", path(&design), "--seed", "8", "--n", "50"]);
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
    assert_ne!(a.stdout, c.stdout);
    assert_eq!(String::from_utf8(a.stdout).unwrap().lines().count(), 51);
}

#[test]
fn study_with_one_replication_reports_na() {
    let design = designs().join("probit_factor.toml");
    let o = run(&["study", "--design", path(&design), "--reps", "1", "--seed", "3", "--n", "200"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("NA"), "{text}");
    assert_eq!(text.lines().filter(|l| l.starts_with('Y')).count(), 3, "{text}");
}

#[test]
fn score_check_passes_and_fails_on_tolerance() {
    let dir = tempfile::tempdir().unwrap();
    let data = mixed_data(dir.path());
    let model = designs().join("mixed_factor.lvm");
    let out = dir.path().join("check.json");
    let o = run(&["score-check", "--model", path(&model), "--data", path(&data), "--out", path(&out)]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8(o.stdout).unwrap().contains("PASS"));
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    assert_eq!(v["pass"], true);
    let o = run(&["score-check", "--model", path(&model), "--data", path(&data), "--tol", "0"]);
    assert_eq!(code(&o), 5);
}
