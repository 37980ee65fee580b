use std::process::{Command, Output};

fn run(dir: &std::path::Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_slagfib")).current_dir(dir).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn model_check_reports_json() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["model-check", "--cases", "50"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["zeta_in_range"], true);
}

#[test]
fn parameter_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(dir.path(), &["solve-fibre", "--r", "-1"])), 2);
    std::fs::write(dir.path().join("bad.json"), r#"{"bogus": 1}"#).unwrap();
    assert_eq!(code(&run(dir.path(), &["--config", "bad.json", "model-check"])), 2);
    assert_eq!(code(&run(dir.path(), &["--config", "missing.json", "model-check"])), 2);
}

#[test]
fn outputs_are_not_overwritten_without_force() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["flow", "--kind", "varphi", "--steps", "4", "--out", "flow.json"];
    assert_eq!(code(&run(dir.path(), &args)), 0);
    let first = std::fs::read(dir.path().join("flow.json")).unwrap();
    assert_eq!(code(&run(dir.path(), &args)), 2);
    let mut forced = args.to_vec();
    forced.push("--force");
    assert_eq!(code(&run(dir.path(), &forced)), 0);
    assert_eq!(std::fs::read(dir.path().join("flow.json")).unwrap(), first);
}

#[test]
fn tbound_diagnostics_are_csv() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.json"), r#"{"tbound": {"t_values": [0.01, 0.001], "grid": [4, 8]}}"#).unwrap();
    let o = run(dir.path(), &["--config", "c.json", "diagnostics", "tbound"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "t,metric_diag,metric_toric,metric_error,metric_conj,jacobian,jacobian_inverse");
    assert_eq!(lines.count(), 2);
}

#[test]
fn solver_failures_exit_3_and_failed_checks_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("strict.json"),
        r#"{"grid": [4, 16], "verify": {"phase": 1e-30}}"#,
    )
    .unwrap();
    assert_eq!(code(&run(dir.path(), &["--config", "strict.json", "solve-fibre"])), 4);
    std::fs::write(
        dir.path().join("starved.json"),
        r#"{"grid": [4, 16], "t": 0.05, "solver": {"max_newton": 1, "s_steps": 1, "min_ds": 1.0, "tol": 1e-15, "gmres_max_iter": 1}}"#,
    )
    .unwrap();
    assert_eq!(code(&run(dir.path(), &["--config", "starved.json", "solve-fibre"])), 3);
}
