use std::process::Command;

fn voltreg() -> Command {
    Command::new(env!("CARGO_BIN_EXE_voltreg"))
}

#[test]
fn config_prints_a_loadable_preset() {
    let out = voltreg().args(["config", "--paper"]).output().unwrap();
    assert!(out.status.success());
    let cfg: voltreg::harness::RunConfig = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(cfg, voltreg::harness::RunConfig::paper());
}

#[test]
fn pf_writes_hashed_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = voltreg()
        .args(["pf", "--day", "3", "--hour", "13", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("converged true"));
    assert!(stdout.contains("pf.csv"));
    assert!(dir.path().join("pf.csv").exists());
}

#[test]
fn missing_inputs_exit_with_a_category() {
    let dir = tempfile::tempdir().unwrap();
    let out = voltreg().arg("compare").arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error ["));
}

#[test]
fn unknown_backend_is_rejected() {
    let out = voltreg().args(["train-agent", "--backend", "oracle"]).output().unwrap();
    assert!(!out.status.success());
}
