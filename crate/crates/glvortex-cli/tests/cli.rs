use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_glvortex"))
}

#[test]
fn profile_writes_artifacts_and_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["profile", "--epsilon", "1", "--rmax", "20", "--nodes", "4001", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["profile.csv", "profile.json", "manifest.json"] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
    let header = std::fs::read_to_string(dir.path().join("profile.csv")).unwrap();
    assert!(header.starts_with("r,f,a\n"));
}

#[test]
fn mismatched_config_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, format!(r#"{{"command":"sweep","epsilons":[0.4,0.2],"output":{:?}}}"#, dir.path().join("o"))).unwrap();
    let out = bin().arg("glue").arg("--config").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("command"));
}

#[test]
fn coarse_profile_grid_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin().args(["profile", "--epsilon", "1", "--rmax", "20", "--nodes", "101", "--out"]).arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}
