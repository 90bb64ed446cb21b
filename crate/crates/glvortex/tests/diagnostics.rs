use std::f64::consts::PI;

use glvortex::diagnostics::*;
use glvortex::geometry::ModelManifold;
use glvortex::GlError;

fn config_path(err: GlError) -> String {
    match err {
        GlError::Config { path, .. } => path,
        other => panic!("expected a config error, got {other:?}"),
    }
}

#[test]
fn bad_values_name_their_field() {
    let cases = [
        (r#"{"command":"profile","epsilon":-1,"output":"o"}"#, "epsilon"),
        (r#"{"command":"profile","output":"o"}"#, "epsilon"),
        (r#"{"command":"sweep","epsilons":[0.4,0.5],"output":"o"}"#, "epsilons[1]"),
        (r#"{"command":"glue","epsilon":0.2,"grid":{"h_over_eps":0},"output":"o"}"#, "grid.h_over_eps"),
        (r#"{"command":"glue","epsilon":0.2,"tolerances":{"newton":-1e-9},"output":"o"}"#, "tolerances.newton"),
    ];
    for (json, path) in cases {
        assert_eq!(config_path(RunConfig::from_json(json).unwrap_err()), path, "{json}");
    }
}

#[test]
fn unknown_fields_are_rejected() {
    let err = RunConfig::from_json(r#"{"command":"profile","epsilon":1,"output":"o","grid":{"spacing":1}}"#).unwrap_err();
    assert!(config_path(err).starts_with("<root>"));
}

#[test]
fn profile_run_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let run_into = |sub: &str| {
        let mut cfg = RunConfig::new(Command::Profile, dir.path().join(sub));
        cfg.epsilon = Some(1.0);
        cfg.grid.r_max = Some(20.0);
        let out = run(&cfg).unwrap();
        assert!(out.passed(), "{:?}", out.manifest.failed);
        assert_eq!(out.exit_code(), 0);
        out
    };
    let (a, b) = (run_into("a"), run_into("b"));
    assert!(a.manifest.artifacts.contains(&"profile.csv".to_string()));
    for name in &a.manifest.artifacts {
        let fa = std::fs::read(dir.path().join("a").join(name)).unwrap();
        let fb = std::fs::read(dir.path().join("b").join(name)).unwrap();
        assert_eq!(fa, fb, "{name}");
    }
    assert!(a.manifest_path.exists() && b.manifest_path.exists());
}

#[test]
fn flat_glue_records_the_degeneracy() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::new(Command::Glue, dir.path());
    cfg.manifold = ModelManifold::flat3(2.0 * PI);
    cfg.epsilon = Some(0.4);
    let err = run(&cfg).unwrap_err();
    assert!(matches!(err, GlError::DegenerateJacobi { .. }));
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["passed"], false);
    assert!(manifest["error"].as_str().unwrap().to_lowercase().contains("degenerate"));
}

#[test]
fn config_round_trips_through_json() {
    let mut cfg = RunConfig::new(Command::Sweep, "out");
    cfg.epsilons = vec![0.4, 0.2];
    cfg.manifold = ModelManifold::warped3(2.0 * PI).with_perturbation(0.5);
    let back = RunConfig::from_json(&serde_json::to_string(&cfg).unwrap()).unwrap();
    assert_eq!(back, cfg);
}

#[test]
fn documented_sweep_config_parses() {
    let cfg = RunConfig::from_json(
        r#"{
          "command": "sweep",
          "manifold": { "kind": "warped3", "L0": 6.283185307179586, "perturbation": 0.5, "fermi_radius": 0.5 },
          "epsilons": [0.4, 0.3, 0.2, 0.15],
          "grid": { "tube_over_eps": 12, "h_over_eps": 0.2, "nx": 8 },
          "output": "out/sweep"
        }"#,
    )
    .unwrap();
    assert_eq!(cfg.command, Command::Sweep);
    assert_eq!(cfg.manifold, ModelManifold::warped3(2.0 * PI).with_perturbation(0.5));
    assert_eq!(cfg.epsilons, vec![0.4, 0.3, 0.2, 0.15]);
}
