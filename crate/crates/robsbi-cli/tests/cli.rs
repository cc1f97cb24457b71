use std::path::Path;
use std::process::{Command, Output};

fn robsbi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_robsbi"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn preset_json(experiment: &str) -> serde_json::Value {
    let out = robsbi(&["preset", experiment]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("preset prints JSON")
}

fn write_config(dir: &Path, name: &str, cfg: &serde_json::Value) -> String {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    p.to_string_lossy().into_owned()
}

/// Small approximation run: quick and exercises the full pipeline.
fn quick_config(out: &Path) -> serde_json::Value {
    let mut cfg = preset_json("approx_beta");
    cfg["seeds"]["replications"] = 2.into();
    cfg["m"] = 500.into();
    cfg["output_dir"] = out.to_string_lossy().into_owned().into();
    cfg
}

#[test]
fn every_preset_validates() {
    let tmp = tempfile::tempdir().unwrap();
    for e in [
        "gaussian_loc_scale",
        "misspecified_tilt",
        "gandk",
        "gmm_identifiable",
        "gmm_unidentifiable",
        "tilt_expansion",
        "gof",
        "approx_beta",
        "active_demo",
    ] {
        let path = write_config(tmp.path(), &format!("{e}.json"), &preset_json(e));
        let out = robsbi(&["validate", "--config", &path]);
        assert_eq!(
            out.status.code(),
            Some(0),
            "{e}: {}",
            String::from_utf8_lossy(&out.stdout)
        );
        let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        assert_eq!(v["violations"].as_array().map(Vec::len), Some(0));
    }
}

#[test]
fn unknown_experiment_is_a_usage_error() {
    let out = robsbi(&["preset", "nope"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gaussian_loc_scale"));
}

#[test]
fn invalid_config_lists_violations_with_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = preset_json("gof");
    cfg["M"] = 100.into();
    cfg["alpha"] = 1.5.into();
    let path = write_config(tmp.path(), "bad.json", &cfg);
    let out = robsbi(&["validate", "--config", &path]);
    assert_eq!(out.status.code(), Some(2));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let msgs: Vec<&str> = v["violations"]
        .as_array()
        .unwrap()
        .iter()
        .filter_map(|m| m.as_str())
        .collect();
    assert!(msgs.iter().any(|m| m.starts_with("M:")), "{msgs:?}");
    assert!(msgs.iter().any(|m| m.contains("alpha")), "{msgs:?}");
    let run = robsbi(&["run", "--config", &path]);
    assert_eq!(run.status.code(), Some(2));
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn malformed_and_missing_configs_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("broken.json");
    std::fs::write(
        &path,
        "{\n  \"experiment\": \"gof\",\n  \"seeds\": {\"master\": }\n}\n",
    )
    .unwrap();
    let out = robsbi(&["validate", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));

    let unknown = tmp.path().join("unknown.json");
    std::fs::write(
        &unknown,
        r#"{"experiment": "gof", "seeds": {"master": 1}, "bogus": 3}"#,
    )
    .unwrap();
    assert_eq!(
        robsbi(&["validate", "--config", unknown.to_str().unwrap()])
            .status
            .code(),
        Some(2)
    );

    let missing = tmp.path().join("absent.json");
    assert_eq!(
        robsbi(&["run", "--config", missing.to_str().unwrap()])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn run_then_summarize_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("run");
    let path = write_config(tmp.path(), "quick.json", &quick_config(&out_dir));
    let run = robsbi(&["run", "--config", &path]);
    assert!(
        run.status.success(),
        "{}",
        String::from_utf8_lossy(&run.stderr)
    );
    for f in ["config.resolved.json", "replications.csv", "summary.json"] {
        assert!(out_dir.join(f).exists(), "{f} missing");
    }
    assert!(out_dir.join("plots").read_dir().unwrap().next().is_some());

    let sum = robsbi(&["summarize", "--config", &path]);
    assert!(
        sum.status.success(),
        "{}",
        String::from_utf8_lossy(&sum.stderr)
    );
    let s: serde_json::Value = serde_json::from_slice(&sum.stdout).unwrap();
    assert_eq!(s["replications"], 2);

    // a tampered summary no longer matches the records
    let summary_path = out_dir.join("summary.json");
    let mut stored: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&summary_path).unwrap()).unwrap();
    let mean = stored["rows"][0]["mean"].as_f64().unwrap();
    stored["rows"][0]["mean"] = (mean + 1.0).into();
    std::fs::write(&summary_path, serde_json::to_string(&stored).unwrap()).unwrap();
    let bad = robsbi(&["summarize", "--out", out_dir.to_str().unwrap()]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn same_seed_gives_identical_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write_config(
        tmp.path(),
        "quick.json",
        &quick_config(&tmp.path().join("unused")),
    );
    let csv = |seed: &str, name: &str| {
        let dir = tmp.path().join(name);
        let out = robsbi(&[
            "--threads",
            "1",
            "run",
            "--config",
            &path,
            "--seed",
            seed,
            "--out",
            dir.to_str().unwrap(),
        ]);
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        std::fs::read(dir.join("replications.csv")).unwrap()
    };
    let a = csv("11", "a");
    assert_eq!(a, csv("11", "b"));
    assert_ne!(a, csv("12", "c"));
}
