use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};
use swarmkmc::experiment::{AUDIT_FILE, ENERGY_FILE, REPORT_FILE, RESOLVED_CONFIG_FILE, SNAPSHOT_DIR, TRAJECTORY_FILE, ZETA_FILE};
use swarmkmc::io::{AUDIT_HEADER, ENERGY_HEADER, TRAJECTORY_HEADER, ZETA_HEADER};

fn swarmkmc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_swarmkmc"))
        .args(args)
        .arg("--quiet")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, value: &Value) -> String {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(value).unwrap()).unwrap();
    p.display().to_string()
}

fn small_run(extra: Value) -> Value {
    let mut cfg = json!({
        "system": { "lattice": [4, 4, 4], "cu_atoms": 12, "vacancies": 1 },
        "steps": 100,
        "zeta_every": 10,
        "zeta_reference_factor": 20
    });
    for (k, v) in extra.as_object().unwrap() {
        cfg[k] = v.clone();
    }
    cfg
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn first_line(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap_or_default().to_string()
}

#[test]
fn classical_smoke_run_writes_every_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.json", &small_run(json!({})));
    let out = dir.path().join("out");
    let o = swarmkmc(&["run", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(first_line(&out.join(TRAJECTORY_FILE)), TRAJECTORY_HEADER);
    assert_eq!(first_line(&out.join(AUDIT_FILE)), AUDIT_HEADER);
    assert_eq!(first_line(&out.join(ZETA_FILE)), ZETA_HEADER);
    assert_eq!(first_line(&out.join(ENERGY_FILE)), ENERGY_HEADER);
    let rows = fs::read_to_string(out.join(TRAJECTORY_FILE)).unwrap();
    assert_eq!(rows.lines().count(), 101);
    for line in rows.lines().skip(1) {
        assert_eq!(line.split(',').count(), TRAJECTORY_HEADER.split(',').count());
    }
    let report: Value = serde_json::from_str(&fs::read_to_string(out.join(REPORT_FILE)).unwrap()).unwrap();
    assert_eq!(report["steps"], 100);
    assert_eq!(report["seed"], 3);
    assert!(report["final_zeta"].is_number());
    let resolved: Value = serde_json::from_str(&fs::read_to_string(out.join(RESOLVED_CONFIG_FILE)).unwrap()).unwrap();
    assert_eq!(resolved["seed"], 3);
    assert!(resolved["version"].is_string());
    assert_eq!(resolved["config"]["system"]["lattice"], json!([4, 4, 4]));
    assert!(fs::read_dir(out.join(SNAPSHOT_DIR)).unwrap().count() >= 2);
}

#[test]
fn runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.json", &small_run(json!({ "sampler": "swarm", "steps": 500 })));
    let mut csvs = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let o = swarmkmc(&["run", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "9"]);
        assert!(o.status.success(), "{}", stderr(&o));
        csvs.push(fs::read(out.join(TRAJECTORY_FILE)).unwrap());
    }
    assert_eq!(csvs[0], csvs[1]);
}

#[test]
fn missing_potential_exits_two_naming_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("no-such-potential.json");
    let mut cfg = small_run(json!({}));
    cfg["system"]["potential"] = json!(missing);
    let cfg = write_config(dir.path(), "run.json", &cfg);
    let o = swarmkmc(&["run", "--config", &cfg, "--out", dir.path().join("out").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no-such-potential.json"), "{}", stderr(&o));
}

#[test]
fn unknown_config_key_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.json", &small_run(json!({ "stepz": 5 })));
    let o = swarmkmc(&["run", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("stepz"), "{}", stderr(&o));
}

#[test]
fn unknown_suite_exits_two_and_lists_suites() {
    let o = swarmkmc(&["verify", "nonsense"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    for suite in swarmkmc::verify::SUITES {
        assert!(err.contains(suite), "{err}");
    }
}

#[test]
fn verify_reports_measured_and_tolerance() {
    for suite in ["gradients", "gae"] {
        let o = swarmkmc(&["verify", suite]);
        assert!(o.status.success(), "{}", stderr(&o));
        let report: Value = serde_json::from_slice(&o.stdout).unwrap();
        assert_eq!(report["passed"], true);
        let props = report["properties"].as_array().unwrap();
        assert!(!props.is_empty());
        for p in props {
            assert!(p["measured"].is_number() && p["tolerance"].is_number());
            if suite == "gradients" {
                assert!(p["measured"].as_f64().unwrap() < 1e-4);
            }
        }
    }
}

fn tiny_train(episodes: u64) -> Value {
    json!({
        "ppo": {
            "episode_length": 16,
            "minibatch": 8,
            "epochs_per_update": 1,
            "train_lattice": [4, 4, 4]
        },
        "episodes": episodes,
        "cu_atoms": 2,
        "vacancies": 1,
        "hidden": [8],
        "checkpoint_every": 50
    })
}

#[test]
fn train_writes_checkpoints_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("train");
    let cfg = write_config(dir.path(), "train.json", &tiny_train(200));
    let o = swarmkmc(&["train", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let ckpts = fs::read_dir(&out).unwrap().filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with("ckpt_")).count();
    assert_eq!(ckpts, 4);
    let cfg = write_config(dir.path(), "train.json", &tiny_train(250));
    let o = swarmkmc(&["train", "--resume", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("ckpt_250.bin").exists());
    assert_eq!(fs::read_to_string(out.join("latest")).unwrap().trim(), "ckpt_250.bin");
}

#[test]
fn zero_clip_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_train(1);
    cfg["ppo"]["clip"] = json!(0.0);
    let cfg = write_config(dir.path(), "train.json", &cfg);
    let o = swarmkmc(&["train", "--config", &cfg, "--out", dir.path().join("t").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("clip"), "{}", stderr(&o));
}

#[test]
fn bench_reports_speedup_and_lower_bound() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({
        "system": { "lattice": [6, 6, 6], "cu_atoms": 12, "vacancies": 1 },
        "swarm_steps": 20000,
        "reference_steps": 20000
    });
    let path = write_config(dir.path(), "bench.json", &cfg);
    let out = dir.path().join("bench");
    let o = swarmkmc(&["bench", "--config", &path, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: Value = serde_json::from_str(&fs::read_to_string(out.join(REPORT_FILE)).unwrap()).unwrap();
    assert!(report["speedup_ratio"].as_f64().unwrap() > 0.0);
    assert!(report["swarm"]["tpe_ev"].is_number() && report["swarm"]["etr"].is_number());

    let mut capped = cfg.clone();
    capped["classical_cap"] = json!(1);
    let path = write_config(dir.path(), "capped.json", &capped);
    let out = dir.path().join("capped");
    let o = swarmkmc(&["bench", "--config", &path, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: Value = serde_json::from_str(&fs::read_to_string(out.join(REPORT_FILE)).unwrap()).unwrap();
    assert_eq!(report["speedup_lower_bound"], true);
    assert_eq!(report["classical"]["steps"], 1);
}
