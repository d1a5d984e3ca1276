use std::path::Path;
use std::process::Command;

fn pogm() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pogm"))
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, body).unwrap();
    p
}

const CONFIG: &str = r#"{
    "task": "rotated_moons",
    "task_params": {"angles": [0, 45, 90], "n_per_domain": 40},
    "model": {"hidden": [6]},
    "algo": "pogm",
    "rounds": 4,
    "seeds": [3],
    "holdout_domain": 2
}"#;

fn metrics_files(root: &Path) -> Vec<Vec<u8>> {
    let mut out = Vec::new();
    for hash in std::fs::read_dir(root).unwrap() {
        let seed_dir = hash.unwrap().path().join("3");
        out.push(std::fs::read(seed_dir.join("metrics.csv")).unwrap());
    }
    out
}

#[test]
fn run_twice_gives_identical_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    for out in ["a", "b"] {
        let status = pogm()
            .args(["run", "--quiet", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(dir.path().join(out))
            .status()
            .unwrap();
        assert!(status.success());
    }
    let a = metrics_files(&dir.path().join("a"));
    let b = metrics_files(&dir.path().join("b"));
    assert_eq!(a.len(), 1);
    assert_eq!(a, b);
    assert!(a[0].starts_with(b"round,algo,seed,metric,domain_id,value\n"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), r#"{"task": "rotated_moons", "algo": "pogm", "holdout_domain": 9}"#);
    let code = pogm().args(["run", "--quiet", "--config"]).arg(&bad).status().unwrap();
    assert_eq!(code.code(), Some(1));

    let missing = pogm()
        .args(["run", "--quiet", "--config", "/nonexistent/config.json"])
        .status()
        .unwrap();
    assert_eq!(missing.code(), Some(3));

    let diverging = CONFIG.replace("\"rounds\": 4", "\"rounds\": 4, \"inner\": {\"eta\": 1e300}");
    let cfg = write_config(dir.path(), &diverging);
    let code = pogm()
        .args(["run", "--quiet", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("div"))
        .status()
        .unwrap();
    assert_eq!(code.code(), Some(2));
}

#[test]
fn gen_data_sweep_compare_and_diag() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let csv = dir.path().join("data.csv");
    assert!(pogm().args(["gen-data", "--quiet", "--config"]).arg(&cfg).arg("--out").arg(&csv).status().unwrap().success());
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("domain_id,f0,f1,label\n"));
    assert_eq!(text.lines().count(), 1 + 3 * 40);

    let out = pogm()
        .args(["sweep", "--quiet", "--axis", "kappa", "--values", "0.05,0.1,0.5", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("sw"))
        .output()
        .unwrap();
    assert!(out.status.success());
    let summary = String::from_utf8(out.stdout).unwrap();
    assert_eq!(summary.lines().count(), 4);
    assert!(summary.starts_with("axis,value,n_seeds,mean,stderr,formatted\n"));

    let out = pogm()
        .args(["compare", "--quiet", "--config"])
        .arg(&cfg)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("cmp"))
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("cmp").join("min_gip_cos.csv").exists());

    let run_dir = std::fs::read_dir(dir.path().join("runs")).unwrap().next().unwrap().unwrap().path();
    let out = pogm()
        .args(["diag", "--quiet", "--config"])
        .arg(&cfg)
        .arg("--checkpoint")
        .arg(run_dir.join("3").join("checkpoint.json"))
        .output()
        .unwrap();
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["round"], 4);
    assert!(v["kl_b1"].as_f64().unwrap() >= 0.0);
}
