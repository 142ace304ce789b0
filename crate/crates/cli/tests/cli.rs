use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn smoke() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.toml")
}

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fallguard"))
        .current_dir(dir)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

#[test]
fn missing_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["gen-data", "--out", "d.fgd"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--config"));
}

#[test]
fn unknown_config_key_exits_with_config_status() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[ppo]\nn_env = 4\n").unwrap();
    let out = run(dir.path(), &["gen-data", "--config", cfg.to_str().unwrap(), "--out", "d.fgd"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn missing_input_exits_with_data_status() {
    let dir = tempfile::tempdir().unwrap();
    let s = smoke();
    let out = run(
        dir.path(),
        &["eval-predictor", "--config", s.to_str().unwrap(), "--weights", "nope.ckpt", "--data", "nope.fgd", "--csv", "x.csv"],
    );
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn stage_two_without_dataset_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let s = smoke();
    let out = run(dir.path(), &["train-policy", "--config", s.to_str().unwrap(), "--stage", "2", "--out", "p.ckpt"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(!dir.path().join("p.ckpt").exists());
}

#[test]
fn gen_data_writes_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let s = smoke();
    let out = run(dir.path(), &["gen-data", "--config", s.to_str().unwrap(), "--n", "4", "--seed", "99", "--out", "d.fgd"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("d.fgd.manifest.json")).unwrap();
    let m: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(m["subcommand"], "gen-data");
    assert_eq!(m["seeds"]["master"], 99);
    let outputs = m["outputs"].as_array().unwrap();
    assert_eq!(outputs.len(), 1);
    assert_eq!(outputs[0]["sha256"].as_str().unwrap().len(), 64);
    assert!(m["config_hash"].as_str().is_some_and(|h| h.len() == 64));
}

#[test]
fn report_merges_suite_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let s = smoke();
    let header = fallguard::eval::SuiteSummary::HEADER.join(",");
    let row = |name: &str, fc: f64| {
        let mut v = vec![name.to_string()];
        v.extend((1..21).map(|i| if i == 9 { fc.to_string() } else { "1".to_string() }));
        v.join(",")
    };
    let body = format!("init_hash,dt,{header}\nab,0.005,{}\nab,0.005,{}\n", row("policy", 50.0), row("damping", 100.0));
    std::fs::create_dir(dir.path().join("runs")).unwrap();
    std::fs::write(dir.path().join("runs/eval.csv"), body).unwrap();
    let out = run(dir.path(), &["report", "--config", s.to_str().unwrap(), "--dir", "runs", "--out", "summary.csv"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut r = csv::Reader::from_path(dir.path().join("summary.csv")).unwrap();
    let h = r.headers().unwrap().clone();
    let col = h.iter().position(|c| c == "f_contact_max_vs_damping_pct").unwrap();
    let rows: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
    assert_eq!(rows.len(), 2);
    assert!((rows[0][col].parse::<f64>().unwrap() - 50.0).abs() < 1e-9);
}
