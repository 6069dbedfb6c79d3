use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn entmem(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_entmem"))
        .args(args)
        .current_dir(cwd)
        .env_remove("ENTMEM_WORKDIR")
        .output()
        .expect("binary runs")
}

fn stderr_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(text.lines().last().unwrap_or("")).expect("error line is JSON")
}

const CONFIG: &str = r#"
[paths]
corpus = "data/corpus.jsonl"
pretrain = "data/pretrain.jsonl"
public = "data/public.jsonl"
gazetteer = "data/gazetteer.jsonl"
canaries = "data/canaries.json"

[tokenizer]
vocab_size = 280

[model]
n_layers = 1
n_heads = 2
d_model = 8
d_ff = 16
max_seq = 48
vocab_size = 280

[pretrain]
epochs = 1
learning_rate = 0.003

[finetune]
objective = "mlm"
epochs = 1

[decoding]
target_len = 32

[generate]
n_samples = 6
prompt_chars = 30
setups = ["base", "full"]
"#;

fn setup_dir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let out = entmem(
        &["synth", "--out", "data", "--docs", "200", "--pretrain-docs", "120", "--public-docs", "20"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    fs::write(dir.path().join("exp.toml"), CONFIG).unwrap();
    dir
}

#[test]
fn missing_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = entmem(&["prepare"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"]["kind"], "config");

    let out = entmem(&["prepare", "--config", "nope.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn dp_without_section_exits_2() {
    let dir = setup_dir();
    let out = entmem(&["finetune", "--setup", "dp", "--config", "exp.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_json(&out);
    assert_eq!(err["error"]["stage"], "config");
    assert!(err["error"]["message"].as_str().unwrap().contains("[dp]"));
}

#[test]
fn run_all_then_rerun_skips_everything() {
    let dir = setup_dir();
    let first = entmem(&["run-all", "--config", "exp.toml", "--workdir", "w"], dir.path());
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let report = fs::read(dir.path().join("w/report/report.json")).unwrap();

    let again = entmem(&["run-all", "--config", "exp.toml", "--workdir", "w"], dir.path());
    assert!(again.status.success());
    let v: Value = serde_json::from_slice(&again.stdout).unwrap();
    let stages = v["stages"].as_array().unwrap();
    assert!(!stages.is_empty());
    assert!(stages.iter().all(|s| s["outcome"] == "skipped"));
    assert_eq!(fs::read(dir.path().join("w/report/report.json")).unwrap(), report);
}

#[test]
fn run_all_stops_at_stage() {
    let dir = setup_dir();
    let out = entmem(&["run-all", "--stage", "tokenizer", "--config", "exp.toml"], dir.path());
    assert!(out.status.success());
    assert!(dir.path().join("work/tokenizer.json").is_file());
    assert!(!dir.path().join("work/pretrain").exists());

    let bad = entmem(&["run-all", "--stage", "bogus", "--config", "exp.toml"], dir.path());
    assert_eq!(bad.status.code(), Some(2));
}
