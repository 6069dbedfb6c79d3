use std::fs;
use std::path::Path;

use entmem::pipeline::{ExperimentConfig, Pipeline, StageOutcome};
use entmem::synth::{synthesize, SynthConfig};

use super::Outcome;

const SETUPS: [&str; 4] = ["base", "full", "partial", "dp"];
const ROWS: [&str; 8] = ["ALL", "PERSON", "ORG", "LOC", "GPE", "FAC", "MONEY", "CARDINAL"];

const CONFIG: &str = r#"
[paths]
corpus = "data/corpus.jsonl"
pretrain = "data/pretrain.jsonl"
public = "data/public.jsonl"
gazetteer = "data/gazetteer.jsonl"
canaries = "data/canaries.json"

[tokenizer]
vocab_size = 300

[model]
n_layers = 1
n_heads = 2
d_model = 16
d_ff = 32
max_seq = 64
vocab_size = 300

[pretrain]
epochs = 2
learning_rate = 0.003

[finetune]
objective = "mlm"
epochs = 2
learning_rate = { full = 0.003, partial = 0.003, dp = 0.003 }

[dp]
noise_multiplier = 0.5

[decoding]
target_len = 48

[generate]
n_samples = 40
prompt_chars = 40
"#;

fn pipeline(root: &Path, workdir: &str) -> Result<Pipeline, String> {
    let mut cfg = ExperimentConfig::from_toml(CONFIG).map_err(|e| e.to_string())?;
    cfg.paths.workdir = workdir.into();
    cfg.resolve_paths(root);
    Pipeline::new(cfg).map_err(|e| e.to_string())
}

/// `e/s` as a percentage with one decimal, rounded half up in integers.
fn expected_percent(e: u64, s: u64) -> String {
    let tenths = (2000 * e + s) / (2 * s);
    format!("{}.{}%", tenths / 10, tenths % 10)
}

fn check_table(path: &Path) -> Result<usize, String> {
    let mut rd = csv::Reader::from_path(path).map_err(|e| e.to_string())?;
    let header: Vec<String> = rd.headers().map_err(|e| e.to_string())?.iter().map(String::from).collect();
    let mut want = vec!["entity_type".to_string()];
    for s in SETUPS {
        want.push(s.to_string());
        want.push(format!("{s}_count"));
    }
    if header != want {
        return Err(format!("{}: header {header:?}", path.display()));
    }
    let mut cells = 0;
    let mut names = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| e.to_string())?;
        names.push(rec[0].to_string());
        for c in 0..SETUPS.len() {
            let (pct, count) = (&rec[1 + 2 * c], &rec[2 + 2 * c]);
            let (e, s) = count.split_once('/').ok_or_else(|| format!("bad count {count:?}"))?;
            let (e, s): (u64, u64) = (e.parse().map_err(|_| "count")?, s.parse().map_err(|_| "count")?);
            let want = if s == 0 { "n/a".to_string() } else { expected_percent(e, s) };
            if pct != want || e > s {
                return Err(format!("{}: {} {pct} for {count}", path.display(), &rec[0]));
            }
            cells += 1;
        }
    }
    if names != ROWS {
        return Err(format!("{}: rows {names:?}", path.display()));
    }
    Ok(cells)
}

fn report_bytes(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| e.to_string())? {
        let p = entry.map_err(|e| e.to_string())?.path();
        out.push((
            p.file_name().unwrap().to_string_lossy().into_owned(),
            fs::read(&p).map_err(|e| e.to_string())?,
        ));
    }
    out.sort();
    Ok(out)
}

pub fn check() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = tmp.path();
    let data = synthesize(&SynthConfig {
        n_docs: 300,
        n_pretrain_docs: 300,
        n_public_docs: 60,
        ..SynthConfig::default()
    })
    .map_err(|e| e.to_string())?;
    data.write(&root.join("data")).map_err(|e| e.to_string())?;

    let mut first = pipeline(root, "a")?;
    first.run_all(None).map_err(|e| e.to_string())?;
    let report_dir = root.join("a/report");
    let mut cells = 0;
    let mut tables = 0;
    for (name, _) in report_bytes(&report_dir)? {
        if name.starts_with("table_") {
            cells += check_table(&report_dir.join(&name))?;
            tables += 1;
        }
    }
    if tables != 6 {
        return Err(format!("expected 6 tables, found {tables}"));
    }
    let before = report_bytes(&report_dir)?;

    let mut again = pipeline(root, "a")?;
    again.run_all(None).map_err(|e| e.to_string())?;
    let ran: Vec<&String> = again.log.iter().filter(|(_, o)| *o == StageOutcome::Ran).map(|(n, _)| n).collect();
    if !ran.is_empty() {
        return Err(format!("rerun recomputed {ran:?}"));
    }
    if report_bytes(&report_dir)? != before {
        return Err("report changed on ledger rerun".into());
    }

    let mut fresh = pipeline(root, "b")?;
    fresh.run_all(None).map_err(|e| e.to_string())?;
    if report_bytes(&root.join("b/report"))? != before {
        return Err("a fresh run in another work directory produced different report bytes".into());
    }
    Ok(format!(
        "{tables} tables of {} rows x {} setups, {cells} cells match their counts; rerun skipped {} stages; report byte-identical on rerun and on fresh recomputation",
        ROWS.len(),
        SETUPS.len(),
        again.log.len()
    ))
}
