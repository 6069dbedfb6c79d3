use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::hash_file;
use crate::corpus::write_file;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Running,
    Completed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub config_hash: String,
    /// Input path to content hash.
    pub inputs: BTreeMap<String, String>,
    /// Output path to content hash.
    pub outputs: BTreeMap<String, String>,
    pub wall_time_ms: u64,
    pub status: Status,
}

/// Per-stage record of what was computed from what. Kept in
/// `<workdir>/ledger.json` and rewritten atomically after each change.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLedger {
    pub stages: BTreeMap<String, StageRecord>,
    #[serde(skip)]
    path: Option<PathBuf>,
}

pub fn hash_inputs(paths: &[PathBuf]) -> Result<BTreeMap<String, String>> {
    paths
        .iter()
        .map(|p| Ok((p.display().to_string(), hash_file(p)?)))
        .collect()
}

impl RunLedger {
    pub fn open(path: &Path) -> Result<Self> {
        let mut ledger: RunLedger = if path.exists() {
            let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_slice(&bytes)?
        } else {
            RunLedger::default()
        };
        ledger.path = Some(path.to_path_buf());
        Ok(ledger)
    }

    /// True when the stage completed with the same config and inputs, recorded
    /// exactly `outputs`, and those are still on disk unchanged.
    pub fn is_fresh(&self, stage: &str, config_hash: &str, inputs: &BTreeMap<String, String>, outputs: &[PathBuf]) -> bool {
        let Some(rec) = self.stages.get(stage) else {
            return false;
        };
        rec.status == Status::Completed
            && rec.outputs.len() == outputs.len()
            && outputs.iter().all(|p| rec.outputs.contains_key(&p.display().to_string()))
            && rec.config_hash == config_hash
            && &rec.inputs == inputs
            && rec
                .outputs
                .iter()
                .all(|(p, h)| hash_file(Path::new(p)).map(|x| &x == h).unwrap_or(false))
    }

    pub fn mark_running(&mut self, stage: &str, config_hash: &str, inputs: &BTreeMap<String, String>) -> Result<()> {
        self.stages.insert(
            stage.to_string(),
            StageRecord {
                config_hash: config_hash.to_string(),
                inputs: inputs.clone(),
                outputs: BTreeMap::new(),
                wall_time_ms: 0,
                status: Status::Running,
            },
        );
        self.save()
    }

    pub fn mark_completed(&mut self, stage: &str, outputs: &[PathBuf], wall_time_ms: u64) -> Result<()> {
        let outputs = hash_inputs(outputs)?;
        let rec = self
            .stages
            .get_mut(stage)
            .ok_or_else(|| Error::config(format!("stage {stage} was not started")))?;
        rec.outputs = outputs;
        rec.wall_time_ms = wall_time_ms;
        rec.status = Status::Completed;
        self.save()
    }

    fn save(&self) -> Result<()> {
        let Some(path) = &self.path else { return Ok(()) };
        let tmp = path.with_extension("json.tmp");
        write_file(&tmp, serde_json::to_string_pretty(self)?.as_bytes())?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }
}
