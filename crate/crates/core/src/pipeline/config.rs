use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audit::EntityType;
use crate::corpus::FieldMap;
use crate::dp::DpConfig;
use crate::error::{Error, Result};
use crate::generator::{DecodingConfig, PromptKind};
use crate::model::{ModelConfig, Objective};
use crate::training::{Setup, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// Labeled fine-tuning corpus (JSONL).
    pub corpus: PathBuf,
    /// Unlabeled pre-training corpus (JSONL).
    pub pretrain: PathBuf,
    /// Unrelated public text used for naive prompts (JSONL).
    pub public: PathBuf,
    /// Gazetteer (JSONL or TSV).
    pub gazetteer: PathBuf,
    /// Optional canary plan (JSON).
    #[serde(default)]
    pub canaries: Option<PathBuf>,
    #[serde(default = "default_workdir")]
    pub workdir: PathBuf,
}

fn default_workdir() -> PathBuf {
    PathBuf::from("work")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub split: u64,
    pub canary: u64,
    pub pretrain: u64,
    pub finetune: u64,
    pub generate: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            split: 20240917,
            canary: 1,
            pretrain: 2,
            finetune: 3,
            generate: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSection {
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default)]
    pub fields: FieldMap,
}

fn default_test_fraction() -> f64 {
    0.2
}

impl Default for CorpusSection {
    fn default() -> Self {
        Self {
            test_fraction: default_test_fraction(),
            fields: FieldMap::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenizerSection {
    pub vocab_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainSection {
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default = "default_true")]
    pub dropout: bool,
}

fn default_batch() -> usize {
    32
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneSection {
    pub objective: Objective,
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Per-setup learning rates; missing setups use the built-in defaults.
    #[serde(default)]
    pub learning_rate: BTreeMap<Setup, f64>,
    #[serde(default = "default_true")]
    pub dropout: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateSection {
    pub n_samples: usize,
    #[serde(default = "default_prompt_chars")]
    pub prompt_chars: usize,
    #[serde(default = "default_setups")]
    pub setups: Vec<Setup>,
    #[serde(default = "default_prompts")]
    pub prompts: Vec<PromptKind>,
}

fn default_prompt_chars() -> usize {
    100
}

fn default_setups() -> Vec<Setup> {
    vec![Setup::Base, Setup::Full, Setup::Partial, Setup::Dp]
}

fn default_prompts() -> Vec<PromptKind> {
    PromptKind::EACH.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditSection {
    #[serde(default = "default_types")]
    pub types: Vec<EntityType>,
    /// Largest absolute gap, in percentage points, for base and fine-tuned
    /// extraction rates to count as comparable.
    #[serde(default = "default_band")]
    pub base_band: f64,
}

fn default_types() -> Vec<EntityType> {
    EntityType::SELECTED.to_vec()
}

fn default_band() -> f64 {
    5.0
}

impl Default for AuditSection {
    fn default() -> Self {
        Self {
            types: default_types(),
            base_band: default_band(),
        }
    }
}

/// One experiment: every path, hyperparameter and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub paths: Paths,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default)]
    pub corpus: CorpusSection,
    pub tokenizer: TokenizerSection,
    pub model: ModelConfig,
    pub pretrain: PretrainSection,
    pub finetune: FinetuneSection,
    #[serde(default)]
    pub dp: Option<DpConfig>,
    #[serde(default)]
    pub decoding: DecodingConfig,
    pub generate: GenerateSection,
    #[serde(default)]
    pub audit: AuditSection,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Reads a config file; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let p = &mut self.paths;
        for path in [&mut p.corpus, &mut p.pretrain, &mut p.public, &mut p.gazetteer, &mut p.workdir] {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
        if let Some(c) = p.canaries.as_mut() {
            if c.is_relative() {
                *c = base.join(&*c);
            }
        }
    }

    /// Checks everything that can be checked without computing.
    pub fn validate(&self) -> Result<()> {
        let p = &self.paths;
        let mut inputs = vec![&p.corpus, &p.pretrain, &p.public, &p.gazetteer];
        if let Some(c) = &p.canaries {
            inputs.push(c);
        }
        for f in inputs {
            if !f.is_file() {
                return Err(Error::config(format!("input file {} does not exist", f.display())));
            }
        }
        if !(0.0..1.0).contains(&self.corpus.test_fraction) {
            return Err(Error::config("corpus.test_fraction must lie in [0, 1)"));
        }
        self.model.validate()?;
        if self.model.vocab_size != self.tokenizer.vocab_size {
            return Err(Error::config("model.vocab_size must equal tokenizer.vocab_size"));
        }
        self.pretrain_config().validate()?;
        for setup in Setup::FINETUNED {
            self.finetune_config(setup).validate()?;
        }
        self.decoding.validate(self.model.vocab_size)?;
        if self.decoding.target_len > self.model.max_seq {
            return Err(Error::config("decoding.target_len exceeds model.max_seq"));
        }
        if self.generate.n_samples == 0 {
            return Err(Error::config("generate.n_samples must be positive"));
        }
        if self.generate.setups.contains(&Setup::Dp) {
            self.require_dp()?;
        }
        if let Some(dp) = &self.dp {
            dp.validate()?;
        }
        Ok(())
    }

    pub fn require_dp(&self) -> Result<&DpConfig> {
        self.dp
            .as_ref()
            .ok_or_else(|| Error::config("the dp setup requires a [dp] section"))
    }

    pub fn pretrain_config(&self) -> TrainConfig {
        TrainConfig {
            setup: Setup::Full,
            batch_size: self.pretrain.batch_size,
            learning_rate: self.pretrain.learning_rate,
            epochs: self.pretrain.epochs,
            seed: self.seeds.pretrain,
            objective: Objective::Mlm,
            dropout: self.pretrain.dropout,
        }
    }

    pub fn finetune_config(&self, setup: Setup) -> TrainConfig {
        TrainConfig {
            setup,
            batch_size: self.finetune.batch_size,
            learning_rate: self
                .finetune
                .learning_rate
                .get(&setup)
                .copied()
                .unwrap_or_else(|| setup.default_learning_rate()),
            epochs: self.finetune.epochs,
            seed: self.seeds.finetune,
            objective: self.finetune.objective,
            dropout: self.finetune.dropout,
        }
    }
}
