//! Experiment orchestration: a TOML config, stages that read and write plain
//! files under a work directory, and a ledger that skips stages whose config
//! and inputs are unchanged.

mod config;
mod ledger;
mod report;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

pub use config::{
    AuditSection, CorpusSection, ExperimentConfig, FinetuneSection, GenerateSection, Paths, PretrainSection, Seeds,
    TokenizerSection,
};
pub use ledger::{hash_inputs, RunLedger, StageRecord, Status};
pub use report::{
    compare_report, CanaryRate, ClaimCheck, Comparison, ComparisonCell, ComparisonRow, ExperimentReport,
    PrivacySummary, SETS_HASH_KEY,
};

use crate::audit::{self, build_entity_sets, build_index, read_gazetteer, AuditReport, EntitySet, EntitySets, MatchIndex};
use crate::corpus::{plant_canaries, read_documents, write_file, CanaryAudit, CanaryPlan, Corpus};
use crate::dp::write_audit_log;
use crate::error::{Error, Result};
use crate::generator::{generate_corpus, read_samples, write_samples, PromptKind, PromptSource};
use crate::model::Parameters;
use crate::text;
use crate::tokenizer::{train_on_texts, TokenizerModel};
use crate::training::{finetune, pretrain_mlm, RunManifest, Setup};

/// SHA-256 of the canonical JSON encoding of `value`.
pub fn hash_json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    Ok(hash_bytes(&serde_json::to_vec(value)?))
}

pub fn hash_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hash_bytes(&bytes))
}

/// What happened to a stage in this invocation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StageOutcome {
    Ran,
    Skipped,
}

/// Every stage of a full run, in order.
pub const STAGES: [&str; 8] = ["prepare", "tokenizer", "pretrain", "finetune", "generate", "entities", "audit", "report"];

pub struct Pipeline {
    pub config: ExperimentConfig,
    ledger: RunLedger,
    /// (stage, outcome) for every stage touched by this value, in order.
    pub log: Vec<(String, StageOutcome)>,
}

impl Pipeline {
    /// Validates the config and opens the ledger in its work directory.
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        std::fs::create_dir_all(&config.paths.workdir).map_err(|e| Error::io(&config.paths.workdir, e))?;
        let ledger = RunLedger::open(&config.paths.workdir.join("ledger.json"))?;
        Ok(Self {
            config,
            ledger,
            log: Vec::new(),
        })
    }

    pub fn workdir(&self) -> &Path {
        &self.config.paths.workdir
    }

    pub fn ledger(&self) -> &RunLedger {
        &self.ledger
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.workdir().join(rel)
    }

    pub fn corpus_path(&self) -> PathBuf {
        self.path("data/corpus.jsonl")
    }

    pub fn tokenizer_path(&self) -> PathBuf {
        self.path("tokenizer.json")
    }

    pub fn checkpoint_path(&self, setup: Setup) -> PathBuf {
        match setup {
            Setup::Base => self.path("pretrain/checkpoint.bin"),
            s => self.path(&format!("finetune/{s}/checkpoint.bin")),
        }
    }

    pub fn manifest_path(&self, setup: Setup) -> PathBuf {
        self.path(&format!("finetune/{setup}/manifest.json"))
    }

    pub fn samples_path(&self, setup: Setup, kind: PromptKind) -> PathBuf {
        self.path(&format!("samples/{setup}-{kind}.jsonl"))
    }

    pub fn entity_sets_path(&self) -> PathBuf {
        self.path("audit/entity_sets.json")
    }

    pub fn audit_path(&self, setup: Setup, kind: PromptKind) -> PathBuf {
        self.path(&format!("audit/{setup}-{kind}.json"))
    }

    pub fn report_path(&self) -> PathBuf {
        self.path("report/report.json")
    }

    pub fn table_path(&self, set: EntitySet, kind: PromptKind) -> PathBuf {
        self.path(&format!("report/table_{}_{kind}.csv", set.as_str()))
    }

    fn canary_audit_path(&self) -> PathBuf {
        self.path("data/canary_audit.json")
    }

    fn stage(
        &mut self,
        name: &str,
        config_hash: String,
        inputs: Vec<PathBuf>,
        outputs: Vec<PathBuf>,
        body: impl FnOnce(&Self) -> Result<()>,
    ) -> Result<StageOutcome> {
        let input_hashes = hash_inputs(&inputs)?;
        if self.ledger.is_fresh(name, &config_hash, &input_hashes, &outputs) {
            self.log.push((name.to_string(), StageOutcome::Skipped));
            return Ok(StageOutcome::Skipped);
        }
        self.ledger.mark_running(name, &config_hash, &input_hashes)?;
        let t = Instant::now();
        body(self)?;
        self.ledger
            .mark_completed(name, &outputs, t.elapsed().as_millis() as u64)?;
        self.log.push((name.to_string(), StageOutcome::Ran));
        Ok(StageOutcome::Ran)
    }

    fn input_files(&self) -> Vec<PathBuf> {
        let p = &self.config.paths;
        let mut v = vec![p.corpus.clone()];
        if let Some(c) = &p.canaries {
            v.push(c.clone());
        }
        v
    }

    /// Ingests the corpus, assigns the split and plants canaries.
    pub fn prepare(&mut self) -> Result<StageOutcome> {
        let cfg = (&self.config.corpus, self.config.seeds.split, self.config.seeds.canary);
        let outputs = vec![self.corpus_path(), self.canary_audit_path()];
        let inputs = self.input_files();
        self.stage("prepare", hash_json(&cfg)?, inputs, outputs, |p| {
            let c = &p.config;
            let docs = read_documents(&c.paths.corpus, &c.corpus.fields)?;
            let corpus = Corpus::new(docs, c.corpus.test_fraction, c.seeds.split)?;
            let (corpus, audit) = match &c.paths.canaries {
                Some(path) => plant_canaries(&corpus, &CanaryPlan::load(path)?, c.seeds.canary)?,
                None => (
                    corpus,
                    CanaryAudit {
                        seed: c.seeds.canary,
                        insertions: BTreeMap::new(),
                    },
                ),
            };
            corpus.write_jsonl(&p.corpus_path())?;
            write_file(&p.canary_audit_path(), serde_json::to_string_pretty(&audit)?.as_bytes())
        })
    }

    fn pretrain_corpus(&self) -> Result<Corpus> {
        let c = &self.config;
        Corpus::new(read_documents(&c.paths.pretrain, &c.corpus.fields)?, 0.0, c.seeds.split)
    }

    /// Trains the tokenizer on the pre-training corpus.
    pub fn tokenizer(&mut self) -> Result<StageOutcome> {
        let cfg = (&self.config.tokenizer, &self.config.corpus.fields);
        let inputs = vec![self.config.paths.pretrain.clone()];
        let outputs = vec![self.tokenizer_path()];
        self.stage("tokenizer", hash_json(&cfg)?, inputs, outputs, |p| {
            let pre = p.pretrain_corpus()?;
            let tok = train_on_texts(pre.documents().iter().map(|d| d.text.as_str()), p.config.tokenizer.vocab_size)?;
            tok.save(&p.tokenizer_path())
        })
    }

    pub fn pretrain(&mut self) -> Result<StageOutcome> {
        let train = self.config.pretrain_config();
        let cfg = (&self.config.model, &train);
        let inputs = vec![self.config.paths.pretrain.clone(), self.tokenizer_path()];
        let outputs = vec![self.checkpoint_path(Setup::Base), self.path("pretrain/log.json")];
        self.stage("pretrain", hash_json(&cfg)?, inputs, outputs, |p| {
            let tok = TokenizerModel::load(&p.tokenizer_path())?;
            let (params, log) = pretrain_mlm(&p.pretrain_corpus()?, &tok, &p.config.model, &train)?;
            params.save(&p.checkpoint_path(Setup::Base))?;
            write_file(&p.path("pretrain/log.json"), serde_json::to_string(&log)?.as_bytes())
        })
    }

    pub fn finetune(&mut self, setup: Setup) -> Result<StageOutcome> {
        if setup == Setup::Base {
            return Err(Error::config("the base setup is not fine-tuned"));
        }
        let dp = match setup {
            Setup::Dp => Some(self.config.require_dp()?.clone()),
            _ => None,
        };
        let train = self.config.finetune_config(setup);
        train.validate()?;
        let cfg = (&train, &dp);
        let inputs = vec![self.corpus_path(), self.tokenizer_path(), self.checkpoint_path(Setup::Base)];
        let mut outputs = vec![
            self.checkpoint_path(setup),
            self.manifest_path(setup),
            self.path(&format!("finetune/{setup}/log.json")),
        ];
        let audit_log = self.path(&format!("finetune/{setup}/accountant.csv"));
        if dp.as_ref().is_some_and(|d| d.noise_multiplier > 0.0) {
            outputs.push(audit_log.clone());
        }
        self.stage(&format!("finetune:{setup}"), hash_json(&cfg)?, inputs, outputs, |p| {
            let tok = TokenizerModel::load(&p.tokenizer_path())?;
            let base = Parameters::load(&p.checkpoint_path(Setup::Base))?;
            let corpus = Corpus::read_jsonl(&p.corpus_path())?;
            let (params, log, mut manifest) = finetune(&base, &corpus, &tok, &train, dp.as_ref())?;
            let ckpt = p.checkpoint_path(setup);
            params.save(&ckpt)?;
            manifest.checkpoint = Some(format!("finetune/{setup}/checkpoint.bin"));
            if let Some(privacy) = manifest.privacy.as_ref().filter(|r| r.accountant.is_some()) {
                let orders = privacy.accountant.as_ref().map(|a| a.orders().to_vec()).unwrap_or_default();
                write_audit_log(&audit_log, &orders, &privacy.audit_rows(log.steps_per_epoch as u64)?)?;
            }
            write_file(&p.manifest_path(setup), serde_json::to_string_pretty(&manifest)?.as_bytes())?;
            write_file(&p.path(&format!("finetune/{setup}/log.json")), serde_json::to_string(&log)?.as_bytes())
        })
    }

    fn prompt_source(&self, kind: PromptKind) -> Result<PromptSource> {
        let chars = self.config.generate.prompt_chars;
        Ok(match kind {
            PromptKind::Naive => {
                let docs = read_documents(&self.config.paths.public, &self.config.corpus.fields)?;
                PromptSource::naive(&Corpus::new(docs, 0.0, 0)?, chars)
            }
            PromptKind::Informed => PromptSource::informed(&Corpus::read_jsonl(&self.corpus_path())?, chars),
        })
    }

    pub fn generate(&mut self, setup: Setup, kind: PromptKind) -> Result<StageOutcome> {
        let c = &self.config;
        let cfg = (&c.decoding, c.generate.n_samples, c.generate.prompt_chars, c.seeds.generate, setup, kind);
        let prompts = match kind {
            PromptKind::Naive => c.paths.public.clone(),
            PromptKind::Informed => self.corpus_path(),
        };
        let inputs = vec![self.tokenizer_path(), self.checkpoint_path(setup), prompts];
        let outputs = vec![self.samples_path(setup, kind)];
        self.stage(&format!("generate:{setup}:{kind}"), hash_json(&cfg)?, inputs, outputs, |p| {
            let tok = TokenizerModel::load(&p.tokenizer_path())?;
            let params = Parameters::load(&p.checkpoint_path(setup))?;
            let source = p.prompt_source(kind)?;
            let c = &p.config;
            let samples = generate_corpus(&params, &tok, &source, &c.decoding, setup, c.generate.n_samples, c.seeds.generate)?;
            write_samples(&p.samples_path(setup, kind), &samples)
        })
    }

    pub fn entities(&mut self) -> Result<StageOutcome> {
        let cfg = &self.config.corpus.fields;
        let inputs = vec![self.config.paths.gazetteer.clone(), self.corpus_path(), self.config.paths.pretrain.clone()];
        let outputs = vec![self.entity_sets_path()];
        self.stage("entities", hash_json(&cfg)?, inputs, outputs, |p| {
            let rows = read_gazetteer(&p.config.paths.gazetteer)?;
            let corpus = Corpus::read_jsonl(&p.corpus_path())?;
            let pre = p.pretrain_corpus()?;
            let sets = build_entity_sets(&rows, &corpus, pre.documents().iter().map(|d| d.text.as_str()))?;
            sets.save(&p.entity_sets_path())
        })
    }

    pub fn audit(&mut self, setup: Setup, kind: PromptKind) -> Result<StageOutcome> {
        let types = self.config.audit.types.clone();
        let inputs = vec![self.entity_sets_path(), self.samples_path(setup, kind)];
        let log_path = self.path(&format!("audit/{setup}-{kind}.matches.jsonl"));
        let outputs = vec![self.audit_path(setup, kind), log_path.clone()];
        self.stage(&format!("audit:{setup}:{kind}"), hash_json(&types)?, inputs, outputs, |p| {
            let sets = EntitySets::load(&p.entity_sets_path())?;
            let samples = read_samples(&p.samples_path(setup, kind))?;
            let index = build_index(&sets, EntitySet::All)?;
            let result = audit::scan(&index, &samples);
            result.write_log(&log_path)?;
            let mut report = audit::extraction_rates(&sets, &result.matched, setup, kind, samples.len(), &types);
            report.metadata.insert(SETS_HASH_KEY.into(), hash_json(&sets)?);
            report
                .metadata
                .insert("samples_hash".into(), hash_file(&p.samples_path(setup, kind))?);
            report.save(&p.audit_path(setup, kind))
        })
    }

    /// Runs (setup, prompt kind) pairs in config order.
    fn runs(&self) -> Vec<(Setup, PromptKind)> {
        let g = &self.config.generate;
        g.setups
            .iter()
            .flat_map(|&s| g.prompts.iter().map(move |&k| (s, k)))
            .collect()
    }

    pub fn report(&mut self) -> Result<StageOutcome> {
        let runs = self.runs();
        let mut inputs: Vec<PathBuf> = runs.iter().map(|&(s, k)| self.audit_path(s, k)).collect();
        inputs.extend(runs.iter().map(|&(s, k)| self.samples_path(s, k)));
        inputs.push(self.entity_sets_path());
        inputs.push(self.canary_audit_path());
        let mut setups: Vec<Setup> = runs.iter().map(|r| r.0).filter(|&s| s != Setup::Base).collect();
        setups.dedup();
        inputs.extend(setups.iter().map(|&s| self.manifest_path(s)));
        let mut outputs = vec![self.report_path(), self.path("report/canaries.csv")];
        for set in EntitySet::EACH {
            for &kind in &self.config.generate.prompts {
                outputs.push(self.table_path(set, kind));
            }
        }
        let audit_cfg = self.config.audit.clone();
        self.stage("report", hash_json(&audit_cfg)?, inputs, outputs, |p| p.write_report(&runs, &setups))
    }

    fn write_report(&self, runs: &[(Setup, PromptKind)], setups: &[Setup]) -> Result<()> {
        let reports: Vec<AuditReport> = runs
            .iter()
            .map(|&(s, k)| AuditReport::load(&self.audit_path(s, k)))
            .collect::<Result<_>>()?;
        let sets = EntitySets::load(&self.entity_sets_path())?;
        let comparison = if reports.len() >= 2 {
            Some(compare_report(&reports, self.config.audit.base_band)?)
        } else {
            None
        };

        let mut privacy = BTreeMap::new();
        let mut metrics = BTreeMap::new();
        for &s in setups {
            let bytes = std::fs::read(self.manifest_path(s)).map_err(|e| Error::io(self.manifest_path(s), e))?;
            let m: RunManifest = serde_json::from_slice(&bytes)?;
            metrics.insert(s.to_string(), m.metrics.clone());
            if let Some(pr) = m.privacy {
                privacy.insert(
                    s.to_string(),
                    PrivacySummary {
                        epsilon: pr.epsilon,
                        delta: pr.delta,
                        noise_multiplier: pr.noise_multiplier,
                        clip_norm: pr.clip_norm,
                        sampling_rate: pr.sampling_rate,
                        steps: pr.steps,
                    },
                );
            }
        }

        let canaries = match &self.config.paths.canaries {
            Some(path) => self.canary_rates(&CanaryPlan::load(path)?, runs)?,
            None => Vec::new(),
        };

        let mut wanted = vec!["prepare".to_string(), "tokenizer".into(), "pretrain".into(), "entities".into()];
        wanted.extend(setups.iter().map(|s| format!("finetune:{s}")));
        for &(s, k) in runs {
            wanted.push(format!("generate:{s}:{k}"));
            wanted.push(format!("audit:{s}:{k}"));
        }
        let stage_hashes: BTreeMap<String, String> = wanted
            .into_iter()
            .filter_map(|name| self.ledger.stages.get(&name).map(|r| (name, r.config_hash.clone())))
            .collect();
        let report = ExperimentReport {
            config_hash: hash_json(&self.config_for_hash())?,
            stage_hashes,
            entity_set_sizes: EntitySet::EACH
                .iter()
                .map(|&s| (s.as_str().to_string(), sets.get(s).len()))
                .collect(),
            reports: reports.clone(),
            comparison,
            canaries: canaries.clone(),
            privacy,
            metrics,
        };
        write_file(&self.report_path(), serde_json::to_string_pretty(&report)?.as_bytes())?;

        let mut groups = vec!["ALL".to_string()];
        groups.extend(self.config.audit.types.iter().map(|t| t.as_str().to_string()));
        for set in EntitySet::EACH {
            for &kind in &self.config.generate.prompts {
                let subset: Vec<AuditReport> = reports.iter().filter(|r| r.prompt_kind == kind).cloned().collect();
                write_file(&self.table_path(set, kind), audit::table_csv(&subset, set, &groups)?.as_bytes())?;
            }
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["setup", "prompt_kind", "k", "extracted", "size", "percent"])?;
        for c in &canaries {
            w.write_record([
                c.setup.to_string(),
                c.prompt_kind.to_string(),
                c.k.to_string(),
                c.extracted.to_string(),
                c.size.to_string(),
                c.percent.map_or_else(|| "n/a".into(), |p| format!("{p:.1}%")),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::config(e.to_string()))?;
        write_file(&self.path("report/canaries.csv"), &bytes)
    }

    /// Config with the work directory removed, so moving a run elsewhere keeps
    /// the same hash.
    fn config_for_hash(&self) -> ExperimentConfig {
        let mut c = self.config.clone();
        c.paths.workdir = PathBuf::new();
        for p in [&mut c.paths.corpus, &mut c.paths.pretrain, &mut c.paths.public, &mut c.paths.gazetteer] {
            *p = p.file_name().map(PathBuf::from).unwrap_or_default();
        }
        c.paths.canaries = c.paths.canaries.as_ref().and_then(|p| p.file_name()).map(PathBuf::from);
        c
    }

    fn canary_rates(&self, plan: &CanaryPlan, runs: &[(Setup, PromptKind)]) -> Result<Vec<CanaryRate>> {
        let surfaces: Vec<String> = plan.entries.iter().map(|e| text::match_form(&e.surface)).collect();
        if surfaces.is_empty() {
            return Ok(Vec::new());
        }
        let index = MatchIndex::from_surfaces(&surfaces)?;
        let mut ks: Vec<usize> = plan.entries.iter().map(|e| e.k).collect();
        ks.sort_unstable();
        ks.dedup();
        let mut out = Vec::new();
        for &(setup, kind) in runs {
            let samples = read_samples(&self.samples_path(setup, kind))?;
            let matched = audit::scan(&index, &samples).matched;
            for &k in &ks {
                let members: Vec<&String> = surfaces.iter().zip(&plan.entries).filter(|(_, e)| e.k == k).map(|(s, _)| s).collect();
                let extracted = members.iter().filter(|s| matched.contains(**s)).count();
                out.push(CanaryRate {
                    setup,
                    prompt_kind: kind,
                    k,
                    extracted,
                    size: members.len(),
                    percent: audit::percent_1dp(extracted, members.len()),
                });
            }
        }
        Ok(out)
    }

    /// Every stage in order; stops after `until` when given.
    pub fn run_all(&mut self, until: Option<&str>) -> Result<()> {
        if let Some(u) = until {
            if !STAGES.contains(&u) {
                return Err(Error::config(format!("unknown stage {u:?}")));
            }
        }
        let stop = |name: &str| until == Some(name);
        self.prepare()?;
        if stop("prepare") {
            return Ok(());
        }
        self.tokenizer()?;
        if stop("tokenizer") {
            return Ok(());
        }
        self.pretrain()?;
        if stop("pretrain") {
            return Ok(());
        }
        let runs = self.runs();
        let mut setups: Vec<Setup> = runs.iter().map(|r| r.0).filter(|&s| s != Setup::Base).collect();
        setups.dedup();
        for &s in &setups {
            self.finetune(s)?;
        }
        if stop("finetune") {
            return Ok(());
        }
        for &(s, k) in &runs {
            self.generate(s, k)?;
        }
        if stop("generate") {
            return Ok(());
        }
        self.entities()?;
        if stop("entities") {
            return Ok(());
        }
        for &(s, k) in &runs {
            self.audit(s, k)?;
        }
        if stop("audit") {
            return Ok(());
        }
        self.report()?;
        Ok(())
    }
}
