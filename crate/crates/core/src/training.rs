//! Adam, MLM pre-training, the three fine-tuning regimes and evaluation.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::dp::{self, DpConfig, RdpAccountant};
use crate::error::{Error, Result};
use crate::model::{
    forward_classify, loss_and_grad, per_example_grads, Example, FreezeMask, GradientBundle, Head, ModelConfig,
    Objective, Parameters, Target,
};
use crate::pipeline::hash_json;
use crate::rng;
use crate::tokenizer::{self, TokenId, TokenizerModel, CLS, MASK, N_SPECIAL};

pub const MASK_RATE: f64 = 0.15;

/// Model setups. `Base` is the pre-trained model without fine-tuning; it can
/// be sampled and audited but not passed to [`finetune`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setup {
    Base,
    Full,
    Partial,
    Dp,
}

impl Setup {
    pub const FINETUNED: [Setup; 3] = [Setup::Full, Setup::Partial, Setup::Dp];

    pub fn as_str(self) -> &'static str {
        match self {
            Setup::Base => "base",
            Setup::Full => "full",
            Setup::Partial => "partial",
            Setup::Dp => "dp",
        }
    }

    /// Learning rates found best on the larger of the two reference datasets.
    pub fn default_learning_rate(self) -> f64 {
        match self {
            Setup::Base | Setup::Full => 1e-5,
            Setup::Partial => 5e-5,
            Setup::Dp => 1e-3,
        }
    }
}

impl fmt::Display for Setup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Setup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "base" => Ok(Setup::Base),
            "full" => Ok(Setup::Full),
            "partial" => Ok(Setup::Partial),
            "dp" => Ok(Setup::Dp),
            _ => Err(Error::config(format!("unknown setup {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub setup: Setup,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub objective: Objective,
    /// Dropout during training; off is useful for exact gradient checks.
    #[serde(default = "default_true")]
    pub dropout: bool,
}

fn default_batch() -> usize {
    32
}

fn default_true() -> bool {
    true
}

impl TrainConfig {
    pub fn new(setup: Setup, objective: Objective, seed: u64) -> Self {
        Self {
            setup,
            batch_size: default_batch(),
            learning_rate: setup.default_learning_rate(),
            epochs: 10,
            seed,
            objective,
            dropout: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::config("batch_size and epochs must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning rate must be positive"));
        }
        Ok(())
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: GradientBundle,
    pub v: GradientBundle,
    pub t: u64,
}

impl AdamState {
    /// Zero moments for the trainable groups of `params`.
    pub fn new(params: &Parameters, mask: &FreezeMask) -> Self {
        let m = params.to_bundle(mask).zeros_like();
        Self { v: m.clone(), m, t: 0 }
    }
}

/// Bias-corrected Adam update of the groups named in `grads`.
pub fn adam_step(state: &mut AdamState, params: &mut Parameters, grads: &GradientBundle, lr: f64) -> Result<()> {
    if grads.len() != state.m.len() || grads.keys().zip(state.m.keys()).any(|(a, b)| a != b) {
        return Err(Error::config("gradient groups differ from the optimizer's trainable groups"));
    }
    for (name, g) in grads.iter() {
        let p = params.get(name).ok_or_else(|| Error::config(format!("no parameter group {name}")))?;
        if p.dim() != g.dim() {
            return Err(Error::ShapeMismatch {
                name: name.clone(),
                expected: p.dim(),
                actual: g.dim(),
            });
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    for ((name, g), (m, v)) in grads.iter().zip(state.m.0.values_mut().zip(state.v.0.values_mut())) {
        let p: &mut Array2<f64> = params.get_mut(name).expect("checked above");
        ndarray::Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            let mhat = *m / c1;
            let vhat = *v / c2;
            *p -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
        });
    }
    Ok(())
}

/// Outcome of one masking decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskAction {
    Mask,
    Random,
    Keep,
}

/// Selects `max(1, round(15%))` positions and corrupts them 80/10/10
/// (mask / random token / unchanged). Returns the corrupted ids and target.
pub fn mask_sequence(ids: &[TokenId], vocab_size: usize, key: &[u64]) -> (Vec<TokenId>, Vec<(usize, MaskAction)>, Target) {
    let mut r = rng::stream(key);
    let n = ((ids.len() as f64 * MASK_RATE).round() as usize).clamp(1, ids.len());
    let mut positions: Vec<usize> = rand::seq::index::sample(&mut r, ids.len(), n).into_vec();
    positions.sort_unstable();
    let mut corrupted = ids.to_vec();
    let mut actions = Vec::with_capacity(n);
    for &p in &positions {
        let u: f64 = r.random();
        let action = if u < 0.8 {
            corrupted[p] = MASK;
            MaskAction::Mask
        } else if u < 0.9 {
            corrupted[p] = r.random_range(N_SPECIAL as TokenId..vocab_size as TokenId);
            MaskAction::Random
        } else {
            MaskAction::Keep
        };
        actions.push((p, action));
    }
    let labels = positions.iter().map(|&p| ids[p]).collect();
    (corrupted, actions, Target::Mlm { positions, labels })
}

/// Token ids for MLM training and generation: no CLS, truncated to `max_seq`.
pub fn mlm_ids(tok: &TokenizerModel, text: &str, max_seq: usize) -> Vec<TokenId> {
    let mut ids = tok.encode(text);
    ids.truncate(max_seq);
    ids
}

/// Token ids for classification: CLS followed by the text, truncated to `max_seq`.
pub fn classify_ids(tok: &TokenizerModel, text: &str, max_seq: usize) -> Vec<TokenId> {
    let mut ids = vec![CLS];
    ids.extend(tok.encode(text));
    ids.truncate(max_seq);
    ids
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub epoch: usize,
    pub step: u64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub steps: Vec<StepLog>,
    pub steps_per_epoch: usize,
}

impl TrainLog {
    pub fn mean_loss(&self, epoch: usize) -> Option<f64> {
        let v: Vec<f64> = self.steps.iter().filter(|s| s.epoch == epoch).map(|s| s.loss).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Privacy bookkeeping for a DP run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyRecord {
    pub sampling_rate: f64,
    pub noise_multiplier: f64,
    pub clip_norm: f64,
    pub steps: u64,
    pub delta: f64,
    /// `None` when σ = 0 (no privacy claim).
    pub epsilon: Option<f64>,
    pub accountant: Option<RdpAccountant>,
}

/// (step, q, σ, per-order RDP, ε at δ)
pub type AuditRow = (u64, f64, f64, Vec<f64>, f64);

impl PrivacyRecord {
    /// Rows for the accountant audit log, one every `every` steps plus the
    /// final step.
    pub fn audit_rows(&self, every: u64) -> Result<Vec<AuditRow>> {
        let Some(acc) = &self.accountant else { return Ok(Vec::new()) };
        let every = every.max(1);
        let mut fresh = RdpAccountant::new(acc.orders().to_vec())?;
        let mut rows = Vec::new();
        let mut done = 0;
        while done < self.steps {
            let n = every.min(self.steps - done);
            fresh.compose(self.sampling_rate, self.noise_multiplier, n)?;
            done += n;
            rows.push((done, self.sampling_rate, self.noise_multiplier, fresh.rdp(), fresh.epsilon(self.delta)?));
        }
        Ok(rows)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub setup: Setup,
    pub objective: Objective,
    pub seeds: BTreeMap<String, u64>,
    pub epochs: usize,
    pub steps: u64,
    pub config_hashes: BTreeMap<String, String>,
    pub metrics: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub privacy: Option<PrivacyRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
}

fn run_epochs(
    params: &mut Parameters,
    examples_for_epoch: &dyn Fn(usize) -> Vec<Example>,
    n_examples: usize,
    train: &TrainConfig,
    mask: &FreezeMask,
    dp: Option<(&DpConfig, &mut RdpAccountant, f64)>,
) -> Result<TrainLog> {
    let mut adam = AdamState::new(params, mask);
    let mut steps = Vec::new();
    let mut step: u64 = 0;
    let steps_per_epoch = n_examples.div_ceil(train.batch_size);
    let mut dp = dp;
    for epoch in 0..train.epochs {
        let examples = examples_for_epoch(epoch);
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.shuffle(&mut rng::stream(&[train.seed, rng::label("shuffle"), epoch as u64]));
        for chunk in order.chunks(train.batch_size) {
            let batch: Vec<Example> = chunk.iter().map(|&i| examples[i].clone()).collect();
            let dropout = train
                .dropout
                .then(|| rng::key(&[train.seed, rng::label("dropout"), step]));
            let (loss, grads) = match dp.as_mut() {
                None => loss_and_grad(params, &batch, train.objective, mask, dropout)?,
                Some((cfg, accountant, q)) => {
                    let per = per_example_grads(params, &batch, train.objective, mask, dropout)?;
                    let loss = per.iter().map(|(l, _)| l).sum::<f64>() / per.len() as f64;
                    let bundles: Vec<GradientBundle> = per.into_iter().map(|(_, g)| g).collect();
                    let noisy = dp::privatize(&bundles, cfg, rng::key(&[train.seed, rng::label("dp")]), step)?;
                    if cfg.noise_multiplier > 0.0 {
                        accountant.step(*q, cfg.noise_multiplier)?;
                    }
                    (loss, noisy)
                }
            };
            adam_step(&mut adam, params, &grads, train.learning_rate)?;
            steps.push(StepLog { epoch, step, loss });
            step += 1;
        }
    }
    Ok(TrainLog { steps, steps_per_epoch })
}

fn mlm_examples(seqs: &[Vec<TokenId>], vocab: usize, seed: u64, epoch: usize) -> Vec<Example> {
    seqs.iter()
        .enumerate()
        .map(|(i, ids)| {
            let (corrupted, _, target) = mask_sequence(ids, vocab, &[seed, rng::label("mlm-mask"), epoch as u64, i as u64]);
            Example { ids: corrupted, target }
        })
        .collect()
}

/// MLM pre-training from a fresh initialization over every document of `corpus`.
pub fn pretrain_mlm(
    corpus: &Corpus,
    tok: &TokenizerModel,
    config: &ModelConfig,
    train: &TrainConfig,
) -> Result<(Parameters, TrainLog)> {
    train.validate()?;
    if train.objective != Objective::Mlm {
        return Err(Error::config("pre-training requires the mlm objective"));
    }
    if config.vocab_size != tok.vocab_size() {
        return Err(Error::config("model vocab_size differs from the tokenizer"));
    }
    let seqs: Vec<Vec<TokenId>> = corpus
        .documents()
        .iter()
        .map(|d| mlm_ids(tok, &d.text, config.max_seq))
        .filter(|ids| !ids.is_empty())
        .collect();
    if seqs.len() < train.batch_size {
        return Err(Error::config(format!(
            "corpus has {} usable documents, fewer than one batch of {}",
            seqs.len(),
            train.batch_size
        )));
    }
    let mut params = Parameters::init(config, rng::key(&[train.seed, rng::label("pretrain-init")]))?;
    let mask = FreezeMask::full(&params);
    let vocab = config.vocab_size;
    let make = |epoch: usize| mlm_examples(&seqs, vocab, train.seed, epoch);
    let log = run_epochs(&mut params, &make, seqs.len(), train, &mask, None)?;
    Ok((params, log))
}

/// Fine-tunes a pre-trained checkpoint on the train split.
///
/// For the classify objective a fresh classifier head is attached. Full trains
/// every group; Partial and DP train the last encoder layer and the active head.
pub fn finetune(
    checkpoint: &Parameters,
    corpus: &Corpus,
    tok: &TokenizerModel,
    train: &TrainConfig,
    dp_config: Option<&DpConfig>,
) -> Result<(Parameters, TrainLog, RunManifest)> {
    train.validate()?;
    match (train.setup, dp_config) {
        (Setup::Dp, None) => return Err(Error::config("the dp setup requires a dp configuration")),
        (Setup::Full | Setup::Partial, Some(_)) => {
            return Err(Error::config("a dp configuration is only valid with the dp setup"))
        }
        (Setup::Base, _) => return Err(Error::config("the base setup is not fine-tuned")),
        _ => {}
    }
    if let Some(d) = dp_config {
        d.validate()?;
    }
    let max_seq = checkpoint.config.max_seq;
    let vocab = checkpoint.config.vocab_size;
    let (mut params, head) = match train.objective {
        Objective::Classify => {
            if corpus.labels().is_empty() {
                return Err(Error::config("classification fine-tuning needs labeled documents"));
            }
            let p = checkpoint
                .clone()
                .with_classifier(corpus.labels().len(), rng::key(&[train.seed, rng::label("classifier-init")]))?;
            (p, Head::Classifier)
        }
        Objective::Mlm => (checkpoint.clone().without_classifier(), Head::Mlm),
    };
    let mask = match train.setup {
        Setup::Full => FreezeMask::full(&params),
        _ => FreezeMask::partial(&params, head),
    };
    let docs: Vec<_> = corpus.train().collect();
    let examples_for_epoch: Box<dyn Fn(usize) -> Vec<Example>> = match train.objective {
        Objective::Classify => {
            let mut fixed = Vec::with_capacity(docs.len());
            for d in &docs {
                let label = d
                    .label
                    .as_deref()
                    .and_then(|l| corpus.label_index(l))
                    .ok_or_else(|| Error::config(format!("train document {} has no label", d.id)))?;
                fixed.push(Example {
                    ids: classify_ids(tok, &d.text, max_seq),
                    target: Target::Class(label),
                });
            }
            Box::new(move |_| fixed.clone())
        }
        Objective::Mlm => {
            let seqs: Vec<Vec<TokenId>> = docs
                .iter()
                .map(|d| mlm_ids(tok, &d.text, max_seq))
                .filter(|ids| !ids.is_empty())
                .collect();
            let seed = train.seed;
            Box::new(move |epoch| mlm_examples(&seqs, vocab, seed, epoch))
        }
    };
    let n = docs.len();
    if n == 0 {
        return Err(Error::config("train split is empty"));
    }
    let q = (train.batch_size as f64 / n as f64).min(1.0);
    let mut accountant = RdpAccountant::with_default_orders();
    let dp_run = dp_config.map(|d| (d, &mut accountant, q));
    let log = run_epochs(&mut params, examples_for_epoch.as_ref(), n, train, &mask, dp_run)?;

    let mut metrics = BTreeMap::new();
    if let Some(last) = train.epochs.checked_sub(1).and_then(|e| log.mean_loss(e)) {
        metrics.insert("final_epoch_loss".to_string(), last);
    }
    if train.objective == Objective::Classify && corpus.test_len() > 0 {
        metrics.insert("test_accuracy".to_string(), evaluate_accuracy(&params, corpus, tok)?);
    }
    let privacy = match dp_config {
        Some(d) => {
            let delta = d.delta_for(n);
            let steps = log.steps.len() as u64;
            let epsilon = if d.noise_multiplier > 0.0 {
                Some(accountant.epsilon(delta)?)
            } else {
                None
            };
            Some(PrivacyRecord {
                sampling_rate: q,
                noise_multiplier: d.noise_multiplier,
                clip_norm: d.clip_norm,
                steps,
                delta,
                epsilon,
                accountant: (d.noise_multiplier > 0.0).then(|| accountant.clone()),
            })
        }
        None => None,
    };
    let mut config_hashes = BTreeMap::new();
    config_hashes.insert("train".to_string(), hash_json(train)?);
    config_hashes.insert("model".to_string(), hash_json(&checkpoint.config)?);
    if let Some(d) = dp_config {
        config_hashes.insert("dp".to_string(), hash_json(d)?);
    }
    let manifest = RunManifest {
        setup: train.setup,
        objective: train.objective,
        seeds: [("train".to_string(), train.seed)].into_iter().collect(),
        epochs: train.epochs,
        steps: log.steps.len() as u64,
        config_hashes,
        metrics,
        privacy,
        checkpoint: None,
    };
    Ok((params, log, manifest))
}

/// Most probable class for a text.
pub fn predict(params: &Parameters, tok: &TokenizerModel, text: &str) -> Result<usize> {
    let probs = forward_classify(params, &classify_ids(tok, text, params.config.max_seq))?;
    Ok(argmax(&probs))
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) })
        .0
}

/// Fraction of correctly classified test documents.
pub fn evaluate_accuracy(params: &Parameters, corpus: &Corpus, tok: &TokenizerModel) -> Result<f64> {
    let test: Vec<_> = corpus.test().collect();
    if test.is_empty() {
        return Err(Error::config("test split is empty"));
    }
    let mut predictions = Vec::with_capacity(test.len());
    let mut truth = Vec::with_capacity(test.len());
    for d in &test {
        predictions.push(predict(params, tok, &d.text)?);
        truth.push(d.label.as_deref().and_then(|l| corpus.label_index(l)));
    }
    Ok(accuracy(&predictions, &truth))
}

/// `correct / total`; unlabeled entries count as wrong.
pub fn accuracy(predictions: &[usize], truth: &[Option<usize>]) -> f64 {
    if predictions.is_empty() {
        return 0.0;
    }
    let correct = predictions.iter().zip(truth).filter(|(p, t)| Some(**p) == **t).count();
    correct as f64 / predictions.len() as f64
}

/// Accuracy of always predicting the most common train label on the test split.
pub fn majority_baseline(corpus: &Corpus) -> f64 {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for d in corpus.train() {
        if let Some(l) = &d.label {
            *counts.entry(l.as_str()).or_insert(0) += 1;
        }
    }
    let Some((major, _)) = counts.iter().max_by_key(|(_, &c)| c) else {
        return 0.0;
    };
    let test: Vec<_> = corpus.test().collect();
    if test.is_empty() {
        return 0.0;
    }
    test.iter().filter(|d| d.label.as_deref() == Some(*major)).count() as f64 / test.len() as f64
}

/// Unused-id guard for generated vocabularies.
pub fn is_trainable_token(id: TokenId) -> bool {
    !tokenizer::is_special(id)
}
