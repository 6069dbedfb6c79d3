//! Mask-append decoding: candidate pool, nucleus filter, temperature and
//! n-gram repetition blocking, with naive or informed prompts.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{write_file, Corpus};
use crate::error::{Error, Result};
use crate::model::{mlm_logits, Parameters};
use crate::rng;
use crate::tokenizer::{is_special, TokenId, TokenizerModel, MASK};
use crate::training::Setup;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptKind {
    /// Substrings of unrelated public text.
    Naive,
    /// Substrings of the fine-tuning test split.
    Informed,
}

impl PromptKind {
    pub const EACH: [PromptKind; 2] = [PromptKind::Naive, PromptKind::Informed];

    pub fn as_str(self) -> &'static str {
        match self {
            PromptKind::Naive => "naive",
            PromptKind::Informed => "informed",
        }
    }
}

impl fmt::Display for PromptKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PromptKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "naive" => Ok(PromptKind::Naive),
            "informed" => Ok(PromptKind::Informed),
            _ => Err(Error::config(format!("unknown prompt kind {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptSource {
    pub kind: PromptKind,
    pub texts: Vec<String>,
    pub prompt_chars: usize,
}

impl PromptSource {
    /// Every document of an unrelated corpus.
    pub fn naive(public: &Corpus, prompt_chars: usize) -> Self {
        Self {
            kind: PromptKind::Naive,
            texts: public.documents().iter().map(|d| d.text.clone()).collect(),
            prompt_chars,
        }
    }

    /// The test split of the fine-tuning corpus.
    pub fn informed(corpus: &Corpus, prompt_chars: usize) -> Self {
        Self {
            kind: PromptKind::Informed,
            texts: corpus.test().map(|d| d.text.clone()).collect(),
            prompt_chars,
        }
    }
}

/// A uniformly chosen document (among those long enough), then a uniformly
/// chosen window of exactly `prompt_chars` characters.
pub fn select_prompt(source: &PromptSource, seed: u64) -> Result<String> {
    if source.prompt_chars == 0 {
        return Err(Error::config("prompt_chars must be positive"));
    }
    let eligible: Vec<&String> = source
        .texts
        .iter()
        .filter(|t| t.chars().count() >= source.prompt_chars)
        .collect();
    if eligible.is_empty() {
        return Err(Error::Generation(format!(
            "no {} prompt document has {} characters",
            source.kind, source.prompt_chars
        )));
    }
    let mut r = rng::stream(&[seed, rng::label("prompt"), rng::label(source.kind.as_str())]);
    let text = eligible[r.random_range(0..eligible.len())];
    let chars: Vec<char> = text.chars().collect();
    let start = r.random_range(0..=chars.len() - source.prompt_chars);
    Ok(chars[start..start + source.prompt_chars].iter().collect())
}

/// Missing fields in a config file take the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodingConfig {
    pub pool_size: usize,
    /// Only a single hypothesis is supported.
    pub active_hypotheses: usize,
    pub nucleus_p: f64,
    pub temperature: f64,
    pub no_repeat_ngram: usize,
    pub target_len: usize,
    /// Take the most probable pooled candidate instead of sampling.
    pub greedy: bool,
}

impl Default for DecodingConfig {
    fn default() -> Self {
        Self {
            pool_size: 30,
            active_hypotheses: 1,
            nucleus_p: 0.8,
            temperature: 2.0,
            no_repeat_ngram: 3,
            target_len: 256,
            greedy: false,
        }
    }
}

impl DecodingConfig {
    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        if self.pool_size == 0 || self.pool_size > vocab_size {
            return Err(Error::config(format!("pool_size must lie in 1..={vocab_size}")));
        }
        if self.active_hypotheses != 1 {
            return Err(Error::config("only one active hypothesis is supported"));
        }
        if !(self.nucleus_p > 0.0 && self.nucleus_p <= 1.0) {
            return Err(Error::config("nucleus_p must lie in (0, 1]"));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::config("temperature must be positive"));
        }
        if self.no_repeat_ngram == 0 || self.target_len == 0 {
            return Err(Error::config("no_repeat_ngram and target_len must be positive"));
        }
        Ok(())
    }
}

/// Indices in descending probability order, ties by ascending index.
fn ranked(dist: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..dist.len()).collect();
    idx.sort_by(|&a, &b| dist[b].total_cmp(&dist[a]).then(a.cmp(&b)));
    idx
}

/// Smallest prefix of the descending-probability order whose cumulative sum
/// strictly exceeds `p`. With `p >= 1` the whole support is returned.
pub fn nucleus_filter(dist: &[f64], p: f64) -> Vec<usize> {
    let order = ranked(dist);
    if p >= 1.0 {
        let support: Vec<usize> = order.iter().copied().filter(|&i| dist[i] > 0.0).collect();
        return if support.is_empty() { order } else { support };
    }
    let mut out = Vec::new();
    let mut cum = 0.0;
    for i in order {
        out.push(i);
        cum += dist[i];
        if cum > p {
            break;
        }
    }
    out
}

/// Whether appending `candidate` to `context` would repeat an `n`-gram that
/// already occurs in `context`.
pub fn repeats_ngram(context: &[TokenId], candidate: TokenId, n: usize) -> bool {
    if n == 0 || context.len() < n {
        return n == 1 && context.contains(&candidate);
    }
    let suffix = &context[context.len() - (n - 1)..];
    context
        .windows(n)
        .any(|w| w[n - 1] == candidate && &w[..n - 1] == suffix)
}

/// Softmax over the non-special vocabulary after dividing by `temperature`.
fn token_distribution(logits: &[f64], temperature: f64) -> Vec<f64> {
    let scaled: Vec<f64> = logits
        .iter()
        .enumerate()
        .map(|(i, &l)| if is_special(i as TokenId) { f64::NEG_INFINITY } else { l / temperature })
        .collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = scaled.iter().map(|&s| if s == f64::NEG_INFINITY { 0.0 } else { (s - max).exp() }).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

/// Picks the next token from a vocabulary distribution. Separated from the
/// model so the selection rules can be tested directly.
pub fn choose_token(dist: &[f64], context: &[TokenId], cfg: &DecodingConfig, seed: u64, step: u64) -> Result<TokenId> {
    let order = ranked(dist);
    let allowed = |i: usize| !is_special(i as TokenId) && !repeats_ngram(context, i as TokenId, cfg.no_repeat_ngram);
    let pool: Vec<usize> = order.iter().copied().take(cfg.pool_size).filter(|&i| dist[i] > 0.0).collect();
    let fallback = || {
        order
            .iter()
            .copied()
            .find(|&i| allowed(i))
            .map(|i| i as TokenId)
            .ok_or_else(|| Error::Generation("every token is blocked".into()))
    };
    if cfg.greedy {
        return match pool.iter().copied().find(|&i| allowed(i)) {
            Some(i) => Ok(i as TokenId),
            None => fallback(),
        };
    }
    let pool_mass: f64 = pool.iter().map(|&i| dist[i]).sum();
    if pool_mass <= 0.0 {
        return fallback();
    }
    let pooled: Vec<f64> = pool.iter().map(|&i| dist[i] / pool_mass).collect();
    let kept: Vec<usize> = nucleus_filter(&pooled, cfg.nucleus_p)
        .into_iter()
        .map(|j| pool[j])
        .filter(|&i| allowed(i))
        .collect();
    let mass: f64 = kept.iter().map(|&i| dist[i]).sum();
    if kept.is_empty() || mass <= 0.0 {
        return fallback();
    }
    let u: f64 = rng::stream(&[seed, rng::label("decode"), step]).random();
    let mut cum = 0.0;
    for &i in &kept {
        cum += dist[i] / mass;
        if u < cum {
            return Ok(i as TokenId);
        }
    }
    Ok(*kept.last().expect("non-empty") as TokenId)
}

/// Appends a mask to `context`, predicts it and selects a token.
pub fn next_token(params: &Parameters, context: &[TokenId], cfg: &DecodingConfig, seed: u64, step: u64) -> Result<TokenId> {
    if context.len() + 1 > params.config.max_seq {
        return Err(Error::Generation(format!(
            "context of {} tokens leaves no room under max_seq {}",
            context.len(),
            params.config.max_seq
        )));
    }
    let mut ids = context.to_vec();
    ids.push(MASK);
    let logits = mlm_logits(params, &ids, &[context.len()])?;
    let dist = token_distribution(logits.row(0).as_slice().expect("contiguous row"), cfg.temperature);
    choose_token(&dist, context, cfg, seed, step)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedSample {
    pub id: String,
    pub setup: Setup,
    pub prompt_kind: PromptKind,
    pub prompt: String,
    /// Generated text with the prompt tokens removed.
    pub body: String,
    pub body_ids: Vec<TokenId>,
    pub n_tokens: usize,
    pub seed: u64,
}

pub fn sample_id(setup: Setup, kind: PromptKind, seed: u64) -> String {
    format!("{setup}-{kind}-{seed:06}")
}

/// Generates from a prompt until the sequence holds `target_len` tokens, then
/// strips the prompt tokens by position.
pub fn generate_from_prompt(
    params: &Parameters,
    tok: &TokenizerModel,
    prompt: &str,
    cfg: &DecodingConfig,
    seed: u64,
) -> Result<(Vec<TokenId>, Vec<TokenId>)> {
    cfg.validate(params.config.vocab_size)?;
    if cfg.target_len > params.config.max_seq {
        return Err(Error::config(format!(
            "target_len {} exceeds max_seq {}",
            cfg.target_len, params.config.max_seq
        )));
    }
    let mut ids = tok.encode(prompt);
    if ids.len() >= cfg.target_len {
        return Err(Error::Generation(format!(
            "prompt has {} tokens, not fewer than target_len {}",
            ids.len(),
            cfg.target_len
        )));
    }
    let prompt_len = ids.len();
    while ids.len() < cfg.target_len {
        let t = next_token(params, &ids, cfg, seed, ids.len() as u64)?;
        ids.push(t);
    }
    let body = ids.split_off(prompt_len);
    Ok((ids, body))
}

pub fn generate_sample(
    params: &Parameters,
    tok: &TokenizerModel,
    source: &PromptSource,
    cfg: &DecodingConfig,
    setup: Setup,
    seed: u64,
) -> Result<GeneratedSample> {
    let prompt = select_prompt(source, seed)?;
    let (_, body_ids) = generate_from_prompt(params, tok, &prompt, cfg, seed)?;
    Ok(GeneratedSample {
        id: sample_id(setup, source.kind, seed),
        setup,
        prompt_kind: source.kind,
        prompt,
        body: tok.decode(&body_ids),
        n_tokens: body_ids.len(),
        body_ids,
        seed,
    })
}

/// `n_samples` samples with seeds `base_seed + i`, in index order.
pub fn generate_corpus(
    params: &Parameters,
    tok: &TokenizerModel,
    source: &PromptSource,
    cfg: &DecodingConfig,
    setup: Setup,
    n_samples: usize,
    base_seed: u64,
) -> Result<Vec<GeneratedSample>> {
    if n_samples == 0 {
        return Err(Error::config("n_samples must be positive"));
    }
    let one = |i: usize| generate_sample(params, tok, source, cfg, setup, base_seed + i as u64);
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n_samples).into_par_iter().map(one).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n_samples).map(one).collect()
    }
}

pub fn write_samples(path: &Path, samples: &[GeneratedSample]) -> Result<()> {
    let mut out = String::new();
    for s in samples {
        out.push_str(&serde_json::to_string(s)?);
        out.push('\n');
    }
    write_file(path, out.as_bytes())
}

pub fn read_samples(path: &Path) -> Result<Vec<GeneratedSample>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::MalformedLine {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}
