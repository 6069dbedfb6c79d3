use std::collections::HashSet;

use entmem::corpus::Corpus;
use entmem::generator::{generate_corpus, DecodingConfig, PromptSource};
use entmem::model::{ModelConfig, Objective};
use entmem::synth::{synthesize, SynthConfig};
use entmem::tokenizer::{train_on_texts, TokenId, N_SPECIAL};
use entmem::training::{pretrain_mlm, Setup, TrainConfig};

use super::Outcome;

const SAMPLES: usize = 500;
const TARGET: usize = 256;

/// Number of positions at or after `from` whose 3-gram already ended at an
/// earlier position.
fn repeated_trigrams(ids: &[TokenId], from: usize) -> usize {
    let mut seen = HashSet::new();
    let mut repeats = 0;
    for j in 2..ids.len() {
        let fresh = seen.insert(&ids[j - 2..=j]);
        if !fresh && j >= from {
            repeats += 1;
        }
    }
    repeats
}

pub fn check() -> Outcome {
    let data = synthesize(&SynthConfig {
        n_docs: 400,
        n_pretrain_docs: 400,
        n_public_docs: 100,
        ..SynthConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let tok = train_on_texts(data.pretrain.iter().map(|d| d.text.as_str()), 300).map_err(|e| e.to_string())?;
    let model = ModelConfig { max_seq: TARGET, ..ModelConfig::new(1, 2, 16, 32, 300) };
    let pre = Corpus::new(data.pretrain.clone(), 0.0, 0).map_err(|e| e.to_string())?;
    let mut train = TrainConfig::new(Setup::Full, Objective::Mlm, 1);
    train.epochs = 1;
    train.learning_rate = 3e-3;
    let (params, _) = pretrain_mlm(&pre, &tok, &model, &train).map_err(|e| e.to_string())?;

    let public = Corpus::new(data.public.clone(), 0.0, 0).map_err(|e| e.to_string())?;
    let source = PromptSource::naive(&public, 100);
    let cfg = DecodingConfig::default();
    let run = || generate_corpus(&params, &tok, &source, &cfg, Setup::Base, SAMPLES, 0).map_err(|e| e.to_string());
    let first = run()?;

    let (mut in_prompts, mut special) = (0, 0);
    for s in &first {
        let mut ids = tok.encode(&s.prompt);
        let prompt_len = ids.len();
        if prompt_len + s.body_ids.len() != TARGET || s.n_tokens != s.body_ids.len() {
            return Err(format!("{}: {} prompt + {} body tokens", s.id, prompt_len, s.body_ids.len()));
        }
        special += s.body_ids.iter().filter(|&&t| (t as usize) < N_SPECIAL).count();
        ids.extend(&s.body_ids);
        let generated = repeated_trigrams(&ids, prompt_len);
        if generated > 0 {
            return Err(format!("{}: {generated} repeated 3-grams end at generated tokens", s.id));
        }
        in_prompts += repeated_trigrams(&ids[..prompt_len], 0);
    }
    if special > 0 {
        return Err(format!("{special} special tokens in bodies"));
    }
    let again = run()?;
    let (a, b) = (
        serde_json::to_vec(&first).map_err(|e| e.to_string())?,
        serde_json::to_vec(&again).map_err(|e| e.to_string())?,
    );
    if a != b {
        return Err("regeneration under the same seeds differs".into());
    }
    Ok(format!(
        "{SAMPLES} samples of {TARGET} tokens; 0 repeated 3-grams at generated positions, {in_prompts} inside prompt text; 0 specials; regeneration byte-identical ({} bytes)",
        a.len()
    ))
}
