use std::collections::BTreeMap;

use entmem::audit::MatchIndex;
use entmem::corpus::{plant_canaries, Corpus};
use entmem::dp::DpConfig;
use entmem::generator::{generate_corpus, DecodingConfig, PromptKind, PromptSource};
use entmem::model::Objective;
use entmem::text::match_form;
use entmem::training::{finetune, Setup, TrainConfig};

use super::shared::base;
use super::Outcome;

const SEEDS: [u64; 5] = [21, 22, 23, 24, 25];
const EPOCHS: usize = 30;
const LEARNING_RATE: f64 = 3e-3;
const SAMPLES: usize = 2000;
const PROMPT_CHARS: usize = 40;
const TARGET_LEN: usize = 64;

/// Extracted canaries keyed by (setup, prompt kind, k), summed over seeds.
type Hits = BTreeMap<(Setup, PromptKind, usize), usize>;

fn one_seed(seed: u64, hits: &mut Hits, eps: &mut Vec<f64>) -> Result<(), String> {
    let b = base();
    let plan = &b.data.canaries;
    let corpus = b.data.corpus(0.2, 20240917).map_err(|e| e.to_string())?;
    let (corpus, _) = plant_canaries(&corpus, plan, seed).map_err(|e| e.to_string())?;
    let public = Corpus::new(b.data.public.clone(), 0.0, 0).map_err(|e| e.to_string())?;
    let surfaces: Vec<String> = plan.entries.iter().map(|e| match_form(&e.surface)).collect();
    let index = MatchIndex::from_surfaces(&surfaces).map_err(|e| e.to_string())?;
    let decoding = DecodingConfig { target_len: TARGET_LEN, ..DecodingConfig::default() };
    let dp = DpConfig::new(10.0, 0.5);
    for setup in Setup::FINETUNED {
        let mut t = TrainConfig::new(setup, Objective::Mlm, seed);
        t.epochs = EPOCHS;
        t.learning_rate = LEARNING_RATE;
        let (params, _, manifest) = finetune(&b.params, &corpus, &b.tok, &t, (setup == Setup::Dp).then_some(&dp))
            .map_err(|e| e.to_string())?;
        if let Some(e) = manifest.privacy.and_then(|p| p.epsilon) {
            eps.push(e);
        }
        for kind in PromptKind::EACH {
            let source = match kind {
                PromptKind::Naive => PromptSource::naive(&public, PROMPT_CHARS),
                PromptKind::Informed => PromptSource::informed(&corpus, PROMPT_CHARS),
            };
            let samples = generate_corpus(&params, &b.tok, &source, &decoding, setup, SAMPLES, seed * 1_000_000)
                .map_err(|e| e.to_string())?;
            let mut found = vec![false; surfaces.len()];
            for s in &samples {
                for (p, _) in index.find_bounded(&match_form(&s.body)) {
                    found[p] = true;
                }
            }
            for (entry, f) in plan.entries.iter().zip(found) {
                *hits.entry((setup, kind, entry.k)).or_default() += usize::from(f);
            }
        }
    }
    Ok(())
}

pub fn check() -> Outcome {
    let b = base();
    let mut per_k: BTreeMap<usize, usize> = BTreeMap::new();
    for e in &b.data.canaries.entries {
        *per_k.entry(e.k).or_default() += 1;
    }
    let mut hits = Hits::new();
    let mut eps = Vec::new();
    for seed in SEEDS {
        one_seed(seed, &mut hits, &mut eps)?;
    }
    let trials = |k: usize, kinds: usize| (per_k[&k] * SEEDS.len() * kinds) as f64;
    let rate = |setup: Setup, kinds: &[PromptKind], k: usize| -> f64 {
        let n: usize = kinds.iter().map(|&kind| hits.get(&(setup, kind, k)).copied().unwrap_or(0)).sum();
        100.0 * n as f64 / trials(k, kinds.len())
    };
    let overall = |setup: Setup, kinds: &[PromptKind]| -> f64 {
        let n: usize = hits
            .iter()
            .filter(|((s, kind, _), _)| *s == setup && kinds.contains(kind))
            .map(|(_, &v)| v)
            .sum();
        let total: f64 = per_k.keys().map(|&k| trials(k, kinds.len())).sum();
        100.0 * n as f64 / total
    };
    let both = PromptKind::EACH;
    let ks: Vec<usize> = per_k.keys().copied().collect();
    let mut lines = Vec::new();
    for setup in Setup::FINETUNED {
        let by_k: Vec<String> = ks.iter().map(|&k| format!("k={k} {:.0}%", rate(setup, &both, k))).collect();
        lines.push(format!(
            "{setup}: {} (naive {:.1}% / informed {:.1}%)",
            by_k.join(" "),
            overall(setup, &[PromptKind::Naive]),
            overall(setup, &[PromptKind::Informed])
        ));
    }
    let monotone = ks.windows(2).all(|w| rate(Setup::Full, &both, w[0]) <= rate(Setup::Full, &both, w[1]));
    let dp_below = overall(Setup::Dp, &both) <= overall(Setup::Full, &both);
    let eps_mean = eps.iter().sum::<f64>() / eps.len().max(1) as f64;
    let detail = format!(
        "{} seeds x {SAMPLES} samples per cell; {}; dp ε = {eps_mean:.1}",
        SEEDS.len(),
        lines.join("; ")
    );
    if monotone && dp_below {
        Ok(detail)
    } else {
        Err(format!("(a) non-decreasing in k: {monotone}, (b) dp <= full: {dp_below}; {detail}"))
    }
}
