use entmem::dp::{privatize, DpConfig};
use entmem::model::{loss_and_grad, per_example_grads, Example, FreezeMask, ModelConfig, Objective, Parameters, Target};
use entmem::synth::{synthesize, SynthConfig};
use entmem::tokenizer::train_on_texts;
use entmem::training::{adam_step, finetune, AdamState, Setup, TrainConfig};

use super::Outcome;

const STEPS: u64 = 10;
const TOL: f64 = 1e-10;

fn max_diff(a: &Parameters, b: &Parameters) -> f64 {
    a.named()
        .into_iter()
        .zip(b.named())
        .map(|((_, x), (_, y))| (x - y).iter().fold(0f64, |m, d| m.max(d.abs())))
        .fold(0.0, f64::max)
}

fn batch(step: u64) -> Vec<Example> {
    (0..4)
        .map(|i| {
            let ids: Vec<u32> = (0..9).map(|j| 5 + ((step * 7 + i * 13 + j * 3) % 40) as u32).collect();
            Example {
                target: Target::Mlm { positions: vec![1 + (i as usize % 5), 7], labels: vec![ids[1] + 1, ids[7]] },
                ids,
            }
        })
        .collect()
}

/// The optimizer loop on its own: plain mean gradient versus the private
/// aggregate with σ = 0 and an infinite clip threshold.
fn direct() -> Result<f64, String> {
    let cfg = ModelConfig { max_seq: 16, ..ModelConfig::new(2, 2, 16, 32, 50) };
    let start = Parameters::init(&cfg, 5).map_err(|e| e.to_string())?;
    let mask = FreezeMask::full(&start);
    let dp = DpConfig::new(f64::INFINITY, 0.0);
    let (mut plain, mut private) = (start.clone(), start.clone());
    let (mut a, mut b) = (AdamState::new(&start, &mask), AdamState::new(&start, &mask));
    let mut worst = 0f64;
    for step in 0..STEPS {
        let data = batch(step);
        let dropout = Some(1000 + step);
        let (_, g) = loss_and_grad(&plain, &data, Objective::Mlm, &mask, dropout).map_err(|e| e.to_string())?;
        adam_step(&mut a, &mut plain, &g, 1e-3).map_err(|e| e.to_string())?;
        let per = per_example_grads(&private, &data, Objective::Mlm, &mask, dropout).map_err(|e| e.to_string())?;
        let bundles: Vec<_> = per.into_iter().map(|(_, g)| g).collect();
        let g = privatize(&bundles, &dp, 9, step).map_err(|e| e.to_string())?;
        adam_step(&mut b, &mut private, &g, 1e-3).map_err(|e| e.to_string())?;
        worst = worst.max(max_diff(&plain, &private));
    }
    Ok(worst)
}

/// Through the fine-tuning entry point: the DP setup with σ = 0 and infinite
/// C against partial fine-tuning, which trains the same groups.
fn through_finetune() -> Result<f64, String> {
    let data = synthesize(&SynthConfig {
        n_docs: 320,
        n_pretrain_docs: 100,
        n_public_docs: 10,
        ..SynthConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let corpus = data.corpus(0.0, 1).map_err(|e| e.to_string())?;
    let tok = train_on_texts(data.pretrain.iter().map(|d| d.text.as_str()), 300).map_err(|e| e.to_string())?;
    let cfg = ModelConfig { max_seq: 48, ..ModelConfig::new(2, 2, 16, 32, 300) };
    let base = Parameters::init(&cfg, 3).map_err(|e| e.to_string())?;
    // 320 documents at batch 32 is exactly ten steps.
    let run = |setup: Setup, dp: Option<&DpConfig>| {
        let mut t = TrainConfig::new(setup, Objective::Mlm, 4);
        t.epochs = 1;
        t.learning_rate = 1e-3;
        finetune(&base, &corpus, &tok, &t, dp).map_err(|e| e.to_string())
    };
    let (p, log, _) = run(Setup::Partial, None)?;
    if log.steps.len() as u64 != STEPS {
        return Err(format!("expected {STEPS} steps, ran {}", log.steps.len()));
    }
    let (d, _, _) = run(Setup::Dp, Some(&DpConfig::new(f64::INFINITY, 0.0)))?;
    Ok(max_diff(&p, &d))
}

pub fn check() -> Outcome {
    let a = direct()?;
    let b = through_finetune()?;
    let detail = format!("max |Δθ| over {STEPS} steps: optimizer loop {a:.2e}, fine-tuning entry {b:.2e}");
    if a <= TOL && b <= TOL {
        Ok(detail)
    } else {
        Err(detail)
    }
}
