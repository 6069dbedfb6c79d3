use entmem::dp::DpConfig;
use entmem::model::Objective;
use entmem::training::{finetune, majority_baseline, Setup, TrainConfig};

use super::shared::base;
use super::Outcome;

const SEEDS: [u64; 5] = [11, 12, 13, 14, 15];
const EPOCHS: usize = 3;

fn learning_rate(setup: Setup) -> f64 {
    match setup {
        Setup::Dp => 3e-3,
        Setup::Partial => 3e-3,
        _ => 1e-3,
    }
}

pub fn check() -> Outcome {
    let b = base();
    let corpus = b.data.corpus(0.2, 20240917).map_err(|e| e.to_string())?;
    let baseline = 100.0 * majority_baseline(&corpus);
    let dp = DpConfig::new(10.0, 0.5);
    let mut means = Vec::new();
    let mut eps = None;
    for setup in Setup::FINETUNED {
        let mut accs = Vec::new();
        for seed in SEEDS {
            let mut t = TrainConfig::new(setup, Objective::Classify, seed);
            t.epochs = EPOCHS;
            t.learning_rate = learning_rate(setup);
            let (_, _, manifest) = finetune(&b.params, &corpus, &b.tok, &t, (setup == Setup::Dp).then_some(&dp))
                .map_err(|e| e.to_string())?;
            accs.push(100.0 * manifest.metrics["test_accuracy"]);
            if let Some(p) = manifest.privacy {
                eps = p.epsilon;
            }
        }
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        means.push((setup, mean, accs));
    }
    let full = means[0].1;
    let detail = format!(
        "majority {baseline:.1}%; {}; dp ε = {:.2}",
        means
            .iter()
            .map(|(s, m, a)| format!("{s} {m:.1}% {a:.1?}"))
            .collect::<Vec<_>>()
            .join(", "),
        eps.unwrap_or(f64::NAN)
    );
    let margin = full - baseline >= 15.0;
    let ordered = means[0].1 >= means[1].1 && means[1].1 >= means[2].1;
    if margin && ordered {
        Ok(detail)
    } else {
        Err(format!("margin {margin}, ordering {ordered}: {detail}"))
    }
}
