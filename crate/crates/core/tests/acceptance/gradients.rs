use entmem::model::{loss_and_grad, Example, FreezeMask, ModelConfig, Objective, Parameters, Target};

use super::Outcome;

const H: f64 = 1e-5;
/// Gradients below this magnitude are compared absolutely.
const FLOOR: f64 = 1e-6;
const TOL: f64 = 1e-4;

fn model() -> Parameters {
    let cfg = ModelConfig {
        max_seq: 12,
        dropout_attn: 0.0,
        dropout_classifier: 0.0,
        ..ModelConfig::new(2, 2, 16, 32, 50)
    };
    Parameters::init(&cfg, 11).unwrap()
}

fn batch(objective: Objective) -> Vec<Example> {
    match objective {
        Objective::Mlm => vec![
            Example {
                ids: vec![7, 4, 12, 33, 4, 9],
                target: Target::Mlm { positions: vec![1, 4], labels: vec![20, 41] },
            },
            Example {
                ids: vec![15, 16, 4, 8, 0, 0],
                target: Target::Mlm { positions: vec![2, 3], labels: vec![30, 8] },
            },
            Example {
                ids: vec![49, 4, 5, 6, 7, 8, 9, 10, 11],
                target: Target::Mlm { positions: vec![1], labels: vec![44] },
            },
        ],
        Objective::Classify => vec![
            Example { ids: vec![2, 10, 11, 12, 13], target: Target::Class(0) },
            Example { ids: vec![2, 30, 31, 0, 0], target: Target::Class(2) },
            Example { ids: vec![2, 44, 45, 46, 47, 48, 49], target: Target::Class(1) },
        ],
    }
}

fn rel(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FLOOR)
}

/// Central differences over every coordinate of every group.
fn worst(params: &Parameters, objective: Objective) -> Vec<(String, f64)> {
    let data = batch(objective);
    let mask = FreezeMask::full(params);
    let (_, grads) = loss_and_grad(params, &data, objective, &mask, None).unwrap();
    let mut p = params.clone();
    let mut out = Vec::new();
    for (name, g) in grads.iter() {
        let mut worst: f64 = 0.0;
        for idx in 0..g.len() {
            let (r, c) = (idx / g.ncols(), idx % g.ncols());
            let orig = p.get(name).unwrap()[[r, c]];
            p.get_mut(name).unwrap()[[r, c]] = orig + H;
            let up = loss_and_grad(&p, &data, objective, &mask, None).unwrap().0;
            p.get_mut(name).unwrap()[[r, c]] = orig - H;
            let down = loss_and_grad(&p, &data, objective, &mask, None).unwrap().0;
            p.get_mut(name).unwrap()[[r, c]] = orig;
            worst = worst.max(rel(g[[r, c]], (up - down) / (2.0 * H)));
        }
        out.push((name.clone(), worst));
    }
    out
}

pub fn check() -> Outcome {
    let base = model();
    let mut summary = Vec::new();
    for (objective, params) in [
        (Objective::Mlm, base.clone()),
        (Objective::Classify, base.with_classifier(3, 5).unwrap()),
    ] {
        let groups = worst(&params, objective);
        let (name, err) = groups.iter().cloned().fold((String::new(), 0.0), |a, b| if b.1 > a.1 { b } else { a });
        if err >= TOL {
            return Err(format!("{objective:?}: group {name} relative error {err:.2e}"));
        }
        summary.push(format!("{objective:?} max rel err {err:.1e} over {} groups", groups.len()));
    }
    Ok(summary.join("; "))
}
