use std::collections::BTreeMap;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use entmem::dp::{clip, ClipMode};
use entmem::model::GradientBundle;

use super::Outcome;

const C: f64 = 10.0;
const N: usize = 10_000;

fn random_bundle(r: &mut ChaCha8Rng) -> GradientBundle {
    let groups = r.random_range(1..6);
    // Magnitudes from far below to far above the threshold.
    let scale = 10f64.powf(r.random_range(-3.0..4.0));
    let mut map = BTreeMap::new();
    for g in 0..groups {
        let (rows, cols) = (r.random_range(1..8), r.random_range(1..8));
        let t = Array2::from_shape_simple_fn((rows, cols), || scale * r.sample::<f64, _>(StandardNormal));
        map.insert(format!("g{g}"), t);
    }
    GradientBundle(map)
}

fn norm(t: &Array2<f64>) -> f64 {
    t.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn check() -> Outcome {
    let mut r = ChaCha8Rng::seed_from_u64(2);
    let (mut worst_global, mut worst_layer) = (0f64, 0f64);
    let mut clipped = 0;
    for i in 0..N {
        let b = random_bundle(&mut r);
        let g = clip(&b, C, ClipMode::Global).map_err(|e| e.to_string())?;
        let n = g.norm();
        if n > C + 1e-12 {
            return Err(format!("bundle {i}: global norm {n}"));
        }
        if b.norm() <= C && g != b {
            return Err(format!("bundle {i}: within-threshold bundle was modified"));
        }
        if b.norm() > C {
            clipped += 1;
        }
        worst_global = worst_global.max(n);

        let p = clip(&b, C, ClipMode::PerLayer).map_err(|e| e.to_string())?;
        for (name, t) in p.iter() {
            let n = norm(t);
            if n > C + 1e-12 {
                return Err(format!("bundle {i}: group {name} norm {n}"));
            }
            worst_layer = worst_layer.max(n);
        }
    }
    Ok(format!(
        "{N} bundles ({clipped} above threshold); max norm global {worst_global:.15}, per-layer {worst_layer:.15}"
    ))
}
