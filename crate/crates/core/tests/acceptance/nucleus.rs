use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use entmem::generator::nucleus_filter;

use super::Outcome;

const TRIALS: usize = 1000;

/// Shapes that stress ties, zeros and heavy heads.
fn random_distribution(r: &mut ChaCha8Rng) -> Vec<f64> {
    let n = r.random_range(1..=1000);
    let raw: Vec<f64> = match r.random_range(0..4) {
        0 => (0..n).map(|_| r.random::<f64>()).collect(),
        1 => (0..n).map(|_| r.random_range(0..4) as f64).collect(),
        2 => (0..n).map(|_| (-r.random_range(0.0..30.0f64)).exp()).collect(),
        _ => (0..n).map(|i| 1.0 / (i + 1) as f64).collect(),
    };
    let sum: f64 = raw.iter().sum();
    if sum == 0.0 {
        return vec![1.0 / n as f64; n];
    }
    raw.iter().map(|x| x / sum).collect()
}

fn random_p(r: &mut ChaCha8Rng, dist: &[f64]) -> f64 {
    match r.random_range(0..5) {
        // Exactly on a cumulative boundary.
        0 => {
            let mut v = dist.to_vec();
            v.sort_by(|a, b| b.total_cmp(a));
            let k = r.random_range(0..v.len());
            v[..=k].iter().sum::<f64>().min(1.0)
        }
        1 => 1.0,
        _ => r.random_range(1e-6..1.0),
    }
}

/// Tries every prefix length of the (probability desc, index asc) order and
/// keeps the first whose freshly summed mass strictly exceeds `p`.
fn oracle(dist: &[f64], p: f64) -> BTreeSet<usize> {
    let mut by_rank: BTreeMap<(Reverse<u64>, usize), f64> = BTreeMap::new();
    for (i, &x) in dist.iter().enumerate() {
        by_rank.insert((Reverse(x.to_bits()), i), x);
    }
    let order: Vec<(usize, f64)> = by_rank.iter().map(|(&(_, i), &x)| (i, x)).collect();
    if p >= 1.0 {
        let support: BTreeSet<usize> = order.iter().filter(|(_, x)| *x > 0.0).map(|(i, _)| *i).collect();
        return if support.is_empty() { order.iter().map(|(i, _)| *i).collect() } else { support };
    }
    for m in 1..=order.len() {
        let mass: f64 = order[..m].iter().map(|(_, x)| x).sum();
        if mass > p {
            return order[..m].iter().map(|(i, _)| *i).collect();
        }
    }
    order.iter().map(|(i, _)| *i).collect()
}

pub fn check() -> Outcome {
    let mut r = ChaCha8Rng::seed_from_u64(6);
    let mut sizes = 0usize;
    for trial in 0..TRIALS {
        let dist = random_distribution(&mut r);
        let p = random_p(&mut r, &dist);
        let got: BTreeSet<usize> = nucleus_filter(&dist, p).into_iter().collect();
        let want = oracle(&dist, p);
        if got != want {
            return Err(format!(
                "trial {trial}: vocab {} p {p}: got {} tokens, oracle {}",
                dist.len(),
                got.len(),
                want.len()
            ));
        }
        sizes += got.len();
    }
    Ok(format!("{TRIALS} distributions, exact set equality; mean nucleus size {:.1}", sizes as f64 / TRIALS as f64))
}
