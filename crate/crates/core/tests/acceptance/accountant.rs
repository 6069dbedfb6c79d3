use entmem::dp::RdpAccountant;

use super::Outcome;

const QS: [f64; 4] = [0.001, 0.005, 0.01, 0.05];
const SIGMAS: [f64; 4] = [0.5, 1.0, 2.0, 4.0];
const TS: [u64; 3] = [100, 1000, 10_000];
const DELTA: f64 = 1e-5;
const TOL: f64 = 0.02;

fn logaddexp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// log E_{z ~ N(0, σ²)} [(1 - q + q·N(1, σ²)(z) / N(0, σ²)(z))^α], by direct
/// quadrature on a fine grid with log-sum-exp accumulation.
fn log_moment(q: f64, sigma: f64, alpha: f64) -> f64 {
    let s2 = sigma * sigma;
    let lo = -40.0 * sigma - 1.0;
    let hi = alpha.max(1.0) + 40.0 * sigma + 1.0;
    let h = sigma / 200.0;
    let n = ((hi - lo) / h).ceil() as usize;
    let log_norm = -(sigma * (2.0 * std::f64::consts::PI).sqrt()).ln();
    let (lq, l1q) = (q.ln(), (1.0 - q).ln());
    let mut terms = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let z = lo + i as f64 * h;
        let ratio = logaddexp(l1q, lq + (2.0 * z - 1.0) / (2.0 * s2));
        terms.push(log_norm - z * z / (2.0 * s2) + alpha * ratio);
    }
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + (terms.iter().map(|t| (t - m).exp()).sum::<f64>() * h).ln()
}

fn oracle_epsilon(orders: &[f64], per_step: &[f64], t: u64) -> f64 {
    orders
        .iter()
        .zip(per_step)
        .map(|(&a, &r)| t as f64 * r + (1.0 / DELTA).ln() / (a - 1.0))
        .fold(f64::INFINITY, f64::min)
}

pub fn check() -> Outcome {
    let orders = RdpAccountant::with_default_orders().orders().to_vec();
    let mut worst = (0.0, String::new());
    let mut failures = Vec::new();
    for q in QS {
        for sigma in SIGMAS {
            let per_step: Vec<f64> = orders
                .iter()
                .map(|&a| (log_moment(q, sigma, a) / (a - 1.0)).max(0.0))
                .collect();
            for t in TS {
                let mut acc = RdpAccountant::with_default_orders();
                acc.compose(q, sigma, t).map_err(|e| e.to_string())?;
                let got = acc.epsilon(DELTA).map_err(|e| e.to_string())?;
                let want = oracle_epsilon(&orders, &per_step, t);
                let rel = (got - want).abs() / want;
                let case = format!("q={q} σ={sigma} T={t}: {got:.5} vs oracle {want:.5}");
                if rel > worst.0 {
                    worst = (rel, case.clone());
                }
                if rel > TOL {
                    failures.push(case);
                }
            }
        }
    }
    let n = QS.len() * SIGMAS.len() * TS.len();
    if failures.is_empty() {
        Ok(format!("{n} grid points; worst relative gap {:.2e} at {}", worst.0, worst.1))
    } else {
        Err(format!("{} of {n} outside 2%: {}", failures.len(), failures.join("; ")))
    }
}
