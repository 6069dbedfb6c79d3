//! Rényi-DP accounting for the Poisson-subsampled Gaussian mechanism.
//!
//! The per-step RDP at order α is `log(A_α) / (α - 1)` where
//! `A_α = E_{z~N(0,σ²)}[((1-q) + q·exp((2z-1)/(2σ²)))^α]`, evaluated in closed
//! form (binomial expansion for integer α, the erfc series for fractional α).
//! Steps compose additively.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

pub const DEFAULT_ORDERS_NOTE: &str = "1.25, 1.5, 2, 3, ..., 64";

/// `{1.25, 1.5, 2, 3, ..., 64}`.
pub fn default_orders() -> Vec<f64> {
    let mut o = vec![1.25, 1.5];
    o.extend((2..=64).map(f64::from));
    o
}

/// The grid used by Opacus: `1.1, 1.2, ..., 10.9, 12, 13, ..., 63`.
pub fn opacus_orders() -> Vec<f64> {
    let mut o: Vec<f64> = (1..100).map(|x| 1.0 + f64::from(x) / 10.0).collect();
    o.extend((12..64).map(f64::from));
    o
}

/// RDP → (ε, δ) conversion rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Conversion {
    /// `min_α rdp(α) + log(1/δ)/(α-1)`.
    #[default]
    Classic,
    /// `min_α rdp(α) - (log δ + log α)/(α-1) + log((α-1)/α)`, the tighter rule
    /// used by current Opacus releases.
    Balle,
}

fn log_add(a: f64, b: f64) -> f64 {
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    (lo - hi).exp().ln_1p() + hi
}

fn log_sub(a: f64, b: f64) -> f64 {
    if b == f64::NEG_INFINITY {
        return a;
    }
    if a <= b {
        return f64::NEG_INFINITY;
    }
    let d = (a - b).exp_m1();
    if d.is_infinite() {
        return a;
    }
    d.ln() + b
}

/// `log(erfc(x))`, accurate far into the tail.
fn log_erfc(x: f64) -> f64 {
    if x < 20.0 {
        return erfc(x).ln();
    }
    // Asymptotic series: erfc(x) ≈ exp(-x²)/(x√π) · (1 - 1/(2x²) + 3/(4x⁴) - 15/(8x⁶))
    let x2 = x * x;
    let series = 1.0 - 0.5 / x2 + 0.75 / (x2 * x2) - 1.875 / (x2 * x2 * x2);
    -x2 - x.ln() - 0.5 * std::f64::consts::PI.ln() + series.ln()
}

fn log_a_int(q: f64, sigma: f64, alpha: u32) -> f64 {
    let mut acc = f64::NEG_INFINITY;
    let mut log_binom = 0.0_f64;
    let a = f64::from(alpha);
    for i in 0..=alpha {
        let fi = f64::from(i);
        if i > 0 {
            log_binom += ((a - fi + 1.0) / fi).ln();
        }
        let s = log_binom + fi * q.ln() + (a - fi) * (1.0 - q).ln() + (fi * fi - fi) / (2.0 * sigma * sigma);
        acc = log_add(acc, s);
    }
    acc
}

fn log_a_frac(q: f64, sigma: f64, alpha: f64) -> f64 {
    let mut log_a0 = f64::NEG_INFINITY;
    let mut log_a1 = f64::NEG_INFINITY;
    let z0 = sigma * sigma * (1.0 / q - 1.0).ln() + 0.5;
    let mut coef = 1.0_f64;
    let mut i = 0u32;
    loop {
        let fi = f64::from(i);
        if i > 0 {
            coef *= (alpha - fi + 1.0) / fi;
        }
        let log_coef = coef.abs().ln();
        let j = alpha - fi;
        let log_t0 = log_coef + fi * q.ln() + j * (1.0 - q).ln();
        let log_t1 = log_coef + j * q.ln() + fi * (1.0 - q).ln();
        let log_e0 = 0.5_f64.ln() + log_erfc((fi - z0) / (std::f64::consts::SQRT_2 * sigma));
        let log_e1 = 0.5_f64.ln() + log_erfc((z0 - j) / (std::f64::consts::SQRT_2 * sigma));
        let log_s0 = log_t0 + (fi * fi - fi) / (2.0 * sigma * sigma) + log_e0;
        let log_s1 = log_t1 + (j * j - j) / (2.0 * sigma * sigma) + log_e1;
        if coef > 0.0 {
            log_a0 = log_add(log_a0, log_s0);
            log_a1 = log_add(log_a1, log_s1);
        } else {
            log_a0 = log_sub(log_a0, log_s0);
            log_a1 = log_sub(log_a1, log_s1);
        }
        i += 1;
        if log_s0.max(log_s1) < -30.0 || i > 10_000 {
            break;
        }
    }
    log_add(log_a0, log_a1)
}

/// `log(A_α)` for the subsampled Gaussian with rate `q` and noise multiplier `sigma`.
pub fn log_a(q: f64, sigma: f64, alpha: f64) -> f64 {
    if alpha.fract() == 0.0 && alpha <= f64::from(u32::MAX) {
        log_a_int(q, sigma, alpha as u32)
    } else {
        log_a_frac(q, sigma, alpha)
    }
}

/// RDP of one step at order `alpha`.
pub fn rdp_per_step(q: f64, sigma: f64, alpha: f64) -> f64 {
    if q == 0.0 {
        return 0.0;
    }
    if sigma == 0.0 {
        return f64::INFINITY;
    }
    if q == 1.0 {
        return alpha / (2.0 * sigma * sigma);
    }
    (log_a(q, sigma, alpha) / (alpha - 1.0)).max(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Segment {
    q: f64,
    sigma: f64,
    steps: u64,
    per_step: Vec<f64>,
}

/// Accumulated RDP over a sequence of subsampled-Gaussian steps.
///
/// Steps with identical `(q, σ)` are stored as one segment, so composing `T`
/// steps at once and `T` single steps give the same value bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdpAccountant {
    orders: Vec<f64>,
    segments: Vec<Segment>,
}

impl RdpAccountant {
    pub fn new(orders: Vec<f64>) -> Result<Self> {
        if orders.is_empty() {
            return Err(Error::Accounting("order grid is empty".into()));
        }
        if orders.iter().any(|&a| !(a > 1.0 && a.is_finite())) {
            return Err(Error::Accounting("every order must be finite and greater than 1".into()));
        }
        Ok(Self {
            orders,
            segments: Vec::new(),
        })
    }

    pub fn with_default_orders() -> Self {
        Self::new(default_orders()).expect("default grid is valid")
    }

    pub fn orders(&self) -> &[f64] {
        &self.orders
    }

    pub fn steps(&self) -> u64 {
        self.segments.iter().map(|s| s.steps).sum()
    }

    /// Composes `n` steps at sampling rate `q` and noise multiplier `sigma`.
    pub fn compose(&mut self, q: f64, sigma: f64, n: u64) -> Result<()> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Accounting("noise multiplier must be positive; σ = 0 gives no privacy".into()));
        }
        if !(q > 0.0 && q <= 1.0) {
            return Err(Error::Accounting(format!("sampling rate {q} not in (0, 1]")));
        }
        if n == 0 {
            return Ok(());
        }
        if let Some(last) = self.segments.last_mut() {
            if last.q == q && last.sigma == sigma {
                last.steps += n;
                return Ok(());
            }
        }
        let per_step = self.orders.iter().map(|&a| rdp_per_step(q, sigma, a)).collect();
        self.segments.push(Segment { q, sigma, steps: n, per_step });
        Ok(())
    }

    /// One training step.
    pub fn step(&mut self, q: f64, sigma: f64) -> Result<()> {
        self.compose(q, sigma, 1)
    }

    /// Accumulated RDP at every order.
    pub fn rdp(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.orders.len()];
        for seg in &self.segments {
            for (o, p) in out.iter_mut().zip(&seg.per_step) {
                *o += seg.steps as f64 * p;
            }
        }
        out
    }

    pub fn epsilon(&self, delta: f64) -> Result<f64> {
        self.epsilon_with(delta, Conversion::Classic).map(|(e, _)| e)
    }

    /// ε at `delta` and the order attaining it.
    pub fn epsilon_with(&self, delta: f64, conversion: Conversion) -> Result<(f64, f64)> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::Accounting("delta must lie in (0, 1)".into()));
        }
        if self.steps() == 0 {
            return Ok((0.0, self.orders[0]));
        }
        epsilon_from_rdp(&self.orders, &self.rdp(), delta, conversion)
    }
}

/// Converts per-order RDP values into ε at `delta`.
pub fn epsilon_from_rdp(orders: &[f64], rdp: &[f64], delta: f64, conversion: Conversion) -> Result<(f64, f64)> {
    if orders.is_empty() || orders.len() != rdp.len() {
        return Err(Error::Accounting("order grid and RDP values disagree".into()));
    }
    let mut best = (f64::INFINITY, orders[0]);
    for (&a, &r) in orders.iter().zip(rdp) {
        let eps = match conversion {
            Conversion::Classic => r + (1.0 / delta).ln() / (a - 1.0),
            Conversion::Balle => r - (delta.ln() + a.ln()) / (a - 1.0) + ((a - 1.0) / a).ln(),
        };
        if eps < best.0 {
            best = (eps, a);
        }
    }
    Ok((best.0.max(0.0), best.1))
}

/// Writes an audit log with one row per step count in `checkpoints`:
/// `step, q, sigma, rdp_<order>..., epsilon`.
pub fn write_audit_log(path: &Path, orders: &[f64], rows: &[(u64, f64, f64, Vec<f64>, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["step".to_string(), "q".into(), "sigma".into()];
    header.extend(orders.iter().map(|a| format!("rdp_{a}")));
    header.push("epsilon".into());
    w.write_record(&header)?;
    for (step, q, sigma, rdp, eps) in rows {
        let mut rec = vec![step.to_string(), q.to_string(), sigma.to_string()];
        rec.extend(rdp.iter().map(|v| v.to_string()));
        rec.push(eps.to_string());
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::config(e.to_string()))?;
    let mut f = Vec::new();
    f.write_all(&bytes).expect("in-memory write");
    crate::corpus::write_file(path, &f)
}
