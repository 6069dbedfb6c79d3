//! Differentially private gradient processing: per-example clipping, Gaussian
//! noise, and aggregation, plus an RDP accountant for the subsampled Gaussian
//! mechanism.

mod accountant;

use ndarray::Array2;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::GradientBundle;
use crate::rng;

pub use accountant::{
    default_orders, epsilon_from_rdp, log_a, opacus_orders, rdp_per_step, write_audit_log, Conversion, RdpAccountant,
    DEFAULT_ORDERS_NOTE,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipMode {
    /// One norm over the concatenation of every group.
    #[default]
    Global,
    /// Each parameter group clipped to the threshold on its own. The accountant
    /// is calibrated for global clipping only.
    PerLayer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpConfig {
    #[serde(default = "default_clip")]
    pub clip_norm: f64,
    pub noise_multiplier: f64,
    /// Defaults to the reciprocal of the training-set size when absent.
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default)]
    pub clip_mode: ClipMode,
}

fn default_clip() -> f64 {
    10.0
}

impl DpConfig {
    pub fn new(clip_norm: f64, noise_multiplier: f64) -> Self {
        Self {
            clip_norm,
            noise_multiplier,
            delta: None,
            clip_mode: ClipMode::Global,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return Err(Error::config("clip norm must be positive"));
        }
        if !(self.noise_multiplier >= 0.0 && self.noise_multiplier.is_finite()) {
            return Err(Error::config("noise multiplier must be finite and non-negative"));
        }
        if let Some(d) = self.delta {
            if !(d > 0.0 && d < 1.0) {
                return Err(Error::config("delta must lie in (0, 1)"));
            }
        }
        Ok(())
    }

    pub fn delta_for(&self, n_train: usize) -> f64 {
        self.delta.unwrap_or(1.0 / n_train.max(1) as f64)
    }
}

fn scale_for(norm: f64, c: f64) -> f64 {
    if norm > c {
        c / norm
    } else {
        1.0
    }
}

/// Scales the bundle so its norm (global mode) or every group norm (per-layer
/// mode) is at most `c`.
pub fn clip(bundle: &GradientBundle, c: f64, mode: ClipMode) -> Result<GradientBundle> {
    if c.is_nan() || c <= 0.0 {
        return Err(Error::config("clip norm must be positive"));
    }
    if let Some((name, _)) = bundle.iter().find(|(_, t)| t.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite(name.clone()));
    }
    let mut out = bundle.clone();
    match mode {
        ClipMode::Global => out.scale(scale_for(bundle.norm(), c)),
        ClipMode::PerLayer => {
            for (_, t) in out.iter_mut() {
                let norm = t.iter().map(|x| x * x).sum::<f64>().sqrt();
                let s = scale_for(norm, c);
                if s != 1.0 {
                    t.mapv_inplace(|x| x * s);
                }
            }
        }
    }
    Ok(out)
}

/// Gaussian noise with standard deviation `std`, keyed by (seed, step, group).
fn group_noise(seed: u64, step: u64, name: &str, shape: (usize, usize), std: f64) -> Array2<f64> {
    let mut r = rng::stream(&[seed, rng::label("dp-noise"), step, rng::label(name)]);
    Array2::from_shape_simple_fn(shape, || {
        let z: f64 = StandardNormal.sample(&mut r);
        z * std
    })
}

/// `(Σ clip(g_i) + N(0, σ²C²)) / n`, summed in index order. Noise is drawn
/// once per step and coordinate, keyed by `(seed, step, group)`.
pub fn privatize(per_example: &[GradientBundle], dp: &DpConfig, seed: u64, step: u64) -> Result<GradientBundle> {
    dp.validate()?;
    let first = per_example.first().ok_or(Error::EmptyBatch)?;
    let mut sum = first.zeros_like();
    for g in per_example {
        sum.add_assign(&clip(g, dp.clip_norm, dp.clip_mode)?)?;
    }
    if dp.noise_multiplier > 0.0 {
        let std = dp.noise_multiplier * dp.clip_norm;
        if !std.is_finite() {
            return Err(Error::config("noise scale is infinite; use a finite clip norm with noise"));
        }
        for (name, t) in sum.iter_mut() {
            *t += &group_noise(seed, step, name, t.dim(), std);
        }
    }
    sum.scale(1.0 / per_example.len() as f64);
    Ok(sum)
}
