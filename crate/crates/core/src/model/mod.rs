//! A small BERT-style encoder with an MLM head and a classification head.
//!
//! Post-layer-norm blocks, GELU feed-forward, learned positions, and an MLM
//! output projection tied to the token embeddings. Gradients are derived by
//! hand for this fixed architecture; see [`encoder`].

mod checkpoint;
pub mod encoder;

use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub use encoder::{
    classify_logits, forward_classify, forward_mlm, loss_and_grad, mlm_logits, per_example_grads, Example, Objective,
    Target,
};

pub const INIT_STD: f64 = 0.02;
pub const LN_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    #[serde(default = "default_max_seq")]
    pub max_seq: usize,
    pub vocab_size: usize,
    #[serde(default = "default_dropout_attn")]
    pub dropout_attn: f64,
    #[serde(default = "default_dropout_classifier")]
    pub dropout_classifier: f64,
}

fn default_max_seq() -> usize {
    256
}
fn default_dropout_attn() -> f64 {
    0.1
}
fn default_dropout_classifier() -> f64 {
    0.3
}

impl ModelConfig {
    pub fn new(n_layers: usize, n_heads: usize, d_model: usize, d_ff: usize, vocab_size: usize) -> Self {
        Self {
            n_layers,
            n_heads,
            d_model,
            d_ff,
            max_seq: default_max_seq(),
            vocab_size,
            dropout_attn: default_dropout_attn(),
            dropout_classifier: default_dropout_classifier(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_model", self.d_model),
            ("d_ff", self.d_ff),
            ("vocab_size", self.vocab_size),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::config("d_model must be divisible by n_heads"));
        }
        if self.max_seq < 2 {
            return Err(Error::config("max_seq must be at least 2"));
        }
        for (name, p) in [("dropout_attn", self.dropout_attn), ("dropout_classifier", self.dropout_classifier)] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::config(format!("{name} must be in [0, 1)")));
            }
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub wq: Array2<f64>,
    pub bq: Array2<f64>,
    pub wk: Array2<f64>,
    pub bk: Array2<f64>,
    pub wv: Array2<f64>,
    pub bv: Array2<f64>,
    pub wo: Array2<f64>,
    pub bo: Array2<f64>,
    pub ln1_g: Array2<f64>,
    pub ln1_b: Array2<f64>,
    pub w1: Array2<f64>,
    pub b1: Array2<f64>,
    pub w2: Array2<f64>,
    pub b2: Array2<f64>,
    pub ln2_g: Array2<f64>,
    pub ln2_b: Array2<f64>,
}

const LAYER_FIELDS: [&str; 16] = [
    "attn.query.weight",
    "attn.query.bias",
    "attn.key.weight",
    "attn.key.bias",
    "attn.value.weight",
    "attn.value.bias",
    "attn.output.weight",
    "attn.output.bias",
    "ln1.gain",
    "ln1.bias",
    "ffn.in.weight",
    "ffn.in.bias",
    "ffn.out.weight",
    "ffn.out.bias",
    "ln2.gain",
    "ln2.bias",
];

impl Layer {
    fn fields(&self) -> [&Array2<f64>; 16] {
        [
            &self.wq, &self.bq, &self.wk, &self.bk, &self.wv, &self.bv, &self.wo, &self.bo, &self.ln1_g,
            &self.ln1_b, &self.w1, &self.b1, &self.w2, &self.b2, &self.ln2_g, &self.ln2_b,
        ]
    }

    fn fields_mut(&mut self) -> [&mut Array2<f64>; 16] {
        [
            &mut self.wq,
            &mut self.bq,
            &mut self.wk,
            &mut self.bk,
            &mut self.wv,
            &mut self.bv,
            &mut self.wo,
            &mut self.bo,
            &mut self.ln1_g,
            &mut self.ln1_b,
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.ln2_g,
            &mut self.ln2_b,
        ]
    }

    fn zeros(d: usize, ff: usize) -> Self {
        let z = Array2::zeros;
        Self {
            wq: z((d, d)),
            bq: z((1, d)),
            wk: z((d, d)),
            bk: z((1, d)),
            wv: z((d, d)),
            bv: z((1, d)),
            wo: z((d, d)),
            bo: z((1, d)),
            ln1_g: z((1, d)),
            ln1_b: z((1, d)),
            w1: z((d, ff)),
            b1: z((1, ff)),
            w2: z((ff, d)),
            b2: z((1, d)),
            ln2_g: z((1, d)),
            ln2_b: z((1, d)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlmHead {
    pub dense_w: Array2<f64>,
    pub dense_b: Array2<f64>,
    pub ln_g: Array2<f64>,
    pub ln_b: Array2<f64>,
    /// Output bias; the output weight is the token embedding matrix.
    pub out_b: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    pub w: Array2<f64>,
    pub b: Array2<f64>,
}

/// Which head a fine-tuning run trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    Mlm,
    Classifier,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub config: ModelConfig,
    pub tok_emb: Array2<f64>,
    pub pos_emb: Array2<f64>,
    pub layers: Vec<Layer>,
    pub mlm: MlmHead,
    pub cls: Option<ClassifierHead>,
}

pub const TOKEN_EMBEDDINGS: &str = "embeddings.token";
pub const POSITION_EMBEDDINGS: &str = "embeddings.position";
const MLM_FIELDS: [&str; 5] = ["mlm.dense.weight", "mlm.dense.bias", "mlm.ln.gain", "mlm.ln.bias", "mlm.output.bias"];
const CLS_FIELDS: [&str; 2] = ["classifier.weight", "classifier.bias"];

impl Parameters {
    /// All-zero parameters (layer-norm gains included).
    pub fn zeros(config: &ModelConfig) -> Self {
        let (d, ff, v) = (config.d_model, config.d_ff, config.vocab_size);
        Self {
            config: config.clone(),
            tok_emb: Array2::zeros((v, d)),
            pos_emb: Array2::zeros((config.max_seq, d)),
            layers: (0..config.n_layers).map(|_| Layer::zeros(d, ff)).collect(),
            mlm: MlmHead {
                dense_w: Array2::zeros((d, d)),
                dense_b: Array2::zeros((1, d)),
                ln_g: Array2::zeros((1, d)),
                ln_b: Array2::zeros((1, d)),
                out_b: Array2::zeros((1, v)),
            },
            cls: None,
        }
    }

    /// Seeded initialization: N(0, 0.02) weights, zero biases, unit layer-norm gains.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut p = Self::zeros(config);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let names = p.group_names();
        for (name, t) in names.iter().zip(p.tensors_mut()) {
            if name.ends_with(".gain") {
                t.fill(1.0);
            } else if name.ends_with(".weight") || name.starts_with("embeddings.") {
                let mut r = rng::stream(&[seed, rng::label("init"), rng::label(name)]);
                t.mapv_inplace(|_| normal.sample(&mut r));
            }
        }
        Ok(p)
    }

    /// Replaces the classifier head with a freshly initialized one.
    pub fn with_classifier(mut self, n_classes: usize, seed: u64) -> Result<Self> {
        if n_classes == 0 {
            return Err(Error::config("classifier needs at least one class"));
        }
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let mut r = rng::stream(&[seed, rng::label("init"), rng::label(CLS_FIELDS[0])]);
        let w = Array2::from_shape_fn((self.config.d_model, n_classes), |_| normal.sample(&mut r));
        self.cls = Some(ClassifierHead {
            w,
            b: Array2::zeros((1, n_classes)),
        });
        Ok(self)
    }

    pub fn without_classifier(mut self) -> Self {
        self.cls = None;
        self
    }

    pub fn n_classes(&self) -> usize {
        self.cls.as_ref().map_or(0, |c| c.w.ncols())
    }

    /// Stable, layer-qualified group names in storage order.
    pub fn group_names(&self) -> Vec<String> {
        let mut names = vec![TOKEN_EMBEDDINGS.to_string(), POSITION_EMBEDDINGS.to_string()];
        for l in 0..self.layers.len() {
            names.extend(LAYER_FIELDS.iter().map(|f| format!("layer.{l}.{f}")));
        }
        names.extend(MLM_FIELDS.iter().map(|s| s.to_string()));
        if self.cls.is_some() {
            names.extend(CLS_FIELDS.iter().map(|s| s.to_string()));
        }
        names
    }

    pub fn tensors(&self) -> Vec<&Array2<f64>> {
        let mut out = vec![&self.tok_emb, &self.pos_emb];
        for layer in &self.layers {
            out.extend(layer.fields());
        }
        let m = &self.mlm;
        out.extend([&m.dense_w, &m.dense_b, &m.ln_g, &m.ln_b, &m.out_b]);
        if let Some(c) = &self.cls {
            out.extend([&c.w, &c.b]);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out = vec![&mut self.tok_emb, &mut self.pos_emb];
        for layer in &mut self.layers {
            out.extend(layer.fields_mut());
        }
        let m = &mut self.mlm;
        out.extend([&mut m.dense_w, &mut m.dense_b, &mut m.ln_g, &mut m.ln_b, &mut m.out_b]);
        if let Some(c) = &mut self.cls {
            out.extend([&mut c.w, &mut c.b]);
        }
        out
    }

    pub fn named(&self) -> Vec<(String, &Array2<f64>)> {
        self.group_names().into_iter().zip(self.tensors()).collect()
    }

    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.named().into_iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Array2<f64>> {
        let idx = self.group_names().iter().position(|n| n == name)?;
        self.tensors_mut().into_iter().nth(idx)
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Keeps only the groups `mask` marks trainable.
    pub fn to_bundle(&self, mask: &FreezeMask) -> GradientBundle {
        GradientBundle(
            self.named()
                .into_iter()
                .filter(|(n, _)| mask.is_trainable(n))
                .map(|(n, t)| (n, t.clone()))
                .collect(),
        )
    }
}

/// The set of trainable parameter groups.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreezeMask(BTreeSet<String>);

impl FreezeMask {
    /// Every group is trainable.
    pub fn full(params: &Parameters) -> Self {
        Self(params.group_names().into_iter().collect())
    }

    /// Last encoder layer plus the active head; everything else frozen.
    pub fn partial(params: &Parameters, head: Head) -> Self {
        let last = format!("layer.{}.", params.layers.len() - 1);
        let head_prefix = match head {
            Head::Mlm => "mlm.",
            Head::Classifier => "classifier.",
        };
        Self(
            params
                .group_names()
                .into_iter()
                .filter(|n| n.starts_with(&last) || n.starts_with(head_prefix))
                .collect(),
        )
    }

    pub fn from_names<I: IntoIterator<Item = String>>(names: I) -> Self {
        Self(names.into_iter().collect())
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        self.0.contains(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Lowest encoder layer holding a trainable group, `n_layers` if none.
    pub(crate) fn lowest_trainable_layer(&self, n_layers: usize) -> usize {
        (0..n_layers)
            .find(|l| {
                let prefix = format!("layer.{l}.");
                self.0.iter().any(|n| n.starts_with(&prefix))
            })
            .unwrap_or(n_layers)
    }

    pub(crate) fn embeddings_trainable(&self) -> bool {
        self.is_trainable(TOKEN_EMBEDDINGS) || self.is_trainable(POSITION_EMBEDDINGS)
    }
}

/// Gradients keyed by parameter-group name.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GradientBundle(pub BTreeMap<String, Array2<f64>>);

impl GradientBundle {
    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.0.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Array2<f64>)> {
        self.0.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Array2<f64>)> {
        self.0.iter_mut()
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn zeros_like(&self) -> Self {
        Self(self.0.iter().map(|(k, v)| (k.clone(), Array2::zeros(v.raw_dim()))).collect())
    }

    /// L2 norm over the concatenation of all groups.
    pub fn norm(&self) -> f64 {
        self.0.values().map(|t| t.iter().map(|x| x * x).sum::<f64>()).sum::<f64>().sqrt()
    }

    pub fn group_norm(&self, name: &str) -> Option<f64> {
        self.0.get(name).map(|t| t.iter().map(|x| x * x).sum::<f64>().sqrt())
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.0.values_mut() {
            t.mapv_inplace(|x| x * s);
        }
    }

    /// Elementwise `self += other`; both must carry the same keys and shapes.
    pub fn add_assign(&mut self, other: &GradientBundle) -> Result<()> {
        if self.0.len() != other.0.len() {
            return Err(Error::config("gradient bundles carry different groups"));
        }
        for (name, t) in &mut self.0 {
            let o = other.0.get(name).ok_or_else(|| Error::config(format!("missing group {name}")))?;
            if o.dim() != t.dim() {
                return Err(Error::ShapeMismatch {
                    name: name.clone(),
                    expected: t.dim(),
                    actual: o.dim(),
                });
            }
            *t += o;
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.0.values().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Largest absolute elementwise difference; infinite when keys differ.
    pub fn max_abs_diff(&self, other: &GradientBundle) -> f64 {
        if self.0.len() != other.0.len() {
            return f64::INFINITY;
        }
        let mut worst: f64 = 0.0;
        for (name, t) in &self.0 {
            let Some(o) = other.0.get(name) else { return f64::INFINITY };
            if o.dim() != t.dim() {
                return f64::INFINITY;
            }
            for (a, b) in t.iter().zip(o.iter()) {
                worst = worst.max((a - b).abs());
            }
        }
        worst
    }

    /// Mean of a non-empty list, summed in index order.
    pub fn mean(bundles: &[GradientBundle]) -> Result<GradientBundle> {
        let first = bundles.first().ok_or(Error::EmptyBatch)?;
        let mut acc = first.clone();
        for b in &bundles[1..] {
            acc.add_assign(b)?;
        }
        acc.scale(1.0 / bundles.len() as f64);
        Ok(acc)
    }
}
