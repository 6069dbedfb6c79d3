//! Forward evaluation and hand-derived backpropagation.
//!
//! Everything here works on one sequence at a time (microbatch of one);
//! batch gradients are index-ordered sums over examples.

use ndarray::{s, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use super::{FreezeMask, GradientBundle, Layer, Parameters, LN_EPS};
use crate::error::{Error, Result};
use crate::rng;
use crate::tokenizer::{TokenId, CLS, PAD};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Mlm,
    Classify,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Target {
    /// Masked positions and the original ids to predict there.
    Mlm { positions: Vec<usize>, labels: Vec<TokenId> },
    Class(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub ids: Vec<TokenId>,
    pub target: Target,
}

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[inline]
fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + erf(x / SQRT_2))
}

#[inline]
fn gelu_grad(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / SQRT_2)) + x * INV_SQRT_2PI * (-0.5 * x * x).exp()
}

struct LnCache {
    xhat: Array2<f64>,
    rstd: Vec<f64>,
}

fn layer_norm(x: &Array2<f64>, g: &Array2<f64>, b: &Array2<f64>) -> (Array2<f64>, LnCache) {
    let n = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut rstd = Vec::with_capacity(x.nrows());
    for mut row in xhat.rows_mut() {
        let mean = row.sum() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let r = 1.0 / (var + LN_EPS).sqrt();
        row.mapv_inplace(|v| (v - mean) * r);
        rstd.push(r);
    }
    let y = &xhat * g + b;
    (y, LnCache { xhat, rstd })
}

fn layer_norm_infer(x: &Array2<f64>, g: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    layer_norm(x, g, b).0
}

/// Returns dx and accumulates dg, db.
fn layer_norm_backward(
    dy: &Array2<f64>,
    cache: &LnCache,
    g: &Array2<f64>,
    dg: &mut Array2<f64>,
    db: &mut Array2<f64>,
) -> Array2<f64> {
    *dg += &(dy * &cache.xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
    *db += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
    let dxhat = dy * g;
    let n = dy.ncols() as f64;
    let mut dx = Array2::zeros(dy.raw_dim());
    for (i, mut row) in dx.rows_mut().into_iter().enumerate() {
        let dh = dxhat.row(i);
        let xh = cache.xhat.row(i);
        let sum_dh = dh.sum();
        let sum_dh_xh = dh.iter().zip(xh.iter()).map(|(a, b)| a * b).sum::<f64>();
        let r = cache.rstd[i] / n;
        for j in 0..row.len() {
            row[j] = r * (n * dh[j] - sum_dh - xh[j] * sum_dh_xh);
        }
    }
    dx
}

fn softmax_rows(a: &mut Array2<f64>) {
    for mut row in a.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            row.fill(0.0);
            continue;
        }
        let mut sum = 0.0;
        row.mapv_inplace(|v| {
            let e = (v - max).exp();
            sum += e;
            e
        });
        row.mapv_inplace(|v| v / sum);
    }
}

fn add_row(m: &mut Array2<f64>, b: &Array2<f64>) {
    *m += b;
}

fn validate_ids(params: &Parameters, ids: &[TokenId]) -> Result<()> {
    let cfg = &params.config;
    if ids.len() > cfg.max_seq {
        return Err(Error::SequenceTooLong {
            len: ids.len(),
            max: cfg.max_seq,
        });
    }
    if let Some((pos, _)) = ids.iter().enumerate().find(|(_, &id)| id as usize >= cfg.vocab_size) {
        return Err(Error::IndexOutOfRange {
            index: ids[pos] as usize,
            len: cfg.vocab_size,
        });
    }
    if !ids.iter().any(|&id| id != PAD) {
        return Err(Error::config("sequence has no non-padding tokens"));
    }
    Ok(())
}

fn embed(params: &Parameters, ids: &[TokenId]) -> Array2<f64> {
    let d = params.config.d_model;
    let mut x = Array2::zeros((ids.len(), d));
    for (t, &id) in ids.iter().enumerate() {
        let mut row = x.row_mut(t);
        row.assign(&params.tok_emb.row(id as usize));
        row += &params.pos_emb.row(t);
    }
    x
}

/// Dropout multipliers for one attention head: 0 or 1/(1-p).
fn attention_keep(seed: u64, layer: usize, head: usize, len: usize, p: f64) -> Array2<f64> {
    let scale = 1.0 / (1.0 - p);
    let mut keep = Array2::zeros((len, len));
    for i in 0..len {
        let row_key = rng::key(&[seed, rng::label("attn-dropout"), layer as u64, head as u64, i as u64]);
        for j in 0..len {
            if rng::uniform(row_key ^ (j as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)) >= p {
                keep[[i, j]] = scale;
            }
        }
    }
    keep
}

fn classifier_keep(seed: u64, d: usize, p: f64) -> Array2<f64> {
    let scale = 1.0 / (1.0 - p);
    Array2::from_shape_fn((1, d), |(_, j)| {
        if rng::uniform(rng::key(&[seed, rng::label("cls-dropout"), j as u64])) >= p {
            scale
        } else {
            0.0
        }
    })
}

/// One encoder block evaluated only at `rows` (all rows when `None`). Keys and
/// values always cover the whole sequence.
fn layer_infer(layer: &Layer, heads: usize, x: &Array2<f64>, valid: &[bool], rows: Option<&[usize]>) -> Array2<f64> {
    let d = x.ncols();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let xq = match rows {
        Some(r) => x.select(Axis(0), r),
        None => x.clone(),
    };
    let mut q = xq.dot(&layer.wq);
    add_row(&mut q, &layer.bq);
    let mut k = x.dot(&layer.wk);
    add_row(&mut k, &layer.bk);
    let mut v = x.dot(&layer.wv);
    add_row(&mut v, &layer.bv);
    let mut ctx = Array2::zeros((xq.nrows(), d));
    for h in 0..heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let mut sc = q.slice(cols).dot(&k.slice(cols).t()) * scale;
        mask_columns(&mut sc, valid);
        softmax_rows(&mut sc);
        ctx.slice_mut(cols).assign(&sc.dot(&v.slice(cols)));
    }
    let mut a = ctx.dot(&layer.wo);
    add_row(&mut a, &layer.bo);
    let h1 = layer_norm_infer(&(xq + a), &layer.ln1_g, &layer.ln1_b);
    let mut pre = h1.dot(&layer.w1);
    add_row(&mut pre, &layer.b1);
    pre.mapv_inplace(gelu);
    let mut f = pre.dot(&layer.w2);
    add_row(&mut f, &layer.b2);
    layer_norm_infer(&(h1 + f), &layer.ln2_g, &layer.ln2_b)
}

fn mask_columns(sc: &mut Array2<f64>, valid: &[bool]) {
    for (j, &ok) in valid.iter().enumerate() {
        if !ok {
            sc.column_mut(j).fill(f64::NEG_INFINITY);
        }
    }
}

/// Final hidden states at `rows`, inference mode.
fn hidden_at(params: &Parameters, ids: &[TokenId], rows: &[usize]) -> Array2<f64> {
    let valid: Vec<bool> = ids.iter().map(|&id| id != PAD).collect();
    let heads = params.config.n_heads;
    let mut x = embed(params, ids);
    let n = params.layers.len();
    for (l, layer) in params.layers.iter().enumerate() {
        if l + 1 == n {
            return layer_infer(layer, heads, &x, &valid, Some(rows));
        }
        x = layer_infer(layer, heads, &x, &valid, None);
    }
    x.select(Axis(0), rows)
}

fn mlm_head_infer(params: &Parameters, h: &Array2<f64>) -> Array2<f64> {
    let m = &params.mlm;
    let mut z = h.dot(&m.dense_w);
    add_row(&mut z, &m.dense_b);
    z.mapv_inplace(gelu);
    let n = layer_norm_infer(&z, &m.ln_g, &m.ln_b);
    let mut logits = n.dot(&params.tok_emb.t());
    add_row(&mut logits, &m.out_b);
    logits
}

/// MLM logits (rows = `positions`, columns = vocab), inference mode.
pub fn mlm_logits(params: &Parameters, ids: &[TokenId], positions: &[usize]) -> Result<Array2<f64>> {
    validate_ids(params, ids)?;
    if let Some(&bad) = positions.iter().find(|&&p| p >= ids.len()) {
        return Err(Error::IndexOutOfRange {
            index: bad,
            len: ids.len(),
        });
    }
    let h = hidden_at(params, ids, positions);
    Ok(mlm_head_infer(params, &h))
}

/// Probability distributions over the vocabulary at each masked position.
pub fn forward_mlm(params: &Parameters, ids: &[TokenId], mask_positions: &[usize]) -> Result<Vec<Vec<f64>>> {
    let mut logits = mlm_logits(params, ids, mask_positions)?;
    softmax_rows(&mut logits);
    Ok(logits.rows().into_iter().map(|r| r.to_vec()).collect())
}

pub fn classify_logits(params: &Parameters, ids: &[TokenId]) -> Result<Array2<f64>> {
    validate_ids(params, ids)?;
    if ids.first() != Some(&CLS) {
        return Err(Error::MissingCls);
    }
    let cls = params
        .cls
        .as_ref()
        .ok_or_else(|| Error::config("parameters carry no classifier head"))?;
    let h = hidden_at(params, ids, &[0]);
    let mut logits = h.dot(&cls.w);
    add_row(&mut logits, &cls.b);
    Ok(logits)
}

/// Class distribution from the CLS position representation.
pub fn forward_classify(params: &Parameters, ids: &[TokenId]) -> Result<Vec<f64>> {
    let mut logits = classify_logits(params, ids)?;
    softmax_rows(&mut logits);
    Ok(logits.row(0).to_vec())
}

struct LayerCache {
    x: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    keep: Option<Vec<Array2<f64>>>,
    ctx: Array2<f64>,
    ln1: LnCache,
    h1: Array2<f64>,
    pre: Array2<f64>,
    act: Array2<f64>,
    ln2: LnCache,
}

struct Dropout {
    seed: u64,
    attn: f64,
    classifier: f64,
}

fn layer_train(layer: &Layer, l: usize, heads: usize, x: Array2<f64>, valid: &[bool], dropout: Option<&Dropout>) -> (Array2<f64>, LayerCache) {
    let (len, d) = x.dim();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut q = x.dot(&layer.wq);
    add_row(&mut q, &layer.bq);
    let mut k = x.dot(&layer.wk);
    add_row(&mut k, &layer.bk);
    let mut v = x.dot(&layer.wv);
    add_row(&mut v, &layer.bv);
    let mut ctx = Array2::zeros((len, d));
    let mut probs = Vec::with_capacity(heads);
    let mut keeps = dropout.filter(|dr| dr.attn > 0.0).map(|_| Vec::with_capacity(heads));
    for h in 0..heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let mut p = q.slice(cols).dot(&k.slice(cols).t()) * scale;
        mask_columns(&mut p, valid);
        softmax_rows(&mut p);
        let out = match (&mut keeps, dropout) {
            (Some(ks), Some(dr)) => {
                let keep = attention_keep(dr.seed, l, h, len, dr.attn);
                let out = (&p * &keep).dot(&v.slice(cols));
                ks.push(keep);
                out
            }
            _ => p.dot(&v.slice(cols)),
        };
        ctx.slice_mut(cols).assign(&out);
        probs.push(p);
    }
    let mut a = ctx.dot(&layer.wo);
    add_row(&mut a, &layer.bo);
    let (h1, ln1) = layer_norm(&(&x + &a), &layer.ln1_g, &layer.ln1_b);
    let mut pre = h1.dot(&layer.w1);
    add_row(&mut pre, &layer.b1);
    let act = pre.mapv(gelu);
    let mut f = act.dot(&layer.w2);
    add_row(&mut f, &layer.b2);
    let (out, ln2) = layer_norm(&(&h1 + &f), &layer.ln2_g, &layer.ln2_b);
    let cache = LayerCache {
        x,
        q,
        k,
        v,
        probs,
        keep: keeps,
        ctx,
        ln1,
        h1,
        pre,
        act,
        ln2,
    };
    (out, cache)
}

fn sum_rows(m: &Array2<f64>) -> Array2<f64> {
    m.sum_axis(Axis(0)).insert_axis(Axis(0))
}

fn acc_matmul_tn(acc: &mut Array2<f64>, a: ArrayView2<f64>, b: ArrayView2<f64>) {
    ndarray::linalg::general_mat_mul(1.0, &a.t(), &b, 1.0, acc);
}

/// Accumulates parameter gradients of one block into `g` and returns the
/// gradient with respect to the block input (when requested).
fn layer_backward(layer: &Layer, g: &mut Layer, c: &LayerCache, heads: usize, dout: &Array2<f64>, need_dx: bool) -> Option<Array2<f64>> {
    let d = c.x.ncols();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();

    let r2 = layer_norm_backward(dout, &c.ln2, &layer.ln2_g, &mut g.ln2_g, &mut g.ln2_b);
    acc_matmul_tn(&mut g.w2, c.act.view(), r2.view());
    g.b2 += &sum_rows(&r2);
    let mut dpre = r2.dot(&layer.w2.t());
    ndarray::Zip::from(&mut dpre).and(&c.pre).for_each(|dp, &p| *dp *= gelu_grad(p));
    acc_matmul_tn(&mut g.w1, c.h1.view(), dpre.view());
    g.b1 += &sum_rows(&dpre);
    let dh1 = &r2 + &dpre.dot(&layer.w1.t());

    let r1 = layer_norm_backward(&dh1, &c.ln1, &layer.ln1_g, &mut g.ln1_g, &mut g.ln1_b);
    acc_matmul_tn(&mut g.wo, c.ctx.view(), r1.view());
    g.bo += &sum_rows(&r1);
    let dctx = r1.dot(&layer.wo.t());

    let mut dq = Array2::zeros(c.q.raw_dim());
    let mut dk = Array2::zeros(c.k.raw_dim());
    let mut dv = Array2::zeros(c.v.raw_dim());
    for h in 0..heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let p = &c.probs[h];
        let dctx_h = dctx.slice(cols);
        let (pd, mut dp) = match &c.keep {
            Some(keep) => {
                let pd = p * &keep[h];
                let dp = dctx_h.dot(&c.v.slice(cols).t()) * &keep[h];
                (pd, dp)
            }
            None => (p.clone(), dctx_h.dot(&c.v.slice(cols).t())),
        };
        dv.slice_mut(cols).assign(&pd.t().dot(&dctx_h));
        // softmax backward: dS = P * (dP - rowsum(dP * P))
        for (mut drow, prow) in dp.rows_mut().into_iter().zip(p.rows()) {
            let dot: f64 = drow.iter().zip(prow.iter()).map(|(a, b)| a * b).sum();
            for (dv_, &pv) in drow.iter_mut().zip(prow.iter()) {
                *dv_ = pv * (*dv_ - dot) * scale;
            }
        }
        dq.slice_mut(cols).assign(&dp.dot(&c.k.slice(cols)));
        dk.slice_mut(cols).assign(&dp.t().dot(&c.q.slice(cols)));
    }
    acc_matmul_tn(&mut g.wq, c.x.view(), dq.view());
    acc_matmul_tn(&mut g.wk, c.x.view(), dk.view());
    acc_matmul_tn(&mut g.wv, c.x.view(), dv.view());
    g.bq += &sum_rows(&dq);
    g.bk += &sum_rows(&dk);
    g.bv += &sum_rows(&dv);
    if !need_dx {
        return None;
    }
    let mut dx = r1;
    ndarray::linalg::general_mat_mul(1.0, &dq, &layer.wq.t(), 1.0, &mut dx);
    ndarray::linalg::general_mat_mul(1.0, &dk, &layer.wk.t(), 1.0, &mut dx);
    ndarray::linalg::general_mat_mul(1.0, &dv, &layer.wv.t(), 1.0, &mut dx);
    Some(dx)
}

fn check_target(params: &Parameters, ex: &Example, objective: Objective) -> Result<()> {
    match (&ex.target, objective) {
        (Target::Mlm { positions, labels }, Objective::Mlm) => {
            if positions.is_empty() || positions.len() != labels.len() {
                return Err(Error::config("MLM example needs matching, non-empty positions and labels"));
            }
            if let Some(&bad) = positions.iter().find(|&&p| p >= ex.ids.len()) {
                return Err(Error::IndexOutOfRange {
                    index: bad,
                    len: ex.ids.len(),
                });
            }
            if let Some(&bad) = labels.iter().find(|&&t| t as usize >= params.config.vocab_size) {
                return Err(Error::IndexOutOfRange {
                    index: bad as usize,
                    len: params.config.vocab_size,
                });
            }
            Ok(())
        }
        (Target::Class(c), Objective::Classify) => {
            if ex.ids.first() != Some(&CLS) {
                return Err(Error::MissingCls);
            }
            let n = params.n_classes();
            if n == 0 {
                return Err(Error::config("parameters carry no classifier head"));
            }
            if *c >= n {
                return Err(Error::IndexOutOfRange { index: *c, len: n });
            }
            Ok(())
        }
        _ => Err(Error::config("example target does not match the objective")),
    }
}

/// Forward + backward for one example; gradients are added into `grads`.
fn accumulate_example(
    params: &Parameters,
    ex: &Example,
    objective: Objective,
    mask: &FreezeMask,
    dropout_seed: Option<u64>,
    weight: f64,
    grads: &mut Parameters,
) -> Result<f64> {
    validate_ids(params, &ex.ids)?;
    check_target(params, ex, objective)?;
    let cfg = &params.config;
    let heads = cfg.n_heads;
    let dropout = dropout_seed.map(|seed| Dropout {
        seed,
        attn: cfg.dropout_attn,
        classifier: cfg.dropout_classifier,
    });
    let valid: Vec<bool> = ex.ids.iter().map(|&id| id != PAD).collect();
    let n_layers = params.layers.len();
    let lowest = mask.lowest_trainable_layer(n_layers);
    let embeddings = mask.embeddings_trainable();

    let mut x = embed(params, &ex.ids);
    let mut caches = Vec::with_capacity(n_layers);
    for (l, layer) in params.layers.iter().enumerate() {
        if l < lowest && !embeddings {
            // Frozen block: no cache needed, but dropout still applies in training mode.
            x = match dropout.as_ref().filter(|dr| dr.attn > 0.0) {
                Some(dr) => layer_train(layer, l, heads, x, &valid, Some(dr)).0,
                None => layer_infer(layer, heads, &x, &valid, None),
            };
            continue;
        }
        let (out, cache) = layer_train(layer, l, heads, x, &valid, dropout.as_ref());
        x = out;
        caches.push((l, cache));
    }
    let len = ex.ids.len();
    let d = cfg.d_model;
    let mut dx_final = Array2::<f64>::zeros((len, d));
    let loss;
    match &ex.target {
        Target::Mlm { positions, labels } => {
            let m = &params.mlm;
            let h = x.select(Axis(0), positions);
            let mut z = h.dot(&m.dense_w);
            add_row(&mut z, &m.dense_b);
            let a = z.mapv(gelu);
            let (nrm, ln) = layer_norm(&a, &m.ln_g, &m.ln_b);
            let mut logits = nrm.dot(&params.tok_emb.t());
            add_row(&mut logits, &m.out_b);
            let count = positions.len() as f64;
            let mut total = 0.0;
            let mut probs = logits;
            for (mut row, &t) in probs.rows_mut().into_iter().zip(labels) {
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                total += lse - row[t as usize];
                row.mapv_inplace(|v| (v - lse).exp());
                row[t as usize] -= 1.0;
            }
            loss = total / count;
            let dlogits = probs * (weight / count);
            let gm = &mut grads.mlm;
            if mask.is_trainable("mlm.output.bias") {
                gm.out_b += &sum_rows(&dlogits);
            }
            if mask.is_trainable(super::TOKEN_EMBEDDINGS) {
                acc_matmul_tn(&mut grads.tok_emb, dlogits.view(), nrm.view());
            }
            let dn = dlogits.dot(&params.tok_emb);
            let gm = &mut grads.mlm;
            let da = layer_norm_backward(&dn, &ln, &m.ln_g, &mut gm.ln_g, &mut gm.ln_b);
            let dz = da * &z.mapv(gelu_grad);
            acc_matmul_tn(&mut gm.dense_w, h.view(), dz.view());
            gm.dense_b += &sum_rows(&dz);
            let dh = dz.dot(&m.dense_w.t());
            for (r, &p) in positions.iter().enumerate() {
                let mut row = dx_final.row_mut(p);
                row += &dh.row(r);
            }
        }
        Target::Class(label) => {
            let cls = params.cls.as_ref().expect("checked");
            let mut c = x.slice(s![0..1, ..]).to_owned();
            let keep = dropout
                .as_ref()
                .filter(|dr| dr.classifier > 0.0)
                .map(|dr| classifier_keep(dr.seed, d, dr.classifier));
            if let Some(k) = &keep {
                c *= k;
            }
            let mut logits = c.dot(&cls.w);
            add_row(&mut logits, &cls.b);
            let mut row = logits.row_mut(0);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss = lse - row[*label];
            row.mapv_inplace(|v| (v - lse).exp());
            row[*label] -= 1.0;
            let dlogits = logits * weight;
            let gc = grads.cls.as_mut().ok_or_else(|| Error::config("gradient container lacks classifier"))?;
            acc_matmul_tn(&mut gc.w, c.view(), dlogits.view());
            gc.b += &dlogits;
            let mut dc = dlogits.dot(&cls.w.t());
            if let Some(k) = &keep {
                dc *= k;
            }
            dx_final.row_mut(0).assign(&dc.row(0));
        }
    }

    let mut dout = dx_final;
    for (l, cache) in caches.iter().rev() {
        let need_dx = *l > lowest || embeddings;
        match layer_backward(&params.layers[*l], &mut grads.layers[*l], cache, heads, &dout, need_dx) {
            Some(dx) => dout = dx,
            None => break,
        }
    }
    if embeddings && !caches.is_empty() {
        for (t, &id) in ex.ids.iter().enumerate() {
            if mask.is_trainable(super::TOKEN_EMBEDDINGS) {
                let mut row = grads.tok_emb.row_mut(id as usize);
                row += &dout.row(t);
            }
            if mask.is_trainable(super::POSITION_EMBEDDINGS) {
                let mut row = grads.pos_emb.row_mut(t);
                row += &dout.row(t);
            }
        }
    }
    Ok(loss)
}

fn example_seed(dropout_seed: Option<u64>, index: usize) -> Option<u64> {
    dropout_seed.map(|s| rng::key(&[s, rng::label("example"), index as u64]))
}

/// Mean cross-entropy over the batch and its gradient restricted to the
/// trainable groups. `dropout_seed = None` disables dropout.
pub fn loss_and_grad(
    params: &Parameters,
    batch: &[Example],
    objective: Objective,
    freeze: &FreezeMask,
    dropout_seed: Option<u64>,
) -> Result<(f64, GradientBundle)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut grads = params.zeros_like();
    let w = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for (i, ex) in batch.iter().enumerate() {
        loss += accumulate_example(params, ex, objective, freeze, example_seed(dropout_seed, i), w, &mut grads)?;
    }
    Ok((loss * w, grads.to_bundle(freeze)))
}

fn single(
    params: &Parameters,
    ex: &Example,
    objective: Objective,
    freeze: &FreezeMask,
    seed: Option<u64>,
) -> Result<(f64, GradientBundle)> {
    let mut grads = params.zeros_like();
    let loss = accumulate_example(params, ex, objective, freeze, seed, 1.0, &mut grads)?;
    Ok((loss, grads.to_bundle(freeze)))
}

/// One (loss, gradient) pair per example, in batch order. Example `i` sees the
/// same dropout noise as it does inside [`loss_and_grad`].
pub fn per_example_grads(
    params: &Parameters,
    batch: &[Example],
    objective: Objective,
    freeze: &FreezeMask,
    dropout_seed: Option<u64>,
) -> Result<Vec<(f64, GradientBundle)>> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        batch
            .par_iter()
            .enumerate()
            .map(|(i, ex)| single(params, ex, objective, freeze, example_seed(dropout_seed, i)))
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        batch
            .iter()
            .enumerate()
            .map(|(i, ex)| single(params, ex, objective, freeze, example_seed(dropout_seed, i)))
            .collect()
    }
}
