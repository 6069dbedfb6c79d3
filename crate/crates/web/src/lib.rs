//! Browser demo: privacy budget curves, the nucleus filter, and the entity
//! scanner, each behind one exported function returning JSON.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use entmem::audit::MatchIndex;
use entmem::dp::RdpAccountant;
use entmem::generator::nucleus_filter;
use entmem::text::match_form;

#[derive(Serialize)]
struct CurvePoint {
    steps: u64,
    epsilon: f64,
}

/// ε at `delta` after 0..=`steps` steps, sampled at `points` evenly spaced
/// step counts.
pub fn epsilon_points(q: f64, sigma: f64, steps: u64, delta: f64, points: u32) -> Result<String, String> {
    if points < 2 {
        return Err("need at least two points".into());
    }
    let mut acc = RdpAccountant::with_default_orders();
    let mut done = 0;
    let mut out = Vec::with_capacity(points as usize);
    for i in 0..points {
        let at = steps * u64::from(i) / u64::from(points - 1);
        acc.compose(q, sigma, at - done).map_err(|e| e.to_string())?;
        done = at;
        out.push(CurvePoint {
            steps: at,
            epsilon: acc.epsilon(delta).map_err(|e| e.to_string())?,
        });
    }
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct Candidate {
    id: usize,
    logit: f64,
    prob: f64,
    pooled: bool,
    kept: bool,
}

/// Temperature softmax, top-`pool` cut and nucleus filter over
/// comma-separated logits.
pub fn nucleus_table(logits: &str, temperature: f64, pool: usize, p: f64) -> Result<String, String> {
    let logits: Vec<f64> = logits
        .split([',', ' ', '\n'])
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().parse::<f64>().map_err(|_| format!("not a number: {s:?}")))
        .collect::<Result<_, _>>()?;
    if logits.is_empty() {
        return Err("no logits".into());
    }
    if temperature.is_nan() || temperature <= 0.0 || p.is_nan() || p <= 0.0 || p > 1.0 || pool == 0 {
        return Err("temperature > 0, 0 < p <= 1 and pool >= 1 required".into());
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|l| ((l - max) / temperature).exp()).collect();
    let sum: f64 = exp.iter().sum();
    let probs: Vec<f64> = exp.iter().map(|e| e / sum).collect();

    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let pooled: Vec<usize> = order.iter().copied().take(pool).collect();
    let mass: f64 = pooled.iter().map(|&i| probs[i]).sum();
    let renorm: Vec<f64> = pooled.iter().map(|&i| probs[i] / mass).collect();
    let kept: Vec<usize> = nucleus_filter(&renorm, p).into_iter().map(|j| pooled[j]).collect();

    let rows: Vec<Candidate> = order
        .iter()
        .map(|&i| Candidate {
            id: i,
            logit: logits[i],
            prob: probs[i],
            pooled: pooled.contains(&i),
            kept: kept.contains(&i),
        })
        .collect();
    serde_json::to_string(&rows).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct Scan {
    text: String,
    matches: Vec<Hit>,
}

#[derive(Serialize)]
struct Hit {
    surface: String,
    start: usize,
    end: usize,
}

/// Word-bounded matches of the gazetteer surfaces (one per line, optional
/// tab-separated type ignored) in `body`. Offsets are UTF-16 positions in the
/// normalized text, ready for highlighting in the page.
pub fn scan_text(gazetteer: &str, body: &str) -> Result<String, String> {
    let mut surfaces: Vec<String> = gazetteer
        .lines()
        .map(|l| match_form(l.split('\t').next().unwrap_or("")))
        .filter(|s| !s.is_empty())
        .collect();
    surfaces.sort();
    surfaces.dedup();
    let text = match_form(body);
    let matches = if surfaces.is_empty() {
        Vec::new()
    } else {
        let index = MatchIndex::from_surfaces(&surfaces).map_err(|e| e.to_string())?;
        let utf16 = |byte: usize| text[..byte].encode_utf16().count();
        index
            .find_bounded(&text)
            .into_iter()
            .map(|(p, start)| Hit {
                surface: index.surface(p).to_string(),
                start: utf16(start),
                end: utf16(start + index.surface(p).len()),
            })
            .collect()
    };
    serde_json::to_string(&Scan { text, matches }).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn epsilon_curve(q: f64, sigma: f64, steps: u32, delta: f64, points: u32) -> Result<String, JsValue> {
    epsilon_points(q, sigma, u64::from(steps), delta, points).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn nucleus(logits: &str, temperature: f64, pool: usize, p: f64) -> Result<String, JsValue> {
    nucleus_table(logits, temperature, pool, p).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn scan(gazetteer: &str, body: &str) -> Result<String, JsValue> {
    scan_text(gazetteer, body).map_err(|e| JsValue::from_str(&e))
}
