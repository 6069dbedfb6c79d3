use entmem::dp::{opacus_orders, Conversion, RdpAccountant};

use super::Outcome;

const REPORTED: f64 = 9.79;

pub fn check() -> Outcome {
    let (q, sigma, steps, delta) = (32.0 / 6000.0, 0.5, 1880, 1.0 / 6000.0);
    let mut acc = RdpAccountant::with_default_orders();
    acc.compose(q, sigma, steps).map_err(|e| e.to_string())?;
    let eps = acc.epsilon(delta).map_err(|e| e.to_string())?;

    let mut alt = RdpAccountant::new(opacus_orders()).map_err(|e| e.to_string())?;
    alt.compose(q, sigma, steps).map_err(|e| e.to_string())?;
    let (tight, _) = alt.epsilon_with(delta, Conversion::Balle).map_err(|e| e.to_string())?;

    let gap = (eps - REPORTED) / REPORTED;
    let detail = format!(
        "ε = {eps:.3} with the default accountant ({:+.1}% from {REPORTED}); tighter conversion on the finer grid gives {tight:.3}",
        100.0 * gap
    );
    if gap.abs() <= 0.20 {
        Ok(detail)
    } else {
        Err(detail)
    }
}
