use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::audit::{AuditReport, EntitySet};
use crate::error::{Error, Result};
use crate::generator::PromptKind;
use crate::training::Setup;

/// Metadata key holding the hash of the entity sets a report was scored on.
pub const SETS_HASH_KEY: &str = "entity_sets_hash";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonCell {
    pub setup: Setup,
    pub prompt_kind: PromptKind,
    pub percent: Option<f64>,
    /// Difference to the reference column, in percentage points.
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub set: EntitySet,
    pub group: String,
    pub cells: Vec<ComparisonCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimCheck {
    pub claim: String,
    pub set: EntitySet,
    pub detail: String,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    /// The column deltas are taken against.
    pub reference: (Setup, PromptKind),
    pub rows: Vec<ComparisonRow>,
    pub claims: Vec<ClaimCheck>,
}

fn overall(r: &AuditReport, set: EntitySet) -> f64 {
    r.row(set, "ALL").and_then(|row| row.ratio).unwrap_or(0.0) * 100.0
}

/// Side-by-side extraction rates with deltas against the first report (or the
/// base setup when present), and pass/fail checks of the directional claims:
/// naive prompting extracts at least as much as informed prompting, DP
/// extracts no more than the non-private setups, and the base model is within
/// `base_band` percentage points of full fine-tuning.
pub fn compare_report(reports: &[AuditReport], base_band: f64) -> Result<Comparison> {
    if reports.len() < 2 {
        return Err(Error::config("comparison needs at least two reports"));
    }
    let hashes: Vec<Option<&String>> = reports.iter().map(|r| r.metadata.get(SETS_HASH_KEY)).collect();
    if hashes.iter().any(|h| *h != hashes[0]) {
        return Err(Error::Gazetteer("reports were scored against different entity sets".into()));
    }
    let reference = reports.iter().find(|r| r.setup == Setup::Base).unwrap_or(&reports[0]);
    let mut rows = Vec::new();
    for row in &reference.rows {
        let base = row.percent;
        let cells = reports
            .iter()
            .map(|r| {
                let percent = r.row(row.set, &row.group).and_then(|x| x.percent);
                ComparisonCell {
                    setup: r.setup,
                    prompt_kind: r.prompt_kind,
                    percent,
                    delta: percent.zip(base).map(|(a, b)| ((a - b) * 10.0).round() / 10.0),
                }
            })
            .collect();
        rows.push(ComparisonRow {
            set: row.set,
            group: row.group.clone(),
            cells,
        });
    }

    let find = |s: Setup, k: PromptKind| reports.iter().find(|r| r.setup == s && r.prompt_kind == k);
    let mut setups: Vec<Setup> = reports.iter().map(|r| r.setup).collect();
    setups.sort();
    setups.dedup();
    let mut claims = Vec::new();
    for set in EntitySet::EACH {
        for &s in &setups {
            if let (Some(n), Some(i)) = (find(s, PromptKind::Naive), find(s, PromptKind::Informed)) {
                let (a, b) = (overall(n, set), overall(i, set));
                claims.push(ClaimCheck {
                    claim: format!("naive >= informed ({s})"),
                    set,
                    detail: format!("{a:.1}% vs {b:.1}%"),
                    pass: a >= b,
                });
            }
        }
        for kind in PromptKind::EACH {
            let Some(dp) = find(Setup::Dp, kind) else { continue };
            for other in [Setup::Full, Setup::Partial] {
                if let Some(o) = find(other, kind) {
                    let (a, b) = (overall(dp, set), overall(o, set));
                    claims.push(ClaimCheck {
                        claim: format!("dp <= {other} ({kind})"),
                        set,
                        detail: format!("{a:.1}% vs {b:.1}%"),
                        pass: a <= b,
                    });
                }
            }
        }
        for kind in PromptKind::EACH {
            if let (Some(b), Some(f)) = (find(Setup::Base, kind), find(Setup::Full, kind)) {
                let (a, c) = (overall(b, set), overall(f, set));
                claims.push(ClaimCheck {
                    claim: format!("base ~ full within {base_band} points ({kind})"),
                    set,
                    detail: format!("{a:.1}% vs {c:.1}%"),
                    pass: (a - c).abs() <= base_band,
                });
            }
        }
    }
    Ok(Comparison {
        reference: (reference.setup, reference.prompt_kind),
        rows,
        claims,
    })
}

/// Canary extraction for one (setup, prompt kind, k).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanaryRate {
    pub setup: Setup,
    pub prompt_kind: PromptKind,
    pub k: usize,
    pub extracted: usize,
    pub size: usize,
    pub percent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacySummary {
    pub epsilon: Option<f64>,
    pub delta: f64,
    pub noise_multiplier: f64,
    pub clip_norm: f64,
    pub sampling_rate: f64,
    pub steps: u64,
}

/// Everything the report stage emits as JSON. Contains no timings, so
/// identical configs give identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config_hash: String,
    pub stage_hashes: BTreeMap<String, String>,
    pub entity_set_sizes: BTreeMap<String, usize>,
    pub reports: Vec<AuditReport>,
    pub comparison: Option<Comparison>,
    pub canaries: Vec<CanaryRate>,
    pub privacy: BTreeMap<String, PrivacySummary>,
    pub metrics: BTreeMap<String, BTreeMap<String, f64>>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audit::RateRow;

    fn report(setup: Setup, kind: PromptKind, extracted: usize) -> AuditReport {
        let rows = EntitySet::EACH
            .iter()
            .map(|&set| RateRow {
                set,
                group: "ALL".into(),
                extracted,
                size: 10,
                ratio: Some(extracted as f64 / 10.0),
                percent: Some(extracted as f64 * 10.0),
            })
            .collect();
        AuditReport {
            setup,
            prompt_kind: kind,
            n_samples: 5,
            rows,
            metadata: BTreeMap::new(),
        }
    }

    #[test]
    fn identical_reports_have_zero_deltas() {
        let r = report(Setup::Full, PromptKind::Naive, 3);
        let c = compare_report(&[r.clone(), r], 5.0).unwrap();
        assert!(c.rows.iter().flat_map(|r| &r.cells).all(|c| c.delta == Some(0.0)));
    }

    #[test]
    fn dp_reduction_flag() {
        let c = compare_report(
            &[report(Setup::Full, PromptKind::Naive, 4), report(Setup::Dp, PromptKind::Naive, 0)],
            5.0,
        )
        .unwrap();
        let flags: Vec<&ClaimCheck> = c.claims.iter().filter(|c| c.claim.starts_with("dp <= full")).collect();
        assert_eq!(flags.len(), 3);
        assert!(flags.iter().all(|f| f.pass));
    }

    #[test]
    fn mismatched_sets_rejected() {
        let a = report(Setup::Full, PromptKind::Naive, 1);
        let mut b = a.clone();
        b.metadata.insert(SETS_HASH_KEY.into(), "other".into());
        assert!(compare_report(&[a.clone(), b], 5.0).is_err());
        assert!(compare_report(&[a], 5.0).is_err());
    }
}
