use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use entmem::audit::{build_entity_sets, EntityRecord, EntityType, GazetteerRow};
use entmem::corpus::{Corpus, Document, Split};
use entmem::text::match_form;

use super::oracle::{occurrences, phrase};
use super::Outcome;

const CASES: usize = 200;

struct Case {
    rows: Vec<GazetteerRow>,
    corpus: Corpus,
    pretrain: Vec<String>,
}

fn random_case(r: &mut ChaCha8Rng) -> Case {
    let rows = (0..r.random_range(1..15))
        .map(|_| GazetteerRow {
            surface: phrase(r, 2),
            entity_type: EntityType::SELECTED[r.random_range(0..7)].as_str().to_string(),
        })
        .collect();
    let n = r.random_range(1..12);
    let docs: Vec<Document> = (0..n)
        .map(|i| Document { id: format!("d{i}"), text: phrase(r, 12), label: None })
        .collect();
    let mut splits: Vec<Split> = (0..n).map(|_| if r.random_bool(0.7) { Split::Train } else { Split::Test }).collect();
    splits[0] = Split::Train;
    let pretrain = (0..r.random_range(0..5)).map(|_| phrase(r, 6)).collect();
    Case {
        rows,
        corpus: Corpus::with_splits(docs, splits).expect("valid corpus"),
        pretrain,
    }
}

/// Rebuilds the three sets by brute force.
fn reconstruct(case: &Case) -> (Vec<EntityRecord>, Vec<EntityRecord>, Vec<EntityRecord>) {
    let mut first: BTreeMap<String, EntityType> = BTreeMap::new();
    for row in &case.rows {
        let form = match_form(&row.surface);
        if form.chars().count() >= 4 && !first.contains_key(&form) {
            first.insert(form, row.entity_type.parse().expect("valid type"));
        }
    }
    let train: Vec<String> = case.corpus.train().map(|d| match_form(&d.text)).collect();
    let pre: Vec<String> = case.pretrain.iter().map(|t| match_form(t)).collect();
    let mut all = Vec::new();
    for (surface, ty) in first {
        let k: usize = train.iter().map(|t| occurrences(t, &surface).len()).sum();
        if k == 0 {
            continue;
        }
        let in_pretraining = pre.iter().any(|t| !occurrences(t, &surface).is_empty());
        all.push(EntityRecord { surface, entity_type: ty, k, in_pretraining });
    }
    let private: Vec<EntityRecord> = all.iter().filter(|e| !e.in_pretraining).cloned().collect();
    let one: Vec<EntityRecord> = private.iter().filter(|e| e.k == 1).cloned().collect();
    (all, private, one)
}

pub fn check() -> Outcome {
    let mut r = ChaCha8Rng::seed_from_u64(8);
    let mut totals = [0usize; 3];
    let mut errors = 0;
    for i in 0..CASES {
        let case = random_case(&mut r);
        let want = reconstruct(&case);
        match build_entity_sets(&case.rows, &case.corpus, case.pretrain.iter().map(String::as_str)) {
            Ok(got) => {
                if (got.all.clone(), got.private.clone(), got.private_1eidetic.clone()) != want {
                    return Err(format!("case {i}: sets differ from the reconstruction"));
                }
                if !got.private.iter().all(|e| got.all.contains(e))
                    || !got.private_1eidetic.iter().all(|e| got.private.contains(e))
                {
                    return Err(format!("case {i}: nesting violated"));
                }
                totals[0] += got.all.len();
                totals[1] += got.private.len();
                totals[2] += got.private_1eidetic.len();
            }
            // Only a gazetteer with no usable surface may be rejected.
            Err(e) => {
                let usable = case.rows.iter().any(|r| match_form(&r.surface).chars().count() >= 4);
                if usable {
                    return Err(format!("case {i}: unexpected error {e}"));
                }
                errors += 1;
            }
        }
    }
    Ok(format!(
        "{CASES} cases exact; totals all {} / private {} / 1-eidetic {} ({errors} rejected gazetteers)",
        totals[0], totals[1], totals[2]
    ))
}
