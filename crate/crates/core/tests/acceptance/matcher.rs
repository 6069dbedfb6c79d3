use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use entmem::audit::{scan, MatchIndex, MatchLogEntry};
use entmem::generator::{GeneratedSample, PromptKind};
use entmem::text::match_form;
use entmem::training::Setup;

use super::oracle::{occurrences, phrase};
use super::Outcome;

const CASES: usize = 1000;

fn sample(i: usize, body: String) -> GeneratedSample {
    GeneratedSample {
        id: format!("s{i}"),
        setup: Setup::Full,
        prompt_kind: PromptKind::Naive,
        prompt: String::new(),
        body,
        body_ids: Vec::new(),
        n_tokens: 0,
        seed: i as u64,
    }
}

pub fn check() -> Outcome {
    let mut r = ChaCha8Rng::seed_from_u64(9);
    let mut total = 0;
    for case in 0..CASES {
        let surfaces: BTreeSet<String> = (0..r.random_range(1..10))
            .map(|_| match_form(&phrase(&mut r, 2)))
            .filter(|s| !s.is_empty())
            .collect();
        let surfaces: Vec<String> = surfaces.into_iter().collect();
        if surfaces.is_empty() {
            continue;
        }
        let samples: Vec<GeneratedSample> = (0..r.random_range(1..6)).map(|i| sample(i, phrase(&mut r, 15))).collect();
        let index = MatchIndex::from_surfaces(&surfaces).map_err(|e| e.to_string())?;
        let got = scan(&index, &samples);

        let mut want = Vec::new();
        for s in &samples {
            let body = match_form(&s.body);
            let mut hits: Vec<(usize, usize)> = Vec::new();
            for (p, surface) in surfaces.iter().enumerate() {
                hits.extend(occurrences(&body, surface).into_iter().map(|o| (o, p)));
            }
            hits.sort();
            want.extend(hits.into_iter().map(|(offset, p)| MatchLogEntry {
                sample_id: s.id.clone(),
                surface: surfaces[p].clone(),
                entity_type: None,
                offset,
            }));
        }
        if got.log != want {
            return Err(format!("case {case}: {} matches, oracle {}", got.log.len(), want.len()));
        }
        let matched: BTreeSet<String> = want.iter().map(|e| e.surface.clone()).collect();
        if got.matched != matched {
            return Err(format!("case {case}: matched surface sets differ"));
        }
        total += want.len();
    }
    Ok(format!("{CASES} cases exact, {total} matches in all"))
}
