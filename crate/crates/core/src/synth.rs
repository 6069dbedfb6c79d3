//! Synthetic data: a labeled 4-class corpus with named entities, an unlabeled
//! pre-training corpus, an unrelated prompt corpus, a gazetteer and a canary
//! plan. Everything is lowercase and derived from one seed.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audit::{EntityType, GazetteerRow};
use crate::corpus::{write_file, CanaryEntry, CanaryPlan, Corpus, Document};
use crate::error::Result;
use crate::rng;

const CLASSES: [(&str, &[&str]); 4] = [
    (
        "sports",
        &[
            "match", "team", "goal", "coach", "season", "league", "score", "player", "stadium", "win", "referee",
            "tournament", "defense", "striker", "final", "training",
        ],
    ),
    (
        "finance",
        &[
            "market", "shares", "bank", "profit", "loan", "invest", "quarter", "budget", "revenue", "fund", "stock",
            "interest", "audit", "merger", "pension", "tax",
        ],
    ),
    (
        "weather",
        &[
            "rain", "storm", "wind", "forecast", "cloud", "sunny", "cold", "snow", "temperature", "humid", "thunder",
            "frost", "drizzle", "heatwave", "fog", "breeze",
        ],
    ),
    (
        "cooking",
        &[
            "recipe", "oven", "flour", "sauce", "bake", "garlic", "kitchen", "dinner", "spice", "butter", "onion",
            "roast", "dough", "pepper", "simmer", "lemon",
        ],
    ),
];

const ADJECTIVES: &[&str] = &[
    "good", "late", "early", "strong", "quiet", "busy", "short", "long", "great", "poor", "fine", "new",
];
const TIMES: &[&str] = &["today", "tomorrow", "this week", "next week", "last night", "on monday", "again"];
const ROLES: &[&str] = &["account manager", "coach", "doctor", "neighbor", "advisor", "landlord"];
const DOCS: &[&str] = &["report", "note", "update", "summary", "schedule"];
const VERBS: &[&str] = &["check", "review", "discuss", "plan", "move", "cancel", "share", "change"];
const SUBJECTS: &[&str] = &["we", "they", "the team", "our office", "everyone", "my family"];

const PUBLIC_WORDS: &[&str] = &[
    "history", "museum", "river", "village", "century", "language", "science", "music", "garden", "library",
    "painting", "journey", "mountain", "island", "railway", "festival", "bridge", "castle", "poetry", "ocean",
];
const ONSETS: &[&str] = &["b", "d", "f", "g", "h", "k", "l", "m", "n", "p", "r", "s", "t", "v", "w"];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u"];
const CODAS: &[&str] = &["", "", "n", "r", "l", "s", "th"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_docs: usize,
    pub n_pretrain_docs: usize,
    pub n_public_docs: usize,
    /// Entities per type in the gazetteer pool.
    pub entities_per_type: usize,
    /// Canary `k` values; `canaries_per_k` surfaces each.
    pub canary_ks: Vec<usize>,
    pub canaries_per_k: usize,
    pub sentences_per_doc: (usize, usize),
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_docs: 5000,
            n_pretrain_docs: 3000,
            n_public_docs: 500,
            entities_per_type: 40,
            canary_ks: vec![1, 10, 100],
            canaries_per_k: 5,
            sentences_per_doc: (2, 4),
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthData {
    /// Labeled documents; splitting is left to the caller.
    pub documents: Vec<Document>,
    pub pretrain: Vec<Document>,
    pub public: Vec<Document>,
    pub gazetteer: Vec<GazetteerRow>,
    pub canaries: CanaryPlan,
}

fn word(r: &mut ChaCha8Rng, onsets: &[&str], syllables: usize) -> String {
    let mut w = String::new();
    for i in 0..syllables {
        w.push_str(onsets.choose(r).expect("non-empty"));
        w.push_str(VOWELS.choose(r).expect("non-empty"));
        if i + 1 == syllables {
            w.push_str(CODAS.choose(r).expect("non-empty"));
        }
    }
    w
}

fn entity_surface(r: &mut ChaCha8Rng, ty: EntityType) -> String {
    match ty {
        EntityType::Person => format!("{} {}", word(r, ONSETS, 2), word(r, ONSETS, 3)),
        EntityType::Org => format!("{} {}", word(r, ONSETS, 2), ["corp", "group", "holdings", "partners"].choose(r).expect("non-empty")),
        EntityType::Gpe => word(r, ONSETS, 3),
        EntityType::Loc => format!("{} {}", word(r, ONSETS, 2), ["valley", "coast", "hills", "lake"].choose(r).expect("non-empty")),
        EntityType::Fac => format!("{} {}", word(r, ONSETS, 2), ["arena", "tower", "terminal", "hall"].choose(r).expect("non-empty")),
        EntityType::Money => format!("{} dollars", r.random_range(100..100_000)),
        _ => format!("{}", r.random_range(1000..1_000_000)),
    }
}

/// Pool of distinct entity surfaces, each with a type.
fn entity_pool(r: &mut ChaCha8Rng, per_type: usize) -> Vec<(String, EntityType)> {
    let mut seen = BTreeSet::new();
    let mut pool = Vec::new();
    for ty in EntityType::SELECTED {
        let mut made = 0;
        while made < per_type {
            let s = entity_surface(r, ty);
            if seen.insert(s.clone()) {
                pool.push((s, ty));
                made += 1;
            }
        }
    }
    pool
}

/// Zipf-like pick: low indices are much more frequent.
fn zipf_index(r: &mut ChaCha8Rng, n: usize) -> usize {
    let u: f64 = r.random();
    ((n as f64).powf(u) - 1.0).floor().clamp(0.0, (n - 1) as f64) as usize
}

/// Entities grouped by type for slot filling.
struct Slots<'a> {
    by_type: BTreeMap<EntityType, Vec<&'a str>>,
}

impl<'a> Slots<'a> {
    fn new(entities: &'a [(String, EntityType)]) -> Self {
        let mut by_type: BTreeMap<EntityType, Vec<&str>> = BTreeMap::new();
        for (s, t) in entities {
            by_type.entry(*t).or_default().push(s);
        }
        Self { by_type }
    }

    /// An entity of type `ty`, or `fallback` when there is none.
    fn pick(&self, r: &mut ChaCha8Rng, ty: EntityType, fallback: &'a str) -> &'a str {
        match self.by_type.get(&ty) {
            Some(v) if !v.is_empty() => v[zipf_index(r, v.len())],
            _ => fallback,
        }
    }
}

fn pick<'a>(r: &mut ChaCha8Rng, words: &[&'a str]) -> &'a str {
    words.choose(r).expect("non-empty")
}

fn sentence(r: &mut ChaCha8Rng, topic: &[&str], slots: &Slots) -> String {
    let t1 = pick(r, topic);
    let t2 = pick(r, topic);
    let adj = pick(r, ADJECTIVES);
    let time = pick(r, TIMES);
    match r.random_range(0..9) {
        0 => format!("the {t1} and the {t2} were {adj} {time}."),
        1 => format!("{} said the {t1} was {adj}.", slots.pick(r, EntityType::Person, "someone")),
        2 => format!(
            "please send the {t1} {} to {} {time}.",
            pick(r, DOCS),
            slots.pick(r, EntityType::Person, "the office")
        ),
        3 => format!("{} will {} the {t1} {time}.", pick(r, SUBJECTS), pick(r, VERBS)),
        4 => format!("my {} is {} {time}.", pick(r, ROLES), slots.pick(r, EntityType::Person, "away")),
        5 => {
            let place = if r.random_bool(0.5) {
                slots.pick(r, EntityType::Gpe, "town")
            } else {
                slots.pick(r, EntityType::Loc, "the north")
            };
            format!("the {t1} in {place} was {adj} {time}.")
        }
        6 => format!(
            "{} paid {} for the {t1}.",
            slots.pick(r, EntityType::Org, "the company"),
            slots.pick(r, EntityType::Money, "a lot")
        ),
        7 => format!(
            "there were {} {t1} visitors at {} {time}.",
            slots.pick(r, EntityType::Cardinal, "many"),
            slots.pick(r, EntityType::Fac, "the hall")
        ),
        _ => format!("{} the {t1} was {adj} and the {t2} was {}.", pick(r, TIMES), pick(r, ADJECTIVES)),
    }
}

fn document(r: &mut ChaCha8Rng, topic: &[&str], slots: &Slots, range: (usize, usize)) -> String {
    let n = r.random_range(range.0..=range.1);
    (0..n).map(|_| sentence(r, topic, slots)).collect::<Vec<_>>().join(" ")
}

pub fn synthesize(cfg: &SynthConfig) -> Result<SynthData> {
    let mut r = rng::stream(&[cfg.seed, rng::label("synth")]);
    let pool = entity_pool(&mut r, cfg.entities_per_type);
    // The first quarter of the pool is "public": it also appears in pre-training text.
    let public_entities: Vec<(String, EntityType)> = pool.iter().step_by(4).cloned().collect();

    let private_slots = Slots::new(&pool);
    let public_slots = Slots::new(&public_entities);
    let no_slots = Slots::new(&[]);
    let documents = (0..cfg.n_docs)
        .map(|i| {
            let (label, topic) = CLASSES[i % CLASSES.len()];
            Document {
                id: format!("doc{i:05}"),
                text: document(&mut r, topic, &private_slots, cfg.sentences_per_doc),
                label: Some(label.to_string()),
            }
        })
        .collect();
    let all_topic: Vec<&str> = CLASSES.iter().flat_map(|(_, w)| w.iter().copied()).collect();
    let pretrain = (0..cfg.n_pretrain_docs)
        .map(|i| Document {
            id: format!("pre{i:05}"),
            text: document(&mut r, &all_topic, &public_slots, cfg.sentences_per_doc),
            label: None,
        })
        .collect();
    let public = (0..cfg.n_public_docs)
        .map(|i| Document {
            id: format!("pub{i:05}"),
            text: document(&mut r, PUBLIC_WORDS, &no_slots, (3, 5)),
            label: None,
        })
        .collect();

    let mut gazetteer: Vec<GazetteerRow> = pool
        .iter()
        .map(|(s, t)| GazetteerRow {
            surface: s.clone(),
            entity_type: t.as_str().to_string(),
        })
        .collect();
    let mut used: BTreeSet<String> = pool.iter().flat_map(|p| p.0.split(' ').map(str::to_string)).collect();
    used.extend(
        CLASSES
            .iter()
            .flat_map(|(_, w)| w.iter())
            .chain(ADJECTIVES)
            .chain(PUBLIC_WORDS)
            .chain(TIMES)
            .chain(ROLES)
            .chain(DOCS)
            .chain(VERBS)
            .chain(SUBJECTS)
            .flat_map(|w| w.split(' '))
            .map(str::to_string),
    );
    let mut entries = Vec::new();
    let canary_types = [EntityType::Person, EntityType::Org, EntityType::Gpe, EntityType::Fac, EntityType::Loc];
    for &k in &cfg.canary_ks {
        let mut made = 0;
        while made < cfg.canaries_per_k {
            let s = word(&mut r, ONSETS, 2);
            if used.insert(s.clone()) {
                let ty = canary_types[made % canary_types.len()];
                gazetteer.push(GazetteerRow {
                    surface: s.clone(),
                    entity_type: ty.as_str().to_string(),
                });
                entries.push(CanaryEntry {
                    surface: s,
                    entity_type: ty,
                    k,
                });
                made += 1;
            }
        }
    }
    Ok(SynthData {
        documents,
        pretrain,
        public,
        gazetteer,
        canaries: CanaryPlan::new(entries),
    })
}

impl SynthData {
    /// Labeled corpus with a seeded split.
    pub fn corpus(&self, test_fraction: f64, seed: u64) -> Result<Corpus> {
        Corpus::new(self.documents.clone(), test_fraction, seed)
    }

    /// Writes `corpus.jsonl`, `pretrain.jsonl`, `public.jsonl`,
    /// `gazetteer.jsonl` and `canaries.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_docs(&dir.join("corpus.jsonl"), &self.documents)?;
        write_docs(&dir.join("pretrain.jsonl"), &self.pretrain)?;
        write_docs(&dir.join("public.jsonl"), &self.public)?;
        let mut g = String::new();
        for row in &self.gazetteer {
            g.push_str(&serde_json::to_string(row)?);
            g.push('\n');
        }
        write_file(&dir.join("gazetteer.jsonl"), g.as_bytes())?;
        write_file(&dir.join("canaries.json"), serde_json::to_string_pretty(&self.canaries)?.as_bytes())
    }
}

fn write_docs(path: &Path, docs: &[Document]) -> Result<()> {
    let mut out = String::new();
    for d in docs {
        out.push_str(&serde_json::to_string(d)?);
        out.push('\n');
    }
    write_file(path, out.as_bytes())
}
