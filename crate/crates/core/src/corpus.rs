//! Document corpora: JSONL ingestion, train/test splits and canary planting.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::audit::EntityType;
use crate::error::{Error, Result};
use crate::rng;
use crate::text;

pub const DEFAULT_TEST_FRACTION: f64 = 0.2;
pub const DEFAULT_SPLIT_SEED: u64 = 20_240_917;
pub const DEFAULT_CANARY_TEMPLATE: &str = "my account manager is {} today";
pub const MIN_SURFACE_CHARS: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Field names used when reading a JSONL corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldMap {
    pub id: String,
    pub text: String,
    pub label: String,
}

impl Default for FieldMap {
    fn default() -> Self {
        Self {
            id: "id".into(),
            text: "text".into(),
            label: "label".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    documents: Vec<Document>,
    splits: Vec<Split>,
    labels: Vec<String>,
}

impl Corpus {
    /// Builds a corpus and assigns a seeded split with the given test fraction.
    pub fn new(documents: Vec<Document>, test_fraction: f64, seed: u64) -> Result<Self> {
        if documents.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(Error::config(format!("test fraction {test_fraction} not in [0, 1)")));
        }
        let mut seen = HashSet::with_capacity(documents.len());
        for doc in &documents {
            if !seen.insert(doc.id.as_str()) {
                return Err(Error::DuplicateId(doc.id.clone()));
            }
        }
        let n = documents.len();
        let n_train = (n as f64 * (1.0 - test_fraction)).floor() as usize;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng::stream(&[seed, rng::label("split")]));
        let mut splits = vec![Split::Test; n];
        for &i in &order[..n_train] {
            splits[i] = Split::Train;
        }
        Self::with_splits(documents, splits)
    }

    /// Builds a corpus with an explicit split assignment.
    pub fn with_splits(documents: Vec<Document>, splits: Vec<Split>) -> Result<Self> {
        if documents.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        if splits.len() != documents.len() {
            return Err(Error::config("split assignment length differs from document count"));
        }
        let labels: BTreeSet<String> = documents.iter().filter_map(|d| d.label.clone()).collect();
        Ok(Self {
            documents,
            splits,
            labels: labels.into_iter().collect(),
        })
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.binary_search_by(|l| l.as_str().cmp(label)).ok()
    }

    pub fn split_of(&self, id: &str) -> Option<Split> {
        self.documents.iter().position(|d| d.id == id).map(|i| self.splits[i])
    }

    pub fn splits(&self) -> &[Split] {
        &self.splits
    }

    pub fn iter_split(&self, split: Split) -> impl Iterator<Item = &Document> {
        self.documents
            .iter()
            .zip(&self.splits)
            .filter(move |(_, s)| **s == split)
            .map(|(d, _)| d)
    }

    pub fn train(&self) -> impl Iterator<Item = &Document> {
        self.iter_split(Split::Train)
    }

    pub fn test(&self) -> impl Iterator<Item = &Document> {
        self.iter_split(Split::Test)
    }

    pub fn train_len(&self) -> usize {
        self.splits.iter().filter(|s| **s == Split::Train).count()
    }

    pub fn test_len(&self) -> usize {
        self.len() - self.train_len()
    }

    /// Word-bounded, case-insensitive occurrences of `surface` across the train split.
    pub fn count_occurrences(&self, surface: &str) -> usize {
        let pattern = text::match_form(surface);
        self.train()
            .map(|d| text::bounded_occurrences(&text::match_form(&d.text), &pattern).len())
            .sum()
    }

    /// Writes the corpus with its split assignment, one object per line.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct Row<'a> {
            id: &'a str,
            text: &'a str,
            #[serde(skip_serializing_if = "Option::is_none")]
            label: Option<&'a str>,
            split: Split,
        }
        let mut out = Vec::new();
        for (doc, split) in self.documents.iter().zip(&self.splits) {
            let row = Row {
                id: &doc.id,
                text: &doc.text,
                label: doc.label.as_deref(),
                split: *split,
            };
            serde_json::to_writer(&mut out, &row)?;
            out.push(b'\n');
        }
        write_file(path, &out)
    }

    /// Reads a corpus written by [`Corpus::write_jsonl`], keeping its split.
    pub fn read_jsonl(path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            id: String,
            text: String,
            #[serde(default)]
            label: Option<String>,
            split: Split,
        }
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut documents = Vec::new();
        let mut splits = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let row: Row = serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
                line: i + 1,
                message: e.to_string(),
            })?;
            documents.push(Document {
                id: row.id,
                text: row.text,
                label: row.label,
            });
            splits.push(row.split);
        }
        Self::with_splits(documents, splits)
    }
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

/// Reads documents from a JSONL file. Lines that are blank are skipped; a
/// missing id defaults to `line-<n>`.
pub fn read_documents(path: &Path, schema: &FieldMap) -> Result<Vec<Document>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut docs = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| Error::MalformedLine {
            line: lineno,
            message,
        };
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        let obj = value
            .as_object()
            .ok_or_else(|| malformed("expected a JSON object".into()))?;
        let raw_text = obj
            .get(&schema.text)
            .and_then(|v| v.as_str())
            .ok_or_else(|| malformed(format!("missing string field {:?}", schema.text)))?;
        let text = text::normalize(raw_text);
        if text.is_empty() {
            return Err(malformed("text is empty after normalization".into()));
        }
        let id = match obj.get(&schema.id) {
            Some(serde_json::Value::String(s)) => s.clone(),
            Some(serde_json::Value::Number(n)) => n.to_string(),
            None => format!("line-{lineno}"),
            Some(_) => return Err(malformed(format!("field {:?} must be a string", schema.id))),
        };
        let label = match obj.get(&schema.label) {
            Some(serde_json::Value::String(s)) => Some(s.clone()),
            Some(serde_json::Value::Null) | None => None,
            Some(other) => Some(other.to_string()),
        };
        docs.push(Document { id, text, label });
    }
    Ok(docs)
}

/// Reads a JSONL corpus and assigns the default 80/20 split.
pub fn ingest_jsonl(path: &Path, schema: &FieldMap) -> Result<Corpus> {
    ingest_jsonl_with(path, schema, DEFAULT_TEST_FRACTION, DEFAULT_SPLIT_SEED)
}

pub fn ingest_jsonl_with(path: &Path, schema: &FieldMap, test_fraction: f64, seed: u64) -> Result<Corpus> {
    let docs = read_documents(path, schema)?;
    Corpus::new(docs, test_fraction, seed)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanaryEntry {
    pub surface: String,
    #[serde(rename = "type")]
    pub entity_type: EntityType,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanaryPlan {
    #[serde(default = "default_template")]
    pub template: String,
    pub entries: Vec<CanaryEntry>,
}

fn default_template() -> String {
    DEFAULT_CANARY_TEMPLATE.to_string()
}

impl CanaryPlan {
    pub fn new(entries: Vec<CanaryEntry>) -> Self {
        Self {
            template: default_template(),
            entries,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    pub fn render(&self, surface: &str) -> String {
        self.template.replacen("{}", surface, 1)
    }

    fn validate(&self, corpus: &Corpus) -> Result<()> {
        if self.template.matches("{}").count() != 1 {
            return Err(Error::Canary("template must contain exactly one {} placeholder".into()));
        }
        let train = corpus.train_len();
        let forms: Vec<String> = self.entries.iter().map(|e| text::match_form(&e.surface)).collect();
        for (entry, form) in self.entries.iter().zip(&forms) {
            if form.chars().count() < MIN_SURFACE_CHARS {
                return Err(Error::Canary(format!("surface {:?} shorter than {MIN_SURFACE_CHARS} characters", entry.surface)));
            }
            if entry.k == 0 {
                return Err(Error::Canary(format!("surface {:?} has k = 0", entry.surface)));
            }
            if entry.k > train {
                return Err(Error::Canary(format!(
                    "surface {:?} requests k = {} but the train split has {train} documents",
                    entry.surface, entry.k
                )));
            }
            if corpus.count_occurrences(&entry.surface) > 0 {
                return Err(Error::Canary(format!("surface {:?} already occurs in the train split", entry.surface)));
            }
            let rendered = text::match_form(&self.render(""));
            if !text::bounded_occurrences(&rendered, form).is_empty() {
                return Err(Error::Canary(format!("surface {:?} occurs in the template", entry.surface)));
            }
        }
        for (i, a) in forms.iter().enumerate() {
            for (j, b) in forms.iter().enumerate() {
                if i != j && !text::bounded_occurrences(a, b).is_empty() {
                    return Err(Error::Canary(format!("surface {b:?} occurs inside {a:?}")));
                }
            }
        }
        Ok(())
    }
}

/// Which train documents received each canary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanaryAudit {
    pub seed: u64,
    pub insertions: BTreeMap<String, Vec<String>>,
}

/// Embeds every plan surface, via the template, into `k` distinct random train
/// documents at a random word boundary.
pub fn plant_canaries(corpus: &Corpus, plan: &CanaryPlan, seed: u64) -> Result<(Corpus, CanaryAudit)> {
    plan.validate(corpus)?;
    let train_idx: Vec<usize> = corpus
        .splits
        .iter()
        .enumerate()
        .filter(|(_, s)| **s == Split::Train)
        .map(|(i, _)| i)
        .collect();
    let mut documents = corpus.documents.clone();
    let mut insertions = BTreeMap::new();
    for (e, entry) in plan.entries.iter().enumerate() {
        let mut r = rng::stream(&[seed, rng::label("canary"), e as u64]);
        let mut chosen: Vec<usize> = index::sample(&mut r, train_idx.len(), entry.k)
            .into_iter()
            .map(|j| train_idx[j])
            .collect();
        chosen.sort_unstable();
        let sentence = plan.render(&entry.surface);
        for &d in &chosen {
            let doc = &mut documents[d];
            let words: Vec<&str> = doc.text.split(' ').collect();
            let at = (rng::uniform(rng::key(&[seed, rng::label("canary-pos"), e as u64, d as u64]))
                * (words.len() + 1) as f64) as usize;
            let mut rebuilt: Vec<&str> = Vec::with_capacity(words.len() + 1);
            rebuilt.extend_from_slice(&words[..at]);
            rebuilt.push(&sentence);
            rebuilt.extend_from_slice(&words[at..]);
            doc.text = rebuilt.join(" ");
        }
        insertions.insert(
            entry.surface.clone(),
            chosen.iter().map(|&d| documents[d].id.clone()).collect(),
        );
    }
    let planted = Corpus {
        documents,
        splits: corpus.splits.clone(),
        labels: corpus.labels.clone(),
    };
    for entry in &plan.entries {
        let n = planted.count_occurrences(&entry.surface);
        if n != entry.k {
            return Err(Error::Canary(format!(
                "surface {:?} occurs {n} times after planting, expected {}",
                entry.surface, entry.k
            )));
        }
    }
    Ok((planted, CanaryAudit { seed, insertions }))
}
