//! Entity sets, exact-match scanning and extraction rates.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use aho_corasick::{AhoCorasick, MatchKind};
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, MIN_SURFACE_CHARS};
use crate::error::{Error, Result};
use crate::generator::{GeneratedSample, PromptKind};
use crate::text;
use crate::training::Setup;

/// The 18-type named-entity taxonomy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EntityType {
    Person,
    Norp,
    Fac,
    Org,
    Gpe,
    Loc,
    Product,
    Event,
    WorkOfArt,
    Law,
    Language,
    Date,
    Time,
    Percent,
    Money,
    Quantity,
    Ordinal,
    Cardinal,
}

impl EntityType {
    pub const ALL: [EntityType; 18] = [
        EntityType::Person,
        EntityType::Norp,
        EntityType::Fac,
        EntityType::Org,
        EntityType::Gpe,
        EntityType::Loc,
        EntityType::Product,
        EntityType::Event,
        EntityType::WorkOfArt,
        EntityType::Law,
        EntityType::Language,
        EntityType::Date,
        EntityType::Time,
        EntityType::Percent,
        EntityType::Money,
        EntityType::Quantity,
        EntityType::Ordinal,
        EntityType::Cardinal,
    ];

    /// The seven privacy-relevant types evaluated by default, in report order.
    pub const SELECTED: [EntityType; 7] = [
        EntityType::Person,
        EntityType::Org,
        EntityType::Loc,
        EntityType::Gpe,
        EntityType::Fac,
        EntityType::Money,
        EntityType::Cardinal,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EntityType::Person => "PERSON",
            EntityType::Norp => "NORP",
            EntityType::Fac => "FAC",
            EntityType::Org => "ORG",
            EntityType::Gpe => "GPE",
            EntityType::Loc => "LOC",
            EntityType::Product => "PRODUCT",
            EntityType::Event => "EVENT",
            EntityType::WorkOfArt => "WORK_OF_ART",
            EntityType::Law => "LAW",
            EntityType::Language => "LANGUAGE",
            EntityType::Date => "DATE",
            EntityType::Time => "TIME",
            EntityType::Percent => "PERCENT",
            EntityType::Money => "MONEY",
            EntityType::Quantity => "QUANTITY",
            EntityType::Ordinal => "ORDINAL",
            EntityType::Cardinal => "CARDINAL",
        }
    }
}

impl fmt::Display for EntityType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EntityType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let up = s.trim().to_ascii_uppercase();
        EntityType::ALL
            .iter()
            .copied()
            .find(|t| t.as_str() == up)
            .ok_or_else(|| Error::UnknownEntityType(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GazetteerRow {
    pub surface: String,
    #[serde(rename = "type")]
    pub entity_type: String,
}

/// Reads a gazetteer from JSONL (`{surface, type}` per line) or, for `.tsv`
/// files, `surface<TAB>type` lines.
pub fn read_gazetteer(path: &Path) -> Result<Vec<GazetteerRow>> {
    let tsv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("tsv"));
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row = if tsv {
            let (surface, ty) = line.split_once('\t').ok_or_else(|| Error::MalformedLine {
                line: i + 1,
                message: "expected surface<TAB>type".into(),
            })?;
            GazetteerRow {
                surface: surface.to_string(),
                entity_type: ty.trim().to_string(),
            }
        } else {
            serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
                line: i + 1,
                message: e.to_string(),
            })?
        };
        rows.push(row);
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityRecord {
    pub surface: String,
    #[serde(rename = "type")]
    pub entity_type: EntityType,
    pub k: usize,
    pub in_pretraining: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntitySet {
    All,
    Private,
    #[serde(rename = "private_1eidetic")]
    Private1Eidetic,
}

impl EntitySet {
    pub const EACH: [EntitySet; 3] = [EntitySet::All, EntitySet::Private, EntitySet::Private1Eidetic];

    pub fn as_str(self) -> &'static str {
        match self {
            EntitySet::All => "all",
            EntitySet::Private => "private",
            EntitySet::Private1Eidetic => "private_1eidetic",
        }
    }
}

impl FromStr for EntitySet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EntitySet::EACH
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown entity set {s:?}")))
    }
}

/// The three nested entity sets, each sorted by surface.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitySets {
    pub all: Vec<EntityRecord>,
    pub private: Vec<EntityRecord>,
    pub private_1eidetic: Vec<EntityRecord>,
}

impl EntitySets {
    pub fn get(&self, which: EntitySet) -> &[EntityRecord] {
        match which {
            EntitySet::All => &self.all,
            EntitySet::Private => &self.private,
            EntitySet::Private1Eidetic => &self.private_1eidetic,
        }
    }

    /// Set sizes per entity type.
    pub fn counts_by_type(&self, which: EntitySet) -> BTreeMap<EntityType, usize> {
        let mut out = BTreeMap::new();
        for r in self.get(which) {
            *out.entry(r.entity_type).or_insert(0) += 1;
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::corpus::write_file(path, serde_json::to_string_pretty(self)?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

/// Builds the entity sets.
///
/// Surfaces are put in match form; those shorter than four characters are
/// dropped, as are duplicates (first row wins) and surfaces that never occur
/// in the train split. `k` is the word-bounded occurrence count over the train
/// split and `in_pretraining` is set when the surface occurs anywhere in
/// `pretrain_texts`.
pub fn build_entity_sets<'a>(
    rows: &[GazetteerRow],
    corpus: &Corpus,
    pretrain_texts: impl IntoIterator<Item = &'a str>,
) -> Result<EntitySets> {
    if rows.is_empty() {
        return Err(Error::Gazetteer("gazetteer is empty".into()));
    }
    let mut seen = BTreeMap::new();
    for row in rows {
        let ty: EntityType = row.entity_type.parse()?;
        let surface = text::match_form(&row.surface);
        if surface.chars().count() < MIN_SURFACE_CHARS {
            continue;
        }
        seen.entry(surface).or_insert(ty);
    }
    if seen.is_empty() {
        return Err(Error::Gazetteer("no gazetteer surface has at least four characters".into()));
    }
    let surfaces: Vec<String> = seen.keys().cloned().collect();
    let index = MatchIndex::from_surfaces(&surfaces)?;
    let mut k = vec![0usize; surfaces.len()];
    for doc in corpus.train() {
        for (p, _) in index.find_bounded(&text::match_form(&doc.text)) {
            k[p] += 1;
        }
    }
    let mut in_pretraining = vec![false; surfaces.len()];
    for t in pretrain_texts {
        for (p, _) in index.find_bounded(&text::match_form(t)) {
            in_pretraining[p] = true;
        }
    }
    let all: Vec<EntityRecord> = surfaces
        .iter()
        .enumerate()
        .filter(|(i, _)| k[*i] >= 1)
        .map(|(i, s)| EntityRecord {
            surface: s.clone(),
            entity_type: seen[s],
            k: k[i],
            in_pretraining: in_pretraining[i],
        })
        .collect();
    let private: Vec<EntityRecord> = all.iter().filter(|r| !r.in_pretraining).cloned().collect();
    let private_1eidetic = private.iter().filter(|r| r.k == 1).cloned().collect();
    Ok(EntitySets {
        all,
        private,
        private_1eidetic,
    })
}

/// Reads the gazetteer file and builds the sets against both corpora.
pub fn load_gazetteer(path: &Path, corpus: &Corpus, pretrain: &Corpus) -> Result<EntitySets> {
    let rows = read_gazetteer(path)?;
    build_entity_sets(&rows, corpus, pretrain.documents().iter().map(|d| d.text.as_str()))
}

/// Simultaneous multi-pattern matcher over match-form surfaces.
#[derive(Debug, Clone)]
pub struct MatchIndex {
    automaton: AhoCorasick,
    surfaces: Vec<String>,
    types: Vec<Option<EntityType>>,
}

impl MatchIndex {
    /// Untyped index over surfaces already in match form.
    pub fn from_surfaces(surfaces: &[String]) -> Result<Self> {
        let automaton = AhoCorasick::builder()
            .match_kind(MatchKind::Standard)
            .build(surfaces)
            .map_err(|e| Error::Gazetteer(e.to_string()))?;
        Ok(Self {
            automaton,
            surfaces: surfaces.to_vec(),
            types: vec![None; surfaces.len()],
        })
    }

    pub fn n_patterns(&self) -> usize {
        self.surfaces.len()
    }

    pub fn surface(&self, pattern: usize) -> &str {
        &self.surfaces[pattern]
    }

    /// Every word-bounded occurrence as (pattern, byte offset), ordered by
    /// offset then pattern. `text` must already be in match form.
    pub fn find_bounded(&self, text: &str) -> Vec<(usize, usize)> {
        let mut hits: Vec<(usize, usize)> = self
            .automaton
            .find_overlapping_iter(text)
            .filter(|m| text::bounded(text, m.start(), m.end()))
            .map(|m| (m.pattern().as_usize(), m.start()))
            .collect();
        hits.sort_unstable_by_key(|&(p, o)| (o, p));
        hits
    }
}

/// One automaton over the selected set.
pub fn build_index(sets: &EntitySets, which: EntitySet) -> Result<MatchIndex> {
    let records = sets.get(which);
    if records.is_empty() {
        return Err(Error::Gazetteer(format!("entity set {} is empty", which.as_str())));
    }
    let surfaces: Vec<String> = records.iter().map(|r| r.surface.clone()).collect();
    let mut index = MatchIndex::from_surfaces(&surfaces)?;
    index.types = records.iter().map(|r| Some(r.entity_type)).collect();
    Ok(index)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchLogEntry {
    pub sample_id: String,
    pub surface: String,
    #[serde(rename = "type", skip_serializing_if = "Option::is_none")]
    pub entity_type: Option<EntityType>,
    pub offset: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ScanResult {
    pub matched: BTreeSet<String>,
    pub log: Vec<MatchLogEntry>,
}

impl ScanResult {
    pub fn write_log(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        for entry in &self.log {
            serde_json::to_writer(&mut out, entry)?;
            out.push(b'\n');
        }
        crate::corpus::write_file(path, &out)
    }
}

/// Scans sample bodies for exact, word-bounded surface matches. The merge is
/// in sample order regardless of how many workers scan.
pub fn scan(index: &MatchIndex, samples: &[GeneratedSample]) -> ScanResult {
    let per_sample = |s: &GeneratedSample| -> Vec<MatchLogEntry> {
        index
            .find_bounded(&text::match_form(&s.body))
            .into_iter()
            .map(|(p, offset)| MatchLogEntry {
                sample_id: s.id.clone(),
                surface: index.surfaces[p].clone(),
                entity_type: index.types[p],
                offset,
            })
            .collect()
    };
    #[cfg(feature = "parallel")]
    let logs: Vec<Vec<MatchLogEntry>> = {
        use rayon::prelude::*;
        samples.par_iter().map(per_sample).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let logs: Vec<Vec<MatchLogEntry>> = samples.iter().map(per_sample).collect();
    let log: Vec<MatchLogEntry> = logs.into_iter().flatten().collect();
    ScanResult {
        matched: log.iter().map(|e| e.surface.clone()).collect(),
        log,
    }
}

/// Rounds a percentage to one decimal.
pub fn percent_1dp(extracted: usize, size: usize) -> Option<f64> {
    (size > 0).then(|| (1000.0 * extracted as f64 / size as f64).round() / 10.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub set: EntitySet,
    /// An entity type tag or `ALL`.
    pub group: String,
    pub extracted: usize,
    pub size: usize,
    /// `None` when the group is empty.
    pub ratio: Option<f64>,
    pub percent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub setup: Setup,
    pub prompt_kind: PromptKind,
    pub n_samples: usize,
    pub rows: Vec<RateRow>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl AuditReport {
    pub fn row(&self, set: EntitySet, group: &str) -> Option<&RateRow> {
        self.rows.iter().find(|r| r.set == set && r.group == group)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::corpus::write_file(path, serde_json::to_string_pretty(self)?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

/// Distinct-surface extraction counts for every set, overall and per type.
/// Types listed in `types` always get a row, even when empty.
pub fn extraction_rates(
    sets: &EntitySets,
    matched: &BTreeSet<String>,
    setup: Setup,
    prompt_kind: PromptKind,
    n_samples: usize,
    types: &[EntityType],
) -> AuditReport {
    let mut rows = Vec::new();
    for which in EntitySet::EACH {
        let records = sets.get(which);
        let mut groups: Vec<(String, Vec<&EntityRecord>)> = vec![("ALL".to_string(), records.iter().collect())];
        let mut present: BTreeSet<EntityType> = records.iter().map(|r| r.entity_type).collect();
        present.extend(types.iter().copied());
        let ordered = types
            .iter()
            .copied()
            .chain(present.iter().copied().filter(|t| !types.contains(t)));
        for ty in ordered {
            groups.push((ty.as_str().to_string(), records.iter().filter(|r| r.entity_type == ty).collect()));
        }
        for (group, members) in groups {
            let size = members.len();
            let extracted = members.iter().filter(|r| matched.contains(&r.surface)).count();
            rows.push(RateRow {
                set: which,
                group,
                extracted,
                size,
                ratio: (size > 0).then(|| extracted as f64 / size as f64),
                percent: percent_1dp(extracted, size),
            });
        }
    }
    AuditReport {
        setup,
        prompt_kind,
        n_samples,
        rows,
        metadata: BTreeMap::new(),
    }
}

/// CSV shaped like a per-type extraction table: one row per group, one
/// percentage column per report (setup) plus its exact count pair.
pub fn table_csv(reports: &[AuditReport], set: EntitySet, groups: &[String]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["entity_type".to_string()];
    for r in reports {
        header.push(r.setup.as_str().to_string());
        header.push(format!("{}_count", r.setup.as_str()));
    }
    w.write_record(&header)?;
    for g in groups {
        let mut rec = vec![g.clone()];
        for r in reports {
            match r.row(set, g) {
                Some(row) => {
                    rec.push(row.percent.map_or_else(|| "n/a".to_string(), |p| format!("{p:.1}%")));
                    rec.push(format!("{}/{}", row.extracted, row.size));
                }
                None => {
                    rec.push("n/a".into());
                    rec.push("0/0".into());
                }
            }
        }
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::config(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
