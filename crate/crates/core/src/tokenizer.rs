//! Byte-level pair-merge tokenizer, lowercase only.
//!
//! Ids 0..5 are the special tokens, 5..261 the raw bytes, and every merge
//! appends one id. Text is split on spaces before merging; each word after the
//! first carries its leading space, so decoding is plain byte concatenation.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::text;

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const UNK: TokenId = 1;
pub const CLS: TokenId = 2;
pub const SEP: TokenId = 3;
pub const MASK: TokenId = 4;
pub const N_SPECIAL: usize = 5;
pub const BYTE_OFFSET: TokenId = N_SPECIAL as TokenId;
pub const MIN_VOCAB: usize = N_SPECIAL + 256;
pub const SPECIAL_NAMES: [&str; N_SPECIAL] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"];

const FORMAT_VERSION: u32 = 1;

pub fn is_special(id: TokenId) -> bool {
    (id as usize) < N_SPECIAL
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizerModel {
    vocab: Vec<Vec<u8>>,
    merges: Vec<(TokenId, TokenId)>,
    ranks: HashMap<(TokenId, TokenId), u32>,
}

impl TokenizerModel {
    fn from_merges(merges: Vec<(TokenId, TokenId)>) -> Result<Self> {
        let mut vocab: Vec<Vec<u8>> = SPECIAL_NAMES.iter().map(|s| s.as_bytes().to_vec()).collect();
        vocab.extend((0..=255u8).map(|b| vec![b]));
        let mut ranks = HashMap::with_capacity(merges.len());
        for (rank, &(a, b)) in merges.iter().enumerate() {
            let n = vocab.len() as TokenId;
            if a >= n || b >= n || is_special(a) || is_special(b) {
                return Err(Error::config(format!("merge {rank} references an invalid symbol")));
            }
            let mut joined = vocab[a as usize].clone();
            joined.extend_from_slice(&vocab[b as usize]);
            vocab.push(joined);
            ranks.insert((a, b), rank as u32);
        }
        Ok(Self { vocab, merges, ranks })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn merges(&self) -> &[(TokenId, TokenId)] {
        &self.merges
    }

    pub fn token_bytes(&self, id: TokenId) -> &[u8] {
        &self.vocab[id as usize]
    }

    /// Merged symbol id for a merge rank.
    fn merged_id(rank: u32) -> TokenId {
        (MIN_VOCAB as u32) + rank
    }

    fn encode_word(&self, word: &[u8], out: &mut Vec<TokenId>) {
        let mut symbols: Vec<TokenId> = word.iter().map(|&b| BYTE_OFFSET + TokenId::from(b)).collect();
        loop {
            let best = symbols
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0], w[1])).copied())
                .min();
            let Some(rank) = best else { break };
            let (a, b) = self.merges[rank as usize];
            let merged = Self::merged_id(rank);
            let mut next = Vec::with_capacity(symbols.len());
            let mut i = 0;
            while i < symbols.len() {
                if i + 1 < symbols.len() && symbols[i] == a && symbols[i + 1] == b {
                    next.push(merged);
                    i += 2;
                } else {
                    next.push(symbols[i]);
                    i += 1;
                }
            }
            symbols = next;
        }
        out.extend_from_slice(&symbols);
    }

    /// Lowercases, normalizes and applies merges in rank order within each word.
    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        let norm = text::match_form(text);
        let mut out = Vec::with_capacity(norm.len() / 3 + 1);
        for word in words(&norm) {
            self.encode_word(word, &mut out);
        }
        out
    }

    /// Concatenates token bytes, skipping special tokens.
    pub fn decode(&self, ids: &[TokenId]) -> String {
        let bytes: Vec<u8> = ids
            .iter()
            .filter(|&&id| !is_special(id) && (id as usize) < self.vocab.len())
            .flat_map(|&id| self.vocab[id as usize].iter().copied())
            .collect();
        String::from_utf8_lossy(&bytes).into_owned()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = TokenizerFile {
            version: FORMAT_VERSION,
            specials: SPECIAL_NAMES.iter().map(|s| s.to_string()).collect(),
            vocab: self.vocab.iter().map(|t| bytes_to_visible(t)).collect(),
            merges: self
                .merges
                .iter()
                .map(|&(a, b)| [bytes_to_visible(&self.vocab[a as usize]), bytes_to_visible(&self.vocab[b as usize])])
                .collect(),
        };
        crate::corpus::write_file(path, serde_json::to_string_pretty(&file)?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let file: TokenizerFile = serde_json::from_slice(&bytes)?;
        if file.version != FORMAT_VERSION {
            return Err(Error::config(format!("unsupported tokenizer version {}", file.version)));
        }
        if file.specials != SPECIAL_NAMES {
            return Err(Error::config("tokenizer specials do not match [PAD] [UNK] [CLS] [SEP] [MASK]"));
        }
        let mut lookup: HashMap<Vec<u8>, TokenId> = HashMap::new();
        for b in 0..=255u8 {
            lookup.insert(vec![b], BYTE_OFFSET + TokenId::from(b));
        }
        let mut merges = Vec::with_capacity(file.merges.len());
        for (rank, [a, b]) in file.merges.iter().enumerate() {
            let (a, b) = (visible_to_bytes(a)?, visible_to_bytes(b)?);
            let ia = *lookup.get(&a).ok_or_else(|| Error::config(format!("merge {rank}: unknown left symbol")))?;
            let ib = *lookup.get(&b).ok_or_else(|| Error::config(format!("merge {rank}: unknown right symbol")))?;
            let mut joined = a;
            joined.extend_from_slice(&b);
            lookup.entry(joined).or_insert(Self::merged_id(rank as u32));
            merges.push((ia, ib));
        }
        let model = Self::from_merges(merges)?;
        if model.vocab.len() != file.vocab.len() {
            return Err(Error::config("tokenizer vocab length disagrees with merges"));
        }
        Ok(model)
    }
}

#[derive(Serialize, Deserialize)]
struct TokenizerFile {
    version: u32,
    specials: Vec<String>,
    vocab: Vec<String>,
    merges: Vec<[String; 2]>,
}

fn words(text: &str) -> impl Iterator<Item = &[u8]> {
    let bytes = text.as_bytes();
    let mut starts: Vec<usize> = vec![0];
    starts.extend(bytes.iter().enumerate().skip(1).filter(|(_, &b)| b == b' ').map(|(i, _)| i));
    starts.push(bytes.len());
    (0..starts.len() - 1)
        .map(move |i| &bytes[starts[i]..starts[i + 1]])
        .filter(|w| !w.is_empty())
}

/// Reversible byte → printable char mapping (the GPT-2 convention), used only
/// for the JSON file format.
fn byte_to_char_table() -> [char; 256] {
    let mut table = ['\0'; 256];
    let mut extra = 0u32;
    for b in 0..=255u32 {
        let printable = (b'!' as u32..=b'~' as u32).contains(&b)
            || (0xA1..=0xAC).contains(&b)
            || (0xAE..=0xFF).contains(&b);
        table[b as usize] = if printable {
            char::from_u32(b).unwrap()
        } else {
            extra += 1;
            char::from_u32(255 + extra).unwrap()
        };
    }
    table
}

fn bytes_to_visible(bytes: &[u8]) -> String {
    if let Ok(s) = std::str::from_utf8(bytes) {
        if SPECIAL_NAMES.contains(&s) {
            return s.to_string();
        }
    }
    let table = byte_to_char_table();
    bytes.iter().map(|&b| table[b as usize]).collect()
}

fn visible_to_bytes(s: &str) -> Result<Vec<u8>> {
    let table = byte_to_char_table();
    let inverse: HashMap<char, u8> = table.iter().enumerate().map(|(b, &c)| (c, b as u8)).collect();
    s.chars()
        .map(|c| inverse.get(&c).copied().ok_or_else(|| Error::config(format!("invalid symbol char {c:?}"))))
        .collect()
}

/// Greedy pair-merge training on the lowercased train split. The most frequent
/// adjacent pair is merged each round; ties go to the lexicographically
/// smallest pair of byte strings.
pub fn train_tokenizer(corpus: &Corpus, vocab_size: usize) -> Result<TokenizerModel> {
    train_on_texts(corpus.train().map(|d| d.text.as_str()), vocab_size)
}

pub fn train_on_texts<'a>(texts: impl Iterator<Item = &'a str>, vocab_size: usize) -> Result<TokenizerModel> {
    if vocab_size < MIN_VOCAB {
        return Err(Error::config(format!("vocab_size {vocab_size} is below the minimum {MIN_VOCAB}")));
    }
    let mut counts: BTreeMap<Vec<u8>, u64> = BTreeMap::new();
    for t in texts {
        let norm = text::match_form(t);
        for w in words(&norm) {
            *counts.entry(w.to_vec()).or_insert(0) += 1;
        }
    }
    let mut words: Vec<(Vec<TokenId>, u64)> = counts
        .into_iter()
        .map(|(w, c)| (w.iter().map(|&b| BYTE_OFFSET + TokenId::from(b)).collect(), c))
        .collect();
    let mut vocab: Vec<Vec<u8>> = SPECIAL_NAMES.iter().map(|s| s.as_bytes().to_vec()).collect();
    vocab.extend((0..=255u8).map(|b| vec![b]));
    let mut merges = Vec::new();
    while vocab.len() < vocab_size {
        let mut pairs: HashMap<(TokenId, TokenId), u64> = HashMap::new();
        for (syms, c) in &words {
            for w in syms.windows(2) {
                *pairs.entry((w[0], w[1])).or_insert(0) += c;
            }
        }
        let best = pairs.into_iter().max_by(|(pa, ca), (pb, cb)| {
            ca.cmp(cb).then_with(|| {
                let ka = (&vocab[pa.0 as usize], &vocab[pa.1 as usize]);
                let kb = (&vocab[pb.0 as usize], &vocab[pb.1 as usize]);
                kb.cmp(&ka)
            })
        });
        let Some(((a, b), _)) = best else { break };
        let merged = vocab.len() as TokenId;
        let mut joined = vocab[a as usize].clone();
        joined.extend_from_slice(&vocab[b as usize]);
        vocab.push(joined);
        merges.push((a, b));
        for (syms, _) in &mut words {
            if syms.len() < 2 {
                continue;
            }
            let mut next = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && syms[i] == a && syms[i + 1] == b {
                    next.push(merged);
                    i += 2;
                } else {
                    next.push(syms[i]);
                    i += 1;
                }
            }
            *syms = next;
        }
    }
    TokenizerModel::from_merges(merges)
}
