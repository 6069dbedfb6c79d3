//! Naive reference implementations shared by the entity criteria.

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Pieces chosen to collide: prefixes of each other, case and accent
/// variants, hyphens and digits at word edges.
const PIECES: &[&str] = &[
    "ann", "anna", "Anna", "annabel", "bob", "Bob", "bobby", "café", "cafe\u{301}", "x-ray", "ray", "smith", "Smith",
    "smiths", "acme", "acme corp", "Acme  Corp", "corp", "2024", "a2024", "zoë", "ÉCOLE", "école", "river", "riverside",
];

const GLUE: &[&str] = &[" ", "  ", ", ", ". ", "-", "'", "\t", "\n", " (", ") ", "_", ""];

pub fn phrase(r: &mut ChaCha8Rng, max_pieces: usize) -> String {
    let n = r.random_range(1..=max_pieces);
    let mut s = String::new();
    for i in 0..n {
        if i > 0 {
            s.push_str(GLUE[r.random_range(0..GLUE.len())]);
        }
        s.push_str(PIECES.choose(r).expect("non-empty"));
    }
    s
}

fn is_word(c: char) -> bool {
    c.is_alphanumeric()
}

/// Byte offsets of every occurrence of `pat` in `text` with no alphanumeric
/// neighbour on either side, overlaps included, found by trying every start.
pub fn occurrences(text: &str, pat: &str) -> Vec<usize> {
    let mut out = Vec::new();
    if pat.is_empty() {
        return out;
    }
    for (i, _) in text.char_indices() {
        if !text[i..].starts_with(pat) {
            continue;
        }
        let before = text[..i].chars().last();
        let after = text[i + pat.len()..].chars().next();
        if before.is_none_or(|c| !is_word(c)) && after.is_none_or(|c| !is_word(c)) {
            out.push(i);
        }
    }
    out
}
