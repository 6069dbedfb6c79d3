//! Text normalization and word-bounded matching shared by the corpus,
//! tokenizer and audit modules.

use unicode_normalization::UnicodeNormalization;

/// NFC, whitespace runs collapsed to one space, control characters removed,
/// trimmed. Case is preserved.
pub fn normalize(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut pending_space = false;
    for c in text.nfc() {
        if c.is_whitespace() {
            pending_space = true;
            continue;
        }
        if c.is_control() {
            continue;
        }
        if pending_space && !out.is_empty() {
            out.push(' ');
        }
        pending_space = false;
        out.push(c);
    }
    out
}

/// Normal form used for matching: [`normalize`] followed by lowercasing.
pub fn match_form(text: &str) -> String {
    normalize(text).to_lowercase()
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric()
}

/// True when `text[start..end]` has a non-alphanumeric character or the string
/// edge on both sides.
pub fn bounded(text: &str, start: usize, end: usize) -> bool {
    let before = text[..start].chars().next_back();
    let after = text[end..].chars().next();
    !before.is_some_and(is_word_char) && !after.is_some_and(is_word_char)
}

/// Start offsets of every word-bounded occurrence of `pattern` in `text`,
/// overlapping occurrences included. Straight scan, no index.
pub fn bounded_occurrences(text: &str, pattern: &str) -> Vec<usize> {
    if pattern.is_empty() || pattern.len() > text.len() {
        return Vec::new();
    }
    text.char_indices()
        .map(|(i, _)| i)
        .filter(|&i| text[i..].starts_with(pattern) && bounded(text, i, i + pattern.len()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collapses_whitespace_and_controls() {
        assert_eq!(normalize("  a\t\tb\n\nc \u{0007}d  "), "a b c d");
        assert_eq!(normalize("\u{0065}\u{0301}"), "\u{00e9}");
        assert_eq!(normalize(" \n "), "");
    }

    #[test]
    fn boundary_rule() {
        assert_eq!(bounded_occurrences("bobtowns", "bobtown"), Vec::<usize>::new());
        assert_eq!(bounded_occurrences("to bobtown.", "bobtown"), vec![3]);
        assert!(bounded_occurrences("party", "art").is_empty());
        assert_eq!(bounded_occurrences("aa aa aa", "aa aa"), vec![0, 3]);
    }
}
