//! Text helpers shared by the lexicon, embedding and corpus modules.

use sha2::{Digest, Sha256};
use unicode_normalization::UnicodeNormalization;

/// Hex SHA-256 of the NFC-normalized text. Keys both the embedding store and
/// the sentence score store.
pub fn content_key(text: &str) -> String {
    let normalized: String = text.nfc().collect();
    hex::encode(Sha256::digest(normalized.as_bytes()))
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric()
}

/// Byte ranges of every non-overlapping occurrence of `term` in `text` that
/// sits on word boundaries on both sides. Matching is case-sensitive.
pub fn word_matches(text: &str, term: &str) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    if term.is_empty() {
        return out;
    }
    let mut from = 0;
    while let Some(rel) = text[from..].find(term) {
        let start = from + rel;
        let end = start + term.len();
        let before_ok = text[..start].chars().next_back().is_none_or(|c| !is_word_char(c));
        let after_ok = text[end..].chars().next().is_none_or(|c| !is_word_char(c));
        if before_ok && after_ok {
            out.push((start, end));
            from = end;
        } else {
            // advance by one char to find overlapping candidates
            from = start + text[start..].chars().next().map_or(1, char::len_utf8);
        }
    }
    out
}

pub fn contains_word(text: &str, term: &str) -> bool {
    !word_matches(text, term).is_empty()
}

/// Replace every word-boundary occurrence of `term`.
pub fn replace_words(text: &str, term: &str, replacement: &str) -> (String, usize) {
    let matches = word_matches(text, term);
    let mut out = String::with_capacity(text.len());
    let mut last = 0;
    for &(s, e) in &matches {
        out.push_str(&text[last..s]);
        out.push_str(replacement);
        last = e;
    }
    out.push_str(&text[last..]);
    (out, matches.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundary_rules() {
        assert_eq!(word_matches("The Syrian team.", "Syrian"), vec![(4, 10)]);
        assert!(word_matches("The Syrians left.", "Syrian").is_empty());
        assert!(word_matches("un-Syrian", "Syrian").len() == 1);
        assert!(word_matches("syrian", "Syrian").is_empty());
        assert_eq!(word_matches("Syrian, Syrian", "Syrian").len(), 2);
        // a rejected partial match must not hide a later real one
        assert_eq!(word_matches("Syrians and Syrian", "Syrian"), vec![(12, 18)]);
    }

    #[test]
    fn multi_word_terms_and_unicode() {
        assert_eq!(word_matches("a South African b", "South African").len(), 1);
        assert_eq!(word_matches("Bu Suriyeli adam", "Suriyeli").len(), 1);
        assert!(word_matches("Syriërs", "Syriër").is_empty());
    }

    #[test]
    fn replace_counts() {
        let (s, n) = replace_words("The Syrian met a Syrian.", "Syrian", "[MASK]");
        assert_eq!(s, "The [MASK] met a [MASK].");
        assert_eq!(n, 2);
    }

    #[test]
    fn key_is_normalization_invariant() {
        // precomposed vs combining diaeresis
        assert_eq!(content_key("Syri\u{00eb}r"), content_key("Syrie\u{0308}r"));
        assert_ne!(content_key("a"), content_key("b"));
        assert_eq!(content_key("").len(), 64);
    }
}
