//! Tokenization shared by the metrics and the local corpus retriever.

use std::collections::HashSet;
use std::sync::OnceLock;

/// CJK ideographs, kana and hangul are emitted one character per token
/// since those scripts do not separate words with spaces.
fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3040..=0x30FF     // kana
        | 0x3400..=0x4DBF   // CJK ext A
        | 0x4E00..=0x9FFF   // CJK unified
        | 0xAC00..=0xD7AF   // hangul syllables
        | 0xF900..=0xFAFF   // compatibility ideographs
        | 0x20000..=0x2FA1F)
}

/// Case-folded tokens split on whitespace and punctuation.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for c in text.chars() {
        if is_cjk(c) {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
            tokens.push(c.to_string());
        } else if c.is_alphanumeric() {
            current.extend(c.to_lowercase());
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Lowercase and collapse runs of whitespace.
pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn stopwords() -> &'static HashSet<&'static str> {
    static WORDS: OnceLock<HashSet<&'static str>> = OnceLock::new();
    WORDS.get_or_init(|| {
        [
            "a", "about", "an", "and", "are", "as", "at", "be", "by", "can", "could", "did", "do",
            "does", "for", "from", "had", "has", "have", "how", "i", "if", "in", "is", "it", "its",
            "me", "of", "on", "or", "please", "so", "tell", "that", "the", "their", "there",
            "this", "to", "was", "were", "what", "when", "where", "which", "who", "whom", "why",
            "will", "with", "would", "you", "your",
        ]
        .into_iter()
        .collect()
    })
}

/// Distinct content tokens (stopwords removed), in first-occurrence order.
pub fn content_terms(text: &str) -> Vec<String> {
    let stop = stopwords();
    let mut seen = HashSet::new();
    tokenize(text)
        .into_iter()
        .filter(|t| !stop.contains(t.as_str()))
        .filter(|t| seen.insert(t.clone()))
        .collect()
}
