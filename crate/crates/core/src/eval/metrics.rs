//! Answer matching and lexical overlap metrics.

use std::collections::HashMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::pipeline::YesNo;
use crate::text::tokenize;

/// Floor applied to zero n-gram matches above unigrams.
pub const BLEU_EPSILON: f64 = 0.1;
pub const BLEU_MAX_ORDER: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractedLabel {
    Yes,
    No,
    Unparsed,
}

impl ExtractedLabel {
    pub fn matches(self, gold: YesNo) -> bool {
        matches!(
            (self, gold),
            (ExtractedLabel::Yes, YesNo::Yes) | (ExtractedLabel::No, YesNo::No)
        )
    }
}

fn answer_marker() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\banswer\b\s*(?:is\b|:)?").expect("valid regex"))
}

fn label_of(token: &str) -> Option<ExtractedLabel> {
    match token {
        "yes" => Some(ExtractedLabel::Yes),
        "no" => Some(ExtractedLabel::No),
        _ => None,
    }
}

/// Read a yes/no verdict from free text.
///
/// Looks first after the last "answer" marker, then at the leading token,
/// then at the last standalone yes/no anywhere.
pub fn extract_yesno(answer: &str) -> ExtractedLabel {
    if let Some(m) = answer_marker().find_iter(answer).last() {
        if let Some(l) = tokenize(&answer[m.end()..])
            .iter()
            .find_map(|t| label_of(t))
        {
            return l;
        }
    }
    let tokens = tokenize(answer);
    if let Some(l) = tokens.first().and_then(|t| label_of(t)) {
        return l;
    }
    tokens
        .iter()
        .rev()
        .find_map(|t| label_of(t))
        .unwrap_or(ExtractedLabel::Unparsed)
}

/// True when some reference appears as a contiguous token run in the answer.
pub fn matches_reference(answer: &str, references: &[String]) -> bool {
    let hay = tokenize(answer);
    references.iter().any(|r| {
        let needle = tokenize(r);
        !needle.is_empty() && hay.windows(needle.len()).any(|w| w == needle.as_slice())
    })
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS-based F-measure, maximised over references.
pub fn rouge_l(candidate: &str, references: &[String]) -> f64 {
    let cand = tokenize(candidate);
    if cand.is_empty() {
        return 0.0;
    }
    references
        .iter()
        .map(|r| {
            let reference = tokenize(r);
            if reference.is_empty() {
                return 0.0;
            }
            let lcs = lcs_len(&cand, &reference) as f64;
            if lcs == 0.0 {
                return 0.0;
            }
            let p = lcs / cand.len() as f64;
            let rec = lcs / reference.len() as f64;
            2.0 * p * rec / (p + rec)
        })
        .fold(0.0, f64::max)
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    for w in tokens.windows(n) {
        *counts.entry(w).or_insert(0) += 1;
    }
    counts
}

/// Sentence-level BLEU.
///
/// Clipped n-gram precision for orders `1..=min(4, |candidate|)`, geometric
/// mean, and a brevity penalty against the closest reference length. A
/// zero match count at order two or higher is replaced by
/// [`BLEU_EPSILON`]; no unigram overlap gives 0.
pub fn bleu(candidate: &str, references: &[String]) -> f64 {
    let cand = tokenize(candidate);
    let refs: Vec<Vec<String>> = references
        .iter()
        .map(|r| tokenize(r))
        .filter(|r| !r.is_empty())
        .collect();
    if cand.is_empty() || refs.is_empty() {
        return 0.0;
    }
    let max_order = BLEU_MAX_ORDER.min(cand.len());
    let mut log_sum = 0.0;
    for n in 1..=max_order {
        let cand_counts = ngram_counts(&cand, n);
        let mut max_ref: HashMap<&[String], usize> = HashMap::new();
        for r in &refs {
            for (g, c) in ngram_counts(r, n) {
                let e = max_ref.entry(g).or_insert(0);
                *e = (*e).max(c);
            }
        }
        let matched: usize = cand_counts
            .iter()
            .map(|(g, c)| (*c).min(max_ref.get(g).copied().unwrap_or(0)))
            .sum();
        let total = cand.len() + 1 - n;
        let matched = if matched > 0 {
            matched as f64
        } else if n == 1 {
            return 0.0;
        } else {
            BLEU_EPSILON
        };
        log_sum += (matched / total as f64).ln();
    }
    let c = cand.len();
    let r = refs
        .iter()
        .map(Vec::len)
        .min_by_key(|&len| (len.abs_diff(c), len))
        .expect("non-empty references");
    let bp = if c > r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    };
    bp * (log_sum / max_order as f64).exp()
}
