//! Hallucination detection by answer consistency.
//!
//! The input question is diversified into `k` paraphrases. Each paraphrase
//! is answered by the answerer in the source language, by the answerer in a
//! target language (after translation), and by an independent verifier.
//! Aligned QA pairs are judged for semantic equivalence; the fraction of
//! equivalent pairs gives the cross-language score `z_cl` and the
//! cross-model score `z_cm`, combined as `z_cl + alpha * z_cm`. A score below
//! the threshold routes the question to retrieval.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompts::format_qa;
use crate::providers::{ChatRequest, ProviderError};
use crate::stage::StageContext;

#[derive(Debug, Error)]
pub enum DetectionError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("diversification produced {obtained} of {requested} requested questions")]
    DiversificationFailure { requested: usize, obtained: usize },
    #[error("pair lists are not aligned: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("{0}")]
    Domain(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Language {
    Source,
    Target,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Producer {
    Answerer,
    Verifier,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerturbationSet {
    pub original: String,
    pub requested_k: usize,
    pub variants: Vec<String>,
}

impl PerturbationSet {
    /// Effective number of perturbations (may be below `requested_k` after
    /// a tolerated shortfall).
    pub fn k(&self) -> usize {
        self.variants.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAPair {
    pub question: String,
    pub response: String,
    pub language: Language,
    pub producer: Producer,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl QAPair {
    pub fn is_empty(&self) -> bool {
        self.response.trim().is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Equivalent,
    Inequivalent,
}

impl Verdict {
    pub fn score(self) -> f64 {
        match self {
            Verdict::Equivalent => 1.0,
            Verdict::Inequivalent => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EquivalenceVerdict {
    pub value: Verdict,
    pub raw_text: String,
    pub parsed_ok: bool,
    /// Set when the verdict was assigned without asking the checker
    /// (empty answer on either side, or the checker call failed).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forced: Option<String>,
}

impl EquivalenceVerdict {
    pub fn from_reply(raw: &str) -> Self {
        match parse_verdict(raw) {
            Some(true) => Self {
                value: Verdict::Equivalent,
                raw_text: raw.to_string(),
                parsed_ok: true,
                forced: None,
            },
            Some(false) => Self {
                value: Verdict::Inequivalent,
                raw_text: raw.to_string(),
                parsed_ok: true,
                forced: None,
            },
            None => {
                log::warn!("unparseable equivalence verdict {raw:?}; counting as inequivalent");
                Self {
                    value: Verdict::Inequivalent,
                    raw_text: raw.to_string(),
                    parsed_ok: false,
                    forced: None,
                }
            }
        }
    }

    pub fn forced(reason: impl Into<String>) -> Self {
        Self {
            value: Verdict::Inequivalent,
            raw_text: String::new(),
            parsed_ok: false,
            forced: Some(reason.into()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckMode {
    CrossLanguage,
    CrossModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    AcceptInitial,
    Retrieve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub z_cl: Option<f64>,
    pub z_cm: Option<f64>,
    pub alpha: f64,
    pub z_hybrid: Option<f64>,
    #[serde(default)]
    pub verdicts_cl: Vec<EquivalenceVerdict>,
    #[serde(default)]
    pub verdicts_cm: Vec<EquivalenceVerdict>,
    /// Score compared against the threshold, if any.
    pub gated_score: Option<f64>,
    pub threshold: Option<f64>,
    pub decision: Decision,
}

/// Parse a checker reply: the first word, ignoring case and surrounding
/// punctuation, must be `true` or `false`.
pub fn parse_verdict(raw: &str) -> Option<bool> {
    let trimmed = raw.trim_start_matches(|c: char| !c.is_alphanumeric());
    let word: String = trimmed
        .chars()
        .take_while(|c| c.is_alphabetic())
        .flat_map(char::to_lowercase)
        .collect();
    match word.as_str() {
        "true" => Some(true),
        "false" => Some(false),
        _ => None,
    }
}

fn list_marker() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"^(?i)(?:[-*•·]+\s*|\(?\d{1,3}\s*[.):\]、]\s*|q\d{1,3}\s*[.:)]\s*|question\s*\d{1,3}\s*[.:)]\s*)",
        )
        .expect("valid regex")
    })
}

fn question_span() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[^?？]+[?？]").expect("valid regex"))
}

fn strip_quotes(s: &str) -> &str {
    s.trim()
        .trim_matches(|c| matches!(c, '"' | '\'' | '“' | '”' | '`'))
        .trim()
}

/// Parse a diversification reply into at most `k` questions.
///
/// Accepts numbered or bulleted lists, one question per line, or prose with
/// several questions on one line. Unnumbered lines ending in `:` are
/// treated as preamble.
pub fn parse_variants(text: &str, k: usize) -> Vec<String> {
    let mut out = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let numbered = list_marker().find(line);
        let body = match numbered {
            Some(m) => &line[m.end()..],
            None => line,
        };
        let body = strip_quotes(body);
        if body.is_empty() || (numbered.is_none() && body.ends_with(':')) {
            continue;
        }
        let questions: Vec<&str> = question_span()
            .find_iter(body)
            .map(|m| m.as_str())
            .collect();
        if questions.len() >= 2 {
            out.extend(
                questions
                    .into_iter()
                    .map(strip_quotes)
                    .filter(|q| !q.is_empty())
                    .map(str::to_string),
            );
        } else {
            out.push(body.to_string());
        }
    }
    out.truncate(k);
    out
}

/// Generate `k` paraphrases of `question`.
///
/// A short reply is re-sampled once with a new sample index; the longer of
/// the two parses is kept. Fewer than `ceil(k/2)` questions is a failure.
pub fn diversify(
    ctx: &StageContext<'_>,
    question: &str,
    k: usize,
) -> Result<PerturbationSet, DetectionError> {
    if k == 0 {
        return Err(DetectionError::Domain("k must be at least 1".into()));
    }
    let messages = ctx.templates.diversify_messages(question, k);
    let request = ctx.answerer.request(messages, ctx.temperatures.diversify);
    let first = ctx.call(ctx.answerer, &request)?;
    let mut variants = parse_variants(&first.text, k);
    if variants.len() < k {
        let retry = request.clone().with_sample_index(1);
        match ctx.call(ctx.answerer, &retry) {
            Ok(second) => {
                let again = parse_variants(&second.text, k);
                if again.len() > variants.len() {
                    variants = again;
                }
            }
            Err(err) => log::warn!("diversification re-sample failed: {err}"),
        }
    }
    let minimum = k.div_ceil(2);
    if variants.len() < minimum {
        return Err(DetectionError::DiversificationFailure {
            requested: k,
            obtained: variants.len(),
        });
    }
    if variants.len() < k {
        log::warn!(
            "diversification returned {} of {k} questions; scoring with k'={}",
            variants.len(),
            variants.len()
        );
    }
    Ok(PerturbationSet {
        original: question.to_string(),
        requested_k: k,
        variants,
    })
}

/// Answer every variant greedily.
///
/// For the target language each variant is first translated by the
/// answerer, then answered in that language by `producer`. Failed calls
/// yield pairs with an empty response and the error recorded.
pub fn answer_variants(
    ctx: &StageContext<'_>,
    variants: &[String],
    language: Language,
    producer: Producer,
) -> Vec<QAPair> {
    let provider = match producer {
        Producer::Answerer => ctx.answerer,
        Producer::Verifier => ctx.verifier,
    };
    let questions: Vec<Result<String, String>> = match language {
        Language::Source => variants.iter().map(|v| Ok(v.clone())).collect(),
        Language::Target => {
            let reqs: Vec<ChatRequest> = variants
                .iter()
                .map(|v| {
                    ctx.greedy(
                        ctx.answerer,
                        ctx.templates.translate_messages(v, &ctx.languages.target),
                    )
                })
                .collect();
            ctx.call_batch(ctx.answerer, &reqs)
                .into_iter()
                .map(|r| match r {
                    Ok(resp) if !resp.text.trim().is_empty() => Ok(resp.text.trim().to_string()),
                    Ok(_) => Err("empty translation".to_string()),
                    Err(e) => Err(format!("translation failed: {e}")),
                })
                .collect()
        }
    };

    // Only answer the slots whose question is available.
    let pending: Vec<(usize, ChatRequest)> = questions
        .iter()
        .enumerate()
        .filter_map(|(i, q)| {
            q.as_ref().ok().map(|q| {
                let messages = match language {
                    Language::Source => ctx.templates.answer_messages(q),
                    Language::Target => ctx
                        .templates
                        .answer_in_language_messages(q, &ctx.languages.target),
                };
                (i, ctx.greedy(provider, messages))
            })
        })
        .collect();
    let reqs: Vec<ChatRequest> = pending.iter().map(|(_, r)| r.clone()).collect();
    let mut answers: Vec<Option<Result<String, String>>> = vec![None; variants.len()];
    for ((i, _), res) in pending.iter().zip(ctx.call_batch(provider, &reqs)) {
        answers[*i] = Some(res.map(|r| r.text).map_err(|e| e.to_string()));
    }

    questions
        .into_iter()
        .zip(answers)
        .map(|(q, a)| {
            let (question, response, error) = match (q, a) {
                (Ok(q), Some(Ok(text))) => (q, text, None),
                (Ok(q), Some(Err(e))) => (q, String::new(), Some(e)),
                (Ok(q), None) => (q, String::new(), Some("not answered".into())),
                (Err(e), _) => (String::new(), String::new(), Some(e)),
            };
            if error.is_some() {
                log::warn!(
                    "answer slot failed: {}",
                    error.as_deref().unwrap_or_default()
                );
            }
            QAPair {
                question,
                response,
                language,
                producer,
                error,
            }
        })
        .collect()
}

fn check_request(ctx: &StageContext<'_>, a: &QAPair, b: &QAPair, mode: CheckMode) -> ChatRequest {
    let messages = match mode {
        CheckMode::CrossLanguage => ctx.templates.check_cross_language_messages(
            &format_qa(&a.question, "A", &a.response),
            &format_qa(&b.question, "B", &b.response),
            &ctx.languages.source,
            &ctx.languages.target,
        ),
        CheckMode::CrossModel => ctx.templates.check_cross_model_messages(
            &format_qa(&a.question, "A", &a.response),
            &format_qa(&b.question, "A", &b.response),
        ),
    };
    ctx.greedy(ctx.answerer, messages)
}

/// Ask the checker whether two QA pairs are semantically equivalent.
/// Never fails: empty answers and checker errors count as inequivalent.
pub fn check_equivalence(
    ctx: &StageContext<'_>,
    a: &QAPair,
    b: &QAPair,
    mode: CheckMode,
) -> EquivalenceVerdict {
    if a.is_empty() || b.is_empty() {
        return EquivalenceVerdict::forced("empty response");
    }
    match ctx.call(ctx.answerer, &check_request(ctx, a, b, mode)) {
        Ok(r) => EquivalenceVerdict::from_reply(&r.text),
        Err(e) => {
            log::warn!("equivalence check failed: {e}");
            EquivalenceVerdict::forced(format!("checker error: {e}"))
        }
    }
}

/// Check aligned pairs, batching the checker calls.
pub fn check_all(
    ctx: &StageContext<'_>,
    left: &[QAPair],
    right: &[QAPair],
    mode: CheckMode,
) -> Result<Vec<EquivalenceVerdict>, DetectionError> {
    if left.len() != right.len() {
        return Err(DetectionError::LengthMismatch {
            left: left.len(),
            right: right.len(),
        });
    }
    let mut verdicts: Vec<Option<EquivalenceVerdict>> = vec![None; left.len()];
    let mut pending = Vec::new();
    for (j, (a, b)) in left.iter().zip(right).enumerate() {
        if a.is_empty() || b.is_empty() {
            verdicts[j] = Some(EquivalenceVerdict::forced("empty response"));
        } else {
            pending.push((j, check_request(ctx, a, b, mode)));
        }
    }
    let reqs: Vec<ChatRequest> = pending.iter().map(|(_, r)| r.clone()).collect();
    for ((j, _), res) in pending.iter().zip(ctx.call_batch(ctx.answerer, &reqs)) {
        verdicts[*j] = Some(match res {
            Ok(r) => EquivalenceVerdict::from_reply(&r.text),
            Err(e) => {
                log::warn!("equivalence check failed: {e}");
                EquivalenceVerdict::forced(format!("checker error: {e}"))
            }
        });
    }
    Ok(verdicts
        .into_iter()
        .map(|v| v.expect("every slot filled"))
        .collect())
}

/// Fraction of equivalent verdicts.
pub fn consistency_score(verdicts: &[EquivalenceVerdict]) -> f64 {
    if verdicts.is_empty() {
        return 0.0;
    }
    let equivalent = verdicts
        .iter()
        .filter(|v| v.value == Verdict::Equivalent)
        .count();
    equivalent as f64 / verdicts.len() as f64
}

/// Cross-language score over source-language and target-language pairs.
pub fn score_cross_language(
    ctx: &StageContext<'_>,
    pairs_src: &[QAPair],
    pairs_tgt: &[QAPair],
) -> Result<(f64, Vec<EquivalenceVerdict>), DetectionError> {
    let verdicts = check_all(ctx, pairs_src, pairs_tgt, CheckMode::CrossLanguage)?;
    Ok((consistency_score(&verdicts), verdicts))
}

/// Cross-model score over answerer and verifier pairs.
pub fn score_cross_model(
    ctx: &StageContext<'_>,
    pairs_answerer: &[QAPair],
    pairs_verifier: &[QAPair],
) -> Result<(f64, Vec<EquivalenceVerdict>), DetectionError> {
    let verdicts = check_all(ctx, pairs_answerer, pairs_verifier, CheckMode::CrossModel)?;
    Ok((consistency_score(&verdicts), verdicts))
}

/// `z_cl + alpha * z_cm`.
pub fn score_hybrid(z_cl: f64, z_cm: f64, alpha: f64) -> Result<f64, DetectionError> {
    if !(0.0..=1.0).contains(&z_cl) || !(0.0..=1.0).contains(&z_cm) {
        return Err(DetectionError::Domain(format!(
            "consistency scores must lie in [0, 1], got z_cl={z_cl}, z_cm={z_cm}"
        )));
    }
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(DetectionError::Domain(format!(
            "alpha must be finite and >= 0, got {alpha}"
        )));
    }
    Ok(z_cl + alpha * z_cm)
}

/// Retrieve iff the score is strictly below the threshold.
pub fn decide(z: f64, threshold: f64) -> Decision {
    if z < threshold {
        Decision::Retrieve
    } else {
        Decision::AcceptInitial
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn verdicts(pattern: &[bool]) -> Vec<EquivalenceVerdict> {
        pattern
            .iter()
            .map(|&t| EquivalenceVerdict::from_reply(if t { "True" } else { "False" }))
            .collect()
    }

    #[test]
    fn verdict_parsing() {
        assert_eq!(parse_verdict("True"), Some(true));
        assert_eq!(parse_verdict("True."), Some(true));
        assert_eq!(parse_verdict("false."), Some(false));
        assert_eq!(parse_verdict("  **FALSE**"), Some(false));
        assert_eq!(parse_verdict("'True.'"), Some(true));
        assert_eq!(parse_verdict("I cannot determine"), None);
        assert_eq!(parse_verdict("Truely"), None);
        assert_eq!(parse_verdict(""), None);
    }

    #[test]
    fn unparseable_reply_is_inequivalent() {
        let v = EquivalenceVerdict::from_reply("I cannot determine");
        assert_eq!(v.value, Verdict::Inequivalent);
        assert!(!v.parsed_ok);
        assert_eq!(v.raw_text, "I cannot determine");
    }

    #[test]
    fn scores_are_means() {
        let t = true;
        let f = false;
        assert_eq!(consistency_score(&verdicts(&[t, t, t, f, f, f])), 0.5);
        assert_eq!(consistency_score(&verdicts(&[t, f, t, f, t, f])), 0.5);
        assert_eq!(consistency_score(&verdicts(&[t; 6])), 1.0);
        assert_eq!(consistency_score(&verdicts(&[f; 6])), 0.0);
        assert_eq!(consistency_score(&verdicts(&[t])), 1.0);
    }

    #[test]
    fn hybrid_arithmetic() {
        assert_eq!(score_hybrid(0.5, 0.5, 1.0).unwrap(), 1.0);
        assert!((score_hybrid(0.6, 0.8, 1.0).unwrap() - 1.4).abs() < 1e-12);
        assert_eq!(score_hybrid(0.3, 0.0, 7.5).unwrap(), 0.3);
        assert!(score_hybrid(1.2, 0.0, 1.0).is_err());
        assert!(score_hybrid(0.5, -0.1, 1.0).is_err());
        assert!(score_hybrid(0.5, 0.5, -1.0).is_err());
    }

    #[test]
    fn gating_is_strict() {
        assert_eq!(decide(0.5, 0.6), Decision::Retrieve);
        assert_eq!(decide(0.6, 0.6), Decision::AcceptInitial);
        assert_eq!(decide(1.0, 1.0), Decision::AcceptInitial);
        assert_eq!(decide(1.0, 0.3), Decision::AcceptInitial);
    }

    #[test]
    fn parse_numbered_list() {
        let text = "1. Who is the author of Hamlet?\n2. Who penned Hamlet?\n3) Hamlet was written by whom?\n4. Which writer created Hamlet?\n5. Who composed the play Hamlet?\n6. Whose play is Hamlet?";
        let v = parse_variants(text, 6);
        assert_eq!(v.len(), 6);
        assert_eq!(v[0], "Who is the author of Hamlet?");
        assert_eq!(v[2], "Hamlet was written by whom?");
    }

    #[test]
    fn parse_surplus_keeps_first_k() {
        let text: String = (1..=8).map(|i| format!("{i}. Question {i}?\n")).collect();
        let v = parse_variants(&text, 6);
        assert_eq!(v.len(), 6);
        assert_eq!(v[5], "Question 6?");
    }

    #[test]
    fn parse_skips_preamble_and_handles_prose() {
        let text = "Here are some equivalent questions:\n- \"Who wrote Hamlet?\"\n* Who is Hamlet's author?";
        assert_eq!(
            parse_variants(text, 6),
            vec!["Who wrote Hamlet?", "Who is Hamlet's author?"]
        );
        let prose = "Who wrote Hamlet? Who is the author of Hamlet? Which playwright wrote Hamlet?";
        assert_eq!(parse_variants(prose, 6).len(), 3);
    }

    #[test]
    fn forced_verdict_never_equivalent() {
        let v = EquivalenceVerdict::forced("empty response");
        assert_eq!(v.value, Verdict::Inequivalent);
    }
}
