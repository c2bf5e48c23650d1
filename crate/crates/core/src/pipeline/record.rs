use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::detection::{ConsistencyReport, Decision, PerturbationSet, QAPair};
use crate::retrieval::{EvidenceBundle, SearchQuery};

use super::config::Mode;
use super::PipelineError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum YesNo {
    Yes,
    No,
}

impl YesNo {
    pub fn flip(self) -> Self {
        match self {
            YesNo::Yes => YesNo::No,
            YesNo::No => YesNo::Yes,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            YesNo::Yes => "yes",
            YesNo::No => "no",
        }
    }
}

impl fmt::Display for YesNo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Reference answer: free-form reference texts or a yes/no label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Gold {
    Answers(Vec<String>),
    Label(YesNo),
}

/// One dataset line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawRecord", into = "RawRecord")]
pub struct DatasetRecord {
    pub id: String,
    pub question: String,
    pub gold: Gold,
    pub category: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawRecord {
    id: serde_json::Value,
    question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gold_answers: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gold_label: Option<YesNo>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    category: Option<String>,
}

impl TryFrom<RawRecord> for DatasetRecord {
    type Error = String;

    fn try_from(raw: RawRecord) -> Result<Self, Self::Error> {
        let id = match raw.id {
            serde_json::Value::String(s) => s,
            serde_json::Value::Number(n) => n.to_string(),
            other => return Err(format!("id must be a string or number, got {other}")),
        };
        let gold = match (raw.gold_answers, raw.gold_label) {
            (Some(a), None) => Gold::Answers(a),
            (None, Some(l)) => Gold::Label(l),
            (Some(_), Some(_)) => return Err("record has both gold_answers and gold_label".into()),
            (None, None) => return Err("record needs gold_answers or gold_label".into()),
        };
        if raw.question.trim().is_empty() {
            return Err(format!("record {id} has an empty question"));
        }
        Ok(DatasetRecord {
            id,
            question: raw.question,
            gold,
            category: raw.category,
        })
    }
}

impl From<DatasetRecord> for RawRecord {
    fn from(r: DatasetRecord) -> Self {
        let (gold_answers, gold_label) = match r.gold {
            Gold::Answers(a) => (Some(a), None),
            Gold::Label(l) => (None, Some(l)),
        };
        RawRecord {
            id: serde_json::Value::String(r.id),
            question: r.question,
            gold_answers,
            gold_label,
            category: r.category,
        }
    }
}

impl DatasetRecord {
    pub fn yes_no(id: impl Into<String>, question: impl Into<String>, label: YesNo) -> Self {
        Self {
            id: id.into(),
            question: question.into(),
            gold: Gold::Label(label),
            category: None,
        }
    }

    pub fn long_form(
        id: impl Into<String>,
        question: impl Into<String>,
        answers: Vec<String>,
    ) -> Self {
        Self {
            id: id.into(),
            question: question.into(),
            gold: Gold::Answers(answers),
            category: None,
        }
    }
}

/// Parse JSONL, skipping blank lines. Errors carry the 1-based line number.
pub fn parse_dataset(text: &str) -> Result<Vec<DatasetRecord>, PipelineError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| PipelineError::Dataset {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn load_dataset(path: &Path) -> Result<Vec<DatasetRecord>, PipelineError> {
    let text = fs::read_to_string(path)
        .map_err(|e| PipelineError::Io(format!("{}: {e}", path.display())))?;
    parse_dataset(&text)
}

pub fn write_dataset(path: &Path, records: &[DatasetRecord]) -> std::io::Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    fs::write(path, out)
}

/// Seeded sample of `n` records, returned in their original order.
pub fn sample_records(records: &[DatasetRecord], n: usize, seed: u64) -> Vec<DatasetRecord> {
    if n >= records.len() {
        return records.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked: BTreeSet<usize> = sample(&mut rng, records.len(), n).into_iter().collect();
    picked.into_iter().map(|i| records[i].clone()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceStatus {
    Ok,
    Error,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaPairs {
    #[serde(default)]
    pub source: Vec<QAPair>,
    #[serde(default)]
    pub target: Vec<QAPair>,
    #[serde(default)]
    pub verifier: Vec<QAPair>,
}

/// Deterministic call accounting for one question.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceCounters {
    /// Chat requests issued, whether answered live or from cache.
    pub llm_calls: u64,
    /// Search queries dispatched.
    pub retrieval_calls: u64,
}

/// Run-dependent measurements, kept out of the trace file so that traces
/// are byte-identical across replays.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuntimeStats {
    pub cache_hits: u64,
    pub backend_calls: u64,
    pub wall_time_ms: u64,
}

pub const FLAG_RETRIEVAL_EMPTY: &str = "retrieval_empty";
pub const FLAG_EXTRACTION_FALLBACK: &str = "extraction_fallback";

/// Full audit record of one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerTrace {
    pub record: DatasetRecord,
    pub mode: Mode,
    pub status: TraceStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub thought: Option<String>,
    pub initial_answer: Option<String>,
    pub perturbations: Option<PerturbationSet>,
    #[serde(default)]
    pub qa_pairs: QaPairs,
    pub consistency: Option<ConsistencyReport>,
    #[serde(default)]
    pub queries: Vec<SearchQuery>,
    pub evidence: Option<EvidenceBundle>,
    pub repaired_answer: Option<String>,
    pub final_answer: Option<String>,
    #[serde(default)]
    pub flags: Vec<String>,
    pub counters: TraceCounters,
    #[serde(skip)]
    pub runtime: RuntimeStats,
}

impl AnswerTrace {
    pub fn new(record: &DatasetRecord, mode: Mode) -> Self {
        Self {
            record: record.clone(),
            mode,
            status: TraceStatus::Ok,
            error: None,
            thought: None,
            initial_answer: None,
            perturbations: None,
            qa_pairs: QaPairs::default(),
            consistency: None,
            queries: Vec::new(),
            evidence: None,
            repaired_answer: None,
            final_answer: None,
            flags: Vec::new(),
            counters: TraceCounters::default(),
            runtime: RuntimeStats::default(),
        }
    }

    pub fn id(&self) -> &str {
        &self.record.id
    }

    pub fn decision(&self) -> Option<Decision> {
        self.consistency.as_ref().map(|c| c.decision)
    }

    pub fn is_error(&self) -> bool {
        self.status == TraceStatus::Error
    }

    pub fn has_flag(&self, flag: &str) -> bool {
        self.flags.iter().any(|f| f == flag)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_both_gold_forms() {
        let text = r#"{"id": "a", "question": "Q1?", "gold_answers": ["x", "y"]}

{"id": 7, "question": "Q2?", "gold_label": "yes", "category": "c"}
"#;
        let recs = parse_dataset(text).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].gold, Gold::Answers(vec!["x".into(), "y".into()]));
        assert_eq!(recs[1].id, "7");
        assert_eq!(recs[1].gold, Gold::Label(YesNo::Yes));
    }

    #[test]
    fn rejects_missing_or_double_gold() {
        let err = parse_dataset(r#"{"id": "a", "question": "Q"}"#).unwrap_err();
        assert!(matches!(err, PipelineError::Dataset { line: 1, .. }));
        assert!(parse_dataset(
            r#"{"id": "a", "question": "Q", "gold_label": "no", "gold_answers": []}"#
        )
        .is_err());
        assert!(parse_dataset(r#"{"id": "a", "question": "Q", "gold_label": "maybe"}"#).is_err());
    }

    #[test]
    fn record_json_round_trip() {
        let r = DatasetRecord::yes_no("q1", "Is it?", YesNo::No);
        let s = serde_json::to_string(&r).unwrap();
        assert_eq!(s, r#"{"id":"q1","question":"Is it?","gold_label":"no"}"#);
        assert_eq!(serde_json::from_str::<DatasetRecord>(&s).unwrap(), r);
    }

    #[test]
    fn seeded_sampling_is_stable() {
        let recs: Vec<_> = (0..200)
            .map(|i| DatasetRecord::yes_no(i.to_string(), "q", YesNo::Yes))
            .collect();
        let a = sample_records(&recs, 50, 7);
        let b = sample_records(&recs, 50, 7);
        assert_eq!(a, b);
        assert_eq!(a.len(), 50);
        let c = sample_records(&recs, 50, 8);
        assert_ne!(a, c);
        assert_eq!(sample_records(&recs, 500, 1).len(), 200);
    }
}
