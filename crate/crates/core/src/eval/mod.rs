//! Scoring of completed traces: correctness, lexical overlap, call
//! efficiency and hallucination attribution.

mod metrics;
mod sweep;
mod tables;

use serde::{Deserialize, Serialize};

use crate::detection::Decision;
use crate::pipeline::{AnswerTrace, Gold};

pub use metrics::{
    bleu, extract_yesno, matches_reference, rouge_l, ExtractedLabel, BLEU_EPSILON, BLEU_MAX_ORDER,
};
pub use sweep::{sweep, SweepAxis, SweepRow};
pub use tables::{
    render_attribution, render_call_table, render_metric_table, render_sweep_table, sweep_csv,
};

/// Whether the final answer matches the gold, or `None` for errored traces.
pub fn is_correct(trace: &AnswerTrace) -> Option<bool> {
    if trace.is_error() {
        return None;
    }
    let answer = trace.final_answer.as_deref().unwrap_or_default();
    Some(match &trace.record.gold {
        Gold::Label(label) => extract_yesno(answer).matches(*label),
        Gold::Answers(refs) => matches_reference(answer, refs),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribution {
    Correct,
    /// Wrong answer kept from the model's own knowledge.
    Internal,
    /// Wrong answer after evidence was retrieved.
    External,
    Undetermined,
}

impl Attribution {
    pub const ALL: [Attribution; 4] = [
        Attribution::Correct,
        Attribution::Internal,
        Attribution::External,
        Attribution::Undetermined,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Attribution::Correct => "correct",
            Attribution::Internal => "internal",
            Attribution::External => "external",
            Attribution::Undetermined => "undetermined",
        }
    }
}

pub fn attribute(trace: &AnswerTrace) -> Attribution {
    match (is_correct(trace), trace.decision()) {
        (None, _) => Attribution::Undetermined,
        (Some(true), _) => Attribution::Correct,
        (Some(false), Some(Decision::AcceptInitial)) => Attribution::Internal,
        (Some(false), Some(Decision::Retrieve)) => Attribution::External,
        (Some(false), None) => Attribution::Undetermined,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributionCounts {
    pub correct: usize,
    pub internal: usize,
    pub external: usize,
    pub undetermined: usize,
}

impl AttributionCounts {
    pub fn of(traces: &[AnswerTrace]) -> Self {
        let mut c = Self::default();
        for t in traces {
            *c.slot(attribute(t)) += 1;
        }
        c
    }

    fn slot(&mut self, a: Attribution) -> &mut usize {
        match a {
            Attribution::Correct => &mut self.correct,
            Attribution::Internal => &mut self.internal,
            Attribution::External => &mut self.external,
            Attribution::Undetermined => &mut self.undetermined,
        }
    }

    pub fn get(&self, a: Attribution) -> usize {
        match a {
            Attribution::Correct => self.correct,
            Attribution::Internal => self.internal,
            Attribution::External => self.external,
            Attribution::Undetermined => self.undetermined,
        }
    }

    pub fn total(&self) -> usize {
        self.correct + self.internal + self.external + self.undetermined
    }

    pub fn percent(&self, a: Attribution) -> f64 {
        match self.total() {
            0 => 0.0,
            n => 100.0 * self.get(a) as f64 / n as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Exact-match accuracy over yes/no records.
    pub accuracy: Option<f64>,
    /// Mean sentence BLEU over records with reference texts.
    pub bleu: Option<f64>,
    pub rouge_l: Option<f64>,
    pub retrieval_rate: f64,
    pub avg_retrieval_calls: f64,
    pub avg_llm_calls: f64,
    pub n: usize,
    pub errors: usize,
}

fn mean(sum: f64, n: usize) -> Option<f64> {
    (n > 0).then(|| sum / n as f64)
}

impl MetricReport {
    pub fn of(traces: &[AnswerTrace]) -> Self {
        let n = traces.len();
        let (mut acc_sum, mut acc_n) = (0.0, 0);
        let (mut bleu_sum, mut rouge_sum, mut text_n) = (0.0, 0.0, 0);
        let (mut retrieved, mut rcalls, mut lcalls, mut errors) = (0usize, 0u64, 0u64, 0usize);
        for t in traces {
            let answer = t.final_answer.as_deref().unwrap_or_default();
            match &t.record.gold {
                Gold::Label(_) => {
                    acc_n += 1;
                    acc_sum += (is_correct(t) == Some(true)) as u8 as f64;
                }
                Gold::Answers(refs) => {
                    text_n += 1;
                    bleu_sum += bleu(answer, refs);
                    rouge_sum += rouge_l(answer, refs);
                }
            }
            retrieved += (t.decision() == Some(Decision::Retrieve)) as usize;
            rcalls += t.counters.retrieval_calls;
            lcalls += t.counters.llm_calls;
            errors += t.is_error() as usize;
        }
        Self {
            accuracy: mean(acc_sum, acc_n),
            bleu: mean(bleu_sum, text_n),
            rouge_l: mean(rouge_sum, text_n),
            retrieval_rate: mean(retrieved as f64, n).unwrap_or(0.0),
            avg_retrieval_calls: mean(rcalls as f64, n).unwrap_or(0.0),
            avg_llm_calls: mean(lcalls as f64, n).unwrap_or(0.0),
            n,
            errors,
        }
    }
}

fn fmt_score(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

/// CSV of per-question consistency scores and correctness, for density
/// or ROC analysis. Absent values are empty fields.
pub fn export_score_labels(traces: &[AnswerTrace]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["id", "z_cl", "z_cm", "z_hybrid", "correct"])
        .expect("in-memory write");
    for t in traces {
        let c = t.consistency.as_ref();
        let correct = is_correct(t).map(|b| b.to_string()).unwrap_or_default();
        w.write_record([
            t.id().to_string(),
            fmt_score(c.and_then(|c| c.z_cl)),
            fmt_score(c.and_then(|c| c.z_cm)),
            fmt_score(c.and_then(|c| c.z_hybrid)),
            correct,
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8 csv")
}
