//! Three-stage question answering: a reasoned initial answer, a
//! consistency-based retrieval decision, and evidence-grounded repair.

mod config;
mod engine;
mod record;
mod store;

use thiserror::Error;

use crate::detection::DetectionError;
use crate::prompts::TemplateError;
use crate::providers::ProviderError;
use crate::retrieval::RetrievalError;

pub use config::{
    BackendSpec, Mode, PerturbationTarget, PipelineConfig, ProviderSpec, RetrieverSpec, Thresholds,
};
pub use engine::{last_sentence, Engine, NullRetriever};
pub use record::{
    load_dataset, parse_dataset, sample_records, write_dataset, AnswerTrace, DatasetRecord, Gold,
    QaPairs, RuntimeStats, TraceCounters, TraceStatus, YesNo, FLAG_EXTRACTION_FALLBACK,
    FLAG_RETRIEVAL_EMPTY,
};
pub use store::{RunManifest, RunStore, RunTotals};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Detection(#[from] DetectionError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("dataset line {line}: {message}")]
    Dataset { line: usize, message: String },
    #[error("i/o error: {0}")]
    Io(String),
}

impl PipelineError {
    /// Errors caused by missing or invalid setup rather than a failing call.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            PipelineError::Config(_)
                | PipelineError::Template(_)
                | PipelineError::Dataset { .. }
                | PipelineError::Provider(ProviderError::MissingCredential { .. })
                | PipelineError::Retrieval(RetrievalError::MissingCredential { .. })
        )
    }
}

impl From<std::io::Error> for PipelineError {
    fn from(e: std::io::Error) -> Self {
        PipelineError::Io(e.to_string())
    }
}
