//! Shared per-question context handed to every stage.

use serde::{Deserialize, Serialize};

use crate::prompts::PromptTemplates;
use crate::providers::{CallTally, ChatRequest, ChatResponse, Message, Provider, ProviderError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanguagePair {
    pub source: String,
    pub target: String,
}

impl Default for LanguagePair {
    fn default() -> Self {
        Self {
            source: "en".into(),
            target: "zh".into(),
        }
    }
}

/// Sampling temperatures: high for question diversification, greedy elsewhere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Temperatures {
    pub diversify: f64,
    pub other: f64,
}

impl Default for Temperatures {
    fn default() -> Self {
        Self {
            diversify: 1.0,
            other: 0.0,
        }
    }
}

/// Borrowed view of everything a stage needs to issue model calls.
#[derive(Clone, Copy)]
pub struct StageContext<'a> {
    pub templates: &'a PromptTemplates,
    /// The model being corrected; also translates and checks equivalence.
    pub answerer: &'a Provider,
    /// Independent model for cross-model answers.
    pub verifier: &'a Provider,
    pub languages: &'a LanguagePair,
    pub temperatures: Temperatures,
    pub tally: &'a CallTally,
}

impl<'a> StageContext<'a> {
    pub fn greedy(&self, provider: &Provider, messages: Vec<Message>) -> ChatRequest {
        provider.request(messages, self.temperatures.other)
    }

    pub fn call(
        &self,
        provider: &Provider,
        request: &ChatRequest,
    ) -> Result<ChatResponse, ProviderError> {
        provider.complete_tallied(request, self.tally)
    }

    pub fn call_batch(
        &self,
        provider: &Provider,
        requests: &[ChatRequest],
    ) -> Vec<Result<ChatResponse, ProviderError>> {
        provider.complete_batch_tallied(requests, self.tally)
    }
}
