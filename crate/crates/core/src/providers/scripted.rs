//! Deterministic backend that answers from a prompt→response script.
//!
//! Entries match on the exact canonicalized message list, optionally
//! narrowed to a model id and a sample index. Regex rules are consulted only
//! when no entry matches. A request matching nothing is a [`ProviderError::ScriptMiss`].

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    canonical_messages, ChatBackend, ChatRequest, ChatResponse, FinishReason, Message, Provenance,
    ProviderError,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_index: Option<u32>,
    pub messages: Vec<Message>,
    pub response: String,
}

/// Fallback rule: `pattern` is matched against the newline-joined message
/// contents; `response` may reference capture groups as `$1` or `${name}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptRule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    pub pattern: String,
    pub response: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Script {
    #[serde(default)]
    pub entries: Vec<ScriptEntry>,
    #[serde(default)]
    pub rules: Vec<ScriptRule>,
}

impl Script {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entry(
        mut self,
        model: Option<&str>,
        messages: Vec<Message>,
        response: impl Into<String>,
    ) -> Self {
        self.entries.push(ScriptEntry {
            model: model.map(str::to_string),
            sample_index: None,
            messages,
            response: response.into(),
        });
        self
    }

    /// Shorthand for a single-user-message entry that matches any model.
    pub fn user(self, prompt: impl Into<String>, response: impl Into<String>) -> Self {
        self.entry(None, vec![Message::user(prompt)], response)
    }

    pub fn rule(mut self, model: Option<&str>, pattern: &str, response: impl Into<String>) -> Self {
        self.rules.push(ScriptRule {
            model: model.map(str::to_string),
            pattern: pattern.to_string(),
            response: response.into(),
        });
        self
    }

    pub fn load(path: &Path) -> Result<Self, ProviderError> {
        let raw = fs::read_to_string(path)
            .map_err(|e| ProviderError::InvalidRequest(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&raw)
            .map_err(|e| ProviderError::InvalidRequest(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let body = serde_json::to_vec(self).map_err(std::io::Error::other)?;
        fs::write(path, body)
    }
}

#[derive(Debug)]
struct Candidate {
    model: Option<String>,
    sample_index: Option<u32>,
    response: String,
}

#[derive(Debug)]
struct CompiledRule {
    model: Option<String>,
    pattern: Regex,
    response: String,
}

#[derive(Debug)]
struct Compiled {
    index: HashMap<[u8; 32], Vec<Candidate>>,
    rules: Vec<CompiledRule>,
}

#[derive(Debug)]
pub struct ScriptedBackend {
    compiled: Arc<Compiled>,
    attempts: AtomicU64,
}

fn message_digest(messages: &[Message]) -> [u8; 32] {
    Sha256::digest(canonical_messages(messages).as_bytes()).into()
}

impl ScriptedBackend {
    pub fn new(script: Script) -> Result<Self, ProviderError> {
        let mut index: HashMap<[u8; 32], Vec<Candidate>> = HashMap::new();
        for e in script.entries {
            index
                .entry(message_digest(&e.messages))
                .or_default()
                .push(Candidate {
                    model: e.model,
                    sample_index: e.sample_index,
                    response: e.response,
                });
        }
        let rules = script
            .rules
            .into_iter()
            .map(|r| {
                Regex::new(&r.pattern)
                    .map(|pattern| CompiledRule {
                        model: r.model,
                        pattern,
                        response: r.response,
                    })
                    .map_err(|e| ProviderError::InvalidRequest(format!("bad script rule: {e}")))
            })
            .collect::<Result<_, _>>()?;
        Ok(Self {
            compiled: Arc::new(Compiled { index, rules }),
            attempts: AtomicU64::new(0),
        })
    }

    /// A backend over the same compiled script with its own attempt count.
    pub fn fork(&self) -> Self {
        Self {
            compiled: self.compiled.clone(),
            attempts: AtomicU64::new(0),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self, ProviderError> {
        Self::new(Script::load(path)?)
    }

    fn lookup(&self, request: &ChatRequest) -> Option<String> {
        if let Some(cands) = self.compiled.index.get(&message_digest(&request.messages)) {
            // Most specific match wins: (model, sample) > (model) > (sample) > any.
            let best = cands
                .iter()
                .filter(|c| c.model.as_deref().is_none_or(|m| m == request.model_id))
                .filter(|c| c.sample_index.is_none_or(|s| s == request.sample_index))
                .max_by_key(|c| (c.model.is_some(), c.sample_index.is_some()));
            if let Some(c) = best {
                return Some(c.response.clone());
            }
        }
        let flat = request.flat_text();
        self.compiled
            .rules
            .iter()
            .filter(|r| r.model.as_deref().is_none_or(|m| m == request.model_id))
            .find_map(|r| {
                r.pattern.captures(&flat).map(|caps| {
                    let mut out = String::new();
                    caps.expand(&r.response, &mut out);
                    out
                })
            })
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        self.attempts.fetch_add(1, Ordering::Relaxed);
        match self.lookup(request) {
            Some(text) => Ok(ChatResponse {
                text,
                finish_reason: FinishReason::Complete,
                usage: None,
                provenance: Provenance::Script,
            }),
            None => {
                let flat = request.flat_text();
                let prompt_preview: String = flat.chars().take(120).collect();
                Err(ProviderError::ScriptMiss {
                    model: request.model_id.clone(),
                    prompt_preview,
                })
            }
        }
    }

    fn attempts(&self) -> u64 {
        self.attempts.load(Ordering::Relaxed)
    }

    fn describe(&self) -> String {
        format!(
            "scripted({} prompts, {} rules)",
            self.compiled.index.len(),
            self.compiled.rules.len()
        )
    }
}
