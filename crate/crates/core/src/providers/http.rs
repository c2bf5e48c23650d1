//! Generic JSON chat-completion client.
//!
//! Request body: `{model, messages: [{role, content}], temperature, seed?}`.
//! Response: `{choices: [{message: {content}, finish_reason}], usage?}`.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::retry::{with_retries, Attempt, RetryPolicy};
use super::{
    ChatBackend, ChatRequest, ChatResponse, FinishReason, Message, Provenance, ProviderError, Usage,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpBackendConfig {
    pub endpoint: String,
    /// Environment variable holding the API key. `None` sends no auth header.
    pub api_key_env: Option<String>,
    pub auth_header: String,
    /// Prepended to the key in the auth header, e.g. `"Bearer "`.
    pub auth_prefix: String,
    pub timeout_secs: u64,
    pub retry: RetryPolicy,
}

impl Default for HttpBackendConfig {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            api_key_env: Some("GATERAG_CHAT_API_KEY".into()),
            auth_header: "Authorization".into(),
            auth_prefix: "Bearer ".into(),
            timeout_secs: 120,
            retry: RetryPolicy::default(),
        }
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: &'a [Message],
    temperature: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

fn map_finish_reason(reason: Option<&str>) -> FinishReason {
    match reason {
        None | Some("stop") | Some("end_turn") | Some("eos") | Some("complete") => {
            FinishReason::Complete
        }
        Some("length") | Some("max_tokens") => FinishReason::Truncated,
        Some(_) => FinishReason::Error,
    }
}

/// Classify a ureq error as worth retrying or not.
pub(crate) fn is_transient(err: &ureq::Error) -> bool {
    matches!(
        err,
        ureq::Error::Io(_)
            | ureq::Error::Timeout(_)
            | ureq::Error::HostNotFound
            | ureq::Error::ConnectionFailed
            | ureq::Error::Protocol(_)
    )
}

pub(crate) fn build_agent(timeout_secs: u64) -> ureq::Agent {
    ureq::Agent::config_builder()
        .http_status_as_error(false)
        .timeout_global(Some(Duration::from_secs(timeout_secs.max(1))))
        .build()
        .into()
}

pub(crate) fn read_api_key(env_var: Option<&str>) -> Result<Option<String>, ProviderError> {
    match env_var {
        None => Ok(None),
        Some(var) => match std::env::var(var) {
            Ok(v) if !v.is_empty() => Ok(Some(v)),
            _ => Err(ProviderError::MissingCredential {
                env_var: var.to_string(),
            }),
        },
    }
}

#[derive(Debug)]
pub struct HttpBackend {
    config: HttpBackendConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
    attempts: AtomicU64,
}

impl HttpBackend {
    /// Build the client, reading the API key from the configured variable.
    pub fn new(config: HttpBackendConfig) -> Result<Self, ProviderError> {
        if config.endpoint.is_empty() {
            return Err(ProviderError::InvalidRequest(
                "HTTP backend requires an endpoint URL".into(),
            ));
        }
        let api_key = read_api_key(config.api_key_env.as_deref())?;
        Ok(Self {
            agent: build_agent(config.timeout_secs),
            config,
            api_key,
            attempts: AtomicU64::new(0),
        })
    }

    fn attempt(&self, body: &WireRequest<'_>) -> Attempt<ChatResponse, ProviderError> {
        self.attempts.fetch_add(1, Ordering::Relaxed);
        let mut req = self.agent.post(&self.config.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header(
                self.config.auth_header.as_str(),
                format!("{}{}", self.config.auth_prefix, key),
            );
        }
        let mut resp = match req.send_json(body) {
            Ok(r) => r,
            Err(e) if is_transient(&e) => {
                return Attempt::Transient(ProviderError::Transport {
                    attempts: 0,
                    message: e.to_string(),
                })
            }
            Err(e) => {
                return Attempt::Fatal(ProviderError::Transport {
                    attempts: 0,
                    message: e.to_string(),
                })
            }
        };
        let status = resp.status().as_u16();
        if status >= 500 {
            let body = resp.body_mut().read_to_string().unwrap_or_default();
            return Attempt::Transient(ProviderError::Rejected { status, body });
        }
        if status >= 400 {
            let body = resp.body_mut().read_to_string().unwrap_or_default();
            return Attempt::Fatal(ProviderError::Rejected { status, body });
        }
        let wire: WireResponse = match resp.body_mut().read_json() {
            Ok(w) => w,
            Err(e) => return Attempt::Fatal(ProviderError::MalformedResponse(e.to_string())),
        };
        let Some(choice) = wire.choices.into_iter().next() else {
            return Attempt::Fatal(ProviderError::MalformedResponse(
                "response has no choices".into(),
            ));
        };
        Attempt::Done(ChatResponse {
            text: choice.message.content.unwrap_or_default(),
            finish_reason: map_finish_reason(choice.finish_reason.as_deref()),
            usage: wire.usage.map(|u| Usage {
                prompt_tokens: u.prompt_tokens,
                completion_tokens: u.completion_tokens,
            }),
            provenance: Provenance::Live,
        })
    }
}

impl ChatBackend for HttpBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        let body = WireRequest {
            model: &request.model_id,
            messages: &request.messages,
            temperature: request.temperature,
            seed: request.seed,
        };
        with_retries(&self.config.retry, |_| self.attempt(&body)).map_err(|(err, attempts)| {
            match err {
                ProviderError::Transport { message, .. } => {
                    ProviderError::Transport { attempts, message }
                }
                ProviderError::Rejected { status, body } if status >= 500 => {
                    ProviderError::Transport {
                        attempts,
                        message: format!("HTTP {status}: {body}"),
                    }
                }
                other => other,
            }
        })
    }

    fn attempts(&self) -> u64 {
        self.attempts.load(Ordering::Relaxed)
    }

    fn describe(&self) -> String {
        format!("http({})", self.config.endpoint)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finish_reasons() {
        assert_eq!(map_finish_reason(Some("stop")), FinishReason::Complete);
        assert_eq!(map_finish_reason(None), FinishReason::Complete);
        assert_eq!(map_finish_reason(Some("length")), FinishReason::Truncated);
        assert_eq!(
            map_finish_reason(Some("content_filter")),
            FinishReason::Error
        );
    }

    #[test]
    fn wire_request_shape() {
        let msgs = vec![Message::system("s"), Message::user("u")];
        let body = WireRequest {
            model: "m",
            messages: &msgs,
            temperature: 0.0,
            seed: None,
        };
        let v = serde_json::to_value(&body).unwrap();
        assert_eq!(
            v,
            serde_json::json!({
                "model": "m",
                "messages": [{"role": "system", "content": "s"}, {"role": "user", "content": "u"}],
                "temperature": 0.0
            })
        );
    }

    #[test]
    fn missing_key_names_variable() {
        let cfg = HttpBackendConfig {
            endpoint: "http://127.0.0.1:9".into(),
            api_key_env: Some("GATERAG_TEST_DEFINITELY_UNSET".into()),
            ..Default::default()
        };
        let err = HttpBackend::new(cfg).unwrap_err();
        assert!(err.to_string().contains("GATERAG_TEST_DEFINITELY_UNSET"));
    }
}
