//! Evidence retrieval: query reformulation, search backends, and assembly
//! of the evidence bundle used for repair.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Executor;
use crate::providers::{
    build_agent, is_transient, read_api_key, with_retries, Attempt, ChatRequest, ProviderError,
    RetryPolicy,
};
use crate::stage::StageContext;
use crate::text::{content_terms, normalize_whitespace, tokenize};

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("retriever unavailable after {attempts} attempt(s): {message}")]
    RetrieverUnavailable { attempts: u32, message: String },
    #[error("environment variable {env_var} is not set")]
    MissingCredential { env_var: String },
    #[error("corpus error: {0}")]
    Corpus(String),
    #[error("malformed search response: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchQuery {
    pub text: String,
    pub origin_variant_index: usize,
}

/// One ranked result as returned by a backend.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchHit {
    pub title: Option<String>,
    pub text: String,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceSnippet {
    pub text: String,
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    pub rank: u32,
    pub query_index: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceBundle {
    pub snippets: Vec<EvidenceSnippet>,
    pub total_chars: usize,
}

impl EvidenceBundle {
    pub fn is_empty(&self) -> bool {
        self.snippets.is_empty()
    }

    /// Text inserted into the repair prompt.
    pub fn render(&self) -> String {
        self.snippets
            .iter()
            .enumerate()
            .map(|(i, s)| format!("[{}] {} (source: {})", i + 1, s.text, s.source))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchOptions {
    /// Snippets kept per query.
    pub per_query: usize,
    /// Cap on the summed character count of the bundle.
    pub budget_chars: usize,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            per_query: 3,
            budget_chars: 4000,
        }
    }
}

pub trait Retriever: Send + Sync {
    fn search(&self, query: &str, limit: usize) -> Result<Vec<SearchHit>, RetrievalError>;

    /// Number of search requests served so far.
    fn calls(&self) -> u64;

    fn describe(&self) -> String;
}

/// Extract the search query from a reformulation reply, falling back to the
/// variant itself when the reply is empty.
pub fn parse_query_reply(reply: &str, fallback: &str) -> String {
    let lines: Vec<&str> = reply
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect();
    let labelled = lines.iter().find_map(|l| {
        let lower = l.to_lowercase();
        ["search query:", "query:"]
            .iter()
            .find(|p| lower.starts_with(*p))
            .map(|p| l[p.len()..].trim())
    });
    let chosen = labelled.or_else(|| lines.first().copied()).unwrap_or("");
    let chosen = chosen
        .trim_matches(|c| matches!(c, '"' | '\'' | '`' | '*'))
        .trim();
    if chosen.is_empty() {
        fallback.to_string()
    } else {
        chosen.to_string()
    }
}

/// One search query per variant, aligned by index.
pub fn reformulate(ctx: &StageContext<'_>, variants: &[String]) -> Vec<SearchQuery> {
    let reqs: Vec<ChatRequest> = variants
        .iter()
        .map(|v| ctx.greedy(ctx.answerer, ctx.templates.reformulate_messages(v)))
        .collect();
    ctx.call_batch(ctx.answerer, &reqs)
        .into_iter()
        .zip(variants)
        .enumerate()
        .map(|(i, (res, variant))| {
            let text = match res {
                Ok(r) => parse_query_reply(&r.text, variant),
                Err(e) => {
                    log::warn!("query reformulation failed for variant {i}: {e}");
                    variant.clone()
                }
            };
            SearchQuery {
                text,
                origin_variant_index: i,
            }
        })
        .collect()
}

/// Merge per-query hits in (query, rank) order, dropping duplicate texts and
/// stopping before the first snippet that would exceed the budget.
pub fn assemble(per_query: Vec<(usize, Vec<SearchHit>)>, opts: &SearchOptions) -> EvidenceBundle {
    let mut per_query = per_query;
    per_query.sort_by_key(|(q, _)| *q);
    let mut seen = HashSet::new();
    let mut bundle = EvidenceBundle::default();
    'outer: for (query_index, hits) in per_query {
        for (pos, hit) in hits.into_iter().take(opts.per_query).enumerate() {
            let text = hit.text.trim().to_string();
            if text.is_empty() || !seen.insert(normalize_whitespace(&text)) {
                continue;
            }
            let len = text.chars().count();
            if bundle.total_chars + len > opts.budget_chars {
                break 'outer;
            }
            bundle.total_chars += len;
            bundle.snippets.push(EvidenceSnippet {
                text,
                source: hit.source,
                title: hit.title,
                rank: pos as u32 + 1,
                query_index,
            });
        }
    }
    bundle
}

/// Run every query (concurrently when `exec` allows) and assemble the bundle.
///
/// Individual query failures are logged and skipped; if every query fails
/// the last error is returned.
pub fn search(
    queries: &[SearchQuery],
    retriever: &dyn Retriever,
    opts: &SearchOptions,
    exec: &Executor,
) -> Result<EvidenceBundle, RetrievalError> {
    let results = exec.map(queries, |q| retriever.search(&q.text, opts.per_query));
    let mut ok = Vec::new();
    let mut last_err = None;
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(hits) => ok.push((i, hits)),
            Err(e) => {
                log::warn!("search for query {i} failed: {e}");
                last_err = Some(e);
            }
        }
    }
    if ok.is_empty() {
        if let Some(e) = last_err {
            return Err(e);
        }
    }
    Ok(assemble(ok, opts))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusDocument {
    pub id: String,
    #[serde(default)]
    pub title: String,
    pub text: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub ids: Vec<String>,
}

/// Offline retriever over a directory of JSON documents.
///
/// Documents are ranked by how many distinct query content terms they
/// contain (case-folded, stopwords removed); ties break by document id.
#[derive(Debug)]
pub struct LocalCorpus {
    docs: Vec<CorpusDocument>,
    /// Term to the ascending indices of the documents containing it.
    postings: HashMap<String, Vec<usize>>,
    calls: AtomicU64,
}

impl LocalCorpus {
    pub fn new(mut docs: Vec<CorpusDocument>) -> Self {
        docs.sort_by(|a, b| a.id.cmp(&b.id));
        let mut postings: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, d) in docs.iter().enumerate() {
            let terms: HashSet<String> = tokenize(&d.title)
                .into_iter()
                .chain(tokenize(&d.text))
                .collect();
            for t in terms {
                postings.entry(t).or_default().push(i);
            }
        }
        Self {
            docs,
            postings,
            calls: AtomicU64::new(0),
        }
    }

    /// Load `manifest.json` and one `<id>.json` per listed id.
    pub fn open(dir: &Path) -> Result<Self, RetrievalError> {
        let manifest_path = dir.join("manifest.json");
        let raw = fs::read_to_string(&manifest_path)
            .map_err(|e| RetrievalError::Corpus(format!("{}: {e}", manifest_path.display())))?;
        let manifest: CorpusManifest = serde_json::from_str(&raw)
            .map_err(|e| RetrievalError::Corpus(format!("{}: {e}", manifest_path.display())))?;
        let docs = manifest
            .ids
            .iter()
            .map(|id| {
                let p = Self::doc_path(dir, id);
                let raw = fs::read_to_string(&p)
                    .map_err(|e| RetrievalError::Corpus(format!("{}: {e}", p.display())))?;
                let doc: CorpusDocument = serde_json::from_str(&raw)
                    .map_err(|e| RetrievalError::Corpus(format!("{}: {e}", p.display())))?;
                if doc.id != *id {
                    return Err(RetrievalError::Corpus(format!(
                        "{} declares id {:?}, manifest says {:?}",
                        p.display(),
                        doc.id,
                        id
                    )));
                }
                Ok(doc)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::new(docs))
    }

    pub fn doc_path(dir: &Path, id: &str) -> PathBuf {
        dir.join(format!("{id}.json"))
    }

    /// Write documents and manifest in the on-disk corpus format.
    pub fn write(dir: &Path, docs: &[CorpusDocument]) -> std::io::Result<()> {
        fs::create_dir_all(dir)?;
        for d in docs {
            fs::write(Self::doc_path(dir, &d.id), serde_json::to_vec(d)?)?;
        }
        let manifest = CorpusManifest {
            ids: docs.iter().map(|d| d.id.clone()).collect(),
        };
        fs::write(
            dir.join("manifest.json"),
            serde_json::to_vec_pretty(&manifest)?,
        )?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }
}

impl Retriever for LocalCorpus {
    fn search(&self, query: &str, limit: usize) -> Result<Vec<SearchHit>, RetrievalError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let mut hits: HashMap<usize, usize> = HashMap::new();
        for term in content_terms(query) {
            for &i in self.postings.get(&term).into_iter().flatten() {
                *hits.entry(i).or_insert(0) += 1;
            }
        }
        let mut scored: Vec<(usize, usize)> = hits.into_iter().collect();
        // Higher score first; docs are sorted by id, so index breaks ties.
        scored.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        Ok(scored
            .into_iter()
            .take(limit)
            .map(|(i, _)| {
                let d = &self.docs[i];
                SearchHit {
                    title: (!d.title.is_empty()).then(|| d.title.clone()),
                    text: d.text.clone(),
                    source: d.id.clone(),
                }
            })
            .collect())
    }

    fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    fn describe(&self) -> String {
        format!("local-corpus({} docs)", self.docs.len())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WebSearchConfig {
    pub endpoint: String,
    pub api_key_env: Option<String>,
    pub api_key_header: String,
    /// Field of the response holding the ranked organic results.
    pub results_field: String,
    pub timeout_secs: u64,
    pub retry: RetryPolicy,
}

impl Default for WebSearchConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://google.serper.dev/search".into(),
            api_key_env: Some("GATERAG_SEARCH_API_KEY".into()),
            api_key_header: "X-API-KEY".into(),
            results_field: "organic".into(),
            timeout_secs: 30,
            retry: RetryPolicy::default(),
        }
    }
}

/// Web-search JSON client: `POST {"q": query}`, results read from the
/// organic array's `title`, `snippet` and `link` fields.
#[derive(Debug)]
pub struct WebSearchClient {
    config: WebSearchConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
    calls: AtomicU64,
}

impl WebSearchClient {
    pub fn new(config: WebSearchConfig) -> Result<Self, RetrievalError> {
        let api_key = read_api_key(config.api_key_env.as_deref()).map_err(|e| match e {
            ProviderError::MissingCredential { env_var } => {
                RetrievalError::MissingCredential { env_var }
            }
            other => RetrievalError::Malformed(other.to_string()),
        })?;
        Ok(Self {
            agent: build_agent(config.timeout_secs),
            config,
            api_key,
            calls: AtomicU64::new(0),
        })
    }

    pub fn parse_results(
        &self,
        body: &serde_json::Value,
    ) -> Result<Vec<SearchHit>, RetrievalError> {
        parse_organic(body, &self.config.results_field)
    }
}

pub fn parse_organic(
    body: &serde_json::Value,
    field: &str,
) -> Result<Vec<SearchHit>, RetrievalError> {
    let Some(items) = body.get(field) else {
        return Ok(Vec::new());
    };
    let items = items
        .as_array()
        .ok_or_else(|| RetrievalError::Malformed(format!("`{field}` is not an array")))?;
    Ok(items
        .iter()
        .filter_map(|item| {
            let text = item.get("snippet")?.as_str()?.trim();
            if text.is_empty() {
                return None;
            }
            Some(SearchHit {
                title: item
                    .get("title")
                    .and_then(|t| t.as_str())
                    .map(str::to_string),
                text: text.to_string(),
                source: item
                    .get("link")
                    .and_then(|l| l.as_str())
                    .unwrap_or_default()
                    .to_string(),
            })
        })
        .collect())
}

impl Retriever for WebSearchClient {
    fn search(&self, query: &str, limit: usize) -> Result<Vec<SearchHit>, RetrievalError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let body = serde_json::json!({ "q": query });
        let result = with_retries(&self.config.retry, |_| {
            let mut req = self.agent.post(&self.config.endpoint);
            if let Some(key) = &self.api_key {
                req = req.header(self.config.api_key_header.as_str(), key.as_str());
            }
            match req.send_json(&body) {
                Err(e) if is_transient(&e) => Attempt::Transient(e.to_string()),
                Err(e) => Attempt::Fatal(e.to_string()),
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    if status >= 500 {
                        Attempt::Transient(format!("HTTP {status}"))
                    } else if status >= 400 {
                        let text = resp.body_mut().read_to_string().unwrap_or_default();
                        Attempt::Fatal(format!("HTTP {status}: {text}"))
                    } else {
                        match resp.body_mut().read_json::<serde_json::Value>() {
                            Ok(v) => Attempt::Done(v),
                            Err(e) => Attempt::Fatal(format!("invalid JSON: {e}")),
                        }
                    }
                }
            }
        });
        match result {
            Ok(v) => {
                let mut hits = self.parse_results(&v)?;
                hits.truncate(limit);
                Ok(hits)
            }
            Err((message, attempts)) => {
                Err(RetrievalError::RetrieverUnavailable { attempts, message })
            }
        }
    }

    fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    fn describe(&self) -> String {
        format!("web-search({})", self.config.endpoint)
    }
}
