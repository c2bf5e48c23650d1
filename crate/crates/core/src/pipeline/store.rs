use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::detection::Decision;

use super::config::PipelineConfig;
use super::record::{AnswerTrace, RuntimeStats};
use super::PipelineError;

/// Aggregate counters echoed into the run manifest.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunTotals {
    pub questions: u64,
    pub errors: u64,
    pub retrievals: u64,
    pub llm_calls: u64,
    pub retrieval_calls: u64,
}

impl RunTotals {
    pub fn of(traces: &[AnswerTrace]) -> Self {
        let mut t = RunTotals::default();
        for tr in traces {
            t.questions += 1;
            t.errors += tr.is_error() as u64;
            t.retrievals += (tr.decision() == Some(Decision::Retrieve)) as u64;
            t.llm_calls += tr.counters.llm_calls;
            t.retrieval_calls += tr.counters.retrieval_calls;
        }
        t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// Dataset name shown in reports.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
    pub config_digest: String,
    pub config: PipelineConfig,
    pub ids: Vec<String>,
    pub totals: RunTotals,
}

#[derive(Serialize)]
struct RuntimeRow<'a> {
    id: &'a str,
    #[serde(flatten)]
    stats: RuntimeStats,
}

/// On-disk layout of one run:
///
/// ```text
/// <dir>/manifest.json
/// <dir>/runtime.jsonl
/// <dir>/traces/<id>.json
/// ```
#[derive(Debug, Clone)]
pub struct RunStore {
    dir: PathBuf,
    label: Option<String>,
}

impl RunStore {
    pub fn at(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: dir.into(),
            label: None,
        }
    }

    /// Record a dataset name in the manifest.
    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    /// `<runs_dir>/<config digest>`.
    pub fn for_config(config: &PipelineConfig) -> Self {
        Self::at(config.runs_dir.join(config.digest()))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn create(&self) -> std::io::Result<()> {
        fs::create_dir_all(self.dir.join("traces"))
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.dir.join("manifest.json")
    }

    pub fn trace_path(&self, id: &str) -> PathBuf {
        self.dir
            .join("traces")
            .join(format!("{}.json", file_stem(id)))
    }

    pub fn write_trace(&self, trace: &AnswerTrace) -> std::io::Result<()> {
        write_atomic(&self.trace_path(trace.id()), trace.to_json().as_bytes())
    }

    pub fn read_trace(&self, id: &str) -> Result<AnswerTrace, PipelineError> {
        let path = self.trace_path(id);
        let raw = fs::read_to_string(&path)
            .map_err(|e| PipelineError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&raw)
            .map_err(|e| PipelineError::Io(format!("{}: {e}", path.display())))
    }

    /// Write the manifest and per-question runtime measurements.
    pub fn finish(
        &self,
        config: &PipelineConfig,
        traces: &[AnswerTrace],
    ) -> Result<(), PipelineError> {
        let manifest = RunManifest {
            dataset: self.label.clone(),
            config_digest: config.digest(),
            config: config.clone(),
            ids: traces.iter().map(|t| t.id().to_string()).collect(),
            totals: RunTotals::of(traces),
        };
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        write_atomic(&self.manifest_path(), json.as_bytes())?;
        let mut runtime = String::new();
        for t in traces {
            let row = RuntimeRow {
                id: t.id(),
                stats: t.runtime,
            };
            runtime.push_str(&serde_json::to_string(&row).expect("row serializes"));
            runtime.push('\n');
        }
        write_atomic(&self.dir.join("runtime.jsonl"), runtime.as_bytes())?;
        Ok(())
    }

    pub fn load_manifest(&self) -> Result<RunManifest, PipelineError> {
        let path = self.manifest_path();
        let raw = fs::read_to_string(&path)
            .map_err(|e| PipelineError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&raw)
            .map_err(|e| PipelineError::Io(format!("{}: {e}", path.display())))
    }

    /// Traces listed in the manifest, plus the ids whose files are missing
    /// or unreadable.
    pub fn load_traces(&self) -> Result<(Vec<AnswerTrace>, Vec<String>), PipelineError> {
        let manifest = self.load_manifest()?;
        let mut traces = Vec::with_capacity(manifest.ids.len());
        let mut missing = Vec::new();
        for id in manifest.ids {
            match self.read_trace(&id) {
                Ok(t) => traces.push(t),
                Err(e) => {
                    log::warn!("trace {id}: {e}");
                    missing.push(id);
                }
            }
        }
        Ok((traces, missing))
    }
}

/// File-name-safe form of a record id. Ids that need escaping get a short
/// hash suffix so distinct ids never share a file.
fn file_stem(id: &str) -> String {
    let safe: String = id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') {
                c
            } else {
                '_'
            }
        })
        .collect();
    if safe == id && !id.starts_with('.') && !id.is_empty() {
        safe
    } else {
        let h = hex::encode(Sha256::digest(id.as_bytes()));
        format!("{}-{}", safe.trim_start_matches('.'), &h[..8])
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stems_are_safe_and_distinct() {
        assert_eq!(file_stem("q-12"), "q-12");
        let a = file_stem("a/b");
        let b = file_stem("a_b");
        assert_ne!(a, b);
        assert!(!a.contains('/'));
        assert!(!file_stem("..").starts_with('.'));
    }
}
