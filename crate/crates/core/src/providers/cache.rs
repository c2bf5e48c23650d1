use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{CacheKey, ChatResponse, FinishReason, ProviderError};

/// Value stored for one cached response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub request_digest: String,
    pub text: String,
    pub finish_reason: FinishReason,
    pub created_at: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct CacheStats {
    pub entries: u64,
    pub bytes: u64,
}

/// Append-only, content-addressed response store: one `<digest>.json` file
/// per entry. Existing entries are never rewritten.
#[derive(Debug)]
pub struct ResponseCache {
    dir: PathBuf,
    write_lock: Mutex<()>,
}

fn io_err(path: &Path, err: impl std::fmt::Display) -> ProviderError {
    ProviderError::Cache(format!("{}: {err}", path.display()))
}

impl ResponseCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, ProviderError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        Ok(Self {
            dir,
            write_lock: Mutex::new(()),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, key: &CacheKey) -> PathBuf {
        self.dir.join(format!("{}.json", key.as_str()))
    }

    pub fn get(&self, key: &CacheKey) -> Result<Option<CacheEntry>, ProviderError> {
        let path = self.path_for(key);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(io_err(&path, e)),
        };
        let entry: CacheEntry = serde_json::from_slice(&bytes).map_err(|e| io_err(&path, e))?;
        if entry.request_digest != key.as_str() {
            return Err(io_err(&path, "digest does not match file name"));
        }
        Ok(Some(entry))
    }

    /// Store `response` under `key` unless an entry already exists.
    /// Returns whether a new entry was written.
    pub fn put(&self, key: &CacheKey, response: &ChatResponse) -> Result<bool, ProviderError> {
        let _guard = self.write_lock.lock().unwrap_or_else(|p| p.into_inner());
        let path = self.path_for(key);
        if path.exists() {
            return Ok(false);
        }
        let entry = CacheEntry {
            request_digest: key.as_str().to_string(),
            text: response.text.clone(),
            finish_reason: response.finish_reason,
            created_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        };
        let body = serde_json::to_vec_pretty(&entry).map_err(|e| io_err(&path, e))?;
        let tmp = self.dir.join(format!(".{}.tmp", key.as_str()));
        {
            let mut f = fs::File::create(&tmp).map_err(|e| io_err(&tmp, e))?;
            f.write_all(&body).map_err(|e| io_err(&tmp, e))?;
            f.sync_all().map_err(|e| io_err(&tmp, e))?;
        }
        fs::rename(&tmp, &path).map_err(|e| io_err(&path, e))?;
        Ok(true)
    }

    pub fn stats(&self) -> Result<CacheStats, ProviderError> {
        let mut stats = CacheStats::default();
        let rd = fs::read_dir(&self.dir).map_err(|e| io_err(&self.dir, e))?;
        for ent in rd {
            let ent = ent.map_err(|e| io_err(&self.dir, e))?;
            let name = ent.file_name();
            let name = name.to_string_lossy();
            if name.ends_with(".json") && !name.starts_with('.') {
                stats.entries += 1;
                stats.bytes += ent.metadata().map(|m| m.len()).unwrap_or(0);
            }
        }
        Ok(stats)
    }
}
