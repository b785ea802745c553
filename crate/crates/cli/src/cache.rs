//! File-backed response cache: one JSON file per content-hash key.

use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use nlsql_core::llm::{ChatRequest, TokenUsage};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub model_id: String,
    pub payload: String,
    #[serde(default)]
    pub usage: TokenUsage,
    /// Seconds since the Unix epoch.
    pub created_at: u64,
}

/// Cache key of a chat request: SHA-256 over the model id and the full
/// request document.
pub fn request_key(request: &ChatRequest) -> String {
    let body = serde_json::to_string(request).expect("request serializes");
    let mut h = Sha256::new();
    h.update(request.model.as_bytes());
    h.update([0u8]);
    h.update(body.as_bytes());
    hex::encode(h.finalize())
}

/// Concurrent readers, serialized writers. Writes go through a temporary
/// file and a rename, so readers never see partial entries.
#[derive(Debug)]
pub struct CacheStore {
    dir: PathBuf,
    write_lock: Mutex<()>,
}

impl CacheStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).with_context(|| format!("cannot create cache {}", dir.display()))?;
        Ok(Self { dir, write_lock: Mutex::new(()) })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, key: &str) -> PathBuf {
        let shard = key.get(..2).unwrap_or("00");
        self.dir.join(shard).join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> Option<CacheEntry> {
        let bytes = std::fs::read(self.path(key)).ok()?;
        match serde_json::from_slice::<CacheEntry>(&bytes) {
            Ok(e) if e.key == key => Some(e),
            _ => {
                log::warn!("ignoring unreadable cache entry {key}");
                None
            }
        }
    }

    pub fn put(&self, model_id: &str, key: &str, payload: &str, usage: TokenUsage) -> Result<CacheEntry> {
        let entry = CacheEntry {
            key: key.to_string(),
            model_id: model_id.to_string(),
            payload: payload.to_string(),
            usage,
            created_at: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        };
        let path = self.path(key);
        let _guard = self.write_lock.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, serde_json::to_vec(&entry)?)?;
        std::fs::rename(&tmp, &path)?;
        Ok(entry)
    }
}
