use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use sha2::{Digest, Sha256};

use super::{ChatRequest, LlmClient};
use crate::error::{Error, Result};

/// Response cache keyed by a digest of `(system, user, temperature)`, held in
/// memory and optionally mirrored to content-addressed files.
pub struct CachedLlm<L> {
    inner: L,
    dir: Option<PathBuf>,
    memory: Mutex<HashMap<String, String>>,
    misses: AtomicUsize,
}

pub fn cache_key(req: &ChatRequest) -> String {
    let mut h = Sha256::new();
    for part in [req.system.as_bytes(), req.user.as_bytes()] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part);
    }
    h.update(req.temperature.to_bits().to_le_bytes());
    hex::encode(h.finalize())
}

impl<L: LlmClient> CachedLlm<L> {
    pub fn in_memory(inner: L) -> Self {
        CachedLlm {
            inner,
            dir: None,
            memory: Mutex::new(HashMap::new()),
            misses: AtomicUsize::new(0),
        }
    }

    pub fn with_dir(inner: L, dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(CachedLlm {
            dir: Some(dir),
            ..Self::in_memory(inner)
        })
    }

    /// Requests that reached the wrapped adapter.
    pub fn inner_calls(&self) -> usize {
        self.misses.load(Ordering::SeqCst)
    }

    pub fn inner(&self) -> &L {
        &self.inner
    }

    fn file(&self, key: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("{key}.txt")))
    }
}

impl<L: LlmClient> LlmClient for CachedLlm<L> {
    fn complete(&self, req: &ChatRequest) -> Result<String> {
        let key = cache_key(req);
        if let Some(hit) = self.memory.lock().expect("cache lock").get(&key) {
            return Ok(hit.clone());
        }
        if let Some(path) = self.file(&key) {
            if let Ok(hit) = std::fs::read_to_string(&path) {
                self.memory.lock().expect("cache lock").insert(key, hit.clone());
                return Ok(hit);
            }
        }
        self.misses.fetch_add(1, Ordering::SeqCst);
        let response = self.inner.complete(req)?;
        if let Some(path) = self.file(&key) {
            std::fs::write(&path, &response).map_err(|e| Error::io(&path, e))?;
        }
        self.memory.lock().expect("cache lock").insert(key, response.clone());
        Ok(response)
    }
}
