use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{check_length, Backend, BackendError, Capability};
use crate::prompt::RenderedPrompt;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
}

/// Content-addressed response store: in memory, optionally mirrored to one
/// file per key in a directory.
#[derive(Debug, Default)]
pub struct ResponseCache {
    memory: Mutex<HashMap<String, String>>,
    dir: Option<PathBuf>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        ResponseCache::default()
    }

    pub fn on_disk(dir: impl Into<PathBuf>) -> Result<Self, BackendError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| BackendError::Cache(format!("{}: {e}", dir.display())))?;
        Ok(ResponseCache {
            memory: Mutex::default(),
            dir: Some(dir),
        })
    }

    pub fn key(model: &str, text: &str) -> String {
        let mut h = Sha256::new();
        h.update(model.as_bytes());
        h.update(b"\n");
        h.update(text.as_bytes());
        hex::encode(h.finalize())
    }

    fn path(dir: &Path, key: &str) -> PathBuf {
        dir.join(format!("{key}.txt"))
    }

    pub fn get(&self, key: &str) -> Option<String> {
        if let Some(v) = self.memory.lock().unwrap().get(key) {
            return Some(v.clone());
        }
        let dir = self.dir.as_ref()?;
        let text = fs::read_to_string(Self::path(dir, key)).ok()?;
        self.memory.lock().unwrap().insert(key.to_string(), text.clone());
        Some(text)
    }

    pub fn put(&self, key: &str, value: &str) -> Result<(), BackendError> {
        self.memory.lock().unwrap().insert(key.to_string(), value.to_string());
        if let Some(dir) = &self.dir {
            let tmp = dir.join(format!(".{key}.{}.tmp", std::process::id()));
            let write = || -> std::io::Result<()> {
                let mut f = fs::File::create(&tmp)?;
                f.write_all(value.as_bytes())?;
                f.sync_all()?;
                fs::rename(&tmp, Self::path(dir, key))
            };
            write().map_err(|e| BackendError::Cache(format!("{}: {e}", dir.display())))?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.memory.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Serves repeated prompts from a [`ResponseCache`], calling the inner
/// backend only on a miss.
pub struct CachedBackend<B> {
    inner: B,
    cache: ResponseCache,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl<B: Backend> CachedBackend<B> {
    pub fn new(inner: B, cache: ResponseCache) -> Self {
        CachedBackend {
            inner,
            cache,
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        }
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
        }
    }

    pub fn cache(&self) -> &ResponseCache {
        &self.cache
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: Backend> Backend for CachedBackend<B> {
    fn describe(&self) -> Capability {
        self.inner.describe()
    }

    fn complete(&self, prompt: &RenderedPrompt) -> Result<String, BackendError> {
        let cap = self.inner.describe();
        check_length(&cap, prompt)?;
        let key = ResponseCache::key(&cap.model, &prompt.text);
        if let Some(hit) = self.cache.get(&key) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(hit);
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let fresh = self.inner.complete(prompt)?;
        self.cache.put(&key, &fresh)?;
        Ok(fresh)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::predict_batch;
    use crate::backend::tests::prompt;
    use std::sync::atomic::AtomicUsize;

    #[derive(Default)]
    struct Counting(AtomicUsize);

    impl Backend for Counting {
        fn describe(&self) -> Capability {
            Capability {
                model: "count".into(),
                max_prompt_chars: 1000,
            }
        }
        fn complete(&self, p: &RenderedPrompt) -> Result<String, BackendError> {
            self.0.fetch_add(1, Ordering::SeqCst);
            Ok(format!("{} ✓\n", p.text.len()))
        }
    }

    #[test]
    fn second_call_is_a_hit() {
        let b = CachedBackend::new(Counting::default(), ResponseCache::in_memory());
        let p = prompt("hello");
        let first = b.complete(&p).unwrap();
        let second = b.complete(&p).unwrap();
        assert_eq!(first, second);
        assert_eq!(b.inner().0.load(Ordering::SeqCst), 1);
        assert_eq!(b.stats(), CacheStats { hits: 1, misses: 1 });
    }

    #[test]
    fn disk_cache_survives_a_new_instance() {
        let dir = tempfile::tempdir().unwrap();
        let prompts: Vec<_> = (0..5).map(|i| prompt(&format!("q{i}"))).collect();
        let warm = CachedBackend::new(Counting::default(), ResponseCache::on_disk(dir.path()).unwrap());
        let fresh = predict_batch(&warm, &prompts, 4).unwrap();
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 5);

        let cold = CachedBackend::new(Counting::default(), ResponseCache::on_disk(dir.path()).unwrap());
        let cached = predict_batch(&cold, &prompts, 4).unwrap();
        assert_eq!(cold.inner().0.load(Ordering::SeqCst), 0);
        assert_eq!(fresh, cached);
        assert_eq!(cold.stats().hits, 5);
    }

    #[test]
    fn key_depends_on_model() {
        assert_ne!(ResponseCache::key("a", "x"), ResponseCache::key("b", "x"));
        assert_eq!(ResponseCache::key("a", "x"), ResponseCache::key("a", "x"));
        assert_eq!(ResponseCache::key("a", "x").len(), 64);
    }
}
