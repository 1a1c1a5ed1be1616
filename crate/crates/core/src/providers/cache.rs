use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const CACHE_ENV: &str = "DETECTIVE_CACHE_DIR";

/// Write-once response cache keyed by `sha256(provider, request)`.
#[derive(Debug, Clone)]
pub struct ResponseCache {
    root: PathBuf,
}

impl ResponseCache {
    pub fn new(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(Self { root })
    }

    pub fn from_env() -> Result<Option<Self>> {
        match std::env::var_os(CACHE_ENV) {
            Some(dir) if !dir.is_empty() => Self::new(PathBuf::from(dir)).map(Some),
            _ => Ok(None),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn key(provider: &str, request: &str) -> String {
        let mut h = Sha256::new();
        h.update(provider.as_bytes());
        h.update([0u8]);
        h.update(request.as_bytes());
        hex::encode(h.finalize())
    }

    fn path(&self, key: &str) -> PathBuf {
        self.root.join(&key[..2]).join(format!("{key}.txt"))
    }

    pub fn get(&self, provider: &str, request: &str) -> Option<String> {
        fs::read_to_string(self.path(&Self::key(provider, request))).ok()
    }

    /// Stores a response unless one already exists. Concurrent writers race on
    /// a temp file and the first rename wins.
    pub fn put(&self, provider: &str, request: &str, response: &str) -> Result<()> {
        let path = self.path(&Self::key(provider, request));
        if path.exists() {
            return Ok(());
        }
        let dir = path.parent().expect("cache path has a parent");
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut tmp = tempfile_in(dir)?;
        tmp.1.write_all(response.as_bytes()).map_err(|e| Error::io(&tmp.0, e))?;
        drop(tmp.1);
        if path.exists() {
            let _ = fs::remove_file(&tmp.0);
            return Ok(());
        }
        fs::rename(&tmp.0, &path).map_err(|e| Error::io(&path, e))
    }
}

fn tempfile_in(dir: &Path) -> Result<(PathBuf, fs::File)> {
    use std::sync::atomic::{AtomicU64, Ordering};
    static COUNTER: AtomicU64 = AtomicU64::new(0);
    let n = COUNTER.fetch_add(1, Ordering::Relaxed);
    let path = dir.join(format!(".tmp-{}-{n}", std::process::id()));
    let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    Ok((path, file))
}
