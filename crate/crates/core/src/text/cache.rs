use std::fs::{self, File, OpenOptions};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::{PartTexts, TextSource};
use crate::error::{Error, Result};

/// Content address of a decomposition: hash of prompt version and caption.
pub fn cache_key(prompt_version: &str, caption: &str) -> String {
    let mut h = Sha256::new();
    h.update(prompt_version.as_bytes());
    h.update([0u8]);
    h.update(caption.trim().as_bytes());
    hex::encode(h.finalize())
}

/// On-disk JSON store, one file per key.
///
/// Readers take a shared lock on `<dir>/.lock`, writers an exclusive one;
/// entries are written to a temporary file and renamed into place.
#[derive(Debug, Clone)]
pub struct DecompositionCache {
    dir: PathBuf,
}

impl DecompositionCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn lock_file(&self) -> Result<File> {
        let path = self.dir.join(".lock");
        OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&path)
            .map_err(|e| Error::io(path, e))
    }

    fn entry(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    /// Cached entry tagged [`TextSource::Cache`], if present and readable.
    pub fn get(&self, key: &str) -> Result<Option<PartTexts>> {
        let lock = self.lock_file()?;
        lock.lock_shared().map_err(|e| Error::io(&self.dir, e))?;
        let path = self.entry(key);
        let found = match fs::read(&path) {
            Ok(bytes) => match serde_json::from_slice::<PartTexts>(&bytes) {
                Ok(t) => Some(t.with_source(TextSource::Cache)),
                Err(e) => {
                    log::warn!("ignoring corrupt cache entry {}: {e}", path.display());
                    None
                }
            },
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
            Err(e) => return Err(Error::io(path, e)),
        };
        lock.unlock().map_err(|e| Error::io(&self.dir, e))?;
        Ok(found)
    }

    pub fn put(&self, key: &str, texts: &PartTexts) -> Result<()> {
        let lock = self.lock_file()?;
        lock.lock().map_err(|e| Error::io(&self.dir, e))?;
        let path = self.entry(key);
        let tmp = self.dir.join(format!(".{key}.tmp"));
        fs::write(&tmp, serde_json::to_vec_pretty(texts)?).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
        lock.unlock().map_err(|e| Error::io(&self.dir, e))?;
        Ok(())
    }

    pub fn len(&self) -> Result<usize> {
        let entries = fs::read_dir(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        Ok(entries
            .filter_map(|e| e.ok())
            .filter(|e| {
                let name = e.file_name();
                let name = name.to_string_lossy();
                name.ends_with(".json") && !name.starts_with('.')
            })
            .count())
    }

    pub fn is_empty(&self) -> Result<bool> {
        Ok(self.len()? == 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::rule_fallback;

    #[test]
    fn key_depends_on_version_and_caption() {
        let a = cache_key("v1", "a person walks");
        assert_eq!(a, cache_key("v1", "a person walks  "));
        assert_ne!(a, cache_key("v2", "a person walks"));
        assert_ne!(a, cache_key("v1", "a person runs"));
        assert_eq!(a.len(), 64);
    }

    #[test]
    fn put_then_get() {
        let dir = tempfile::tempdir().unwrap();
        let cache = DecompositionCache::open(dir.path()).unwrap();
        let key = cache_key("v1", "x");
        assert_eq!(cache.get(&key).unwrap(), None);
        let t = rule_fallback("a person nods");
        cache.put(&key, &t).unwrap();
        let back = cache.get(&key).unwrap().unwrap();
        assert_eq!(back, t.clone().with_source(TextSource::Cache));
        assert_eq!(cache.len().unwrap(), 1);
    }

    #[test]
    fn corrupt_entry_is_a_miss() {
        let dir = tempfile::tempdir().unwrap();
        let cache = DecompositionCache::open(dir.path()).unwrap();
        std::fs::write(dir.path().join("abc.json"), b"{oops").unwrap();
        assert_eq!(cache.get("abc").unwrap(), None);
    }

    #[test]
    fn concurrent_readers_and_writer() {
        let dir = tempfile::tempdir().unwrap();
        let cache = DecompositionCache::open(dir.path()).unwrap();
        let t = rule_fallback("a person jumps");
        std::thread::scope(|s| {
            s.spawn(|| {
                for i in 0..20 {
                    cache.put(&format!("k{i}"), &t).unwrap();
                }
            });
            for _ in 0..3 {
                s.spawn(|| {
                    for i in 0..20 {
                        if let Some(found) = cache.get(&format!("k{i}")).unwrap() {
                            assert_eq!(found.left_leg, t.left_leg);
                        }
                    }
                });
            }
        });
        assert_eq!(cache.len().unwrap(), 20);
    }
}
