//! Shared cache of lifted blocks, in memory and optionally on disk.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use sha2::{Digest, Sha256};

use crate::ir::{parse_ir, IrBlock, SpaceTable};

/// Bumped whenever optimizer output may change for identical input.
pub const OPTIMIZER_TAG: &str = "egraph-v1";

const CHECKSUM_PREFIX: &str = "# sha256=";

pub type CacheKey = [u8; 32];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    pub saturation_calls: u64,
    pub entries: u64,
}

struct Entry {
    text: Arc<str>,
    block: Arc<IrBlock>,
}

/// Readers proceed concurrently; fills are serialized so that a block is
/// optimized once even when several simulators miss on it together.
pub struct LiftCache {
    mem: RwLock<HashMap<CacheKey, Entry>>,
    fill: Mutex<()>,
    dir: Option<PathBuf>,
    disk_ok: AtomicBool,
    hits: AtomicU64,
    misses: AtomicU64,
    saturation_calls: AtomicU64,
}

impl Default for LiftCache {
    fn default() -> Self {
        LiftCache::in_memory()
    }
}

impl LiftCache {
    pub fn in_memory() -> LiftCache {
        LiftCache {
            mem: RwLock::new(HashMap::new()),
            fill: Mutex::new(()),
            dir: None,
            disk_ok: AtomicBool::new(false),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
            saturation_calls: AtomicU64::new(0),
        }
    }

    /// A cache persisted under `dir`. Failure to create it degrades to memory only.
    pub fn with_dir(dir: impl AsRef<Path>) -> LiftCache {
        let dir = dir.as_ref().to_path_buf();
        let ok = match fs::create_dir_all(&dir) {
            Ok(()) => true,
            Err(e) => {
                log::warn!("lift cache directory {} unusable ({}); caching in memory only", dir.display(), e);
                false
            }
        };
        LiftCache {
            dir: Some(dir),
            disk_ok: AtomicBool::new(ok),
            ..LiftCache::in_memory()
        }
    }

    pub fn key(spec_hash: &[u8; 32], address: u64, bytes: &[u8], tag: &str) -> CacheKey {
        let mut h = Sha256::new();
        h.update(spec_hash);
        h.update(address.to_le_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(bytes);
        h.update(tag.as_bytes());
        h.finalize().into()
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
            saturation_calls: self.saturation_calls.load(Ordering::Relaxed),
            entries: self.mem.read().expect("cache lock").len() as u64,
        }
    }

    pub fn reset_stats(&self) {
        self.hits.store(0, Ordering::Relaxed);
        self.misses.store(0, Ordering::Relaxed);
        self.saturation_calls.store(0, Ordering::Relaxed);
    }

    pub fn note_saturation(&self) {
        self.saturation_calls.fetch_add(1, Ordering::Relaxed);
    }

    fn path_for(&self, key: &CacheKey) -> Option<PathBuf> {
        let hexkey = hex::encode(key);
        self.dir.as_ref().map(|d| d.join(&hexkey[..2]).join(format!("{}.ir", hexkey)))
    }

    fn lookup_mem(&self, key: &CacheKey) -> Option<(Arc<str>, Arc<IrBlock>)> {
        self.mem.read().expect("cache lock").get(key).map(|e| (e.text.clone(), e.block.clone()))
    }

    fn lookup_disk(&self, key: &CacheKey, spaces: &SpaceTable) -> Option<(Arc<str>, Arc<IrBlock>)> {
        if !self.disk_ok.load(Ordering::Relaxed) {
            return None;
        }
        let path = self.path_for(key)?;
        let raw = fs::read_to_string(&path).ok()?;
        let valid = (|| {
            let body_end = raw.trim_end_matches('\n').rfind('\n')? + 1;
            let (body, trailer) = raw.split_at(body_end);
            let digest = trailer.trim_end().strip_prefix(CHECKSUM_PREFIX)?;
            if hex::encode(Sha256::digest(body.as_bytes())) != digest {
                return None;
            }
            let block = parse_ir(body, spaces).ok()?;
            Some((Arc::<str>::from(body), Arc::new(block)))
        })();
        if valid.is_none() {
            log::warn!("evicting corrupt cache entry {}", path.display());
            let _ = fs::remove_file(&path);
        }
        valid
    }

    /// Returns the cached canonical text for `key`, if present.
    pub fn get_text(&self, key: &CacheKey, spaces: &SpaceTable) -> Option<Arc<str>> {
        self.get_entry(key, spaces).map(|(t, _)| t)
    }

    pub fn get(&self, key: &CacheKey, spaces: &SpaceTable) -> Option<Arc<IrBlock>> {
        self.get_entry(key, spaces).map(|(_, b)| b)
    }

    fn get_entry(&self, key: &CacheKey, spaces: &SpaceTable) -> Option<(Arc<str>, Arc<IrBlock>)> {
        if let Some(e) = self.lookup_mem(key) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Some(e);
        }
        if let Some((text, block)) = self.lookup_disk(key, spaces) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            self.mem.write().expect("cache lock").insert(
                *key,
                Entry {
                    text: text.clone(),
                    block: block.clone(),
                },
            );
            return Some((text, block));
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        None
    }

    pub fn put(&self, key: CacheKey, text: String, block: Arc<IrBlock>) {
        let text: Arc<str> = Arc::from(text);
        self.write_disk(&key, &text);
        self.mem.write().expect("cache lock").insert(key, Entry { text, block });
    }

    /// Looks `key` up and, on a miss, fills it with `make` exactly once.
    pub fn get_or_fill(&self, key: CacheKey, spaces: &SpaceTable, make: impl FnOnce() -> (String, IrBlock)) -> Arc<IrBlock> {
        if let Some(e) = self.lookup_mem(&key) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return e.1;
        }
        let _guard = self.fill.lock().expect("cache fill lock");
        if let Some(b) = self.get(&key, spaces) {
            return b;
        }
        let (text, block) = make();
        let block = Arc::new(block);
        self.put(key, text, block.clone());
        block
    }

    fn write_disk(&self, key: &CacheKey, text: &str) {
        if !self.disk_ok.load(Ordering::Relaxed) {
            return;
        }
        let Some(path) = self.path_for(key) else { return };
        let res = (|| -> std::io::Result<()> {
            let parent = path.parent().expect("cache path has a parent");
            fs::create_dir_all(parent)?;
            let tmp = parent.join(format!(
                ".{}.{}.tmp",
                path.file_name().and_then(|n| n.to_str()).unwrap_or("entry"),
                std::process::id()
            ));
            let mut f = fs::File::create(&tmp)?;
            f.write_all(text.as_bytes())?;
            writeln!(f, "{}{}", CHECKSUM_PREFIX, hex::encode(Sha256::digest(text.as_bytes())))?;
            f.sync_all()?;
            fs::rename(&tmp, &path)
        })();
        if let Err(e) = res {
            log::warn!("lift cache write failed ({}); continuing in memory only", e);
            self.disk_ok.store(false, Ordering::Relaxed);
        }
    }

    /// Drops in-memory entries, keeping disk entries.
    pub fn clear_memory(&self) {
        self.mem.write().expect("cache lock").clear();
    }
}
