//! Persistent cache of directed comparison scores.
//!
//! On disk this is an append-only JSONL file of
//! `{"key": ..., "value": ..., "kind": ..., "timestamp": ...}` lines. Opening a
//! cache compacts it (last write per key wins, corrupt lines dropped). Keys are
//! direction-sensitive: a cached `(a, b)` never answers `(b, a)`.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use log::warn;
use serde::{Deserialize, Serialize};

use super::{Comparator, CompareError, DirectionScore, ScoreKind};
use crate::corpus::Message;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CacheLine {
    key: String,
    value: f64,
    kind: ScoreKind,
    timestamp: u64,
}

impl CacheLine {
    fn is_valid(&self) -> bool {
        self.value.is_finite() && (self.kind == ScoreKind::Reward || (0.0..=1.0).contains(&self.value))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CacheLoadReport {
    pub lines_read: usize,
    pub entries: usize,
    /// Lines that failed to parse or validate (`CacheInvalid`); they are
    /// dropped and the affected comparisons go back to the backend.
    pub invalid_lines: usize,
    pub compacted: bool,
}

pub struct CacheStore {
    path: Option<PathBuf>,
    entries: RwLock<HashMap<String, CacheLine>>,
    writer: Mutex<Option<BufWriter<File>>>,
    report: CacheLoadReport,
}

impl CacheStore {
    pub fn in_memory() -> Self {
        Self {
            path: None,
            entries: RwLock::new(HashMap::new()),
            writer: Mutex::new(None),
            report: CacheLoadReport::default(),
        }
    }

    /// Opens (creating if needed) and compacts an on-disk cache.
    pub fn open(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut report = CacheLoadReport::default();
        let mut entries: HashMap<String, CacheLine> = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(&path)?);
            for (idx, line) in reader.split(b'\n').enumerate() {
                let line = line?;
                if line.iter().all(u8::is_ascii_whitespace) {
                    continue;
                }
                report.lines_read += 1;
                match serde_json::from_slice::<CacheLine>(&line) {
                    Ok(entry) if entry.is_valid() => {
                        entries.insert(entry.key.clone(), entry);
                    }
                    _ => {
                        warn!("cache {}: invalid line {} ignored", path.display(), idx + 1);
                        report.invalid_lines += 1;
                    }
                }
            }
            if report.lines_read != entries.len() {
                compact(&path, &entries)?;
                report.compacted = true;
            }
        }
        report.entries = entries.len();
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self {
            path: Some(path),
            entries: RwLock::new(entries),
            writer: Mutex::new(Some(BufWriter::new(file))),
            report,
        })
    }

    pub fn load_report(&self) -> &CacheLoadReport {
        &self.report
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &str) -> Option<DirectionScore> {
        self.entries.read().unwrap().get(key).map(|e| DirectionScore {
            value: e.value,
            kind: e.kind,
            raw: None,
            cached: true,
        })
    }

    pub fn put(&self, key: String, score: &DirectionScore) {
        let timestamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let line = CacheLine {
            key: key.clone(),
            value: score.value,
            kind: score.kind,
            timestamp,
        };
        // Writer lock held across the map update so file order matches map order.
        let mut writer = self.writer.lock().unwrap();
        if let Some(w) = writer.as_mut() {
            let res = serde_json::to_writer(&mut *w, &line)
                .map_err(std::io::Error::other)
                .and_then(|_| w.write_all(b"\n"))
                .and_then(|_| w.flush());
            if let Err(e) = res {
                warn!("cache append failed, continuing in memory: {e}");
            }
        }
        self.entries.write().unwrap().insert(key, line);
    }

    /// Drops every entry, truncating the backing file.
    pub fn clear(&self) -> std::io::Result<()> {
        let mut writer = self.writer.lock().unwrap();
        self.entries.write().unwrap().clear();
        if let Some(path) = &self.path {
            let file = OpenOptions::new().create(true).write(true).truncate(true).open(path)?;
            drop(file);
            *writer = Some(BufWriter::new(OpenOptions::new().append(true).open(path)?));
        }
        Ok(())
    }
}

fn compact(path: &Path, entries: &HashMap<String, CacheLine>) -> std::io::Result<()> {
    let tmp = path.with_extension("compacting");
    {
        let mut out = BufWriter::new(File::create(&tmp)?);
        let mut sorted: Vec<_> = entries.values().collect();
        sorted.sort_by(|a, b| a.key.cmp(&b.key));
        for e in sorted {
            serde_json::to_writer(&mut out, e).map_err(std::io::Error::other)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
    }
    fs::rename(tmp, path)
}

/// Cache key: comparator identity (backend + prompt variant) and the ordered id pair.
pub fn cache_key(identity: &str, existing_id: &str, new_id: &str) -> String {
    serde_json::to_string(&[identity, existing_id, new_id]).expect("strings serialize")
}

pub struct CachedComparator<C> {
    inner: C,
    store: std::sync::Arc<CacheStore>,
}

impl<C: Comparator> CachedComparator<C> {
    pub fn new(inner: C, store: std::sync::Arc<CacheStore>) -> Self {
        Self { inner, store }
    }

    pub fn store(&self) -> &CacheStore {
        &self.store
    }

    pub fn inner(&self) -> &C {
        &self.inner
    }
}

impl<C: Comparator> Comparator for CachedComparator<C> {
    fn identity(&self) -> String {
        self.inner.identity()
    }

    fn score_directed(&self, existing: &Message, new: &Message) -> Result<DirectionScore, CompareError> {
        let key = cache_key(&self.inner.identity(), &existing.id, &new.id);
        if let Some(hit) = self.store.get(&key) {
            return Ok(hit);
        }
        let score = self.inner.score_directed(existing, new)?;
        self.store.put(key, &score);
        Ok(score)
    }
}
