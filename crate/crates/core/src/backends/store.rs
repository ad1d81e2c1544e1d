//! Append-only jsonl transcripts of backend exchanges, and the record /
//! replay / cache wrappers that use them.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{BackendError, CompletionBackend, CompletionRequest, JudgmentBackend, JudgmentRequest};

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    hash: String,
    kind: String,
    request: Value,
    response: Value,
}

/// Request hash -> response, persisted as one jsonl line per exchange. Later
/// lines win when a hash repeats.
#[derive(Debug)]
pub struct TranscriptStore {
    path: Option<PathBuf>,
    entries: RwLock<HashMap<String, Value>>,
    writer: Mutex<Option<File>>,
}

impl TranscriptStore {
    pub fn in_memory() -> Self {
        Self {
            path: None,
            entries: RwLock::new(HashMap::new()),
            writer: Mutex::new(None),
        }
    }

    pub fn open(path: &Path) -> Result<Self, BackendError> {
        let err = |e: std::io::Error| BackendError::Store(format!("{}: {e}", path.display()));
        let mut entries = HashMap::new();
        if path.exists() {
            let f = File::open(path).map_err(err)?;
            for (i, line) in BufReader::new(f).lines().enumerate() {
                let line = line.map_err(err)?;
                if line.trim().is_empty() {
                    continue;
                }
                let e: Entry = serde_json::from_str(&line).map_err(|e| {
                    BackendError::Store(format!("{} line {}: {e}", path.display(), i + 1))
                })?;
                entries.insert(e.hash, e.response);
            }
        }
        Ok(Self {
            path: Some(path.to_path_buf()),
            entries: RwLock::new(entries),
            writer: Mutex::new(None),
        })
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

    pub fn get(&self, hash: &str) -> Option<Value> {
        self.entries.read().unwrap().get(hash).cloned()
    }

    pub fn put(&self, kind: &str, hash: &str, request: Value, response: Value) -> Result<(), BackendError> {
        if let Some(path) = &self.path {
            let err = |e: std::io::Error| BackendError::Store(format!("{}: {e}", path.display()));
            let line = serde_json::to_string(&Entry {
                hash: hash.to_string(),
                kind: kind.to_string(),
                request,
                response: response.clone(),
            })
            .map_err(|e| BackendError::Store(e.to_string()))?;
            let mut w = self.writer.lock().unwrap();
            if w.is_none() {
                if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                    fs::create_dir_all(dir).map_err(err)?;
                }
                *w = Some(OpenOptions::new().create(true).append(true).open(path).map_err(err)?);
            }
            let f = w.as_mut().expect("writer opened");
            writeln!(f, "{line}").map_err(err)?;
            f.flush().map_err(err)?;
        }
        self.entries.write().unwrap().insert(hash.to_string(), response);
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StoreMode {
    /// Always call the inner backend and persist the exchange.
    Record,
    /// Serve only from the store.
    Replay,
    /// Serve from the store, falling through to the inner backend on a miss.
    Cache,
}

/// A backend wrapped by a transcript store.
pub struct Stored<B: ?Sized> {
    mode: StoreMode,
    inner: Option<Arc<B>>,
    store: Arc<TranscriptStore>,
    inner_calls: AtomicUsize,
}

impl<B: ?Sized> Stored<B> {
    pub fn new(mode: StoreMode, inner: Option<Arc<B>>, store: Arc<TranscriptStore>) -> Self {
        Self {
            mode,
            inner,
            store,
            inner_calls: AtomicUsize::new(0),
        }
    }

    pub fn replay(store: Arc<TranscriptStore>) -> Self {
        Self::new(StoreMode::Replay, None, store)
    }

    /// Number of requests forwarded to the inner backend.
    pub fn inner_calls(&self) -> usize {
        self.inner_calls.load(Ordering::SeqCst)
    }

    pub fn store(&self) -> &Arc<TranscriptStore> {
        &self.store
    }

    fn serve<T, F>(&self, kind: &str, hash: String, request: Value, call: F) -> Result<T, BackendError>
    where
        T: Serialize + serde::de::DeserializeOwned,
        F: FnOnce(&B) -> Result<T, BackendError>,
    {
        if self.mode != StoreMode::Record {
            if let Some(v) = self.store.get(&hash) {
                return serde_json::from_value(v).map_err(|e| BackendError::Store(e.to_string()));
            }
        }
        let inner = match (&self.inner, self.mode) {
            (Some(inner), StoreMode::Record | StoreMode::Cache) => inner,
            _ => return Err(BackendError::ReplayMiss { hash }),
        };
        self.inner_calls.fetch_add(1, Ordering::SeqCst);
        let out = call(inner)?;
        let response = serde_json::to_value(&out).map_err(|e| BackendError::Store(e.to_string()))?;
        self.store.put(kind, &hash, request, response)?;
        Ok(out)
    }

    fn label(&self, inner_id: Option<String>) -> String {
        let mode = match self.mode {
            StoreMode::Record => "record",
            StoreMode::Replay => "replay",
            StoreMode::Cache => "cache",
        };
        match inner_id {
            Some(id) => format!("{mode}({id})"),
            None => mode.to_string(),
        }
    }
}

impl CompletionBackend for Stored<dyn CompletionBackend> {
    fn id(&self) -> String {
        self.label(self.inner.as_ref().map(|b| b.id()))
    }

    fn complete(&self, req: &CompletionRequest) -> Result<Vec<String>, BackendError> {
        let request = serde_json::to_value(req).map_err(|e| BackendError::Store(e.to_string()))?;
        self.serve("completion", req.hash(), request, |b| b.complete(req))
    }
}

impl JudgmentBackend for Stored<dyn JudgmentBackend> {
    fn id(&self) -> String {
        self.label(self.inner.as_ref().map(|b| b.id()))
    }

    fn judge(&self, req: &JudgmentRequest) -> Result<String, BackendError> {
        let request = serde_json::to_value(req).map_err(|e| BackendError::Store(e.to_string()))?;
        self.serve("judgment", req.hash(), request, |b| b.judge(req))
    }
}
