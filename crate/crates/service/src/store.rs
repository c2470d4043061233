//! In-memory document table backed by one canonical file per document.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use serde::Serialize;
use tokio::sync::Mutex;
use valtree_core::persist::FILE_EXTENSION;
use valtree_core::{
    apply_edit, load, lock_document, save, write_atomic, DecisionDocument, Edit, EditOutcome,
};

use crate::error::{ApiError, StartupError};

struct Slot {
    path: PathBuf,
    /// Serializes writers; readers never take it.
    writer: Mutex<()>,
    snapshot: RwLock<Arc<DecisionDocument>>,
    _lock: File,
}

impl Slot {
    fn new(path: PathBuf, doc: DecisionDocument, lock: File) -> Self {
        Self {
            path,
            writer: Mutex::new(()),
            snapshot: RwLock::new(Arc::new(doc)),
            _lock: lock,
        }
    }

    fn current(&self) -> Arc<DecisionDocument> {
        self.snapshot
            .read()
            .expect("snapshot lock poisoned")
            .clone()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IndexEntry {
    pub id: String,
    pub goal: String,
    pub version: u64,
}

pub struct Store {
    dir: PathBuf,
    slots: RwLock<BTreeMap<String, Arc<Slot>>>,
}

impl Store {
    /// Loads every document file in `dir`, creating the directory if needed.
    pub fn open(dir: &Path) -> Result<Self, StartupError> {
        let storage = |e: std::io::Error| StartupError::Storage(format!("{}: {e}", dir.display()));
        std::fs::create_dir_all(dir).map_err(storage)?;
        let mut slots = BTreeMap::new();
        for entry in std::fs::read_dir(dir).map_err(storage)? {
            let path = entry.map_err(storage)?.path();
            let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
                continue;
            };
            if name.starts_with('.') || !name.ends_with(FILE_EXTENSION) {
                continue;
            }
            let bad = |msg: String| StartupError::Storage(format!("{}: {msg}", path.display()));
            let lock = lock_document(&path).map_err(|e| bad(e.to_string()))?;
            let bytes = std::fs::read(&path).map_err(|e| bad(e.to_string()))?;
            let doc = load(&bytes).map_err(|e| bad(e.to_string()))?;
            let id = doc.id.clone();
            if slots.contains_key(&id) {
                return Err(bad(format!("duplicate document id {id}")));
            }
            slots.insert(id, Arc::new(Slot::new(path, doc, lock)));
        }
        tracing::info!(dir = %dir.display(), documents = slots.len(), "storage opened");
        Ok(Self {
            dir: dir.to_owned(),
            slots: RwLock::new(slots),
        })
    }

    fn slot(&self, id: &str) -> Result<Arc<Slot>, ApiError> {
        self.slots
            .read()
            .expect("slot table poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::UnknownDocument(id.to_owned()))
    }

    pub fn index(&self) -> Vec<IndexEntry> {
        self.slots
            .read()
            .expect("slot table poisoned")
            .iter()
            .map(|(id, slot)| {
                let doc = slot.current();
                IndexEntry {
                    id: id.clone(),
                    goal: doc.goal.clone(),
                    version: doc.version,
                }
            })
            .collect()
    }

    pub fn snapshot(&self, id: &str) -> Result<Arc<DecisionDocument>, ApiError> {
        Ok(self.slot(id)?.current())
    }

    /// Persists a new document under a fresh id.
    pub async fn insert(
        &self,
        mut doc: DecisionDocument,
    ) -> Result<Arc<DecisionDocument>, ApiError> {
        doc.id = uuid::Uuid::new_v4().simple().to_string();
        let path = self.dir.join(format!("{}{FILE_EXTENSION}", doc.id));
        let bytes = save(&doc);
        let lock_target = path.clone();
        let lock = tokio::task::spawn_blocking(move || {
            let lock = lock_document(&lock_target)?;
            write_atomic(&lock_target, &bytes)?;
            Ok::<_, std::io::Error>(lock)
        })
        .await
        .expect("storage task panicked")
        .map_err(ApiError::Storage)?;
        let slot = Arc::new(Slot::new(path, doc, lock));
        let doc = slot.current();
        self.slots
            .write()
            .expect("slot table poisoned")
            .insert(doc.id.clone(), slot);
        Ok(doc)
    }

    /// Applies `edit` if `base_version` is current. The new document is on
    /// disk before it becomes visible to readers.
    pub async fn mutate(
        &self,
        id: &str,
        base_version: u64,
        edit: &Edit,
    ) -> Result<EditOutcome, ApiError> {
        let slot = self.slot(id)?;
        let _turn = slot.writer.lock().await;
        let current = slot.current();
        if current.version != base_version {
            return Err(ApiError::VersionConflict {
                current_version: current.version,
                base_version,
            });
        }
        let mut next = (*current).clone();
        let outcome = apply_edit(&mut next, edit)?;
        let bytes = save(&next);
        let path = slot.path.clone();
        tokio::task::spawn_blocking(move || write_atomic(&path, &bytes))
            .await
            .expect("storage task panicked")
            .map_err(ApiError::Storage)?;
        *slot.snapshot.write().expect("snapshot lock poisoned") = Arc::new(next);
        Ok(outcome)
    }
}
