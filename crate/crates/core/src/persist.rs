//! Canonical document files and CSV table exports.
//!
//! A document file is a single UTF-8 JSON object. Object keys are sorted,
//! non-integer numbers are written as shortest round-trip decimal strings,
//! so equal documents always produce equal bytes.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::materialize::ensure_synced;
use crate::model::{structural_violations, DecisionDocument, NodeId, SCHEMA_VERSION};

pub const FILE_EXTENSION: &str = ".decision.json";

fn canonicalize(value: Value) -> Value {
    match value {
        Value::Object(map) => {
            let mut entries: Vec<(String, Value)> = map.into_iter().collect();
            entries.sort_by(|a, b| a.0.cmp(&b.0));
            let mut out = Map::new();
            for (k, v) in entries {
                out.insert(k, canonicalize(v));
            }
            Value::Object(out)
        }
        Value::Array(items) => Value::Array(items.into_iter().map(canonicalize).collect()),
        other => other,
    }
}

pub fn save(doc: &DecisionDocument) -> Vec<u8> {
    let value = serde_json::to_value(doc).expect("documents always serialize");
    let mut bytes =
        serde_json::to_vec_pretty(&canonicalize(value)).expect("values always serialize");
    bytes.push(b'\n');
    bytes
}

/// Parses a document file. Either the whole document loads and passes
/// structural validation, or an error is returned.
pub fn load(bytes: &[u8]) -> Result<DecisionDocument> {
    let value: Value = serde_json::from_slice(bytes).map_err(|e| Error::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let found = value
        .get("schema_version")
        .and_then(Value::as_u64)
        .ok_or_else(|| Error::Parse {
            line: 0,
            column: 0,
            message: "missing integer schema_version".into(),
        })?;
    if found != SCHEMA_VERSION {
        return Err(Error::UnsupportedSchema {
            found,
            supported: SCHEMA_VERSION,
        });
    }
    let doc: DecisionDocument = serde_json::from_value(value).map_err(|e| Error::Parse {
        line: 0,
        column: 0,
        message: e.to_string(),
    })?;
    let problems = structural_violations(&doc);
    if !problems.is_empty() {
        return Err(Error::InvalidDocument(
            problems
                .iter()
                .map(|v| v.message.as_str())
                .collect::<Vec<_>>()
                .join("; "),
        ));
    }
    Ok(doc)
}

/// Replaces `path` with `bytes` via a temporary file in the same directory
/// and a rename, so readers see either the old or the new content.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    static COUNTER: AtomicU64 = AtomicU64::new(0);
    let dir = path
        .parent()
        .filter(|d| !d.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "path has no file name"))?;
    let tmp = dir.join(format!(
        ".{}.{}-{}.tmp",
        name.to_string_lossy(),
        std::process::id(),
        COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    let result = (|| {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

pub fn lock_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".lock");
    path.with_file_name(name)
}

/// Takes an exclusive advisory lock on the sidecar `<path>.lock`, held
/// until the returned file is dropped. Fails with `WouldBlock` when another
/// process or handle holds it.
pub fn lock_document(path: &Path) -> io::Result<File> {
    let lock = lock_path(path);
    let file = OpenOptions::new()
        .create(true)
        .truncate(false)
        .write(true)
        .open(&lock)?;
    match file.try_lock() {
        Ok(()) => Ok(file),
        Err(fs::TryLockError::WouldBlock) => Err(io::Error::new(
            io::ErrorKind::WouldBlock,
            format!("{} is locked by another process", path.display()),
        )),
        Err(fs::TryLockError::Error(e)) => Err(e),
    }
}

/// CSV text of one managed table, header row first.
pub fn export_table_csv(doc: &DecisionDocument, node: NodeId) -> Result<String> {
    ensure_synced(doc)?;
    let name = &doc.tree.node(node)?.name;
    let table = doc
        .table_for(node)
        .ok_or_else(|| Error::NotSynced(format!("{name:?} has no table")))?;
    let region = table.region();
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_writer(Vec::new());
    for row in region.top..=region.bottom {
        let record: Vec<String> = (region.left..=region.right)
            .map(|col| {
                doc.grid
                    .get_cell(crate::grid::CellAddress::new(row, col))
                    .display_text()
            })
            .collect();
        writer
            .write_record(&record)
            .map_err(|e| Error::validation(format!("csv: {e}")))?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::validation(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("cells are UTF-8"))
}

/// One CSV per managed table, keyed by node.
pub fn export_tables_csv(doc: &DecisionDocument) -> Result<BTreeMap<NodeId, String>> {
    ensure_synced(doc)?;
    doc.registry
        .iter()
        .map(|t| Ok((t.node_id, export_table_csv(doc, t.node_id)?)))
        .collect()
}
