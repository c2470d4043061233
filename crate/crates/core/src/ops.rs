//! Edits to the value tree, the alternative list and the grid.
//!
//! Every function checks its preconditions before touching the document, so
//! a failed edit leaves the document unchanged. Each accepted edit bumps the
//! version by exactly one.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{CellAddress, CellValue};
use crate::materialize::{self, SyncReport};
use crate::model::AttributeNode;
use crate::model::{
    DecisionDocument, ExclusionRecord, ImportanceLevel, LeafScale, NodeId, RemovedSubtree,
    Tombstone,
};

fn check_name(name: &str) -> Result<()> {
    if name.trim().is_empty() {
        return Err(Error::validation("attribute names must not be empty"));
    }
    Ok(())
}

fn check_sibling_unique(
    doc: &DecisionDocument,
    parent: NodeId,
    name: &str,
    skip: Option<NodeId>,
) -> Result<()> {
    let clash = doc
        .tree
        .children(parent)
        .iter()
        .filter(|c| Some(**c) != skip)
        .any(|c| doc.tree.nodes[c].name == name);
    if clash {
        let parent_name = &doc.tree.nodes[&parent].name;
        return Err(Error::validation(format!(
            "{parent_name:?} already has a child named {name:?}"
        )));
    }
    Ok(())
}

/// Appends a new x1 leaf under `parent`. The grid is untouched until the
/// next sync.
pub fn add_child(doc: &mut DecisionDocument, parent: NodeId, name: &str) -> Result<NodeId> {
    doc.tree.node(parent)?;
    check_name(name)?;
    check_sibling_unique(doc, parent, name, None)?;

    let id = doc.tree.alloc_id();
    doc.tree.nodes.insert(id, AttributeNode::new(id, name));
    doc.tree.child_lists.entry(parent).or_default().push(id);
    doc.bump_version();
    Ok(id)
}

/// Detaches `node` and its whole subtree. The returned tombstone is also
/// appended to the document; cells of affected tables are archived into it
/// by the next sync.
pub fn remove_node(doc: &mut DecisionDocument, node: NodeId) -> Result<Tombstone> {
    doc.tree.node(node)?;
    if node == doc.tree.root_id {
        return Err(Error::validation("the root node cannot be removed"));
    }
    let parent = doc
        .tree
        .parent_of(node)
        .ok_or_else(|| Error::not_found(format!("parent of {node}")))?;
    let position = doc
        .tree
        .children(parent)
        .iter()
        .position(|c| *c == node)
        .unwrap_or(0);

    let ids = doc.tree.subtree(node);
    let mut removed = RemovedSubtree {
        parent_id: parent,
        position,
        root_id: node,
        nodes: Vec::with_capacity(ids.len()),
        child_lists: Default::default(),
    };
    for id in &ids {
        if let Some(n) = doc.tree.nodes.remove(id) {
            removed.nodes.push(n);
        }
        if let Some(kids) = doc.tree.child_lists.remove(id) {
            removed.child_lists.insert(*id, kids);
        }
    }
    let siblings = doc
        .tree
        .child_lists
        .get_mut(&parent)
        .expect("parent has children");
    siblings.retain(|c| *c != node);
    if siblings.is_empty() {
        doc.tree.child_lists.remove(&parent);
    }

    let version = doc.bump_version();
    let tombstone = Tombstone {
        removed_subtree: Some(removed),
        removed_cells: Vec::new(),
        removed_at_version: version,
        restored_at_version: None,
    };
    doc.tombstones.push(tombstone.clone());
    Ok(tombstone)
}

/// Re-attaches the subtree archived in tombstone `index` at its original
/// parent and position. Archived cells stay in the tombstone; the next sync
/// lays out fresh columns for the restored nodes.
pub fn restore_tombstone(doc: &mut DecisionDocument, index: usize) -> Result<NodeId> {
    let tomb = doc
        .tombstones
        .get(index)
        .ok_or_else(|| Error::not_found(format!("tombstone {index}")))?;
    if tomb.restored_at_version.is_some() {
        return Err(Error::validation(format!(
            "tombstone {index} was already restored"
        )));
    }
    let sub = tomb
        .removed_subtree
        .clone()
        .ok_or_else(|| Error::validation(format!("tombstone {index} holds no subtree")))?;
    doc.tree.node(sub.parent_id).map_err(|_| {
        Error::validation(format!(
            "the original parent {} no longer exists",
            sub.parent_id
        ))
    })?;
    let root_name = sub
        .nodes
        .iter()
        .find(|n| n.id == sub.root_id)
        .map(|n| n.name.clone())
        .ok_or_else(|| {
            Error::validation(format!("tombstone {index} is missing its subtree root"))
        })?;
    check_sibling_unique(doc, sub.parent_id, &root_name, None)?;

    let siblings = doc.tree.child_lists.entry(sub.parent_id).or_default();
    let at = sub.position.min(siblings.len());
    siblings.insert(at, sub.root_id);
    for node in sub.nodes {
        doc.tree.nodes.insert(node.id, node);
    }
    doc.tree.child_lists.extend(sub.child_lists);

    let version = doc.bump_version();
    doc.tombstones[index].restored_at_version = Some(version);
    Ok(sub.root_id)
}

pub fn set_importance(
    doc: &mut DecisionDocument,
    node: NodeId,
    level: ImportanceLevel,
) -> Result<()> {
    doc.tree.node(node)?;
    if node == doc.tree.root_id {
        return Err(Error::validation("the root node has no importance level"));
    }
    doc.tree.node_mut(node)?.importance = level;
    doc.bump_version();
    Ok(())
}

pub fn rename_node(doc: &mut DecisionDocument, node: NodeId, name: &str) -> Result<()> {
    doc.tree.node(node)?;
    check_name(name)?;
    if let Some(parent) = doc.tree.parent_of(node) {
        check_sibling_unique(doc, parent, name, Some(node))?;
    }
    doc.tree.node_mut(node)?.name = name.to_owned();
    doc.bump_version();
    Ok(())
}

pub fn set_note(doc: &mut DecisionDocument, node: NodeId, text: &str) -> Result<()> {
    doc.tree.node_mut(node)?.note = text.to_owned();
    doc.bump_version();
    Ok(())
}

pub fn set_leaf_scale(
    doc: &mut DecisionDocument,
    node: NodeId,
    scale: Option<LeafScale>,
) -> Result<()> {
    if let Some(s) = scale {
        LeafScale::new(s.min, s.max, s.direction)?;
    }
    doc.tree.node_mut(node)?.leaf_scale = scale;
    doc.bump_version();
    Ok(())
}

pub fn exclude_alternative(doc: &mut DecisionDocument, label: &str, rationale: &str) -> Result<()> {
    let alt = doc.alternative(label)?;
    if !alt.is_live() {
        return Err(Error::validation(format!("{label:?} is already excluded")));
    }
    if doc.live_alternatives().count() <= 2 {
        return Err(Error::validation(format!(
            "excluding {label:?} would leave fewer than 2 live alternatives"
        )));
    }
    let at_version = doc.version + 1;
    let alt = doc
        .alternatives
        .iter_mut()
        .find(|a| a.label == label)
        .expect("checked above");
    alt.excluded = Some(ExclusionRecord {
        rationale: rationale.to_owned(),
        at_version,
    });
    doc.bump_version();
    Ok(())
}

pub fn include_alternative(doc: &mut DecisionDocument, label: &str) -> Result<()> {
    let alt = doc
        .alternatives
        .iter_mut()
        .find(|a| a.label == label)
        .ok_or_else(|| Error::not_found(format!("alternative {label:?}")))?;
    if alt.excluded.take().is_none() {
        return Err(Error::validation(format!("{label:?} is not excluded")));
    }
    doc.bump_version();
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellUpdate {
    pub row: u32,
    pub col: u32,
    pub value: CellValue,
}

/// Writes a batch of cells as one edit.
pub fn set_cells(doc: &mut DecisionDocument, cells: &[CellUpdate]) -> Result<()> {
    for c in cells {
        if let CellValue::Number(n) = c.value {
            if !n.is_finite() {
                return Err(Error::validation(format!(
                    "non-finite number for ({}, {})",
                    c.row, c.col
                )));
            }
        }
    }
    for c in cells {
        doc.grid
            .set_cell(CellAddress::new(c.row, c.col), c.value.clone());
    }
    doc.bump_version();
    Ok(())
}

/// One document mutation, as carried by the HTTP API and the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", content = "args", rename_all = "snake_case")]
pub enum Edit {
    AddChild {
        parent: NodeId,
        name: String,
    },
    RemoveNode {
        node: NodeId,
    },
    RestoreTombstone {
        index: usize,
    },
    SetImportance {
        node: NodeId,
        level: ImportanceLevel,
    },
    RenameNode {
        node: NodeId,
        name: String,
    },
    SetNote {
        node: NodeId,
        text: String,
    },
    SetLeafScale {
        node: NodeId,
        scale: Option<LeafScale>,
    },
    ExcludeAlternative {
        label: String,
        rationale: String,
    },
    IncludeAlternative {
        label: String,
    },
    AcceptSuggestion {
        node: NodeId,
        name: String,
    },
    SetCells {
        cells: Vec<CellUpdate>,
    },
    Sync,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EditOutcome {
    pub version: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub node: Option<NodeId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tombstone: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sync_report: Option<SyncReport>,
}

/// Applies one edit. On error the document is unchanged.
pub fn apply_edit(doc: &mut DecisionDocument, edit: &Edit) -> Result<EditOutcome> {
    let mut outcome = EditOutcome::default();
    match edit {
        Edit::AddChild { parent, name } => outcome.node = Some(add_child(doc, *parent, name)?),
        Edit::AcceptSuggestion { node, name } => {
            outcome.node = Some(crate::suggest::accept_suggestion(doc, *node, name)?)
        }
        Edit::RemoveNode { node } => {
            remove_node(doc, *node)?;
            outcome.tombstone = Some(doc.tombstones.len() - 1);
        }
        Edit::RestoreTombstone { index } => outcome.node = Some(restore_tombstone(doc, *index)?),
        Edit::SetImportance { node, level } => set_importance(doc, *node, *level)?,
        Edit::RenameNode { node, name } => rename_node(doc, *node, name)?,
        Edit::SetNote { node, text } => set_note(doc, *node, text)?,
        Edit::SetLeafScale { node, scale } => set_leaf_scale(doc, *node, *scale)?,
        Edit::ExcludeAlternative { label, rationale } => {
            exclude_alternative(doc, label, rationale)?
        }
        Edit::IncludeAlternative { label } => include_alternative(doc, label)?,
        Edit::SetCells { cells } => set_cells(doc, cells)?,
        Edit::Sync => outcome.sync_report = Some(materialize::sync(doc)?),
    }
    outcome.version = doc.version;
    Ok(outcome)
}
