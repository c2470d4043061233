//! Reconciles managed tables in the grid with the current value tree.
//!
//! Every non-primitive node owns one table: header row `[node, child…]`,
//! one row per alternative with the label in the first column. Structure
//! (headers, labels, placement) belongs to the materializer; data cells
//! belong to the user and move with their column.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{allocate_region, next_free_row, CellAddress, CellValue, ManagedTable, Rect};
use crate::model::{ensure_structurally_valid, DecisionDocument, Judgment, NodeId, Tombstone};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableSummary {
    pub node: NodeId,
    pub name: String,
    pub anchor: CellAddress,
    pub n_rows: u32,
    pub n_cols: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnChange {
    pub table: NodeId,
    pub child: NodeId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Relocation {
    pub from: CellAddress,
    pub to: CellAddress,
}

/// Structured change list produced by [`sync`].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SyncReport {
    pub tables_created: Vec<TableSummary>,
    pub tables_removed: Vec<NodeId>,
    pub columns_added: Vec<ColumnChange>,
    pub columns_removed: Vec<ColumnChange>,
    pub columns_reordered: Vec<NodeId>,
    pub cells_archived: usize,
    /// User cells moved out of the way of a growing table.
    pub cells_relocated: Vec<Relocation>,
    pub managed_cells_rewritten: usize,
}

impl SyncReport {
    /// Surviving tables whose columns changed.
    pub fn tables_updated(&self) -> Vec<NodeId> {
        let mut ids: Vec<NodeId> = self
            .columns_added
            .iter()
            .chain(&self.columns_removed)
            .map(|c| c.table)
            .chain(self.columns_reordered.iter().copied())
            .filter(|t| !self.tables_created.iter().any(|c| c.node == *t))
            .collect();
        ids.sort();
        ids.dedup();
        ids
    }

    pub fn is_empty(&self) -> bool {
        self.tables_created.is_empty()
            && self.tables_removed.is_empty()
            && self.columns_added.is_empty()
            && self.columns_removed.is_empty()
            && self.columns_reordered.is_empty()
            && self.cells_archived == 0
            && self.cells_relocated.is_empty()
            && self.managed_cells_rewritten == 0
    }
}

impl fmt::Display for SyncReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            return f.write_str("no changes");
        }
        write!(
            f,
            "{} table(s) created, {} updated, {} removed; {} column(s) added, {} removed; {} cell(s) archived, {} relocated",
            self.tables_created.len(),
            self.tables_updated().len(),
            self.tables_removed.len(),
            self.columns_added.len(),
            self.columns_removed.len(),
            self.cells_archived,
            self.cells_relocated.len(),
        )
    }
}

/// Brings the table registry and grid in line with the tree.
///
/// All-or-nothing: the document is only replaced once every step has
/// succeeded. Bumps the version even when nothing changed.
pub fn sync(doc: &mut DecisionDocument) -> Result<SyncReport> {
    ensure_structurally_valid(doc)?;

    let mut work = doc.clone();
    let tree = work.tree.clone();
    let mut report = SyncReport::default();

    // Tables whose node is gone or became primitive.
    let mut kept = Vec::with_capacity(work.registry.len());
    for table in std::mem::take(&mut work.registry) {
        if tree.contains(table.node_id) && !tree.is_primitive(table.node_id) {
            kept.push(table);
            continue;
        }
        let cells = work.grid.take_rect(&table.region());
        let mut context = vec![table.node_id];
        context.extend(&table.column_bindings);
        archive(&mut work, cells, &context, &mut report);
        report.tables_removed.push(table.node_id);
    }
    work.registry = kept;

    for i in 0..work.registry.len() {
        let node = work.registry[i].node_id;
        let children = tree.children(node);
        if work.registry[i].column_bindings != children {
            reshape(&mut work, i, children, &mut report)?;
        }
    }

    let n_rows = 1 + work.alternatives.len() as u32;
    for node in tree.preorder() {
        if tree.is_primitive(node) || work.table_for(node).is_some() {
            continue;
        }
        let children = tree.children(node).to_vec();
        let n_cols = 1 + children.len() as u32;
        let anchor = allocate_region(&work.grid, &work.registry, n_rows, n_cols);
        work.registry.push(ManagedTable {
            node_id: node,
            anchor,
            n_rows,
            n_cols,
            column_bindings: children,
        });
        report.tables_created.push(TableSummary {
            node,
            name: tree.nodes[&node].name.clone(),
            anchor,
            n_rows,
            n_cols,
        });
    }

    write_structure(&mut work, &mut report);
    work.version += 1;
    *doc = work;
    Ok(report)
}

fn reshape(
    work: &mut DecisionDocument,
    index: usize,
    children: &[NodeId],
    report: &mut SyncReport,
) -> Result<()> {
    let old = work.registry[index].clone();
    let region = old.region();
    let column_rect = |col: u32| Rect {
        top: region.top,
        bottom: region.bottom,
        left: col,
        right: col,
    };

    let mut surviving = Vec::new();
    let mut data: HashMap<NodeId, Vec<(u32, CellValue)>> = HashMap::new();
    for (j, child) in old.column_bindings.iter().enumerate() {
        let col = old.anchor.col + 1 + j as u32;
        if !children.contains(child) {
            let cells = work.grid.take_rect(&column_rect(col));
            archive(work, cells, &[*child], report);
            report.columns_removed.push(ColumnChange {
                table: old.node_id,
                child: *child,
            });
            continue;
        }
        surviving.push(*child);
        let body = Rect {
            top: region.top + 1,
            ..column_rect(col)
        };
        let cells = work
            .grid
            .take_rect(&body)
            .into_iter()
            .map(|(addr, v)| (addr.row - region.top, v))
            .collect();
        data.insert(*child, cells);
    }
    // Header and label cells are regenerated below.
    work.grid.take_rect(&region);

    let new_cols = 1 + children.len() as u32;
    if new_cols > old.n_cols {
        let ext = Rect {
            top: region.top,
            bottom: region.bottom,
            left: old.anchor.col + old.n_cols,
            right: old.anchor.col + new_cols - 1,
        };
        if let Some(blocker) = work
            .registry
            .iter()
            .enumerate()
            .find(|(k, t)| *k != index && t.region().intersects(&ext))
        {
            return Err(Error::validation(format!(
                "table for {} cannot grow: blocked by the table for {}",
                old.node_id, blocker.1.node_id
            )));
        }
        let colliding = work.grid.take_rect(&ext);
        if !colliding.is_empty() {
            let base = next_free_row(&work.grid, &work.registry);
            let top = colliding.iter().map(|(a, _)| a.row).min().unwrap_or(base);
            let shift = base - top;
            for (from, value) in colliding {
                let to = CellAddress::new(from.row + shift, from.col);
                work.grid.set_cell(to, value);
                report.cells_relocated.push(Relocation { from, to });
            }
        }
    }

    let table = &mut work.registry[index];
    table.n_cols = new_cols;
    table.column_bindings = children.to_vec();
    for (j, child) in children.iter().enumerate() {
        let col = table.anchor.col + 1 + j as u32;
        if let Some(cells) = data.remove(child) {
            for (offset, value) in cells {
                work.grid
                    .set_cell(CellAddress::new(region.top + offset, col), value);
            }
        } else {
            report.columns_added.push(ColumnChange {
                table: old.node_id,
                child: *child,
            });
        }
    }
    let kept_order: Vec<NodeId> = children
        .iter()
        .copied()
        .filter(|c| surviving.contains(c))
        .collect();
    if kept_order != surviving {
        report.columns_reordered.push(old.node_id);
    }
    Ok(())
}

/// Files archived cells under the newest open tombstone that mentions one
/// of `context`, or a fresh tombstone when none does.
fn archive(
    work: &mut DecisionDocument,
    cells: Vec<(CellAddress, CellValue)>,
    context: &[NodeId],
    report: &mut SyncReport,
) {
    if cells.is_empty() {
        return;
    }
    report.cells_archived += cells.len();
    let archived = cells
        .into_iter()
        .map(|(address, value)| crate::model::ArchivedCell { address, value });
    let owner = work.tombstones.iter().rposition(|t| {
        t.restored_at_version.is_none()
            && t.removed_subtree
                .as_ref()
                .is_some_and(|s| context.iter().any(|id| s.contains(*id)))
    });
    match owner {
        Some(i) => work.tombstones[i].removed_cells.extend(archived),
        None => work.tombstones.push(Tombstone {
            removed_subtree: None,
            removed_cells: archived.collect(),
            removed_at_version: work.version + 1,
            restored_at_version: None,
        }),
    }
}

fn write_structure(work: &mut DecisionDocument, report: &mut SyncReport) {
    let mut wanted = Vec::new();
    for table in &work.registry {
        let a = table.anchor;
        wanted.push((a, work.tree.nodes[&table.node_id].name.clone()));
        for (j, child) in table.column_bindings.iter().enumerate() {
            wanted.push((
                CellAddress::new(a.row, a.col + 1 + j as u32),
                work.tree.nodes[child].name.clone(),
            ));
        }
        for (i, alt) in work.alternatives.iter().enumerate() {
            wanted.push((CellAddress::new(table.row_of(i), a.col), alt.label.clone()));
        }
    }
    for (addr, text) in wanted {
        let value = CellValue::Text(text);
        if work.grid.get(addr) != Some(&value) {
            work.grid.set_cell(addr, value);
            report.managed_cells_rewritten += 1;
        }
    }
}

/// Fails unless every non-primitive node has an up-to-date table and no
/// table is stale.
pub fn ensure_synced(doc: &DecisionDocument) -> Result<()> {
    for table in &doc.registry {
        if !doc.tree.contains(table.node_id) || doc.tree.is_primitive(table.node_id) {
            return Err(Error::NotSynced(format!(
                "the table for {} no longer matches the tree",
                table.node_id
            )));
        }
    }
    for node in doc.tree.non_primitive_ids() {
        check_table(doc, node)?;
    }
    Ok(())
}

fn check_table(doc: &DecisionDocument, node: NodeId) -> Result<&ManagedTable> {
    let name = &doc.tree.node(node)?.name;
    let table = doc
        .table_for(node)
        .ok_or_else(|| Error::NotSynced(format!("{name:?} has no table")))?;
    if table.column_bindings != doc.tree.children(node)
        || table.n_rows as usize != 1 + doc.alternatives.len()
    {
        return Err(Error::NotSynced(format!(
            "the table for {name:?} is out of date"
        )));
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub address: CellAddress,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.address, self.message)
    }
}

/// Interprets one data cell. Text made only of `X`/`x` is a mark tally;
/// any other text is a note and yields no judgment.
pub fn decode_cell(value: &CellValue) -> (Judgment, Option<String>) {
    match value {
        CellValue::Empty => (Judgment::Absent, None),
        CellValue::Number(n) => (Judgment::Numeric(*n), None),
        CellValue::Mark(0) => (Judgment::Absent, None),
        CellValue::Mark(k) => (Judgment::Mark(*k), None),
        CellValue::Text(t) => {
            let t = t.trim();
            if !t.is_empty() && t.chars().all(|c| c == 'X' || c == 'x') {
                (Judgment::Mark(t.chars().count() as u32), None)
            } else {
                (
                    Judgment::Absent,
                    Some(format!("text {t:?} is not a judgment; treated as a note")),
                )
            }
        }
    }
}

/// Decoded alternative × child matrix of one table.
#[derive(Debug, Clone, PartialEq)]
pub struct JudgmentMatrix {
    pub node: NodeId,
    pub columns: Vec<NodeId>,
    /// One row per alternative, in declaration order.
    pub rows: Vec<Vec<Judgment>>,
    pub diagnostics: Vec<Diagnostic>,
    table: ManagedTable,
}

impl JudgmentMatrix {
    pub fn get(&self, alternative: usize, child: NodeId) -> Option<Judgment> {
        let j = self.columns.iter().position(|c| *c == child)?;
        self.rows.get(alternative).map(|r| r[j])
    }

    pub fn address(&self, alternative: usize, child: NodeId) -> Option<CellAddress> {
        Some(CellAddress::new(
            self.table.row_of(alternative),
            self.table.column_of(child)?,
        ))
    }
}

pub fn read_judgments(doc: &DecisionDocument, node: NodeId) -> Result<JudgmentMatrix> {
    let name = &doc.tree.node(node)?.name;
    if doc.tree.is_primitive(node) {
        return Err(Error::NotSynced(format!(
            "{name:?} is primitive and has no table; its judgments live in its parent's table"
        )));
    }
    let table = check_table(doc, node)?.clone();
    let mut rows = Vec::with_capacity(doc.alternatives.len());
    let mut diagnostics = Vec::new();
    for i in 0..doc.alternatives.len() {
        let mut row = Vec::with_capacity(table.column_bindings.len());
        for child in &table.column_bindings {
            let addr = CellAddress::new(table.row_of(i), table.column_of(*child).expect("bound"));
            let (judgment, diag) = decode_cell(&doc.grid.get_cell(addr));
            if let Some(message) = diag {
                diagnostics.push(Diagnostic {
                    address: addr,
                    message,
                });
            }
            row.push(judgment);
        }
        rows.push(row);
    }
    Ok(JudgmentMatrix {
        node,
        columns: table.column_bindings.clone(),
        rows,
        diagnostics,
        table,
    })
}
