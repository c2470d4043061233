//! Document, value-tree and judgment types.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::decimal;
use crate::error::{Error, Result};
use crate::grid::{CellAddress, CellValue, ManagedTable, VirtualGrid};

pub const SCHEMA_VERSION: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u64);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

impl FromStr for NodeId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.trim_start_matches('#')
            .parse()
            .map(NodeId)
            .map_err(|_| Error::validation(format!("not a node id: {s:?}")))
    }
}

/// Importance of an attribute for the evaluation of its parent.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(try_from = "u32", into = "u32")]
pub enum ImportanceLevel {
    #[default]
    X1,
    X2,
    X4,
    X10,
}

impl ImportanceLevel {
    pub const ALL: [ImportanceLevel; 4] = [Self::X1, Self::X2, Self::X4, Self::X10];

    pub fn multiplier(self) -> u32 {
        match self {
            Self::X1 => 1,
            Self::X2 => 2,
            Self::X4 => 4,
            Self::X10 => 10,
        }
    }

    pub fn from_multiplier(m: u32) -> Option<Self> {
        Self::ALL.into_iter().find(|l| l.multiplier() == m)
    }

    /// The next level in the x1 → x2 → x4 → x10 → x1 cycle.
    pub fn cycle(self) -> Self {
        match self {
            Self::X1 => Self::X2,
            Self::X2 => Self::X4,
            Self::X4 => Self::X10,
            Self::X10 => Self::X1,
        }
    }
}

impl TryFrom<u32> for ImportanceLevel {
    type Error = String;

    fn try_from(m: u32) -> Result<Self, String> {
        Self::from_multiplier(m)
            .ok_or_else(|| format!("importance must be one of 1, 2, 4, 10 (got {m})"))
    }
}

impl From<ImportanceLevel> for u32 {
    fn from(l: ImportanceLevel) -> u32 {
        l.multiplier()
    }
}

impl fmt::Display for ImportanceLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "x{}", self.multiplier())
    }
}

impl FromStr for ImportanceLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let digits = s.trim().trim_start_matches(['x', 'X']);
        digits
            .parse::<u32>()
            .ok()
            .and_then(Self::from_multiplier)
            .ok_or_else(|| {
                Error::validation(format!(
                    "importance must be one of x1, x2, x4, x10 (got {s:?})"
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    #[default]
    HigherIsBetter,
    LowerIsBetter,
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "higher_is_better" | "higher" => Ok(Direction::HigherIsBetter),
            "lower_is_better" | "lower" => Ok(Direction::LowerIsBetter),
            _ => Err(Error::validation(format!("unknown direction {s:?}"))),
        }
    }
}

/// Measurement scale of a primitive attribute.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeafScale {
    #[serde(with = "decimal")]
    pub min: f64,
    #[serde(with = "decimal")]
    pub max: f64,
    pub direction: Direction,
}

impl LeafScale {
    pub fn new(min: f64, max: f64, direction: Direction) -> Result<Self> {
        let scale = Self {
            min,
            max,
            direction,
        };
        scale.check()?;
        Ok(scale)
    }

    fn check(&self) -> Result<()> {
        if !(self.min.is_finite() && self.max.is_finite() && self.min < self.max) {
            return Err(Error::validation(format!(
                "scale bounds must satisfy min < max (got {} to {})",
                self.min, self.max
            )));
        }
        Ok(())
    }
}

impl Default for LeafScale {
    fn default() -> Self {
        Self {
            min: 0.0,
            max: 10.0,
            direction: Direction::HigherIsBetter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeNode {
    pub id: NodeId,
    pub name: String,
    pub importance: ImportanceLevel,
    pub note: String,
    /// Only consulted while the node is primitive. `None` means the default
    /// 0–10, higher-is-better scale.
    pub leaf_scale: Option<LeafScale>,
}

impl AttributeNode {
    pub(crate) fn new(id: NodeId, name: impl Into<String>) -> Self {
        Self {
            id,
            name: name.into(),
            importance: ImportanceLevel::X1,
            note: String::new(),
            leaf_scale: None,
        }
    }

    pub fn scale(&self) -> LeafScale {
        self.leaf_scale.unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueTree {
    pub nodes: BTreeMap<NodeId, AttributeNode>,
    pub root_id: NodeId,
    pub child_lists: BTreeMap<NodeId, Vec<NodeId>>,
    /// Next identifier to hand out; identifiers are never reused.
    pub next_id: u64,
}

impl ValueTree {
    pub fn new(root_name: impl Into<String>) -> Self {
        let root = AttributeNode::new(NodeId(0), root_name);
        Self {
            nodes: BTreeMap::from([(root.id, root)]),
            root_id: NodeId(0),
            child_lists: BTreeMap::new(),
            next_id: 1,
        }
    }

    pub(crate) fn alloc_id(&mut self) -> NodeId {
        let id = NodeId(self.next_id);
        self.next_id += 1;
        id
    }

    pub fn root(&self) -> &AttributeNode {
        &self.nodes[&self.root_id]
    }

    pub fn get(&self, id: NodeId) -> Option<&AttributeNode> {
        self.nodes.get(&id)
    }

    pub fn node(&self, id: NodeId) -> Result<&AttributeNode> {
        self.nodes
            .get(&id)
            .ok_or_else(|| Error::not_found(format!("node {id}")))
    }

    pub(crate) fn node_mut(&mut self, id: NodeId) -> Result<&mut AttributeNode> {
        self.nodes
            .get_mut(&id)
            .ok_or_else(|| Error::not_found(format!("node {id}")))
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.nodes.contains_key(&id)
    }

    pub fn children(&self, id: NodeId) -> &[NodeId] {
        self.child_lists.get(&id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn is_primitive(&self, id: NodeId) -> bool {
        self.children(id).is_empty()
    }

    pub fn parent_of(&self, id: NodeId) -> Option<NodeId> {
        self.child_lists
            .iter()
            .find(|(_, kids)| kids.contains(&id))
            .map(|(p, _)| *p)
    }

    /// Nodes in depth-first pre-order, children in list order.
    pub fn preorder(&self) -> Vec<NodeId> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![self.root_id];
        let mut seen = HashSet::new();
        while let Some(id) = stack.pop() {
            if !seen.insert(id) {
                continue;
            }
            out.push(id);
            for child in self.children(id).iter().rev() {
                stack.push(*child);
            }
        }
        out
    }

    /// `id` and all of its descendants, pre-order.
    pub fn subtree(&self, id: NodeId) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut stack = vec![id];
        while let Some(n) = stack.pop() {
            out.push(n);
            for child in self.children(n).iter().rev() {
                stack.push(*child);
            }
        }
        out
    }

    pub fn non_primitive_ids(&self) -> BTreeSet<NodeId> {
        self.nodes
            .keys()
            .copied()
            .filter(|id| !self.is_primitive(*id))
            .collect()
    }

    pub fn leaves(&self) -> Vec<NodeId> {
        self.preorder()
            .into_iter()
            .filter(|id| self.is_primitive(*id))
            .collect()
    }

    pub fn depth(&self, id: NodeId) -> usize {
        let mut depth = 0;
        let mut cur = id;
        while let Some(p) = self.parent_of(cur) {
            depth += 1;
            cur = p;
        }
        depth
    }

    /// Names from the root down to `id`.
    pub fn path_of(&self, id: NodeId) -> Vec<String> {
        let mut names = Vec::new();
        let mut cur = Some(id);
        while let Some(n) = cur {
            if let Some(node) = self.nodes.get(&n) {
                names.push(node.name.clone());
            }
            cur = self.parent_of(n);
        }
        names.reverse();
        names
    }

    pub fn child_named(&self, parent: NodeId, name: &str) -> Option<NodeId> {
        self.children(parent)
            .iter()
            .copied()
            .find(|c| self.nodes.get(c).is_some_and(|n| n.name == name))
    }

    /// Resolves a slash-separated path such as
    /// `root/Productivity impact/Team collaboration`. The first segment is
    /// either the literal `root` or the root's own name. Names that
    /// themselves contain `/` are matched greedily.
    pub fn resolve_path(&self, path: &str) -> Result<NodeId> {
        let root = self.root();
        let rest = if path == "root" || path == root.name {
            return Ok(self.root_id);
        } else if let Some(r) = path.strip_prefix("root/") {
            r
        } else if let Some(r) = path.strip_prefix(&format!("{}/", root.name)) {
            r
        } else {
            return Err(Error::not_found(format!(
                "path {path:?} (paths start with \"root/\")"
            )));
        };
        self.resolve_below(self.root_id, rest)
            .ok_or_else(|| Error::not_found(format!("path {path:?}")))
    }

    fn resolve_below(&self, parent: NodeId, rest: &str) -> Option<NodeId> {
        for child in self.children(parent) {
            let name = &self.nodes[child].name;
            if rest == name {
                return Some(*child);
            }
            if let Some(tail) = rest
                .strip_prefix(name.as_str())
                .and_then(|t| t.strip_prefix('/'))
            {
                if let Some(found) = self.resolve_below(*child, tail) {
                    return Some(found);
                }
            }
        }
        None
    }

    /// Indented outline with importance multipliers, one node per line.
    pub fn outline(&self) -> String {
        let mut out = String::new();
        for id in self.preorder() {
            let node = &self.nodes[&id];
            let depth = self.depth(id);
            if depth == 0 {
                out.push_str(&node.name);
            } else {
                out.push_str(&"  ".repeat(depth));
                out.push_str("- ");
                out.push_str(&node.name);
                out.push_str(&format!(" ({})", node.importance));
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExclusionRecord {
    pub rationale: String,
    /// Document version at which the exclusion was accepted; serves as a
    /// logical timestamp so replayed edit logs reproduce documents exactly.
    pub at_version: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alternative {
    pub label: String,
    pub declaration_index: usize,
    pub excluded: Option<ExclusionRecord>,
}

impl Alternative {
    pub fn is_live(&self) -> bool {
        self.excluded.is_none()
    }
}

/// A judgment decoded from a table cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Judgment {
    Numeric(f64),
    Mark(u32),
    Absent,
}

/// Subtree detached by a node removal, with enough context to put it back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemovedSubtree {
    pub parent_id: NodeId,
    pub position: usize,
    pub root_id: NodeId,
    pub nodes: Vec<AttributeNode>,
    pub child_lists: BTreeMap<NodeId, Vec<NodeId>>,
}

impl RemovedSubtree {
    pub fn contains(&self, id: NodeId) -> bool {
        self.nodes.iter().any(|n| n.id == id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchivedCell {
    pub address: CellAddress,
    pub value: CellValue,
}

/// Archive of content removed by a destructive edit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tombstone {
    pub removed_subtree: Option<RemovedSubtree>,
    pub removed_cells: Vec<ArchivedCell>,
    pub removed_at_version: u64,
    pub restored_at_version: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionDocument {
    pub id: String,
    pub goal: String,
    pub scoring_goal: String,
    pub alternatives: Vec<Alternative>,
    pub tree: ValueTree,
    pub grid: VirtualGrid,
    pub registry: Vec<ManagedTable>,
    pub tombstones: Vec<Tombstone>,
    pub version: u64,
    pub schema_version: u64,
}

impl DecisionDocument {
    pub fn alternative(&self, label: &str) -> Result<&Alternative> {
        self.alternatives
            .iter()
            .find(|a| a.label == label)
            .ok_or_else(|| Error::not_found(format!("alternative {label:?}")))
    }

    pub fn live_alternatives(&self) -> impl Iterator<Item = &Alternative> {
        self.alternatives.iter().filter(|a| a.is_live())
    }

    pub fn table_for(&self, node: NodeId) -> Option<&ManagedTable> {
        self.registry.iter().find(|t| t.node_id == node)
    }

    pub(crate) fn bump_version(&mut self) -> u64 {
        self.version += 1;
        self.version
    }
}

fn slug(text: &str) -> String {
    let mut out = String::new();
    for ch in text.chars() {
        if ch.is_ascii_alphanumeric() {
            out.push(ch.to_ascii_lowercase());
        } else if !out.ends_with('-') && !out.is_empty() {
            out.push('-');
        }
        if out.len() >= 48 {
            break;
        }
    }
    let trimmed = out.trim_end_matches('-');
    if trimmed.is_empty() {
        "decision".to_owned()
    } else {
        trimmed.to_owned()
    }
}

fn first_duplicate<'a>(items: impl IntoIterator<Item = &'a str>) -> Option<&'a str> {
    let mut seen = HashSet::new();
    items.into_iter().find(|item| !seen.insert(*item))
}

/// Builds a decision from the setup inputs. The root is named after the
/// scoring goal and every attribute becomes a child of it at x1.
pub fn new_decision<A, B>(
    goal: &str,
    alternatives: &[A],
    attributes: &[B],
    scoring_goal: &str,
) -> Result<DecisionDocument>
where
    A: AsRef<str>,
    B: AsRef<str>,
{
    if goal.trim().is_empty() {
        return Err(Error::validation("decision goal must not be empty"));
    }
    if scoring_goal.trim().is_empty() {
        return Err(Error::validation("scoring goal must not be empty"));
    }
    if alternatives.iter().any(|a| a.as_ref().trim().is_empty()) {
        return Err(Error::validation("alternative labels must not be empty"));
    }
    if let Some(dup) = first_duplicate(alternatives.iter().map(AsRef::as_ref)) {
        return Err(Error::validation(format!("duplicate alternative: {dup}")));
    }
    if alternatives.len() < 2 {
        return Err(Error::validation(
            "a decision needs at least 2 alternatives",
        ));
    }
    if attributes.is_empty() {
        return Err(Error::validation("a decision needs at least 1 attribute"));
    }
    if attributes.iter().any(|a| a.as_ref().trim().is_empty()) {
        return Err(Error::validation("attribute names must not be empty"));
    }
    if let Some(dup) = first_duplicate(attributes.iter().map(AsRef::as_ref)) {
        return Err(Error::validation(format!("duplicate attribute: {dup}")));
    }

    let mut tree = ValueTree::new(scoring_goal);
    let mut kids = Vec::with_capacity(attributes.len());
    for name in attributes {
        let id = tree.alloc_id();
        tree.nodes.insert(id, AttributeNode::new(id, name.as_ref()));
        kids.push(id);
    }
    tree.child_lists.insert(tree.root_id, kids);

    Ok(DecisionDocument {
        id: slug(goal),
        goal: goal.to_owned(),
        scoring_goal: scoring_goal.to_owned(),
        alternatives: alternatives
            .iter()
            .enumerate()
            .map(|(i, label)| Alternative {
                label: label.as_ref().to_owned(),
                declaration_index: i,
                excluded: None,
            })
            .collect(),
        tree,
        grid: VirtualGrid::new(),
        registry: Vec::new(),
        tombstones: Vec::new(),
        version: 0,
        schema_version: SCHEMA_VERSION,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    /// The document itself is malformed.
    Structural,
    /// The table registry lags the tree; the next sync repairs it.
    StaleRegistry,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

/// Checks every document invariant. An empty list means the document is
/// well formed.
pub fn validate(doc: &DecisionDocument) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut structural = |msg: String| {
        out.push(Violation {
            kind: ViolationKind::Structural,
            message: msg,
        })
    };

    if doc.schema_version != SCHEMA_VERSION {
        structural(format!("unsupported schema version {}", doc.schema_version));
    }

    // alternatives
    let mut seen = HashSet::new();
    for alt in &doc.alternatives {
        if alt.label.trim().is_empty() {
            structural(format!(
                "empty alternative label at index {}",
                alt.declaration_index
            ));
        } else if !seen.insert(alt.label.as_str()) {
            structural(format!("duplicate alternative: {}", alt.label));
        }
    }
    for (i, alt) in doc.alternatives.iter().enumerate() {
        if alt.declaration_index != i {
            structural(format!(
                "alternative {} has declaration index {} (expected {i})",
                alt.label, alt.declaration_index
            ));
        }
    }
    if doc.alternatives.len() < 2 {
        structural("fewer than 2 alternatives".to_owned());
    } else if doc.live_alternatives().count() < 2 {
        structural("fewer than 2 live alternatives".to_owned());
    }

    // tree
    let tree = &doc.tree;
    if !tree.nodes.contains_key(&tree.root_id) {
        structural(format!("root node {} is missing", tree.root_id));
    }
    for (key, node) in &tree.nodes {
        if *key != node.id {
            structural(format!("node stored under {key} carries id {}", node.id));
        }
        if node.id.0 >= tree.next_id {
            structural(format!(
                "node {} is not below the id counter {}",
                node.id, tree.next_id
            ));
        }
        if node.name.trim().is_empty() {
            structural(format!("node {} has an empty name", node.id));
        }
        if let Some(scale) = &node.leaf_scale {
            if scale.check().is_err() {
                structural(format!("node {} has an invalid scale", node.id));
            }
        }
    }
    let mut parent_count: BTreeMap<NodeId, usize> = BTreeMap::new();
    for (parent, kids) in &tree.child_lists {
        if !tree.nodes.contains_key(parent) {
            structural(format!("child list for unknown node {parent}"));
        }
        let mut names = HashSet::new();
        for kid in kids {
            *parent_count.entry(*kid).or_default() += 1;
            match tree.nodes.get(kid) {
                None => structural(format!("node {parent} lists unknown child {kid}")),
                Some(n) => {
                    if !names.insert(n.name.as_str()) {
                        structural(format!("duplicate sibling name under {parent}: {}", n.name));
                    }
                }
            }
        }
    }
    if parent_count.contains_key(&tree.root_id) {
        structural(format!("root {} has a parent", tree.root_id));
    }
    for (id, count) in &parent_count {
        if *count > 1 {
            structural(format!("node {id} has {count} parents"));
        }
    }
    if tree.nodes.contains_key(&tree.root_id) {
        let reachable: HashSet<NodeId> = tree.preorder().into_iter().collect();
        for id in tree.nodes.keys() {
            if !reachable.contains(id) {
                structural(format!("node {id} is not reachable from the root"));
            }
        }
    }

    // grid
    for (addr, value) in doc.grid.iter() {
        match value {
            CellValue::Empty => structural(format!("empty cell stored at {addr}")),
            CellValue::Mark(0) => structural(format!("zero mark stored at {addr}")),
            CellValue::Number(n) if !n.is_finite() => {
                structural(format!("non-finite number stored at {addr}"))
            }
            _ => {}
        }
    }

    // registry
    let mut bound = HashSet::new();
    for table in &doc.registry {
        if !bound.insert(table.node_id) {
            structural(format!("node {} has more than one table", table.node_id));
        }
        if table.n_cols as usize != 1 + table.column_bindings.len() {
            structural(format!(
                "table for {} has {} columns but {} bindings",
                table.node_id,
                table.n_cols,
                table.column_bindings.len()
            ));
        }
        if table.n_rows as usize != 1 + doc.alternatives.len() {
            structural(format!(
                "table for {} has {} rows for {} alternatives",
                table.node_id,
                table.n_rows,
                doc.alternatives.len()
            ));
        }
    }
    for (i, a) in doc.registry.iter().enumerate() {
        if a.n_rows == 0 || a.n_cols == 0 {
            continue;
        }
        for b in &doc.registry[i + 1..] {
            if b.n_rows > 0 && b.n_cols > 0 && a.region().intersects(&b.region()) {
                structural(format!(
                    "tables for {} and {} overlap",
                    a.node_id, b.node_id
                ));
            }
        }
    }
    for table in &doc.registry {
        if !tree.contains(table.node_id) {
            out.push(Violation {
                kind: ViolationKind::StaleRegistry,
                message: format!("table bound to deleted node {}", table.node_id),
            });
        } else if tree.is_primitive(table.node_id) {
            out.push(Violation {
                kind: ViolationKind::StaleRegistry,
                message: format!("table bound to primitive node {}", table.node_id),
            });
        }
    }

    out
}

/// Violations that make a document unusable, as opposed to a registry
/// that merely awaits the next sync.
pub fn structural_violations(doc: &DecisionDocument) -> Vec<Violation> {
    validate(doc)
        .into_iter()
        .filter(|v| v.kind == ViolationKind::Structural)
        .collect()
}

pub(crate) fn ensure_structurally_valid(doc: &DecisionDocument) -> Result<()> {
    let problems = structural_violations(doc);
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::Validation(
            problems
                .iter()
                .map(|v| v.message.as_str())
                .collect::<Vec<_>>()
                .join("; "),
        ))
    }
}

#[cfg(test)]
pub(crate) use tests::remote_workday;
