//! Sparse cell storage standing in for a spreadsheet sheet.
//!
//! The grid is a data substrate only: no formulas, no formatting. Managed
//! tables are rectangular regions recorded in the document registry; every
//! other cell belongs to the user.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::decimal;
use crate::model::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellAddress {
    pub row: u32,
    pub col: u32,
}

impl CellAddress {
    pub const fn new(row: u32, col: u32) -> Self {
        Self { row, col }
    }
}

impl fmt::Display for CellAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.row, self.col)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum CellValue {
    #[default]
    Empty,
    Text(String),
    Number(#[serde(with = "decimal")] f64),
    /// Tally of X marks. Always at least one when stored.
    Mark(u32),
}

impl CellValue {
    pub fn is_empty(&self) -> bool {
        matches!(self, CellValue::Empty | CellValue::Mark(0))
    }

    pub fn text(s: impl Into<String>) -> Self {
        CellValue::Text(s.into())
    }

    /// Interprets user input the way a sheet would: blank clears the cell,
    /// anything that parses as a finite number becomes a number, everything
    /// else is kept as text.
    pub fn parse_input(input: &str) -> Self {
        if input.trim().is_empty() {
            return CellValue::Empty;
        }
        match decimal::parse(input) {
            Ok(n) => CellValue::Number(n),
            Err(_) => CellValue::Text(input.to_owned()),
        }
    }

    /// Text form used in CSV exports and the CLI.
    pub fn display_text(&self) -> String {
        match self {
            CellValue::Empty => String::new(),
            CellValue::Text(t) => t.clone(),
            CellValue::Number(n) => decimal::format(*n),
            CellValue::Mark(k) => "X".repeat(*k as usize),
        }
    }
}

/// Inclusive rectangle of cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub top: u32,
    pub left: u32,
    pub bottom: u32,
    pub right: u32,
}

impl Rect {
    pub fn contains(&self, addr: CellAddress) -> bool {
        (self.top..=self.bottom).contains(&addr.row) && (self.left..=self.right).contains(&addr.col)
    }

    pub fn intersects(&self, other: &Rect) -> bool {
        self.top <= other.bottom
            && other.top <= self.bottom
            && self.left <= other.right
            && other.left <= self.right
    }

    pub fn n_rows(&self) -> u32 {
        self.bottom - self.top + 1
    }

    pub fn n_cols(&self) -> u32 {
        self.right - self.left + 1
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct VirtualGrid {
    cells: BTreeMap<CellAddress, CellValue>,
}

impl VirtualGrid {
    pub fn new() -> Self {
        Self::default()
    }

    /// Point update. Writing an empty value removes the stored entry.
    pub fn set_cell(&mut self, addr: CellAddress, value: CellValue) {
        if value.is_empty() {
            self.cells.remove(&addr);
        } else {
            self.cells.insert(addr, value);
        }
    }

    pub fn get_cell(&self, addr: CellAddress) -> CellValue {
        self.cells.get(&addr).cloned().unwrap_or_default()
    }

    pub fn get(&self, addr: CellAddress) -> Option<&CellValue> {
        self.cells.get(&addr)
    }

    pub fn remove(&mut self, addr: CellAddress) -> Option<CellValue> {
        self.cells.remove(&addr)
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (CellAddress, &CellValue)> {
        self.cells.iter().map(|(a, v)| (*a, v))
    }

    /// Stored cells inside `rect`, in address order.
    pub fn cells_in(&self, rect: &Rect) -> Vec<(CellAddress, CellValue)> {
        let start = CellAddress::new(rect.top, 0);
        let end = CellAddress::new(rect.bottom, u32::MAX);
        self.cells
            .range(start..=end)
            .filter(|(a, _)| rect.contains(**a))
            .map(|(a, v)| (*a, v.clone()))
            .collect()
    }

    /// Removes and returns every stored cell inside `rect`.
    pub fn take_rect(&mut self, rect: &Rect) -> Vec<(CellAddress, CellValue)> {
        let taken = self.cells_in(rect);
        for (addr, _) in &taken {
            self.cells.remove(addr);
        }
        taken
    }

    /// Tightest rectangle covering every non-empty cell.
    pub fn used_range(&self) -> Option<Rect> {
        let mut iter = self.cells.keys();
        let first = iter.next()?;
        let mut rect = Rect {
            top: first.row,
            left: first.col,
            bottom: first.row,
            right: first.col,
        };
        for addr in iter {
            rect.left = rect.left.min(addr.col);
            rect.right = rect.right.max(addr.col);
            rect.bottom = rect.bottom.max(addr.row);
        }
        Some(rect)
    }
}

#[derive(Serialize, Deserialize)]
struct StoredCell {
    row: u32,
    col: u32,
    value: CellValue,
}

impl Serialize for VirtualGrid {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let cells: Vec<StoredCell> = self
            .cells
            .iter()
            .map(|(a, v)| StoredCell {
                row: a.row,
                col: a.col,
                value: v.clone(),
            })
            .collect();
        cells.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for VirtualGrid {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let stored = Vec::<StoredCell>::deserialize(deserializer)?;
        let mut cells = BTreeMap::new();
        for cell in stored {
            let addr = CellAddress::new(cell.row, cell.col);
            if cells.insert(addr, cell.value).is_some() {
                return Err(serde::de::Error::custom(format!(
                    "duplicate cell at {addr}"
                )));
            }
        }
        // Empty entries are kept so validation can report them.
        Ok(VirtualGrid { cells })
    }
}

/// Registry entry binding a non-primitive node to a grid region.
///
/// Row 0 of the region is the header (node name, then one column per
/// child); column 0 holds alternative labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManagedTable {
    pub node_id: NodeId,
    pub anchor: CellAddress,
    pub n_rows: u32,
    pub n_cols: u32,
    pub column_bindings: Vec<NodeId>,
}

impl ManagedTable {
    pub fn region(&self) -> Rect {
        Rect {
            top: self.anchor.row,
            left: self.anchor.col,
            bottom: self.anchor.row + self.n_rows - 1,
            right: self.anchor.col + self.n_cols - 1,
        }
    }

    /// Grid column holding the given child, if bound.
    pub fn column_of(&self, child: NodeId) -> Option<u32> {
        self.column_bindings
            .iter()
            .position(|c| *c == child)
            .map(|i| self.anchor.col + 1 + i as u32)
    }

    /// Grid row for the alternative at `index`.
    pub fn row_of(&self, index: usize) -> u32 {
        self.anchor.row + 1 + index as u32
    }
}

/// Lowest row that lies strictly below every stored cell and every
/// registered region, leaving one blank gap row.
pub(crate) fn next_free_row(grid: &VirtualGrid, registry: &[ManagedTable]) -> u32 {
    let bottom = grid
        .used_range()
        .map(|r| r.bottom)
        .into_iter()
        .chain(registry.iter().map(|t| t.region().bottom))
        .max();
    match bottom {
        Some(b) => b + 2,
        None => 0,
    }
}

/// Picks the anchor for a new table of the given size: column 0, one gap row
/// below everything already on the sheet.
pub fn allocate_region(
    grid: &VirtualGrid,
    registry: &[ManagedTable],
    n_rows: u32,
    n_cols: u32,
) -> CellAddress {
    assert!(n_rows >= 1 && n_cols >= 1, "table regions are at least 1x1");
    CellAddress::new(next_free_row(grid, registry), 0)
}
