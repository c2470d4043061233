//! Decision documents built around a value tree.
//!
//! A decision is a list of alternatives, a value tree that decomposes the
//! scoring goal into attributes, and a sparse grid holding raw judgments.
//! Every non-primitive attribute owns a managed table in the grid, kept in
//! step with the tree by [`sync`].

mod decimal;
pub mod error;
pub mod grid;
pub mod materialize;
pub mod model;
pub mod ops;
pub mod persist;
pub mod report;
pub mod scoring;
pub mod suggest;

pub use error::{Error, Result};
pub use grid::{allocate_region, CellAddress, CellValue, ManagedTable, Rect, VirtualGrid};
pub use materialize::{read_judgments, sync, JudgmentMatrix, SyncReport};
pub use model::{
    new_decision, validate, Alternative, AttributeNode, DecisionDocument, Direction,
    ImportanceLevel, Judgment, LeafScale, NodeId, Tombstone, ValueTree, Violation, ViolationKind,
};
pub use ops::{apply_edit, CellUpdate, Edit, EditOutcome};
pub use persist::{export_table_csv, export_tables_csv, load, lock_document, save, write_atomic};
pub use report::{build_report, export_report, Redaction, Report};
pub use scoring::{
    effective_leaf_weights, fuzzy_bands, leaf_score, rank, rollup, rollup_weighted, RankEntry,
    ScoreSheet, ScoreSource, WeightVector,
};
pub use suggest::{
    reflection_prompt, suggest_subattributes, ProviderConfig, ProviderError, StaticCorpus,
    SuggestionProvider,
};
