//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde_json::Value;
use valtree_core::model::ArchivedCell;
use valtree_core::ops::{
    add_child, exclude_alternative, include_alternative, remove_node, rename_node,
    restore_tombstone, set_cells, set_importance, set_leaf_scale, set_note,
};
use valtree_core::persist::FILE_EXTENSION;
use valtree_core::report::score_section;
use valtree_core::scoring::rollup_weighted;
use valtree_core::{
    apply_edit, build_report, load, new_decision, reflection_prompt, rollup, save, sync, validate,
    CellAddress, CellUpdate, CellValue, DecisionDocument, Direction, Edit, Error, ImportanceLevel,
    LeafScale, NodeId, Redaction, WeightVector,
};

const GOAL: &str = "which day of the week should be remote workday for my team";
const SCORING_GOAL: &str = "Scoring potential remote workdays for team members";
const DAYS: [&str; 5] = ["Monday", "Tuesday", "Wednesday", "Thursday", "Friday"];
const ATTRS: [&str; 5] = [
    "Business needs on specific days",
    "Employee preferences",
    "Collaboration and communication needs",
    "Workload distribution",
    "Productivity impact",
];
const LABELS: [&str; 8] = [
    "Alpha", "Bravo", "Charlie", "Delta", "Echo", "Foxtrot", "Golf", "Hotel",
];
const MAX_DEPTH: usize = 4;
const MAX_FANOUT: usize = 4;

type Check = std::result::Result<String, String>;
type Criterion = (&'static str, fn() -> Check, Option<Duration>);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {{
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    }};
}

fn main() {
    let criteria: Vec<Criterion> = vec![
        (
            "fixture reproduction",
            fixture_reproduction,
            Some(Duration::from_secs(1)),
        ),
        (
            "materialization bijection",
            materialization_bijection,
            Some(Duration::from_secs(30)),
        ),
        ("scoring oracle", scoring_oracle, None),
        ("worked example", worked_example, None),
        ("persistence", persistence, None),
        ("redaction", redaction, None),
        ("service linearizability", service_linearizability, None),
        ("reflection prompts", reflection_prompts, None),
    ];
    let mut failed = 0;
    for (name, check, limit) in criteria {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let elapsed = start.elapsed();
        let result = match (result, limit) {
            (Ok(_), Some(limit)) if elapsed > limit => {
                Err(format!("took {elapsed:?}, limit {limit:?}"))
            }
            (r, _) => r,
        };
        match result {
            Ok(detail) => println!("PASS {name}: {detail} [{:.3}s]", elapsed.as_secs_f64()),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why} [{:.3}s]", elapsed.as_secs_f64());
            }
        }
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}

fn header(doc: &DecisionDocument, node: NodeId) -> Vec<String> {
    let t = doc.table_for(node).expect("table");
    (0..t.n_cols)
        .map(|c| {
            doc.grid
                .get_cell(CellAddress::new(t.anchor.row, t.anchor.col + c))
                .display_text()
        })
        .collect()
}

fn labels(doc: &DecisionDocument, node: NodeId) -> Vec<String> {
    let t = doc.table_for(node).expect("table");
    (1..t.n_rows)
        .map(|r| {
            doc.grid
                .get_cell(CellAddress::new(t.anchor.row + r, t.anchor.col))
                .display_text()
        })
        .collect()
}

fn fixture_reproduction() -> Check {
    let mut doc = new_decision(GOAL, &DAYS, &ATTRS, SCORING_GOAL).map_err(|e| e.to_string())?;
    sync(&mut doc).map_err(|e| e.to_string())?;
    let root = doc.tree.root_id;
    let pi = doc
        .tree
        .child_named(root, "Productivity impact")
        .ok_or("no Productivity impact")?;
    add_child(&mut doc, pi, "disruption of weekly rhythm").map_err(|e| e.to_string())?;
    add_child(&mut doc, pi, "team collaboration").map_err(|e| e.to_string())?;
    sync(&mut doc).map_err(|e| e.to_string())?;

    ensure!(doc.registry.len() == 2, "{} tables", doc.registry.len());
    let shapes: Vec<(u32, u32)> = doc.registry.iter().map(|t| (t.n_rows, t.n_cols)).collect();
    ensure!(shapes == [(6, 6), (6, 3)], "shapes {shapes:?}");
    let mut root_header = vec![SCORING_GOAL.to_owned()];
    root_header.extend(ATTRS.iter().map(|s| s.to_string()));
    ensure!(
        header(&doc, root) == root_header,
        "root header {:?}",
        header(&doc, root)
    );
    let pi_header = [
        "Productivity impact",
        "disruption of weekly rhythm",
        "team collaboration",
    ];
    ensure!(
        header(&doc, pi) == pi_header,
        "productivity header {:?}",
        header(&doc, pi)
    );
    for node in [root, pi] {
        ensure!(
            labels(&doc, node) == DAYS,
            "labels {:?}",
            labels(&doc, node)
        );
    }
    let a = doc.registry[0].region();
    let b = doc.registry[1].region();
    ensure!(!a.intersects(&b), "tables overlap");
    Ok(format!(
        "2 tables 6x6 at {} and 6x3 at {}",
        doc.registry[0].anchor, doc.registry[1].anchor
    ))
}

fn depth_ok_parents(doc: &DecisionDocument) -> Vec<NodeId> {
    doc.tree
        .preorder()
        .into_iter()
        .filter(|n| doc.tree.depth(*n) < MAX_DEPTH && doc.tree.children(*n).len() < MAX_FANOUT)
        .collect()
}

fn non_root(doc: &DecisionDocument) -> Vec<NodeId> {
    doc.tree
        .preorder()
        .into_iter()
        .filter(|n| *n != doc.tree.root_id)
        .collect()
}

fn random_level(rng: &mut ChaCha8Rng) -> ImportanceLevel {
    *ImportanceLevel::ALL.choose(rng).unwrap()
}

/// Random tree within the depth and fanout limits.
fn random_tree_doc(rng: &mut ChaCha8Rng, counter: &mut usize) -> DecisionDocument {
    let n_alts = rng.gen_range(2..=LABELS.len());
    let n_attrs = rng.gen_range(1..=MAX_FANOUT);
    let attrs: Vec<String> = (0..n_attrs)
        .map(|_| {
            *counter += 1;
            format!("n{counter}")
        })
        .collect();
    let mut doc =
        new_decision("random decision", &LABELS[..n_alts], &attrs, "random goal").unwrap();
    for _ in 0..rng.gen_range(0..12) {
        let parents = depth_ok_parents(&doc);
        let parent = *parents.choose(rng).unwrap();
        *counter += 1;
        add_child(&mut doc, parent, &format!("n{counter}")).unwrap();
    }
    for n in non_root(&doc) {
        set_importance(&mut doc, n, random_level(rng)).unwrap();
    }
    doc
}

/// Tracks cells the test wrote so that sync can be audited.
#[derive(Default)]
struct Tracker {
    /// Cells written outside every managed region.
    free: BTreeMap<CellAddress, CellValue>,
    /// Judgment cells keyed by (table node, bound child, alternative index).
    data: BTreeMap<(NodeId, NodeId, usize), CellValue>,
    relocated: usize,
    archived: usize,
}

fn in_any_region(doc: &DecisionDocument, addr: CellAddress) -> bool {
    doc.registry.iter().any(|t| t.region().contains(addr))
}

fn audit_sync(
    before: &DecisionDocument,
    doc: &DecisionDocument,
    report: &valtree_core::SyncReport,
    tr: &mut Tracker,
) -> Check {
    for r in &report.cells_relocated {
        if let Some(v) = tr.free.remove(&r.from) {
            tr.free.insert(r.to, v);
            tr.relocated += 1;
        }
    }
    for (addr, v) in &tr.free {
        ensure!(
            doc.grid.get_cell(*addr) == *v,
            "user cell {addr} changed to {:?}",
            doc.grid.get_cell(*addr)
        );
    }
    let mut gone = Vec::new();
    for (&(table, child, alt), v) in &tr.data {
        let now = doc
            .table_for(table)
            .and_then(|t| t.column_of(child).map(|c| (t, c)));
        match now {
            Some((t, col)) => {
                let addr = CellAddress::new(t.row_of(alt), col);
                ensure!(
                    doc.grid.get_cell(addr) == *v,
                    "judgment for {child} in {table} lost at {addr}"
                );
            }
            None => {
                let old = before.table_for(table).expect("tracked table existed");
                let addr = CellAddress::new(old.row_of(alt), old.column_of(child).expect("bound"));
                let archived = ArchivedCell {
                    address: addr,
                    value: v.clone(),
                };
                let found = doc
                    .tombstones
                    .iter()
                    .any(|t| t.removed_cells.contains(&archived));
                ensure!(found, "judgment at {addr} neither kept nor archived");
                gone.push((table, child, alt));
            }
        }
    }
    for k in gone {
        tr.data.remove(&k);
        tr.archived += 1;
    }
    structure_ok(doc)
}

fn structure_ok(doc: &DecisionDocument) -> Check {
    let registry: BTreeSet<NodeId> = doc.registry.iter().map(|t| t.node_id).collect();
    ensure!(
        registry.len() == doc.registry.len(),
        "duplicate registry entries"
    );
    ensure!(
        registry == doc.tree.non_primitive_ids(),
        "registry differs from non-primitive nodes"
    );
    for (i, a) in doc.registry.iter().enumerate() {
        for b in &doc.registry[i + 1..] {
            ensure!(
                !a.region().intersects(&b.region()),
                "tables for {} and {} overlap",
                a.node_id,
                b.node_id
            );
        }
        let mut expect = vec![doc.tree.nodes[&a.node_id].name.clone()];
        expect.extend(
            doc.tree
                .children(a.node_id)
                .iter()
                .map(|c| doc.tree.nodes[c].name.clone()),
        );
        ensure!(
            header(doc, a.node_id) == expect,
            "stale header for {}",
            a.node_id
        );
        let alts: Vec<String> = doc.alternatives.iter().map(|x| x.label.clone()).collect();
        ensure!(
            labels(doc, a.node_id) == alts,
            "stale labels for {}",
            a.node_id
        );
    }
    let problems = validate(doc);
    ensure!(problems.is_empty(), "violations: {problems:?}");
    Ok(String::new())
}

fn bijection_sequence(rng: &mut ChaCha8Rng) -> std::result::Result<(usize, usize), String> {
    let mut counter = 0usize;
    let n_alts = rng.gen_range(2..=LABELS.len());
    let n_attrs = rng.gen_range(1..=MAX_FANOUT);
    let attrs: Vec<String> = (0..n_attrs).map(|i| format!("a{i}")).collect();
    let mut doc = new_decision("g", &LABELS[..n_alts], &attrs, "s").unwrap();
    let mut tr = Tracker::default();

    for _ in 0..rng.gen_range(5..=30) {
        match rng.gen_range(0..12) {
            0..=2 => {
                let parents = depth_ok_parents(&doc);
                if let Some(p) = parents.choose(rng) {
                    counter += 1;
                    add_child(&mut doc, *p, &format!("n{counter}")).map_err(|e| e.to_string())?;
                }
            }
            3 => {
                if let Some(n) = non_root(&doc).choose(rng) {
                    remove_node(&mut doc, *n).map_err(|e| e.to_string())?;
                }
            }
            4 => {
                if let Some(n) = non_root(&doc).choose(rng) {
                    counter += 1;
                    rename_node(&mut doc, *n, &format!("r{counter}")).map_err(|e| e.to_string())?;
                }
            }
            5 => {
                if let Some(n) = non_root(&doc).choose(rng) {
                    set_importance(&mut doc, *n, random_level(rng)).map_err(|e| e.to_string())?;
                }
            }
            6 => {
                if !doc.tombstones.is_empty() {
                    let i = rng.gen_range(0..doc.tombstones.len());
                    let _ = restore_tombstone(&mut doc, i);
                }
            }
            7 => {
                let label = doc.alternatives.choose(rng).unwrap().label.clone();
                if rng.gen_bool(0.5) {
                    let _ = exclude_alternative(&mut doc, &label, "why not");
                } else {
                    let _ = include_alternative(&mut doc, &label);
                }
            }
            8 => {
                let bottom = doc.grid.used_range().map(|r| r.bottom).unwrap_or(0);
                let addr = CellAddress::new(rng.gen_range(0..bottom + 6), rng.gen_range(0..10));
                if !in_any_region(&doc, addr) {
                    counter += 1;
                    let value = CellValue::text(format!("u{counter}"));
                    set_cells(
                        &mut doc,
                        &[CellUpdate {
                            row: addr.row,
                            col: addr.col,
                            value: value.clone(),
                        }],
                    )
                    .map_err(|e| e.to_string())?;
                    tr.free.insert(addr, value);
                }
            }
            9 => {
                let Some(t) = doc.registry.choose(rng).cloned() else {
                    continue;
                };
                let Some(&child) = t.column_bindings.choose(rng) else {
                    continue;
                };
                let alt = rng.gen_range(0..doc.alternatives.len());
                let value = CellValue::Number(rng.gen_range(0..=10) as f64);
                let col = t.column_of(child).unwrap();
                set_cells(
                    &mut doc,
                    &[CellUpdate {
                        row: t.row_of(alt),
                        col,
                        value: value.clone(),
                    }],
                )
                .map_err(|e| e.to_string())?;
                tr.data.insert((t.node_id, child, alt), value);
            }
            _ => {
                let before = doc.clone();
                let report = sync(&mut doc).map_err(|e| format!("sync failed: {e}"))?;
                audit_sync(&before, &doc, &report, &mut tr)?;
            }
        }
    }
    let before = doc.clone();
    let report = sync(&mut doc).map_err(|e| format!("final sync failed: {e}"))?;
    audit_sync(&before, &doc, &report, &mut tr)?;

    let settled = doc.clone();
    let again = sync(&mut doc).map_err(|e| e.to_string())?;
    ensure!(again.is_empty(), "second sync not idempotent: {again:?}");
    ensure!(
        doc.grid == settled.grid && doc.registry == settled.registry,
        "second sync changed the sheet"
    );
    Ok((tr.relocated, tr.archived))
}

fn materialization_bijection() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0001);
    let (mut relocated, mut archived) = (0, 0);
    for i in 0..1000 {
        let (r, a) = bijection_sequence(&mut rng).map_err(|e| format!("sequence {i}: {e}"))?;
        relocated += r;
        archived += a;
    }
    Ok(format!(
        "1000 sequences; {relocated} user cells relocated and reported, {archived} judgments archived"
    ))
}

/// Fills every leaf judgment; leaves are either numeric on a random scale
/// or X-tally columns.
fn complete_judgments(rng: &mut ChaCha8Rng, doc: &mut DecisionDocument) {
    let mut cells = Vec::new();
    for leaf in doc.tree.leaves() {
        if leaf == doc.tree.root_id {
            continue;
        }
        let marks = rng.gen_bool(0.25);
        if !marks && rng.gen_bool(0.5) {
            let min = rng.gen_range(-50.0..50.0f64).round();
            let max = min + rng.gen_range(1.0..100.0f64).round();
            let dir = if rng.gen_bool(0.5) {
                Direction::HigherIsBetter
            } else {
                Direction::LowerIsBetter
            };
            set_leaf_scale(doc, leaf, Some(LeafScale::new(min, max, dir).unwrap())).unwrap();
        }
        let scale = doc.tree.nodes[&leaf].scale();
        let parent = doc.tree.parent_of(leaf).unwrap();
        let t = doc.table_for(parent).unwrap().clone();
        let col = t.column_of(leaf).unwrap();
        for alt in 0..doc.alternatives.len() {
            let value = if marks {
                CellValue::Mark(rng.gen_range(1..=5))
            } else {
                let x = rng.gen_range(scale.min..=scale.max);
                CellValue::Number((x * 100.0).round() / 100.0)
            };
            cells.push(CellUpdate {
                row: t.row_of(alt),
                col,
                value,
            });
        }
    }
    set_cells(doc, &cells).unwrap();
}

/// Independent leaf normalization.
fn oracle_leaf(doc: &DecisionDocument, leaf: NodeId, alt: usize) -> f64 {
    let parent = doc.tree.parent_of(leaf).unwrap();
    let t = doc.table_for(parent).unwrap();
    match doc
        .grid
        .get_cell(CellAddress::new(t.row_of(alt), t.column_of(leaf).unwrap()))
    {
        CellValue::Mark(k) => (k.min(3) as f64) / 3.0,
        CellValue::Number(x) => {
            let s = doc.tree.nodes[&leaf].scale();
            let u = (x - s.min) / (s.max - s.min);
            match s.direction {
                Direction::HigherIsBetter => u,
                Direction::LowerIsBetter => 1.0 - u,
            }
        }
        other => panic!("incomplete judgment {other:?}"),
    }
}

/// Product of normalized sibling weights from the root down to each leaf.
fn oracle_leaf_weights(
    doc: &DecisionDocument,
    weight: &dyn Fn(NodeId) -> f64,
) -> BTreeMap<NodeId, f64> {
    let mut out = BTreeMap::new();
    let mut stack = vec![(doc.tree.root_id, 1.0)];
    while let Some((node, w)) = stack.pop() {
        let kids = doc.tree.children(node);
        if kids.is_empty() {
            out.insert(node, w);
            continue;
        }
        let total: f64 = kids.iter().map(|k| weight(*k)).sum();
        for k in kids {
            stack.push((*k, w * weight(*k) / total));
        }
    }
    out
}

fn flattened(doc: &DecisionDocument, weights: &BTreeMap<NodeId, f64>, alt: usize) -> f64 {
    weights
        .iter()
        .map(|(leaf, w)| w * oracle_leaf(doc, *leaf, alt))
        .sum()
}

fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] + 1e-12 {
            best = i;
        }
    }
    best
}

fn scoring_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0002);
    let mut worst = 0.0f64;
    let mut counter = 0;
    for i in 0..500 {
        let mut doc = random_tree_doc(&mut rng, &mut counter);
        sync(&mut doc).unwrap();
        complete_judgments(&mut rng, &mut doc);
        let root = doc.tree.root_id;

        let importance = |n: NodeId| doc.tree.nodes[&n].importance.multiplier() as f64;
        let ew = oracle_leaf_weights(&doc, &importance);
        let sheet = rollup(&doc, root).map_err(|e| format!("doc {i}: {e}"))?;
        for (a, alt) in doc.alternatives.iter().enumerate() {
            let expect = flattened(&doc, &ew, a);
            let got = sheet
                .score_of(&alt.label)
                .ok_or_else(|| format!("doc {i}: {} unscored", alt.label))?;
            worst = worst.max((got - expect).abs());
            ensure!(
                (got - expect).abs() <= 1e-9,
                "doc {i} {}: rollup {got} vs flattened {expect}",
                alt.label
            );
        }

        // generalized weights: arbitrary positive weights, then one sibling set scaled uniformly
        let mut wv = WeightVector::from_importance(&doc.tree);
        for n in non_root(&doc) {
            wv.set(n, rng.gen_range(0.05..20.0)).unwrap();
        }
        let gen = wv.clone();
        let gen_ew = oracle_leaf_weights(&doc, &|n| gen.get(n));
        let base = rollup_weighted(&doc, root, &wv).map_err(|e| e.to_string())?;
        let base_scores: Vec<f64> = base.entries.iter().map(|e| e.score.unwrap()).collect();
        for (a, s) in base_scores.iter().enumerate() {
            let expect = flattened(&doc, &gen_ew, a);
            ensure!(
                (s - expect).abs() <= 1e-9,
                "doc {i}: weighted rollup {s} vs {expect}"
            );
        }
        let parents: Vec<NodeId> = doc.tree.non_primitive_ids().into_iter().collect();
        let parent = *parents.choose(&mut rng).unwrap();
        let factor = (rng.gen_range(-6.0..6.0f64)).exp();
        for c in doc.tree.children(parent) {
            wv.set(*c, wv.get(*c) * factor).unwrap();
        }
        let scaled = rollup_weighted(&doc, root, &wv).map_err(|e| e.to_string())?;
        let scaled_scores: Vec<f64> = scaled.entries.iter().map(|e| e.score.unwrap()).collect();
        ensure!(
            argmax(&base_scores) == argmax(&scaled_scores),
            "doc {i}: argmax moved after scaling children of {parent} by {factor}"
        );
    }
    Ok(format!(
        "500 documents, max deviation {worst:.2e}; argmax stable under sibling scaling"
    ))
}

fn worked_example() -> Check {
    let mut doc =
        new_decision("two leaves", &["M", "T"], &["A", "B"], "score").map_err(|e| e.to_string())?;
    let root = doc.tree.root_id;
    let a = doc.tree.child_named(root, "A").unwrap();
    set_importance(&mut doc, a, ImportanceLevel::X2).map_err(|e| e.to_string())?;
    sync(&mut doc).map_err(|e| e.to_string())?;
    let n = |x: f64| CellValue::Number(x);
    set_cells(
        &mut doc,
        &[
            CellUpdate {
                row: 1,
                col: 1,
                value: n(8.0),
            },
            CellUpdate {
                row: 2,
                col: 1,
                value: n(4.0),
            },
            CellUpdate {
                row: 1,
                col: 2,
                value: n(2.0),
            },
            CellUpdate {
                row: 2,
                col: 2,
                value: n(10.0),
            },
        ],
    )
    .map_err(|e| e.to_string())?;
    // hand oracle: M = (2*0.8 + 1*0.2)/3, T = (2*0.4 + 1*1.0)/3
    const HAND: f64 = 0.6;
    let sheet = rollup(&doc, root).map_err(|e| e.to_string())?;
    let m = sheet.score_of("M").unwrap();
    let t = sheet.score_of("T").unwrap();
    ensure!(
        (m - HAND).abs() < 1e-12 && (t - HAND).abs() < 1e-12,
        "M={m} T={t}"
    );
    let ranked: Vec<String> = valtree_core::rank(&doc)
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(|r| r.alternative)
        .collect();
    ensure!(ranked == ["M", "T"], "rank {ranked:?}");
    Ok(format!("M={m} T={t} rank [M, T]"))
}

/// A document that has been through removals, restores, exclusions,
/// notes, scales and a few syncs, with a partial set of judgments.
fn rich_document(rng: &mut ChaCha8Rng, counter: &mut usize) -> DecisionDocument {
    let mut doc = random_tree_doc(rng, counter);
    sync(&mut doc).unwrap();
    complete_judgments(rng, &mut doc);
    for _ in 0..rng.gen_range(0..4) {
        match rng.gen_range(0..5) {
            0 => {
                if let Some(n) = non_root(&doc).choose(rng) {
                    remove_node(&mut doc, *n).unwrap();
                }
            }
            1 => {
                if !doc.tombstones.is_empty() {
                    let i = rng.gen_range(0..doc.tombstones.len());
                    let _ = restore_tombstone(&mut doc, i);
                }
            }
            2 => {
                let label = doc.alternatives.choose(rng).unwrap().label.clone();
                let _ = exclude_alternative(&mut doc, &label, "ruled out: «budget», 50% over");
            }
            3 => {
                if let Some(n) = non_root(&doc).choose(rng) {
                    set_note(&mut doc, *n, "weigh the \"quiet\" days\nfirst → then ✓").unwrap();
                }
            }
            _ => {
                sync(&mut doc).unwrap();
            }
        }
    }
    sync(&mut doc).unwrap();
    // leave some judgments blank
    let blanks: Vec<CellUpdate> = doc
        .registry
        .iter()
        .flat_map(|t| {
            let cols: Vec<u32> = t
                .column_bindings
                .iter()
                .filter_map(|c| t.column_of(*c))
                .collect();
            (1..t.n_rows)
                .flat_map(move |r| cols.clone().into_iter().map(move |c| (t.anchor.row + r, c)))
        })
        .filter(|_| rng.gen_bool(0.15))
        .map(|(row, col)| CellUpdate {
            row,
            col,
            value: CellValue::Empty,
        })
        .collect();
    set_cells(&mut doc, &blanks).unwrap();
    doc
}

fn persistence() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0003);
    let mut counter = 0;
    let required = [
        "id",
        "goal",
        "scoring_goal",
        "alternatives",
        "tree",
        "grid",
        "registry",
        "tombstones",
        "version",
        "schema_version",
    ];
    let (mut corrupt, mut rejected, mut accepted_valid) = (0, 0, 0);
    for i in 0..200 {
        let doc = rich_document(&mut rng, &mut counter);
        let bytes = save(&doc);
        let back = load(&bytes).map_err(|e| format!("doc {i}: {e}"))?;
        ensure!(back == doc, "doc {i}: load(save(d)) differs");
        ensure!(
            save(&back) == bytes,
            "doc {i}: save(load(save(d))) not byte-identical"
        );

        for _ in 0..3 {
            let cut = rng.gen_range(0..bytes.len() - 1);
            corrupt += 1;
            ensure!(
                load(&bytes[..cut]).is_err(),
                "doc {i}: truncation at {cut} loaded"
            );
            rejected += 1;
        }
        let mut value: Value = serde_json::from_slice(&bytes).unwrap();
        let key = required.choose(&mut rng).unwrap();
        value.as_object_mut().unwrap().remove(*key);
        corrupt += 1;
        ensure!(
            load(&serde_json::to_vec(&value).unwrap()).is_err(),
            "doc {i}: missing {key} loaded"
        );
        rejected += 1;
        for _ in 0..3 {
            let mut flipped = bytes.clone();
            let at = rng.gen_range(0..flipped.len());
            flipped[at] = rng.gen();
            corrupt += 1;
            match load(&flipped) {
                Err(_) => rejected += 1,
                Ok(d) => {
                    ensure!(
                        validate(&d)
                            .iter()
                            .all(|v| v.kind != valtree_core::ViolationKind::Structural),
                        "doc {i}: flipped byte gave invalid document"
                    );
                    let again = save(&d);
                    ensure!(
                        load(&again).as_ref() == Ok(&d),
                        "doc {i}: flipped byte gave unstable document"
                    );
                    accepted_valid += 1;
                }
            }
        }
    }
    Ok(format!(
        "200 round trips byte-identical; {corrupt} corruptions: {rejected} rejected, {accepted_valid} decoded to complete valid documents"
    ))
}

fn redaction() -> Check {
    let numeric = Regex::new(r"[0-9]").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0004);
    let mut counter = 0;
    let mut checked = 0;
    let mut unscorable = 0;
    while checked < 200 {
        let doc = rich_document(&mut rng, &mut counter);
        let full = match build_report(&doc, Redaction::Full) {
            Ok(r) => r,
            Err(Error::Unscorable) => {
                unscorable += 1;
                continue;
            }
            Err(e) => return Err(e.to_string()),
        };
        let order = |r: &valtree_core::Report| {
            r.ranking
                .iter()
                .map(|l| l.alternative.clone())
                .collect::<Vec<_>>()
        };
        for view in [Redaction::Bands, Redaction::Ranks] {
            let r = build_report(&doc, view).map_err(|e| e.to_string())?;
            let section = score_section(&r.text);
            ensure!(!section.is_empty(), "no score section");
            ensure!(
                !numeric.is_match(section),
                "{view:?} report shows a number:\n{section}"
            );
            let json = serde_json::to_string(&r.ranking).unwrap();
            ensure!(
                !numeric.is_match(&json),
                "{view:?} payload shows a number: {json}"
            );
            ensure!(
                order(&r) == order(&full),
                "{view:?} ordering differs from full"
            );
            if view == Redaction::Bands {
                let rank_of =
                    |b: &str| ["low", "mid", "high"].iter().position(|x| *x == b).unwrap();
                let bands: Vec<usize> = r
                    .ranking
                    .iter()
                    .filter_map(|l| l.band.as_deref().map(rank_of))
                    .collect();
                ensure!(
                    bands.windows(2).all(|w| w[0] >= w[1]),
                    "bands not monotone: {bands:?}"
                );
            }
        }
        checked += 1;
    }
    Ok(format!(
        "200 documents scanned ({unscorable} unscorable skipped)"
    ))
}

fn fixture_request() -> Value {
    serde_json::json!({
        "goal": GOAL,
        "alternatives": DAYS,
        "attributes": ATTRS,
        "scoring_goal": SCORING_GOAL,
    })
}

#[derive(Debug)]
struct Attempt {
    base_version: u64,
    edit: Edit,
    status: u16,
    body: Value,
}

/// An edit that the model accepts against `doc`, so the only possible
/// refusal is a stale version.
fn valid_edit(
    doc: &DecisionDocument,
    rng: &mut ChaCha8Rng,
    tag: &str,
    counter: &mut usize,
) -> Edit {
    *counter += 1;
    let fresh = format!("{tag}-{counter}");
    loop {
        match rng.gen_range(0..11) {
            0 | 1 => {
                if let Some(p) = depth_ok_parents(doc).choose(rng) {
                    return Edit::AddChild {
                        parent: *p,
                        name: fresh,
                    };
                }
            }
            2 => {
                if let Some(n) = non_root(doc).choose(rng) {
                    return Edit::RemoveNode { node: *n };
                }
            }
            3 => {
                if let Some(n) = non_root(doc).choose(rng) {
                    return Edit::RenameNode {
                        node: *n,
                        name: fresh,
                    };
                }
            }
            4 => {
                if let Some(n) = non_root(doc).choose(rng) {
                    return Edit::SetImportance {
                        node: *n,
                        level: random_level(rng),
                    };
                }
            }
            5 => {
                let n = *doc.tree.preorder().choose(rng).unwrap();
                return Edit::SetNote {
                    node: n,
                    text: fresh,
                };
            }
            6 => {
                let live: Vec<_> = doc.live_alternatives().map(|a| a.label.clone()).collect();
                let excluded: Vec<_> = doc
                    .alternatives
                    .iter()
                    .filter(|a| !a.is_live())
                    .map(|a| a.label.clone())
                    .collect();
                if live.len() > 2 && rng.gen_bool(0.5) {
                    return Edit::ExcludeAlternative {
                        label: live.choose(rng).unwrap().clone(),
                        rationale: fresh,
                    };
                }
                if let Some(label) = excluded.choose(rng) {
                    return Edit::IncludeAlternative {
                        label: label.clone(),
                    };
                }
            }
            7 => {
                let restorable: Vec<usize> = doc
                    .tombstones
                    .iter()
                    .enumerate()
                    .filter(|(_, t)| t.restored_at_version.is_none())
                    .filter_map(|(i, t)| t.removed_subtree.as_ref().map(|s| (i, s)))
                    .filter(|(_, s)| doc.tree.contains(s.parent_id))
                    .filter(|(_, s)| {
                        let name = &s.nodes.iter().find(|n| n.id == s.root_id).unwrap().name;
                        doc.tree.child_named(s.parent_id, name).is_none()
                    })
                    .map(|(i, _)| i)
                    .collect();
                if let Some(i) = restorable.choose(rng) {
                    return Edit::RestoreTombstone { index: *i };
                }
            }
            8 => {
                let cells = (0..rng.gen_range(1..=3))
                    .map(|_| CellUpdate {
                        row: rng.gen_range(0..24),
                        col: rng.gen_range(0..8),
                        value: match rng.gen_range(0..3) {
                            0 => CellValue::Number(rng.gen_range(0..=10) as f64),
                            1 => CellValue::Mark(rng.gen_range(1..=3)),
                            _ => CellValue::text(fresh.clone()),
                        },
                    })
                    .collect();
                return Edit::SetCells { cells };
            }
            _ => return Edit::Sync,
        }
    }
}

async fn submit(
    http: &reqwest::Client,
    base: &str,
    id: &str,
    base_version: u64,
    edit: &Edit,
    rng: &mut ChaCha8Rng,
) -> (u16, Value) {
    let req = match edit {
        Edit::Sync if rng.gen_bool(0.5) => http
            .post(format!("{base}/decisions/{id}/sync"))
            .json(&serde_json::json!({ "base_version": base_version })),
        Edit::SetCells { cells } if rng.gen_bool(0.5) => http
            .put(format!("{base}/decisions/{id}/cells"))
            .json(&serde_json::json!({ "base_version": base_version, "cells": cells })),
        _ => {
            let mut body = serde_json::to_value(edit).unwrap();
            body["base_version"] = base_version.into();
            http.post(format!("{base}/decisions/{id}/edits"))
                .json(&body)
        }
    };
    let resp = req.send().await.unwrap();
    let status = resp.status().as_u16();
    (status, resp.json().await.unwrap_or(Value::Null))
}

fn service_linearizability() -> Check {
    const OPS: i64 = 500;
    const CLIENTS: u64 = 8;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    rt.block_on(async {
        let svc = valtree_service::serve(valtree_service::ServiceConfig::new("127.0.0.1:0", dir.path()))
            .await
            .map_err(|e| e.to_string())?;
        let base = svc.url();
        let http = reqwest::Client::new();
        let created: Value = http
            .post(format!("{base}/decisions"))
            .json(&fixture_request())
            .send()
            .await
            .unwrap()
            .json()
            .await
            .unwrap();
        let id = created["id"].as_str().unwrap().to_owned();

        let budget = Arc::new(AtomicI64::new(OPS));
        let mut tasks = Vec::new();
        for c in 0..CLIENTS {
            let (http, base, id, budget) = (http.clone(), base.clone(), id.clone(), budget.clone());
            tasks.push(tokio::spawn(async move {
                let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0100 + c);
                let mut counter = 0;
                let mut log = Vec::new();
                while budget.fetch_sub(1, Ordering::SeqCst) > 0 {
                    let doc: DecisionDocument =
                        http.get(format!("{base}/decisions/{id}")).send().await.unwrap().json().await.unwrap();
                    let edit = valid_edit(&doc, &mut rng, &format!("c{c}"), &mut counter);
                    let (status, body) = submit(&http, &base, &id, doc.version, &edit, &mut rng).await;
                    log.push(Attempt { base_version: doc.version, edit, status, body });
                }
                log
            }));
        }
        let mut attempts = Vec::new();
        for t in tasks {
            attempts.extend(t.await.unwrap());
        }
        ensure!(attempts.len() == OPS as usize, "{} attempts", attempts.len());

        let mut accepted: Vec<(u64, Edit)> = Vec::new();
        let mut conflicts = 0;
        for a in attempts {
            match a.status {
                200 => accepted.push((a.body["version"].as_u64().unwrap(), a.edit)),
                409 => {
                    ensure!(a.body["error"] == "version_conflict", "409 without version_conflict: {}", a.body);
                    let current = a.body["current_version"].as_u64().unwrap();
                    ensure!(
                        a.body["base_version"] == a.base_version && a.base_version < current,
                        "conflict with non-stale base {}: {}",
                        a.base_version,
                        a.body
                    );
                    conflicts += 1;
                }
                s => return Err(format!("unexpected status {s} for {:?}: {}", a.edit, a.body)),
            }
        }
        accepted.sort_by_key(|(v, _)| *v);
        let versions: Vec<u64> = accepted.iter().map(|(v, _)| *v).collect();
        ensure!(versions == (1..=accepted.len() as u64).collect::<Vec<_>>(), "accepted versions not contiguous");

        let mut replay = new_decision(GOAL, &DAYS, &ATTRS, SCORING_GOAL).map_err(|e| e.to_string())?;
        replay.id = id.clone();
        for (v, edit) in &accepted {
            let out = apply_edit(&mut replay, edit).map_err(|e| format!("replay of version {v} failed: {e}"))?;
            ensure!(out.version == *v, "replay produced version {} for {v}", out.version);
        }
        let served = http.get(format!("{base}/decisions/{id}/file")).send().await.unwrap().bytes().await.unwrap();
        let stored = std::fs::read(dir.path().join(format!("{id}{FILE_EXTENSION}"))).map_err(|e| e.to_string())?;
        svc.shutdown().await.map_err(|e| e.to_string())?;
        let replayed = save(&replay);
        ensure!(replayed == stored, "replayed document differs from stored file");
        ensure!(served.as_ref() == stored.as_slice(), "served bytes differ from stored file");
        Ok(format!(
            "{OPS} ops from {CLIENTS} clients: {} accepted, {conflicts} stale-version conflicts; replay byte-identical",
            accepted.len()
        ))
    })
}

fn reflection_prompts() -> Check {
    let mut doc =
        new_decision("g", &["a", "b"], &["productivity impact"], "s").map_err(|e| e.to_string())?;
    let pi = doc
        .tree
        .child_named(doc.tree.root_id, "productivity impact")
        .unwrap();
    let leaf = add_child(&mut doc, pi, "disruption to weekly rhythm").map_err(|e| e.to_string())?;
    add_child(&mut doc, pi, "team collaboration").map_err(|e| e.to_string())?;
    let parent = reflection_prompt(&doc.tree, pi).map_err(|e| e.to_string())?;
    let expect = "How do you intend to combine 'disruption to weekly rhythm' and 'team collaboration' into your judgment of 'productivity impact'?";
    ensure!(parent == expect, "non-primitive prompt: {parent}");
    let primitive = reflection_prompt(&doc.tree, leaf).map_err(|e| e.to_string())?;
    let expect = "Describe how you would judge/measure this attribute for each alternative.";
    ensure!(primitive == expect, "primitive prompt: {primitive}");
    Ok("both templates verbatim".into())
}
