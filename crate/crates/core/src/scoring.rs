//! Scoring: leaf normalization, importance-weighted rollup, manual
//! overrides, rankings and fuzzy bands.
//!
//! Scores live in `[0, 1]`. A non-primitive node scores each alternative
//! as the weighted mean of its children's scores, renormalized over the
//! children that have a score for that alternative. A value typed into a
//! non-primitive node's own column (in its parent's table) overrides the
//! rollup for that alternative.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::materialize::{ensure_synced, read_judgments, Diagnostic};
use crate::model::{DecisionDocument, Direction, Judgment, LeafScale, NodeId, ValueTree};

/// Tallies at or above this count score 1.
pub const MARK_CAP: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreSource {
    RolledUp,
    LeafJudgment,
    ManualOverride,
    Missing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreEntry {
    pub alternative: String,
    pub score: Option<f64>,
    pub source: ScoreSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSheet {
    pub node_id: NodeId,
    /// One entry per alternative in declaration order, excluded ones too.
    pub entries: Vec<ScoreEntry>,
}

impl ScoreSheet {
    pub fn score_of(&self, alternative: &str) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.alternative == alternative)
            .and_then(|e| e.score)
    }
}

/// Positive weight per child node. Built from importance multipliers by
/// default; arbitrary positive weights are accepted for analysis.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightVector(BTreeMap<NodeId, f64>);

impl WeightVector {
    pub fn from_importance(tree: &ValueTree) -> Self {
        Self(
            tree.nodes
                .values()
                .map(|n| (n.id, n.importance.multiplier() as f64))
                .collect(),
        )
    }

    pub fn set(&mut self, node: NodeId, weight: f64) -> Result<()> {
        if !(weight.is_finite() && weight > 0.0) {
            return Err(Error::validation(format!(
                "weight for {node} must be positive (got {weight})"
            )));
        }
        self.0.insert(node, weight);
        Ok(())
    }

    pub fn get(&self, node: NodeId) -> f64 {
        self.0.get(&node).copied().unwrap_or(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutOfScale {
    pub value: f64,
    pub min: f64,
    pub max: f64,
}

/// Maps one judgment onto `[0, 1]`.
pub fn leaf_score(judgment: Judgment, scale: &LeafScale) -> Result<Option<f64>, OutOfScale> {
    match judgment {
        Judgment::Absent => Ok(None),
        Judgment::Mark(k) => Ok(Some(k.min(MARK_CAP) as f64 / MARK_CAP as f64)),
        Judgment::Numeric(x) => {
            if !(scale.min..=scale.max).contains(&x) {
                return Err(OutOfScale {
                    value: x,
                    min: scale.min,
                    max: scale.max,
                });
            }
            let t = (x - scale.min) / (scale.max - scale.min);
            Ok(Some(match scale.direction {
                Direction::HigherIsBetter => t,
                Direction::LowerIsBetter => 1.0 - t,
            }))
        }
    }
}

/// Weight of each leaf in the root score: the product, along its path, of
/// the node's weight over the sum of its siblings' weights.
pub fn effective_leaf_weights(tree: &ValueTree) -> BTreeMap<NodeId, f64> {
    effective_leaf_weights_with(tree, &WeightVector::from_importance(tree))
}

pub fn effective_leaf_weights_with(
    tree: &ValueTree,
    weights: &WeightVector,
) -> BTreeMap<NodeId, f64> {
    let mut out = BTreeMap::new();
    let mut stack = vec![(tree.root_id, 1.0)];
    while let Some((id, share)) = stack.pop() {
        let kids = tree.children(id);
        if kids.is_empty() {
            out.insert(id, share);
            continue;
        }
        let total: f64 = kids.iter().map(|k| weights.get(*k)).sum();
        for k in kids {
            stack.push((*k, share * weights.get(*k) / total));
        }
    }
    out
}

/// Score sheets for every node plus decoding diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub sheets: BTreeMap<NodeId, ScoreSheet>,
    pub diagnostics: Vec<Diagnostic>,
}

impl Evaluation {
    pub fn sheet(&self, node: NodeId) -> Result<&ScoreSheet> {
        self.sheets
            .get(&node)
            .ok_or_else(|| Error::not_found(format!("node {node}")))
    }
}

pub fn evaluate(doc: &DecisionDocument) -> Result<Evaluation> {
    evaluate_weighted(doc, &WeightVector::from_importance(&doc.tree))
}

pub fn evaluate_weighted(doc: &DecisionDocument, weights: &WeightVector) -> Result<Evaluation> {
    ensure_synced(doc)?;
    let mut ev = Evaluator {
        doc,
        weights,
        sheets: BTreeMap::new(),
        diagnostics: Vec::new(),
    };
    let root = doc.tree.root_id;
    let rolled = ev.rollup_node(root)?;
    let source = if doc.tree.is_primitive(root) {
        ScoreSource::LeafJudgment
    } else {
        ScoreSource::RolledUp
    };
    ev.store(root, rolled.into_iter().map(|s| (s, source)).collect());
    Ok(Evaluation {
        sheets: ev.sheets,
        diagnostics: ev.diagnostics,
    })
}

pub fn rollup(doc: &DecisionDocument, node: NodeId) -> Result<ScoreSheet> {
    evaluate(doc)?.sheet(node).cloned()
}

pub fn rollup_weighted(
    doc: &DecisionDocument,
    node: NodeId,
    weights: &WeightVector,
) -> Result<ScoreSheet> {
    evaluate_weighted(doc, weights)?.sheet(node).cloned()
}

struct Evaluator<'a> {
    doc: &'a DecisionDocument,
    weights: &'a WeightVector,
    sheets: BTreeMap<NodeId, ScoreSheet>,
    diagnostics: Vec<Diagnostic>,
}

impl Evaluator<'_> {
    fn store(&mut self, node: NodeId, values: Vec<(Option<f64>, ScoreSource)>) {
        let entries = self
            .doc
            .alternatives
            .iter()
            .zip(values)
            .map(|(alt, (score, source))| ScoreEntry {
                alternative: alt.label.clone(),
                score,
                source: if score.is_some() {
                    source
                } else {
                    ScoreSource::Missing
                },
            })
            .collect();
        self.sheets.insert(
            node,
            ScoreSheet {
                node_id: node,
                entries,
            },
        );
    }

    /// Rolled-up scores for `node`, storing sheets for all its descendants.
    fn rollup_node(&mut self, node: NodeId) -> Result<Vec<Option<f64>>> {
        let doc = self.doc;
        let n_alts = doc.alternatives.len();
        let kids = doc.tree.children(node);
        if kids.is_empty() {
            // Only reachable for a childless root: there is no table to read.
            return Ok(vec![None; n_alts]);
        }
        let matrix = read_judgments(doc, node)?;
        self.diagnostics.extend(matrix.diagnostics.iter().cloned());

        let mut child_scores = Vec::with_capacity(kids.len());
        for &child in kids {
            let mut values = Vec::with_capacity(n_alts);
            let mut saw_numeric = false;
            let mut saw_mark = false;
            let primitive = doc.tree.is_primitive(child);
            let scale = if primitive {
                doc.tree.nodes[&child].scale()
            } else {
                LeafScale::default()
            };
            let rolled = if primitive {
                None
            } else {
                Some(self.rollup_node(child)?)
            };

            for alt in 0..n_alts {
                let judgment = matrix.get(alt, child).unwrap_or(Judgment::Absent);
                saw_numeric |= matches!(judgment, Judgment::Numeric(_));
                saw_mark |= matches!(judgment, Judgment::Mark(_));
                let cell_score = leaf_score(judgment, &scale).map_err(|e| Error::OutOfBounds {
                    cell: matrix
                        .address(alt, child)
                        .map(|a| a.to_string())
                        .unwrap_or_default(),
                    value: e.value,
                    min: e.min,
                    max: e.max,
                })?;
                let entry = match (&rolled, cell_score) {
                    (None, s) => (s, ScoreSource::LeafJudgment),
                    (Some(_), Some(s)) => (Some(s), ScoreSource::ManualOverride),
                    (Some(r), None) => (r[alt], ScoreSource::RolledUp),
                };
                values.push(entry);
            }
            if saw_numeric && saw_mark {
                if let Some(address) = matrix.address(0, child) {
                    self.diagnostics.push(Diagnostic {
                        address: crate::grid::CellAddress::new(address.row - 1, address.col),
                        message: format!(
                            "column {:?} mixes numbers and marks; each is normalized on its own",
                            doc.tree.nodes[&child].name
                        ),
                    });
                }
            }
            child_scores.push(values.iter().map(|(s, _)| *s).collect::<Vec<_>>());
            self.store(child, values);
        }

        Ok((0..n_alts)
            .map(|alt| {
                let mut num = 0.0;
                let mut den = 0.0;
                for (scores, &child) in child_scores.iter().zip(kids) {
                    if let Some(s) = scores[alt] {
                        let w = self.weights.get(child);
                        num += w * s;
                        den += w;
                    }
                }
                if den > 0.0 {
                    Some(num / den)
                } else {
                    None
                }
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub alternative: String,
    pub declaration_index: usize,
    pub score: Option<f64>,
}

/// Scores closer than this are ties, broken by declaration order.
const TIE_RESOLUTION: f64 = 1e-12;

/// Orders alternatives by score, best first. Ties go to the earlier
/// declaration; unscored alternatives come last.
pub fn rank_scores(mut entries: Vec<RankEntry>) -> Vec<RankEntry> {
    entries.sort_by_key(|e| {
        let bucket = e.score.map(|s| (s / TIE_RESOLUTION).round() as i64);
        (
            bucket.is_none(),
            std::cmp::Reverse(bucket),
            e.declaration_index,
        )
    });
    entries
}

/// Ranks live alternatives by their root score.
pub fn rank(doc: &DecisionDocument) -> Result<Vec<RankEntry>> {
    let ev = evaluate(doc)?;
    rank_from(doc, ev.sheet(doc.tree.root_id)?)
}

pub(crate) fn rank_from(doc: &DecisionDocument, root: &ScoreSheet) -> Result<Vec<RankEntry>> {
    let entries: Vec<RankEntry> = doc
        .alternatives
        .iter()
        .zip(&root.entries)
        .filter(|(alt, _)| alt.is_live())
        .map(|(alt, e)| RankEntry {
            alternative: alt.label.clone(),
            declaration_index: alt.declaration_index,
            score: e.score,
        })
        .collect();
    if entries.iter().all(|e| e.score.is_none()) {
        return Err(Error::Unscorable);
    }
    Ok(rank_scores(entries))
}

pub fn fuzzy_band(score: f64, n_bands: usize) -> usize {
    assert!(n_bands >= 2, "at least two bands");
    let raw = (score.clamp(0.0, 1.0) * n_bands as f64).floor() as usize;
    raw.min(n_bands - 1)
}

pub fn fuzzy_bands<K: Clone + Ord>(scores: &[(K, f64)], n_bands: usize) -> BTreeMap<K, usize> {
    scores
        .iter()
        .map(|(k, s)| (k.clone(), fuzzy_band(*s, n_bands)))
        .collect()
}


#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn banding_is_monotone(a in 0.0f64..=1.0, b in 0.0f64..=1.0, n in 2usize..10) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(fuzzy_band(lo, n) <= fuzzy_band(hi, n));
            prop_assert!(fuzzy_band(hi, n) < n);
        }

        #[test]
        fn leaf_scores_stay_in_unit_interval(x in 0.0f64..=1.0, lo in -50.0f64..50.0, span in 0.001f64..100.0, lower in any::<bool>()) {
            let dir = if lower { Direction::LowerIsBetter } else { Direction::HigherIsBetter };
            let scale = LeafScale::new(lo, lo + span, dir).unwrap();
            let v = (lo + x * span).clamp(scale.min, scale.max);
            let s = leaf_score(Judgment::Numeric(v), &scale).unwrap().unwrap();
            prop_assert!((0.0..=1.0).contains(&s));
        }
    }
}
