//! Human-readable decision reports at three levels of disclosure.
//!
//! `Full` shows numeric scores, `Bands` only low/mid/high, `Ranks` only the
//! ordering. The two redacted views never print a score.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::DecisionDocument;
use crate::scoring::{evaluate, fuzzy_band, rank_from, RankEntry};

pub const BAND_LABELS: [&str; 3] = ["low", "mid", "high"];

/// Heading that opens the score section of a rendered report.
pub const SCORES_HEADING: &str = "Scores";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Redaction {
    Full,
    #[default]
    Bands,
    Ranks,
}

impl FromStr for Redaction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Redaction::Full),
            "bands" => Ok(Redaction::Bands),
            "ranks" => Ok(Redaction::Ranks),
            _ => Err(Error::validation(format!(
                "redaction must be full, bands or ranks (got {s:?})"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportLine {
    pub alternative: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub band: Option<String>,
    pub scored: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub alternative: String,
    pub rationale: String,
}

/// Structured form of a report; `text` is its rendering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub redaction: Redaction,
    pub goal: String,
    pub outline: String,
    pub exclusions: Vec<Exclusion>,
    /// Live alternatives, best first.
    pub ranking: Vec<ReportLine>,
    pub text: String,
}

fn line_for(entry: &RankEntry, redaction: Redaction) -> ReportLine {
    ReportLine {
        alternative: entry.alternative.clone(),
        score: match redaction {
            Redaction::Full => entry.score,
            _ => None,
        },
        band: match redaction {
            Redaction::Bands => entry
                .score
                .map(|s| BAND_LABELS[fuzzy_band(s, BAND_LABELS.len())].to_owned()),
            _ => None,
        },
        scored: entry.score.is_some(),
    }
}

pub fn build_report(doc: &DecisionDocument, redaction: Redaction) -> Result<Report> {
    let ev = evaluate(doc)?;
    let ranked = rank_from(doc, ev.sheet(doc.tree.root_id)?)?;
    let ranking: Vec<ReportLine> = ranked.iter().map(|e| line_for(e, redaction)).collect();
    let exclusions: Vec<Exclusion> = doc
        .alternatives
        .iter()
        .filter_map(|a| {
            a.excluded.as_ref().map(|x| Exclusion {
                alternative: a.label.clone(),
                rationale: x.rationale.clone(),
            })
        })
        .collect();
    let outline = doc.tree.outline();

    let mut text = String::new();
    writeln!(text, "Decision: {}", doc.goal).unwrap();
    writeln!(text, "Scoring goal: {}", doc.scoring_goal).unwrap();
    writeln!(text).unwrap();
    writeln!(text, "Value tree:").unwrap();
    text.push_str(&outline);
    writeln!(text).unwrap();
    writeln!(text, "Exclusions:").unwrap();
    if exclusions.is_empty() {
        writeln!(text, "  (none)").unwrap();
    }
    for x in &exclusions {
        writeln!(text, "  - {}: {}", x.alternative, x.rationale).unwrap();
    }
    writeln!(text).unwrap();
    let view = match redaction {
        Redaction::Full => "full",
        Redaction::Bands => "bands",
        Redaction::Ranks => "ranks",
    };
    writeln!(text, "{SCORES_HEADING} ({view}, best first):").unwrap();
    text.push_str(&render_ranking(&ranking));

    Ok(Report {
        redaction,
        goal: doc.goal.clone(),
        outline,
        exclusions,
        ranking,
        text,
    })
}

/// Score section body, one alternative per line.
pub fn render_ranking(lines: &[ReportLine]) -> String {
    let mut out = String::new();
    for line in lines {
        let detail = match (&line.score, &line.band, line.scored) {
            (_, _, false) => ": unscored".to_owned(),
            (Some(s), _, _) => format!(": {s}"),
            (None, Some(b), _) => format!(": {b}"),
            (None, None, true) => String::new(),
        };
        writeln!(out, "  - {}{detail}", line.alternative).unwrap();
    }
    out
}

pub fn export_report(doc: &DecisionDocument, redaction: Redaction) -> Result<String> {
    build_report(doc, redaction).map(|r| r.text)
}

/// The score section of rendered report text.
pub fn score_section(text: &str) -> &str {
    text.find(&format!("\n{SCORES_HEADING} ("))
        .map(|i| &text[i + 1..])
        .unwrap_or("")
}
