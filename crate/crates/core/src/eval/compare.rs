//! Side-by-side comparison against a published baseline.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::metrics::ClassMetrics;
use crate::labels::{ClassLabel, NUM_CLASSES};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrintedAverages {
    pub precision: f64,
    pub recall: f64,
    #[serde(rename = "f1-score")]
    pub f1: f64,
}

/// Aggregate rows exactly as printed alongside a published per-class table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrintedAggregates {
    pub accuracy: f64,
    pub macro_avg: PrintedAverages,
    pub weighted_avg: PrintedAverages,
}

/// Baseline file schema: per-class rows with the same fields as a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreTable {
    pub name: String,
    #[serde(default)]
    pub source: Option<String>,
    pub per_class: Vec<ClassMetrics>,
    #[serde(default)]
    pub printed_aggregates: Option<PrintedAggregates>,
}

impl ScoreTable {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let table: ScoreTable = serde_json::from_str(&text)
            .map_err(|e| Error::Data(format!("baseline {}: {e}", path.display())))?;
        table.by_label()?;
        Ok(table)
    }

    /// Rows keyed by label; every class must appear exactly once.
    pub fn by_label(&self) -> Result<BTreeMap<ClassLabel, &ClassMetrics>> {
        rows_by_label(&self.name, &self.per_class)
    }
}

fn rows_by_label<'a>(name: &str, rows: &'a [ClassMetrics]) -> Result<BTreeMap<ClassLabel, &'a ClassMetrics>> {
    let mut map = BTreeMap::new();
    for row in rows {
        if map.insert(row.label, row).is_some() {
            return Err(Error::Data(format!("{name}: class {} listed twice", row.label)));
        }
    }
    let missing: Vec<&str> = ClassLabel::ALL
        .iter()
        .filter(|l| !map.contains_key(l))
        .map(|l| l.name())
        .collect();
    if !missing.is_empty() || map.len() != NUM_CLASSES {
        return Err(Error::Data(format!("{name}: classes do not match, missing {missing:?}")));
    }
    Ok(map)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub label: ClassLabel,
    pub model: [f64; 3],
    pub baseline: [f64; 3],
    pub delta_precision: f64,
    pub delta_recall: f64,
    pub delta_f1: f64,
    pub support: u64,
    /// The model's F1 is below the baseline's.
    pub underperforms: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub model_name: String,
    pub baseline_name: String,
    pub rows: Vec<ComparisonRow>,
}

impl Comparison {
    pub fn underperforming(&self) -> Vec<ClassLabel> {
        self.rows.iter().filter(|r| r.underperforms).map(|r| r.label).collect()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<18} | {:^26} | {:^26} | {:>8} |",
            "", self.baseline_name, self.model_name, "delta"
        );
        let _ = writeln!(
            out,
            "{:<18} | {:>8} {:>8} {:>8} | {:>8} {:>8} {:>8} | {:>8} | {:>8}",
            "Class", "prec", "recall", "f1", "prec", "recall", "f1", "f1", "support"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<18} | {:>8.2} {:>8.2} {:>8.2} | {:>8.2} {:>8.2} {:>8.2} | {:>+8.2} | {:>8}{}",
                r.label.name(),
                r.baseline[0],
                r.baseline[1],
                r.baseline[2],
                r.model[0],
                r.model[1],
                r.model[2],
                r.delta_f1,
                r.support,
                if r.underperforms { "  <- below baseline" } else { "" }
            );
        }
        out
    }
}

pub fn compare(model_name: &str, model: &[ClassMetrics], baseline: &ScoreTable) -> Result<Comparison> {
    let ours = rows_by_label(model_name, model)?;
    let theirs = baseline.by_label()?;
    let rows = ClassLabel::ALL
        .iter()
        .map(|label| {
            let m = ours[label];
            let b = theirs[label];
            if m.support != b.support {
                log::warn!(
                    "support differs for {label}: {} vs baseline {}",
                    m.support,
                    b.support
                );
            }
            let delta_f1 = m.f1 - b.f1;
            ComparisonRow {
                label: *label,
                model: [m.precision, m.recall, m.f1],
                baseline: [b.precision, b.recall, b.f1],
                delta_precision: m.precision - b.precision,
                delta_recall: m.recall - b.recall,
                delta_f1,
                support: m.support,
                underperforms: delta_f1 < 0.0,
            }
        })
        .collect();
    Ok(Comparison {
        model_name: model_name.to_string(),
        baseline_name: baseline.name.clone(),
        rows,
    })
}
