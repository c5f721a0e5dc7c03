use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::confusion::ConfusionMatrix;
use crate::eval::metrics::{aggregate, per_class_metrics, Aggregates, ClassMetrics, ZeroDivision};

/// Per-image latency summary in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub batch_size: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    /// Batches that contributed to the statistics.
    pub batches: usize,
    pub warmup_batches_excluded: usize,
}

impl LatencyStats {
    /// `batch_times` are (wall-clock milliseconds, images in the batch).
    pub fn from_batches(batch_size: usize, batch_times: &[(f64, usize)], warmup: usize) -> Option<Self> {
        let skip = if batch_times.len() > warmup { warmup } else { 0 };
        let mut per_image: Vec<f64> = batch_times[skip..]
            .iter()
            .filter(|(_, n)| *n > 0)
            .map(|&(ms, n)| ms / n as f64)
            .collect();
        if per_image.is_empty() {
            return None;
        }
        per_image.sort_by(f64::total_cmp);
        let mean_ms = per_image.iter().sum::<f64>() / per_image.len() as f64;
        Some(LatencyStats {
            batch_size,
            mean_ms,
            p50_ms: percentile(&per_image, 50.0),
            p95_ms: percentile(&per_image, 95.0),
            batches: per_image.len(),
            warmup_batches_excluded: skip,
        })
    }
}

/// Linear-interpolated percentile of sorted samples.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub configured_batch: LatencyStats,
    pub single_image: Option<LatencyStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub confusion: ConfusionMatrix,
    pub per_class: Vec<ClassMetrics>,
    #[serde(flatten)]
    pub aggregates: Aggregates,
    pub zero_division: Vec<ZeroDivision>,
    #[serde(default)]
    pub latency: Option<LatencyReport>,
}

impl EvalReport {
    pub fn from_confusion(confusion: ConfusionMatrix) -> Self {
        let (per_class, zero_division) = per_class_metrics(&confusion);
        let aggregates = aggregate(&per_class);
        EvalReport {
            confusion,
            per_class,
            aggregates,
            zero_division,
            latency: None,
        }
    }

    pub fn from_predictions(preds: &[usize], labels: &[usize]) -> Result<Self> {
        Ok(Self::from_confusion(ConfusionMatrix::from_pairs(preds, labels)?))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Data(format!("report json: {e}")))
    }

    /// Two-decimal table in the usual classification-report layout.
    pub fn render_table(&self) -> String {
        render_score_table(&self.per_class, &self.aggregates)
    }

    /// Writes `report.json`, `report.txt`, `confusion_counts.csv` and `confusion_normalized.csv`.
    pub fn write_all(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let files = [
            ("report.json", self.to_json()),
            ("report.txt", self.render_table()),
            ("confusion_counts.csv", self.confusion.counts_csv()),
            ("confusion_normalized.csv", self.confusion.normalized_csv()),
        ];
        for (name, body) in files {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

pub const TABLE_HEADER: [&str; 5] = ["Class", "precision", "recall", "f1-score", "support"];

pub fn render_score_table(per_class: &[ClassMetrics], agg: &Aggregates) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<18} {:>10} {:>10} {:>10} {:>10}",
        TABLE_HEADER[0], TABLE_HEADER[1], TABLE_HEADER[2], TABLE_HEADER[3], TABLE_HEADER[4]
    );
    for m in per_class {
        let _ = writeln!(
            out,
            "{:<18} {:>10.2} {:>10.2} {:>10.2} {:>10}",
            m.label.name(),
            m.precision,
            m.recall,
            m.f1,
            m.support
        );
    }
    let _ = writeln!(
        out,
        "{:<18} {:>10} {:>10} {:>10.2} {:>10}",
        "Accuracy", "", "", agg.micro_accuracy, agg.total_support
    );
    let _ = writeln!(
        out,
        "{:<18} {:>10.2} {:>10.2} {:>10.2} {:>10}",
        "macro avg", agg.macro_precision, agg.macro_recall, agg.macro_f1, agg.total_support
    );
    let _ = writeln!(
        out,
        "{:<18} {:>10.2} {:>10.2} {:>10.2} {:>10}",
        "weighted avg", agg.weighted_precision, agg.weighted_recall, agg.weighted_f1, agg.total_support
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn latency_excludes_warmup() {
        let times = [(100.0, 2), (90.0, 2), (80.0, 2), (10.0, 2), (20.0, 2), (30.0, 1)];
        let stats = LatencyStats::from_batches(2, &times, 3).unwrap();
        assert_eq!(stats.warmup_batches_excluded, 3);
        assert_eq!(stats.batches, 3);
        // per image: 5, 10, 30
        assert!((stats.mean_ms - 15.0).abs() < 1e-12);
        assert_eq!(stats.p50_ms, 10.0);
        assert!((stats.p95_ms - 28.0).abs() < 1e-12);
    }

    #[test]
    fn short_runs_keep_all_batches() {
        let stats = LatencyStats::from_batches(4, &[(8.0, 4)], 3).unwrap();
        assert_eq!((stats.batches, stats.warmup_batches_excluded), (1, 0));
        assert!(LatencyStats::from_batches(4, &[], 3).is_none());
    }

    #[test]
    fn json_round_trip() {
        let report = EvalReport::from_predictions(&[0, 1, 2, 2], &[0, 1, 1, 2]).unwrap();
        let back = EvalReport::from_json(&report.to_json()).unwrap();
        assert_eq!(back, report);
        let json: serde_json::Value = serde_json::from_str(&report.to_json()).unwrap();
        assert!(json.get("micro_accuracy").is_some());
        assert!(json["per_class"][0].get("f1-score").is_some());
    }
}
