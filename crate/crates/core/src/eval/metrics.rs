use serde::{Deserialize, Serialize};

use crate::eval::confusion::ConfusionMatrix;
use crate::labels::{ClassLabel, NUM_CLASSES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: ClassLabel,
    pub precision: f64,
    pub recall: f64,
    #[serde(rename = "f1-score", alias = "f1")]
    pub f1: f64,
    pub support: u64,
    /// Correct predictions for the class, when computed from raw counts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_positives: Option<u64>,
}

/// A metric whose denominator was zero and was reported as 0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZeroDivision {
    pub label: ClassLabel,
    pub metric: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub micro_accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub weighted_f1: f64,
    pub total_support: u64,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Precision `tp / column sum`, recall `tp / row sum`, F1 harmonic mean.
/// Zero denominators yield 0 and are listed in the returned warnings.
pub fn per_class_metrics(cm: &ConfusionMatrix) -> (Vec<ClassMetrics>, Vec<ZeroDivision>) {
    let mut warnings = Vec::new();
    let mut flag = |label: ClassLabel, metric: &str| {
        warnings.push(ZeroDivision {
            label,
            metric: metric.to_string(),
        })
    };
    let mut rows = Vec::with_capacity(NUM_CLASSES);
    for label in ClassLabel::ALL {
        let c = label.index();
        let tp = cm.counts[c][c];
        let support = cm.row_sum(c);
        let precision = ratio(tp, cm.col_sum(c)).unwrap_or_else(|| {
            flag(label, "precision");
            0.0
        });
        let recall = ratio(tp, support).unwrap_or_else(|| {
            flag(label, "recall");
            0.0
        });
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            flag(label, "f1");
            0.0
        };
        rows.push(ClassMetrics {
            label,
            precision,
            recall,
            f1,
            support,
            true_positives: Some(tp),
        });
    }
    for w in &warnings {
        log::warn!("{} of class {} has a zero denominator; reported as 0", w.metric, w.label);
    }
    (rows, warnings)
}

/// Macro = unweighted mean; weighted = support-weighted mean; micro accuracy =
/// correct / total. When raw true-positive counts are present they are used for
/// the support-weighted recall and for micro accuracy, so both equal
/// `trace / total` exactly.
pub fn aggregate(per_class: &[ClassMetrics]) -> Aggregates {
    let n = per_class.len().max(1) as f64;
    let total: u64 = per_class.iter().map(|m| m.support).sum();
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / n;
    let weighted = |f: fn(&ClassMetrics) -> f64| {
        if total == 0 {
            return 0.0;
        }
        per_class.iter().map(|m| m.support as f64 * f(m)).sum::<f64>() / total as f64
    };
    let correct: Option<u64> = per_class.iter().map(|m| m.true_positives).sum();
    let weighted_recall = match correct {
        Some(tp) if total > 0 => tp as f64 / total as f64,
        _ => weighted(|m| m.recall),
    };
    Aggregates {
        micro_accuracy: weighted_recall,
        macro_precision: mean(|m| m.precision),
        macro_recall: mean(|m| m.recall),
        macro_f1: mean(|m| m.f1),
        weighted_precision: weighted(|m| m.precision),
        weighted_recall,
        weighted_f1: weighted(|m| m.f1),
        total_support: total,
    }
}

/// Mean recall over classes that occur in `labels`. Used for training curves,
/// where a mini-batch rarely contains every class.
pub fn balanced_accuracy(preds: &[usize], labels: &[usize]) -> f64 {
    let mut hits = [0u64; NUM_CLASSES];
    let mut support = [0u64; NUM_CLASSES];
    for (&p, &y) in preds.iter().zip(labels) {
        support[y] += 1;
        if p == y {
            hits[y] += 1;
        }
    }
    let present: Vec<f64> = (0..NUM_CLASSES)
        .filter(|&c| support[c] > 0)
        .map(|c| hits[c] as f64 / support[c] as f64)
        .collect();
    if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    }
}
