use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{ClassLabel, NUM_CLASSES};

/// Rows are true classes, columns are predicted classes.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

impl ConfusionMatrix {
    pub fn from_pairs(preds: &[usize], labels: &[usize]) -> Result<Self> {
        if preds.len() != labels.len() {
            return Err(Error::InvalidInput(format!(
                "{} predictions but {} labels",
                preds.len(),
                labels.len()
            )));
        }
        let mut cm = ConfusionMatrix::default();
        for (&p, &y) in preds.iter().zip(labels) {
            if p >= NUM_CLASSES || y >= NUM_CLASSES {
                return Err(Error::InvalidInput(format!(
                    "class index out of range (prediction {p}, label {y})"
                )));
            }
            cm.counts[y][p] += 1;
        }
        Ok(cm)
    }

    pub fn get(&self, truth: ClassLabel, predicted: ClassLabel) -> u64 {
        self.counts[truth.index()][predicted.index()]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..NUM_CLASSES).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    pub fn col_sum(&self, class: usize) -> u64 {
        self.counts.iter().map(|row| row[class]).sum()
    }

    /// Percentage of each true class assigned to each predicted class. Empty rows stay zero.
    pub fn row_normalized(&self) -> [[f64; NUM_CLASSES]; NUM_CLASSES] {
        let mut out = [[0.0; NUM_CLASSES]; NUM_CLASSES];
        for (r, row) in self.counts.iter().enumerate() {
            let sum = self.row_sum(r);
            if sum == 0 {
                continue;
            }
            for (c, &v) in row.iter().enumerate() {
                out[r][c] = 100.0 * v as f64 / sum as f64;
            }
        }
        out
    }

    fn header() -> String {
        let mut line = String::from("true\\predicted");
        for label in ClassLabel::ALL {
            line.push(',');
            line.push_str(label.name());
        }
        line.push('\n');
        line
    }

    pub fn counts_csv(&self) -> String {
        let mut out = Self::header();
        for (label, row) in ClassLabel::ALL.iter().zip(&self.counts) {
            out.push_str(label.name());
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    /// Row-normalized percentages rendered with two decimals.
    pub fn normalized_csv(&self) -> String {
        let mut out = Self::header();
        for (label, row) in ClassLabel::ALL.iter().zip(self.row_normalized()) {
            out.push_str(label.name());
            for v in row {
                let _ = write!(out, ",{v:.2}");
            }
            out.push('\n');
        }
        out
    }
}
