//! Append-only training/validation metric log, stored as CSV.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "split,step,epoch,loss,macro_accuracy";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogSplit {
    Train,
    Validation,
}

impl LogSplit {
    pub fn as_str(self) -> &'static str {
        match self {
            LogSplit::Train => "train",
            LogSplit::Validation => "validation",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub split: LogSplit,
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    /// Mean per-class recall over the classes present.
    pub macro_accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MetricLog {
    entries: Vec<LogEntry>,
}

impl MetricLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends an entry; the step must exceed the last step logged for its split.
    pub fn push(&mut self, entry: LogEntry) -> Result<()> {
        if let Some(last) = self.entries.iter().rev().find(|e| e.split == entry.split) {
            if entry.step <= last.step {
                return Err(Error::InvalidInput(format!(
                    "{} step {} does not follow step {}",
                    entry.split.as_str(),
                    entry.step,
                    last.step
                )));
            }
        }
        self.entries.push(entry);
        Ok(())
    }

    pub fn entries(&self) -> &[LogEntry] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn split(&self, split: LogSplit) -> impl Iterator<Item = &LogEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for e in &self.entries {
            let _ = writeln!(out, "{},{},{},{},{}", e.split.as_str(), e.step, e.epoch, e.loss, e.macro_accuracy);
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(CSV_HEADER) {
            return Err(Error::Data(format!("metric log must start with `{CSV_HEADER}`")));
        }
        let mut log = MetricLog::new();
        for (n, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
            let bad = |what: &str| Error::Data(format!("metric log line {}: {what}", n + 2));
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 5 {
                return Err(bad("expected 5 fields"));
            }
            let split = match fields[0] {
                "train" => LogSplit::Train,
                "validation" => LogSplit::Validation,
                _ => return Err(bad("unknown split")),
            };
            let parse_usize = |s: &str| s.parse::<usize>().map_err(|_| bad("bad integer"));
            let parse_f64 = |s: &str| s.parse::<f64>().map_err(|_| bad("bad number"));
            log.push(LogEntry {
                split,
                step: parse_usize(fields[1])?,
                epoch: parse_usize(fields[2])?,
                loss: parse_f64(fields[3])?,
                macro_accuracy: parse_f64(fields[4])?,
            })?;
        }
        Ok(log)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(split: LogSplit, step: usize) -> LogEntry {
        LogEntry {
            split,
            step,
            epoch: 1,
            loss: 0.1 + step as f64 / 3.0,
            macro_accuracy: 1.0 / 7.0,
        }
    }

    #[test]
    fn steps_must_increase_per_split() {
        let mut log = MetricLog::new();
        log.push(entry(LogSplit::Train, 1)).unwrap();
        log.push(entry(LogSplit::Validation, 1)).unwrap();
        log.push(entry(LogSplit::Train, 2)).unwrap();
        assert!(log.push(entry(LogSplit::Train, 2)).is_err());
        assert!(log.push(entry(LogSplit::Validation, 1)).is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let mut log = MetricLog::new();
        for s in 1..6 {
            log.push(entry(LogSplit::Train, s)).unwrap();
        }
        log.push(entry(LogSplit::Validation, 5)).unwrap();
        let text = log.to_csv();
        let back = MetricLog::from_csv(&text).unwrap();
        assert_eq!(back, log);
        assert_eq!(back.to_csv(), text);
    }
}
