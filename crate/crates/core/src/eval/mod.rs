//! Confusion matrices, per-class scores, aggregates and timed evaluation.

pub mod compare;
pub mod confusion;
pub mod metrics;
pub mod report;

use std::path::PathBuf;
use std::time::Instant;

pub use compare::{compare, Comparison, ComparisonRow, ScoreTable};
pub use confusion::ConfusionMatrix;
pub use metrics::{aggregate, balanced_accuracy, per_class_metrics, Aggregates, ClassMetrics, ZeroDivision};
pub use report::{EvalReport, LatencyReport, LatencyStats};

use crate::error::{Error, Result};
use crate::manifest::DatasetManifest;
use crate::model::{batch_tensor, predict, Mode, Model, Prediction};
use crate::preprocess::{preprocess_files, PreprocessConfig};

/// Leading batches left out of the latency statistics.
pub const WARMUP_BATCHES: usize = 3;
/// Images timed one at a time for the batch-1 latency figure.
pub const SINGLE_IMAGE_SAMPLES: usize = 32;

/// Eval-mode inference on a batch, timed with a monotonic clock (inference only, not decoding).
pub fn timed_predict(model: &Model, images: &[crate::preprocess::ChwImage]) -> Result<(Vec<Prediction>, f64)> {
    let xs = batch_tensor(images, model.device())?;
    let start = Instant::now();
    let logits = model.forward(&xs, Mode::Eval)?;
    let preds = predict(&logits)?;
    Ok((preds, start.elapsed().as_secs_f64() * 1e3))
}

/// Runs batched inference over `manifest` and assembles the full report.
pub fn evaluate(
    model: &Model,
    manifest: &DatasetManifest,
    preprocess: &PreprocessConfig,
    batch_size: usize,
) -> Result<EvalReport> {
    if manifest.records.is_empty() {
        return Err(Error::InvalidInput("cannot evaluate an empty manifest".into()));
    }
    if batch_size == 0 {
        return Err(Error::Config("eval batch_size must be positive".into()));
    }
    let paths: Vec<PathBuf> = manifest.records.iter().map(|r| manifest.resolve(&r.image_ref)).collect();
    let labels: Vec<usize> = manifest.records.iter().map(|r| r.label.index()).collect();

    let mut preds = Vec::with_capacity(labels.len());
    let mut timings = Vec::new();
    for chunk in paths.chunks(batch_size) {
        let images = preprocess_files(chunk, preprocess)?;
        let (batch_preds, ms) = timed_predict(model, &images)?;
        timings.push((ms, images.len()));
        preds.extend(batch_preds.into_iter().map(|p| p.label.index()));
    }
    let configured = LatencyStats::from_batches(batch_size, &timings, WARMUP_BATCHES)
        .expect("at least one timed batch");

    let single = if batch_size > 1 {
        let sample = &paths[..paths.len().min(SINGLE_IMAGE_SAMPLES)];
        let images = preprocess_files(sample, preprocess)?;
        let mut single_times = Vec::with_capacity(images.len());
        for img in &images {
            let (_, ms) = timed_predict(model, std::slice::from_ref(img))?;
            single_times.push((ms, 1));
        }
        LatencyStats::from_batches(1, &single_times, WARMUP_BATCHES)
    } else {
        None
    };

    let mut report = EvalReport::from_predictions(&preds, &labels)?;
    report.latency = Some(LatencyReport {
        configured_batch: configured,
        single_image: single,
    });
    Ok(report)
}
