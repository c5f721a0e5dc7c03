//! Subcommand implementations.

use std::fs;
use std::path::{Path, PathBuf};

use capsnet::balance::{execute_balance, plan_balance};
use capsnet::eval::{compare, evaluate, timed_predict, ScoreTable};
use capsnet::manifest::{build_manifest, class_counts, DatasetManifest, Split};
use capsnet::model::build_model;
use capsnet::model::checkpoint::load_checkpoint;
use capsnet::preprocess::preprocess_file;
use capsnet::{plot, seed, train};
use serde::Serialize;

use crate::config::PipelineConfig;
use crate::error::{CliError, CliResult};

pub const RESOLVED_CONFIG: &str = "config.resolved.json";
pub const BALANCED_MANIFEST: &str = "manifest.jsonl";
const IMAGE_EXTENSIONS: [&str; 6] = ["png", "jpg", "jpeg", "bmp", "tif", "tiff"];

fn write_file(path: &Path, body: &str) -> CliResult<()> {
    fs::write(path, body).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

/// Creates `runs/<name>/` and stores the resolved configuration in it.
pub fn create_run_dir(config: &PipelineConfig) -> CliResult<PathBuf> {
    let base = config.output.runs_dir.clone();
    let dir = match &config.output.run_name {
        Some(name) => base.join(name),
        None => {
            let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S").to_string();
            let mut dir = base.join(&stamp);
            let mut n = 1;
            while dir.exists() {
                dir = base.join(format!("{stamp}-{n}"));
                n += 1;
            }
            dir
        }
    };
    fs::create_dir_all(&dir).map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))?;
    write_file(&dir.join(RESOLVED_CONFIG), &config.to_json())?;
    Ok(dir)
}

fn load_split(config: &PipelineConfig, split: Split, run_dir: &Path) -> CliResult<DatasetManifest> {
    let (manifest, root, key) = match split {
        Split::Train => (&config.data.train_manifest, &config.data.train_root, "train"),
        Split::Validation => (&config.data.validation_manifest, &config.data.validation_root, "validation"),
    };
    if let Some(path) = manifest {
        return Ok(DatasetManifest::read_jsonl(path, split, config.master_seed)?);
    }
    let Some(root) = root else {
        return Err(CliError::Config(format!("set data.{key}_manifest or data.{key}_root")));
    };
    let (manifest, skipped) = build_manifest(root, split, config.master_seed)?;
    if !skipped.is_empty() {
        log::warn!("{}: skipped {} unreadable files", root.display(), skipped.len());
        skipped.write(&run_dir.join(format!("skipped_{key}.txt")))?;
    }
    Ok(manifest)
}

pub fn cmd_plan(config: &PipelineConfig) -> CliResult<PathBuf> {
    let run = create_run_dir(config)?;
    let manifest = load_split(config, Split::Train, &run)?;
    let plan = plan_balance(&class_counts(&manifest), config.balance.strategy);
    let path = run.join("plan.json");
    plan.write_json(&path)?;
    print!("{}", plan.render_table());
    Ok(path)
}

pub fn cmd_augment(config: &PipelineConfig, workers: usize) -> CliResult<PathBuf> {
    let run = create_run_dir(config)?;
    let manifest = load_split(config, Split::Train, &run)?;
    let plan = plan_balance(&class_counts(&manifest), config.balance.strategy);
    plan.write_json(&run.join("plan.json"))?;
    let out = config.balance.out_dir.clone().unwrap_or_else(|| run.join("balanced"));
    let outcome = execute_balance(&manifest, &plan, &config.augment, config.master_seed, &out, workers)?;
    for s in &outcome.substitutions {
        log::warn!("unreadable source {} replaced: {}", s.unreadable, s.reason);
    }
    let path = out.join(BALANCED_MANIFEST);
    outcome.manifest.write_jsonl(&path)?;
    print!("{}", plan.render_table());
    println!("balanced manifest: {}", path.display());
    Ok(path)
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    steps: usize,
    epochs_run: usize,
    stopped_early: bool,
    best: &'a Option<train::BestCheckpoint>,
    final_train_accuracy: Option<f64>,
}

pub fn cmd_train(config: &PipelineConfig) -> CliResult<PathBuf> {
    let run = create_run_dir(config)?;
    let train_set = load_split(config, Split::Train, &run)?;
    let validation = load_split(config, Split::Validation, &run)?;
    let seed_value = config.train_seed();
    let model = build_model(&config.model, seed::derive(seed_value, seed::name_key("model")))?;
    let outcome = train::train(
        &model,
        &train_set,
        &validation,
        &config.preprocess,
        &config.train,
        seed_value,
        &run.join("checkpoints"),
    )?;
    outcome.log.write(&run.join("metrics.csv"))?;
    plot::write_curves(&outcome.log, &run)?;
    let summary = TrainSummary {
        steps: outcome.steps,
        epochs_run: outcome.epochs_run,
        stopped_early: outcome.stopped_early,
        best: &outcome.best,
        final_train_accuracy: outcome.final_train_accuracy,
    };
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    write_file(&run.join("train_summary.json"), &(text.clone() + "\n"))?;
    println!("{text}");
    Ok(run)
}

pub fn cmd_eval(config: &PipelineConfig, checkpoint: Option<&Path>) -> CliResult<PathBuf> {
    let checkpoint = checkpoint
        .map(Path::to_path_buf)
        .or_else(|| config.eval.checkpoint.clone())
        .ok_or_else(|| CliError::Config("pass --checkpoint or set eval.checkpoint".into()))?;
    let run = create_run_dir(config)?;
    let (model, meta) = load_checkpoint(&checkpoint)?;
    if meta.preprocess != config.preprocess {
        log::warn!("using the preprocessing stored with the checkpoint");
    }
    let manifest = load_split(config, Split::Validation, &run)?;
    let report = evaluate(&model, &manifest, &meta.preprocess, config.eval.batch_size)?;
    let out = run.join("eval");
    report.write_all(&out)?;
    plot::write_confusion_heatmap(&report.confusion, &out.join("confusion.png"))?;
    print!("{}", report.render_table());
    if let Some(path) = &config.eval.baseline {
        let baseline = ScoreTable::load(path)?;
        let comparison = compare(meta.model.backbone.id(), &report.per_class, &baseline)?;
        let text = comparison.render();
        write_file(&out.join("comparison.txt"), &text)?;
        let json = serde_json::to_string_pretty(&comparison).expect("comparison serializes");
        write_file(&out.join("comparison.json"), &(json + "\n"))?;
        print!("{text}");
    }
    Ok(out)
}

/// Image files directly under `dir`, sorted by name.
fn list_images(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    files.sort();
    Ok(files)
}

#[derive(Serialize)]
struct PredictLine<'a> {
    path: String,
    label: &'a str,
    label_index: usize,
    confidence: &'a [f64],
    latency_ms: f64,
}

/// Streams one JSON line per image to `out`; returns the number of lines.
pub fn cmd_predict(checkpoint: &Path, inputs: &[PathBuf], out: &mut dyn std::io::Write) -> CliResult<usize> {
    let mut files = Vec::new();
    for input in inputs {
        if input.is_dir() {
            files.extend(list_images(input)?);
        } else if input.is_file() {
            files.push(input.clone());
        } else {
            return Err(CliError::Data(format!("{} does not exist", input.display())));
        }
    }
    if files.is_empty() {
        return Err(CliError::Data("no images to predict".into()));
    }
    let (model, meta) = load_checkpoint(checkpoint)?;
    for path in &files {
        let image = preprocess_file(path, &meta.preprocess)?;
        let (preds, ms) = timed_predict(&model, std::slice::from_ref(&image))?;
        let p = &preds[0];
        let line = PredictLine {
            path: path.display().to_string(),
            label: p.label.name(),
            label_index: p.label.index(),
            confidence: &p.confidence,
            latency_ms: ms,
        };
        let text = serde_json::to_string(&line).expect("line serializes");
        writeln!(out, "{text}").and_then(|_| out.flush()).map_err(|e| CliError::Data(format!("stdout: {e}")))?;
    }
    Ok(files.len())
}
