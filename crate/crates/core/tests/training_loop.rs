mod common;

use std::path::Path;

use capsnet::manifest::{build_manifest, DatasetManifest, Split};
use capsnet::model::{build_model, BackboneKind, ModelConfig};
use capsnet::preprocess::PreprocessConfig;
use capsnet::train::{train, EarlyStop, LogSplit, MetricLog, OptimizerConfig, TrainConfig};
use capsnet::{plot, Error, ErrorKind};

const HW: usize = 32;

fn fixture(dir: &Path, per_class: usize) -> DatasetManifest {
    common::class_tree(dir, &[per_class; 10], HW as u32);
    build_manifest(dir, Split::Train, 0).unwrap().0
}

fn frozen_model(seed: u64) -> capsnet::model::Model {
    let cfg = ModelConfig {
        backbone: BackboneKind::Vgg16,
        pretrained: false,
        freeze_backbone: true,
        input_hw: [HW, HW],
        ..Default::default()
    };
    build_model(&cfg, seed).unwrap()
}

fn preprocess() -> PreprocessConfig {
    PreprocessConfig {
        resize_hw: [HW, HW],
        ..Default::default()
    }
}

#[test]
fn zero_epochs_leave_the_model_untouched() {
    let tmp = tempfile::tempdir().unwrap();
    let tr = fixture(&tmp.path().join("t"), 1);
    let model = frozen_model(0);
    let before = model.store().get("head.out.weight").unwrap().as_tensor().to_vec2::<f32>().unwrap();
    let cfg = TrainConfig {
        epochs: 0,
        ..Default::default()
    };
    let out = train(&model, &tr, &tr, &preprocess(), &cfg, 0, &tmp.path().join("ck")).unwrap();
    assert!(out.best.is_none());
    assert!(out.log.is_empty());
    let after = model.store().get("head.out.weight").unwrap().as_tensor().to_vec2::<f32>().unwrap();
    assert_eq!(before, after);
}

#[test]
fn overlapping_validation_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let tr = fixture(&tmp.path().join("t"), 1);
    let cfg = TrainConfig {
        epochs: 1,
        ..Default::default()
    };
    let err = train(&frozen_model(0), &tr, &tr, &preprocess(), &cfg, 0, &tmp.path().join("ck")).unwrap_err();
    assert_eq!(err.kind(), ErrorKind::Data);
}

#[test]
fn epochs_checkpoints_and_best_selection() {
    let tmp = tempfile::tempdir().unwrap();
    let tr = fixture(&tmp.path().join("t"), 2);
    let va = fixture(&tmp.path().join("v"), 1);
    let cfg = TrainConfig {
        epochs: 4,
        batch_size: 8,
        optimizer: OptimizerConfig {
            lr: 1e-3,
            ..Default::default()
        },
        early_stop: EarlyStop {
            patience: 2,
            ..Default::default()
        },
        ..Default::default()
    };
    let ck = tmp.path().join("ck");
    let out = train(&frozen_model(1), &tr, &va, &preprocess(), &cfg, 5, &ck).unwrap();
    for e in 1..=out.epochs_run {
        assert!(ck.join(format!("ckpt_epoch{e}.safetensors")).is_file());
        assert!(ck.join(format!("ckpt_epoch{e}.json")).is_file());
    }
    assert!(ck.join("best.safetensors").is_file());

    let val: Vec<f64> = out.log.split(LogSplit::Validation).map(|e| e.macro_accuracy).collect();
    assert_eq!(val.len(), out.epochs_run);
    let best = out.best.unwrap();
    // the selected checkpoint is never worse than any epoch seen
    assert!(val.iter().all(|&v| v <= best.validation_macro_recall));
    assert_eq!(val[best.epoch - 1], best.validation_macro_recall);
    assert!(val[..best.epoch - 1].iter().all(|&v| v < best.validation_macro_recall));

    let train_steps = out.log.split(LogSplit::Train).count();
    assert_eq!(train_steps, out.steps);
    assert_eq!(out.steps, out.epochs_run * 3);
}

#[test]
fn metric_log_replay_reproduces_curves() {
    let tmp = tempfile::tempdir().unwrap();
    let tr = fixture(&tmp.path().join("t"), 1);
    let va = fixture(&tmp.path().join("v"), 1);
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 4,
        ..Default::default()
    };
    let out = train(&frozen_model(2), &tr, &va, &preprocess(), &cfg, 0, &tmp.path().join("ck")).unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    std::fs::create_dir_all(&a).unwrap();
    std::fs::create_dir_all(&b).unwrap();
    out.log.write(&a.join("metrics.csv")).unwrap();
    plot::write_curves(&out.log, &a).unwrap();
    let replay = MetricLog::read(&a.join("metrics.csv")).unwrap();
    plot::write_curves(&replay, &b).unwrap();
    for name in ["loss.png", "macro_accuracy.png"] {
        assert_eq!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap());
    }
}

#[test]
fn exploding_learning_rate_aborts_with_dump() {
    let tmp = tempfile::tempdir().unwrap();
    let tr = fixture(&tmp.path().join("t"), 1);
    let va = fixture(&tmp.path().join("v"), 1);
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 5,
        optimizer: OptimizerConfig {
            lr: 1e38,
            ..Default::default()
        },
        ..Default::default()
    };
    let ck = tmp.path().join("ck");
    let err = train(&frozen_model(3), &tr, &va, &preprocess(), &cfg, 0, &ck).unwrap_err();
    assert!(matches!(err, Error::NonFiniteLoss { .. }), "{err}");
    assert_eq!(err.kind(), ErrorKind::Numeric);
    assert!(ck.join("nan_dump.json").is_file());
}

#[test]
fn weighted_ce_needs_weights() {
    let cfg = TrainConfig {
        loss: capsnet::train::LossKind::WeightedCe,
        ..Default::default()
    };
    assert_eq!(cfg.validate().unwrap_err().kind(), ErrorKind::Config);
}
