mod common;

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

fn small_pipeline(tmp: &Path, name: &str, extra: Value) -> PathBuf {
    let mut cfg = json!({
        "master_seed": 11,
        "data": {"train_root": tmp.join("train"), "validation_root": tmp.join("val")},
        "preprocess": {"resize_hw": [64, 64]},
        "model": {"backbone": "densenet121", "pretrained": false, "freeze_backbone": true, "input_hw": [64, 64]},
        "train": {"epochs": 2, "batch_size": 4, "optimizer": {"lr": 1e-3}},
        "output": {"runs_dir": tmp.join("runs"), "run_name": name}
    });
    if let (Some(base), Some(more)) = (cfg.as_object_mut(), extra.as_object()) {
        for (k, v) in more {
            base.insert(k.clone(), v.clone());
        }
    }
    let path = tmp.join(format!("{name}.json"));
    common::write_config(&path, &cfg);
    path
}

fn fixtures(tmp: &Path) {
    common::class_tree(&tmp.join("train"), &[3; 10], 40);
    common::class_tree(&tmp.join("val"), &[1; 10], 40);
}

#[test]
fn plan_prints_table_and_writes_json() {
    let tmp = tempfile::tempdir().unwrap();
    fixtures(tmp.path());
    let cfg = small_pipeline(tmp.path(), "plan", json!({"balance": {"strategy": {"kind": "fixed_target", "target": 2}}}));
    let (code, out, err) = common::capsnet(&["plan", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("Worms"));
    let plan: Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("runs/plan/plan.json")).unwrap()).unwrap();
    assert_eq!(plan["classes"][0]["keep"], 2);
    assert!(tmp.path().join("runs/plan").join("config.resolved.json").is_file());
}

#[test]
fn unknown_override_key_exits_with_config_code() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_pipeline(tmp.path(), "bad", json!({}));
    let (code, _, err) = common::capsnet(&["plan", "--config", cfg.to_str().unwrap(), "--set", "train.epochz=3"]);
    assert_eq!(code, 2, "{err}");
}

#[test]
fn missing_data_root_exits_with_data_code() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_pipeline(tmp.path(), "missing", json!({}));
    let (code, _, err) = common::capsnet(&["plan", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code, 3, "{err}");
}

#[test]
fn train_eval_predict_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    fixtures(tmp.path());
    let baseline = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../baselines/vgg16_misahub.json");
    let cfg = small_pipeline(tmp.path(), "run", json!({"eval": {"baseline": baseline, "batch_size": 4}}));
    let cfg_arg = cfg.to_str().unwrap();

    let (code, _, err) = common::capsnet(&["train", "--config", cfg_arg]);
    assert_eq!(code, 0, "{err}");
    let run = tmp.path().join("runs/run");
    let summary: Value = serde_json::from_str(&fs::read_to_string(run.join("train_summary.json")).unwrap()).unwrap();
    let steps = summary["steps"].as_u64().unwrap() as usize;
    let csv = fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().filter(|l| l.starts_with("train,")).count(), steps);
    assert_eq!(csv.lines().filter(|l| l.starts_with("validation,")).count(), 2);
    for png in ["loss.png", "macro_accuracy.png"] {
        assert!(run.join(png).is_file());
    }
    let best = run.join("checkpoints/best.safetensors");
    assert!(best.is_file());

    let eval_cfg = small_pipeline(tmp.path(), "eval", json!({"eval": {"baseline": baseline, "batch_size": 4}}));
    let (code, out, err) = common::capsnet(&["eval", "--config", eval_cfg.to_str().unwrap(), "--checkpoint", best.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("weighted avg"));
    let eval_dir = tmp.path().join("runs/eval/eval");
    for f in ["report.json", "report.txt", "confusion_counts.csv", "confusion_normalized.csv", "confusion.png", "comparison.txt", "comparison.json"] {
        assert!(eval_dir.join(f).is_file(), "missing {f}");
    }
    let report: Value = serde_json::from_str(&fs::read_to_string(eval_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["total_support"], 10);

    let image = tmp.path().join("val/Worms/img_0000.png");
    let copy = tmp.path().join("copy.png");
    fs::copy(&image, &copy).unwrap();
    let (code, out, err) = common::capsnet(&["predict", "--checkpoint", best.to_str().unwrap(), image.to_str().unwrap(), copy.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    let lines: Vec<Value> = out.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2);
    let conf: f64 = lines[0]["confidence"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).sum();
    assert!((conf - 1.0).abs() < 1e-6);
    assert_eq!(lines[0]["label"], lines[1]["label"]);
    assert_eq!(lines[0]["confidence"], lines[1]["confidence"]);
}

#[test]
fn predict_on_empty_directory_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = tmp.path().join("empty");
    fs::create_dir_all(&empty).unwrap();
    let ckpt = tmp.path().join("none.safetensors");
    let (code, _, _) = common::capsnet(&["predict", "--checkpoint", ckpt.to_str().unwrap(), empty.to_str().unwrap()]);
    assert_eq!(code, 3);
}
