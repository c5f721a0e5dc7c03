use candle_core::{DType, Device, Tensor};
use capsnet::model::checkpoint::{export, load_checkpoint, save_checkpoint, CheckpointMeta};
use capsnet::model::{build_model, predict, BackboneKind, Head, HeadConfig, Mode, ModelConfig, ParamStore};
use capsnet::preprocess::PreprocessConfig;
use capsnet::train::loss::{cross_entropy, scalar};
use capsnet::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn config(backbone: BackboneKind, hw: usize) -> ModelConfig {
    ModelConfig {
        backbone,
        pretrained: false,
        input_hw: [hw, hw],
        ..Default::default()
    }
}

fn random_batch(b: usize, hw: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f32> = (0..b * 3 * hw * hw).map(|_| rng.random_range(-2.0..2.0)).collect();
    Tensor::from_vec(data, (b, 3, hw, hw), &Device::Cpu).unwrap()
}

#[test]
fn every_backbone_yields_ten_logits() {
    for kind in BackboneKind::REGISTRY {
        let model = build_model(&config(kind, 64), 1).unwrap();
        assert_eq!(model.feature_dim(), kind.feature_dim());
        let logits = model.forward(&random_batch(2, 64, 2), Mode::Eval).unwrap();
        assert_eq!(logits.dims(), &[2, 10], "{kind}");
        let values = logits.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert!(values.iter().all(|v| v.is_finite()), "{kind}");
    }
}

#[test]
fn unknown_backbone_lists_registry() {
    let err = serde_json::from_str::<ModelConfig>(r#"{"backbone":"inception_v3"}"#).unwrap_err();
    let text = err.to_string();
    for kind in BackboneKind::REGISTRY {
        assert!(text.contains(kind.id()), "{text}");
    }
    assert!(matches!(BackboneKind::from_id("x"), Err(Error::UnknownBackbone { .. })));
}

#[test]
fn default_head_on_b7_has_closed_form_count() {
    let model = build_model(&config(BackboneKind::EfficientnetB7, 32), 0).unwrap();
    assert_eq!(model.feature_dim(), 2560);
    assert_eq!(model.head_parameter_count(), 2560 * 512 + 512 + 512 + 512 * 10 + 10);
    assert_eq!(model.head_parameter_count(), HeadConfig::default().parameter_count(2560, 10));
}

#[test]
fn zero_batch_is_finite_and_duplicates_match() {
    let model = build_model(&config(BackboneKind::Resnet50, 32), 3).unwrap();
    let zeros = Tensor::zeros((2, 3, 32, 32), DType::F32, &Device::Cpu).unwrap();
    let z = model.forward(&zeros, Mode::Eval).unwrap().to_vec2::<f32>().unwrap();
    assert!(z.iter().flatten().all(|v| v.is_finite()));
    assert_eq!(z[0], z[1]);
}

#[test]
fn eval_mode_is_batch_order_equivariant() {
    let model = build_model(&config(BackboneKind::Densenet121, 32), 4).unwrap();
    let xs = random_batch(4, 32, 5);
    let perm = [2u32, 0, 3, 1];
    let idx = Tensor::new(&perm, &Device::Cpu).unwrap();
    let a = model.forward(&xs, Mode::Eval).unwrap().to_vec2::<f32>().unwrap();
    let b = model
        .forward(&xs.index_select(&idx, 0).unwrap(), Mode::Eval)
        .unwrap()
        .to_vec2::<f32>()
        .unwrap();
    for (row, &src) in perm.iter().enumerate() {
        let diff = a[src as usize].iter().zip(&b[row]).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max);
        assert!(diff < 1e-5, "row {row}: {diff}");
    }
}

#[test]
fn softmax_rows_sum_to_one() {
    let model = build_model(&config(BackboneKind::Vgg16, 32), 6).unwrap();
    let logits = model.forward(&random_batch(3, 32, 7), Mode::Eval).unwrap();
    for p in predict(&logits).unwrap() {
        assert!((p.confidence.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn head_gradient_matches_finite_differences() {
    let d = 48;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let feats: Vec<f64> = (0..2 * d).map(|_| rng.random_range(0.0..2.0)).collect();
    let feats = Tensor::from_vec(feats, (2, d), &Device::Cpu).unwrap();
    let targets = [3usize, 7];
    let store = ParamStore::new(11);
    let head = Head::new(&HeadConfig::default(), d, 10, store.var_builder(DType::F64, &Device::Cpu)).unwrap();
    let loss_of = |h: &Head| cross_entropy(&h.forward(&feats, Mode::Eval).unwrap(), &targets, None).unwrap();
    let w = store.get("out.weight").unwrap();
    let grads = loss_of(&head).backward().unwrap();
    let analytic = grads.get(w.as_tensor()).unwrap().to_vec2::<f64>().unwrap();
    let original = w.as_tensor().to_vec2::<f64>().unwrap();
    let eps = 1e-6;
    for (i, j) in [(0, 0), (3, 5), (7, 100), (9, 511), (3, 17), (5, 255)] {
        let mut perturbed = original.clone();
        perturbed[i][j] += eps;
        w.set(&Tensor::new(perturbed.clone(), &Device::Cpu).unwrap()).unwrap();
        let plus = scalar(&loss_of(&head)).unwrap();
        perturbed[i][j] -= 2.0 * eps;
        w.set(&Tensor::new(perturbed, &Device::Cpu).unwrap()).unwrap();
        let minus = scalar(&loss_of(&head)).unwrap();
        w.set(&Tensor::new(original.clone(), &Device::Cpu).unwrap()).unwrap();
        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic[i][j];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        assert!(rel < 1e-3, "({i},{j}) analytic {a} numeric {numeric}");
    }
}

#[test]
fn checkpoint_round_trip_and_export() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(BackboneKind::Vgg16, 32);
    let model = build_model(&cfg, 12).unwrap();
    let pre = PreprocessConfig {
        resize_hw: [32, 32],
        ..Default::default()
    };
    let meta = CheckpointMeta::new(&model, &pre, 3, Some(0.5));
    let path = save_checkpoint(&model, &meta, tmp.path(), "ckpt_epoch3").unwrap();
    let (restored, back) = load_checkpoint(&path).unwrap();
    assert_eq!(back, meta);
    let xs = random_batch(2, 32, 13);
    let a = model.forward(&xs, Mode::Eval).unwrap().to_vec2::<f32>().unwrap();
    let b = restored.forward(&xs, Mode::Eval).unwrap().to_vec2::<f32>().unwrap();
    assert_eq!(a, b);

    let graph = export(&model, &pre, &tmp.path().join("export")).unwrap();
    assert_eq!(graph.input_shape, [1, 3, 32, 32]);
    assert!(tmp.path().join("export/graph.json").is_file());
    assert!(tmp.path().join("export/weights.safetensors").is_file());
    assert!(graph.tensors.iter().any(|t| t.name == "head.out.weight" && t.shape == vec![10, 512]));
}

#[test]
fn pretrained_weights_load_from_the_weights_dir() {
    let tmp = tempfile::tempdir().unwrap();
    let random = build_model(&config(BackboneKind::Vgg16, 32), 21).unwrap();
    // torchvision-style names: strip the `backbone.` prefix
    let tensors: std::collections::HashMap<String, Tensor> = random
        .store()
        .names()
        .into_iter()
        .filter_map(|n| {
            let t = random.store().get(&n).unwrap().as_tensor().clone();
            n.strip_prefix("backbone.").map(|s| (s.to_string(), t))
        })
        .collect();
    candle_core::safetensors::save(&tensors, tmp.path().join("vgg16.safetensors")).unwrap();
    let cfg = ModelConfig {
        pretrained: true,
        weights_dir: Some(tmp.path().to_path_buf()),
        ..config(BackboneKind::Vgg16, 32)
    };
    let loaded = build_model(&cfg, 99).unwrap();
    let xs = random_batch(1, 32, 1);
    let a = random.features(&xs, Mode::Eval).unwrap().to_vec2::<f32>().unwrap();
    let b = loaded.features(&xs, Mode::Eval).unwrap().to_vec2::<f32>().unwrap();
    assert_eq!(a, b);
}
