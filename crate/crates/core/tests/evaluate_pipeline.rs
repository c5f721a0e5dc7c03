mod common;

use capsnet::eval::evaluate;
use capsnet::manifest::{build_manifest, DatasetManifest, Split};
use capsnet::model::{build_model, BackboneKind, ModelConfig};
use capsnet::preprocess::PreprocessConfig;

#[test]
fn report_support_equals_manifest_size_and_latency_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    common::class_tree(tmp.path(), &[1, 2, 1, 1, 0, 1, 3, 1, 1, 1], 40);
    let (manifest, _) = build_manifest(tmp.path(), Split::Validation, 0).unwrap();
    let model = build_model(
        &ModelConfig {
            backbone: BackboneKind::Vgg16,
            pretrained: false,
            input_hw: [32, 32],
            ..Default::default()
        },
        0,
    )
    .unwrap();
    let pre = PreprocessConfig {
        resize_hw: [32, 32],
        ..Default::default()
    };
    let report = evaluate(&model, &manifest, &pre, 3).unwrap();
    assert_eq!(report.aggregates.total_support as usize, manifest.records.len());
    assert_eq!(report.confusion.total() as usize, manifest.records.len());
    let latency = report.latency.unwrap();
    assert_eq!(latency.configured_batch.batch_size, 3);
    // 12 images in batches of 3: 4 batches, the first 3 are warmup
    assert_eq!(latency.configured_batch.batches, 1);
    assert!(latency.single_image.unwrap().mean_ms > 0.0);

    let empty = DatasetManifest::new(Split::Validation, 0);
    assert!(evaluate(&model, &empty, &pre, 3).is_err());
}
