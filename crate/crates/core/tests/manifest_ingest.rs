mod common;

use std::fs;

use capsnet::manifest::{build_manifest, class_counts, DatasetManifest, Origin, Split};
use capsnet::{ClassLabel, Error};
use proptest::prelude::*;

#[test]
fn three_files_per_class_counted_against_directory_listing() {
    let tmp = tempfile::tempdir().unwrap();
    common::class_tree(tmp.path(), &[3; 10], 8);
    let (manifest, skipped) = build_manifest(tmp.path(), Split::Train, 1).unwrap();
    assert!(skipped.is_empty());
    assert_eq!(manifest.records.len(), 30);
    let counts = class_counts(&manifest);
    for label in ClassLabel::ALL {
        let listed = fs::read_dir(tmp.path().join(label.name())).unwrap().count();
        assert_eq!(counts[label], listed);
    }
    assert!(manifest.records.iter().all(|r| r.origin == Origin::Original && r.source_ref.is_none()));
}

#[test]
fn smallest_class_size_is_preserved() {
    let tmp = tempfile::tempdir().unwrap();
    let mut counts = [1; 10];
    counts[ClassLabel::Worms.index()] = 158;
    common::class_tree(tmp.path(), &counts, 4);
    let (manifest, _) = build_manifest(tmp.path(), Split::Train, 1).unwrap();
    assert_eq!(class_counts(&manifest)[ClassLabel::Worms], 158);
}

#[test]
fn empty_class_directories_give_an_empty_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    common::class_tree(tmp.path(), &[0; 10], 4);
    let (manifest, _) = build_manifest(tmp.path(), Split::Validation, 0).unwrap();
    assert!(manifest.records.is_empty());
}

#[test]
fn directory_names_match_case_insensitively() {
    let tmp = tempfile::tempdir().unwrap();
    for label in ClassLabel::ALL {
        let name = label.name().to_uppercase().replace(' ', "_");
        fs::create_dir_all(tmp.path().join(name)).unwrap();
    }
    assert!(build_manifest(tmp.path(), Split::Train, 0).is_ok());
}

#[test]
fn missing_classes_are_listed() {
    let tmp = tempfile::tempdir().unwrap();
    common::class_tree(tmp.path(), &[1; 10], 4);
    fs::remove_dir_all(tmp.path().join("Worms")).unwrap();
    fs::remove_dir_all(tmp.path().join("Foreign Body")).unwrap();
    match build_manifest(tmp.path(), Split::Train, 0) {
        Err(Error::MissingClasses { missing, .. }) => {
            assert_eq!(missing, vec!["Foreign Body".to_string(), "Worms".to_string()])
        }
        other => panic!("expected MissingClasses, got {other:?}"),
    }
}

#[test]
fn unreadable_files_are_skipped_and_reported() {
    let tmp = tempfile::tempdir().unwrap();
    common::class_tree(tmp.path(), &[2; 10], 4);
    fs::write(tmp.path().join("Polyp").join("broken.png"), b"not an image").unwrap();
    let (manifest, skipped) = build_manifest(tmp.path(), Split::Train, 0).unwrap();
    assert_eq!(manifest.records.len(), 20);
    assert_eq!(skipped.len(), 1);
    assert!(skipped.render().contains("broken.png"));
}

#[test]
fn ordering_is_class_then_file_name() {
    let tmp = tempfile::tempdir().unwrap();
    common::class_tree(tmp.path(), &[3; 10], 4);
    let (manifest, _) = build_manifest(tmp.path(), Split::Train, 0).unwrap();
    let keys: Vec<(usize, String)> = manifest
        .records
        .iter()
        .map(|r| (r.label.index(), r.image_ref.rsplit('/').next().unwrap().to_string()))
        .collect();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);
}

#[test]
fn jsonl_round_trip_preserves_order_and_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    common::class_tree(tmp.path(), &[2; 10], 4);
    let (manifest, _) = build_manifest(tmp.path(), Split::Train, 9).unwrap();
    let path = tmp.path().join("m.jsonl");
    manifest.write_jsonl(&path).unwrap();
    let back = DatasetManifest::read_jsonl(&path, Split::Train, 9).unwrap();
    assert_eq!(back.records, manifest.records);
    assert_eq!(back.to_jsonl(), manifest.to_jsonl());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn item_seeds_depend_only_on_master_seed_and_index(seed in any::<u64>(), n in 1usize..40) {
        let mut a = DatasetManifest::new(Split::Train, seed);
        for i in 0..n {
            a.records.push(capsnet::manifest::ManifestRecord {
                image_ref: format!("x/{i}.png"),
                label: ClassLabel::ALL[i % 10],
                origin: Origin::Original,
                source_ref: None,
                item_seed: 0,
            });
        }
        let mut b = a.clone();
        for r in &mut b.records {
            r.image_ref.push('z');
        }
        a.assign_item_seeds();
        b.assign_item_seeds();
        let sa: Vec<u64> = a.records.iter().map(|r| r.item_seed).collect();
        let sb: Vec<u64> = b.records.iter().map(|r| r.item_seed).collect();
        prop_assert_eq!(sa, sb);
        let text = a.to_jsonl();
        let back = DatasetManifest::from_jsonl(&text, Split::Train, seed).unwrap();
        prop_assert_eq!(back.records, a.records);
    }
}
