//! Dataset manifests: the typed, countable listing of a class-foldered image tree.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::ops::{Index, IndexMut};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{ClassLabel, NUM_CLASSES};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Original,
    Sampled,
    Synthetic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
}

impl Split {
    pub(crate) fn seed_key(self) -> u64 {
        match self {
            Split::Train => seed::name_key("train"),
            Split::Validation => seed::name_key("validation"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRecord {
    pub image_ref: String,
    pub label: ClassLabel,
    pub origin: Origin,
    /// The original image a synthetic record was derived from.
    pub source_ref: Option<String>,
    pub item_seed: u64,
}

/// On-disk line layout. Field names and order are part of the file format.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordLine {
    image_ref: String,
    label_index: usize,
    label_name: String,
    origin: Origin,
    source_ref: Option<String>,
    item_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub records: Vec<ManifestRecord>,
    pub split: Split,
    pub master_seed: u64,
    /// Directory that relative `image_ref`s resolve against. Not serialized.
    pub base_dir: PathBuf,
}

/// Per-class record counts, indexed by [`ClassLabel`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClassCounts(pub [usize; NUM_CLASSES]);

impl ClassCounts {
    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ClassLabel, usize)> + '_ {
        ClassLabel::ALL.into_iter().zip(self.0.iter().copied())
    }
}

impl Index<ClassLabel> for ClassCounts {
    type Output = usize;
    fn index(&self, label: ClassLabel) -> &usize {
        &self.0[label.index()]
    }
}

impl IndexMut<ClassLabel> for ClassCounts {
    fn index_mut(&mut self, label: ClassLabel) -> &mut usize {
        &mut self.0[label.index()]
    }
}

impl Serialize for ClassCounts {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut map = serializer.serialize_map(Some(NUM_CLASSES))?;
        for (label, count) in self.iter() {
            map.serialize_entry(label.name(), &count)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for ClassCounts {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let map = BTreeMap::<ClassLabel, usize>::deserialize(deserializer)?;
        let mut counts = ClassCounts::default();
        for (label, count) in map {
            counts[label] = count;
        }
        Ok(counts)
    }
}

/// Files that were found but not admitted into the manifest.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SkipReport {
    pub skipped: Vec<(PathBuf, String)>,
}

impl SkipReport {
    pub fn len(&self) -> usize {
        self.skipped.len()
    }

    pub fn is_empty(&self) -> bool {
        self.skipped.is_empty()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (path, reason) in &self.skipped {
            out.push_str(&format!("{}\t{}\n", path.display(), reason));
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.render()).map_err(|e| Error::io(path, e))
    }
}

/// Scans `root_dir`, which must hold one subdirectory per class.
///
/// Records are ordered by (class index, file name) before seeds are assigned,
/// so the result does not depend on scan parallelism.
pub fn build_manifest(
    root_dir: &Path,
    split: Split,
    master_seed: u64,
) -> Result<(DatasetManifest, SkipReport)> {
    let root = fs::canonicalize(root_dir).map_err(|e| Error::io(root_dir, e))?;
    let mut class_dirs: BTreeMap<ClassLabel, PathBuf> = BTreeMap::new();
    let entries = fs::read_dir(&root).map_err(|e| Error::io(&root, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(&root, e))?;
        let path = entry.path();
        if !path.is_dir() {
            continue;
        }
        let name = entry.file_name().to_string_lossy().into_owned();
        match ClassLabel::from_name(&name) {
            Some(label) => {
                if let Some(previous) = class_dirs.insert(label, path.clone()) {
                    return Err(Error::Data(format!(
                        "directories {} and {} both map to class {label}",
                        previous.display(),
                        path.display()
                    )));
                }
            }
            None => log::warn!("ignoring non-class directory {}", path.display()),
        }
    }
    let missing: Vec<String> = ClassLabel::ALL
        .iter()
        .filter(|label| !class_dirs.contains_key(label))
        .map(|label| label.name().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingClasses { root, missing });
    }

    let scanned: Vec<(ClassLabel, Vec<PathBuf>, Vec<(PathBuf, String)>)> = class_dirs
        .into_par_iter()
        .map(|(label, dir)| scan_class_dir(&dir).map(|(ok, skipped)| (label, ok, skipped)))
        .collect::<Result<_>>()?;

    let mut records = Vec::new();
    let mut report = SkipReport::default();
    for (label, files, skipped) in scanned {
        for path in files {
            records.push(ManifestRecord {
                image_ref: path.to_string_lossy().into_owned(),
                label,
                origin: Origin::Original,
                source_ref: None,
                item_seed: 0,
            });
        }
        report.skipped.extend(skipped);
    }
    for (path, reason) in &report.skipped {
        log::warn!("skipping {}: {reason}", path.display());
    }
    let mut manifest = DatasetManifest {
        records,
        split,
        master_seed,
        base_dir: PathBuf::new(),
    };
    manifest.assign_item_seeds();
    Ok((manifest, report))
}

type ScanResult = (Vec<PathBuf>, Vec<(PathBuf, String)>);

fn scan_class_dir(dir: &Path) -> Result<ScanResult> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_file() {
            files.push(path);
        }
    }
    files.sort_by(|a, b| a.file_name().cmp(&b.file_name()));

    let mut ok = Vec::new();
    let mut skipped = Vec::new();
    for path in files {
        match probe_image(&path) {
            Ok(()) => ok.push(path),
            Err(reason) => skipped.push((path, reason)),
        }
    }
    Ok((ok, skipped))
}

fn probe_image(path: &Path) -> std::result::Result<(), String> {
    let reader = image::ImageReader::open(path)
        .map_err(|e| e.to_string())?
        .with_guessed_format()
        .map_err(|e| e.to_string())?;
    if reader.format().is_none() {
        return Err("not a recognised image format".to_string());
    }
    let (width, height) = reader.into_dimensions().map_err(|e| e.to_string())?;
    if width == 0 || height == 0 {
        return Err("image has zero size".to_string());
    }
    Ok(())
}

pub fn class_counts(manifest: &DatasetManifest) -> ClassCounts {
    let mut counts = ClassCounts::default();
    for record in &manifest.records {
        counts[record.label] += 1;
    }
    counts
}

impl DatasetManifest {
    pub fn new(split: Split, master_seed: u64) -> Self {
        DatasetManifest {
            records: Vec::new(),
            split,
            master_seed,
            base_dir: PathBuf::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Re-derives every record's seed from the master seed and its position.
    pub fn assign_item_seeds(&mut self) {
        let key = self.split.seed_key();
        for (index, record) in self.records.iter_mut().enumerate() {
            record.item_seed = seed::item_seed(self.master_seed, key, index);
        }
    }

    pub fn resolve(&self, image_ref: &str) -> PathBuf {
        let path = Path::new(image_ref);
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    /// Checks the record-level invariants.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for record in &self.records {
            let synthetic = record.origin == Origin::Synthetic;
            if synthetic != record.source_ref.is_some() {
                return Err(Error::Data(format!(
                    "record {} has origin {:?} but source_ref {:?}",
                    record.image_ref, record.origin, record.source_ref
                )));
            }
            if !seen.insert((record.image_ref.as_str(), record.origin)) {
                return Err(Error::Data(format!(
                    "duplicate record ({}, {:?})",
                    record.image_ref, record.origin
                )));
            }
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for record in &self.records {
            let line = RecordLine {
                image_ref: record.image_ref.clone(),
                label_index: record.label.index(),
                label_name: record.label.name().to_string(),
                origin: record.origin,
                source_ref: record.source_ref.clone(),
                item_seed: record.item_seed,
            };
            // Serializing a plain struct of strings and integers cannot fail.
            out.push_str(&serde_json::to_string(&line).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut writer = BufWriter::new(file);
        writer
            .write_all(self.to_jsonl().as_bytes())
            .and_then(|_| writer.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn from_jsonl(text: &str, split: Split, master_seed: u64) -> Result<Self> {
        let mut records = Vec::new();
        for (number, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: RecordLine = serde_json::from_str(line).map_err(|e| {
                Error::Data(format!("manifest line {}: {e}", number + 1))
            })?;
            let label = ClassLabel::from_index(parsed.label_index)?;
            if ClassLabel::from_name(&parsed.label_name) != Some(label) {
                return Err(Error::Data(format!(
                    "manifest line {}: label_index {} does not match label_name `{}`",
                    number + 1,
                    parsed.label_index,
                    parsed.label_name
                )));
            }
            records.push(ManifestRecord {
                image_ref: parsed.image_ref,
                label,
                origin: parsed.origin,
                source_ref: parsed.source_ref,
                item_seed: parsed.item_seed,
            });
        }
        let manifest = DatasetManifest {
            records,
            split,
            master_seed,
            base_dir: PathBuf::new(),
        };
        manifest.validate()?;
        Ok(manifest)
    }

    /// Reads a manifest file; relative image references resolve against its directory.
    pub fn read_jsonl(path: &Path, split: Split, master_seed: u64) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut text = String::new();
        for line in BufReader::new(file).lines() {
            text.push_str(&line.map_err(|e| Error::io(path, e))?);
            text.push('\n');
        }
        let mut manifest = Self::from_jsonl(&text, split, master_seed)?;
        manifest.base_dir = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default();
        Ok(manifest)
    }
}
