//! Per-class balancing: downsample large classes, synthesize augmented images for small ones.

pub mod augment;

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use augment::{apply_augmentation, AugOp, AugmentationSpec, Range};

use crate::error::{Error, Result};
use crate::labels::{ClassLabel, NUM_CLASSES};
use crate::manifest::{class_counts, ClassCounts, DatasetManifest, ManifestRecord, Origin};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BalancingStrategy {
    /// Every class ends at exactly `target` records.
    FixedTarget {
        #[serde(default = "default_target")]
        target: usize,
    },
    /// Every class grows to `multiplier` times its size, capped at `cap`.
    MultiplierCap {
        #[serde(default = "default_multiplier")]
        multiplier: usize,
        #[serde(default = "default_cap")]
        cap: usize,
    },
}

fn default_target() -> usize {
    1500
}
fn default_multiplier() -> usize {
    8
}
fn default_cap() -> usize {
    5000
}

impl Default for BalancingStrategy {
    fn default() -> Self {
        BalancingStrategy::FixedTarget {
            target: default_target(),
        }
    }
}

impl BalancingStrategy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            BalancingStrategy::FixedTarget { target } if target == 0 => {
                Err(Error::Config("balance.target must be > 0".into()))
            }
            BalancingStrategy::MultiplierCap { multiplier, .. } if multiplier == 0 => {
                Err(Error::Config("balance.multiplier must be >= 1".into()))
            }
            BalancingStrategy::MultiplierCap { cap, .. } if cap == 0 => {
                Err(Error::Config("balance.cap must be > 0".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassPlan {
    pub label: ClassLabel,
    pub original: usize,
    pub keep: usize,
    pub synthetic: usize,
    #[serde(rename = "final")]
    pub final_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BalancingPlan {
    pub strategy: BalancingStrategy,
    pub classes: Vec<ClassPlan>,
}

impl BalancingPlan {
    pub fn class(&self, label: ClassLabel) -> &ClassPlan {
        &self.classes[label.index()]
    }

    pub fn final_counts(&self) -> ClassCounts {
        let mut counts = ClassCounts::default();
        for c in &self.classes {
            counts[c.label] = c.final_count;
        }
        counts
    }

    pub fn original_counts(&self) -> ClassCounts {
        let mut counts = ClassCounts::default();
        for c in &self.classes {
            counts[c.label] = c.original;
        }
        counts
    }

    pub fn render_table(&self) -> String {
        let mut out = format!(
            "{:<18} {:>9} {:>7} {:>9} {:>7}\n",
            "class", "original", "keep", "synthetic", "final"
        );
        for c in &self.classes {
            out.push_str(&format!(
                "{:<18} {:>9} {:>7} {:>9} {:>7}\n",
                c.label.name(),
                c.original,
                c.keep,
                c.synthetic,
                c.final_count
            ));
        }
        out
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    fn check(&self) -> Result<()> {
        if self.classes.len() != NUM_CLASSES
            || self
                .classes
                .iter()
                .enumerate()
                .any(|(i, c)| c.label.index() != i)
        {
            return Err(Error::Data("plan must list the ten classes in index order".into()));
        }
        for c in &self.classes {
            if c.keep > c.original || c.keep + c.synthetic != c.final_count {
                return Err(Error::Data(format!("inconsistent plan row for {}", c.label)));
            }
        }
        Ok(())
    }
}

/// Pure per-class arithmetic. Classes with no records get an all-zero row and a warning.
pub fn plan_balance(counts: &ClassCounts, strategy: BalancingStrategy) -> BalancingPlan {
    let classes = counts
        .iter()
        .map(|(label, original)| {
            if original == 0 {
                log::warn!("class {label} has no records; nothing to keep or synthesize");
                return ClassPlan {
                    label,
                    original,
                    keep: 0,
                    synthetic: 0,
                    final_count: 0,
                };
            }
            let final_count = match strategy {
                BalancingStrategy::FixedTarget { target } => target,
                BalancingStrategy::MultiplierCap { multiplier, cap } => {
                    multiplier.saturating_mul(original).min(cap)
                }
            };
            let keep = original.min(final_count);
            ClassPlan {
                label,
                original,
                keep,
                synthetic: final_count - keep,
                final_count,
            }
        })
        .collect();
    BalancingPlan { strategy, classes }
}

/// A source that could not be decoded and was replaced by the next one in rotation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Substitution {
    pub unreadable: String,
    pub reason: String,
}

#[derive(Debug)]
pub struct BalanceOutcome {
    /// Balanced manifest; synthetic `image_ref`s are relative to the output directory.
    pub manifest: DatasetManifest,
    pub substitutions: Vec<Substitution>,
}

struct SynthJob {
    label: ClassLabel,
    source_index: usize,
    image_ref: String,
    record_index: usize,
}

/// Materializes `plan` from `manifest`, writing synthetic PNGs under
/// `out_dir/<class_name>/<source_stem>_aug<k>.png`.
///
/// The result is a function of the inputs and `master_seed` only; `workers`
/// sets the size of the synthesis pool and never changes the output.
pub fn execute_balance(
    manifest: &DatasetManifest,
    plan: &BalancingPlan,
    spec: &AugmentationSpec,
    master_seed: u64,
    out_dir: &Path,
    workers: usize,
) -> Result<BalanceOutcome> {
    plan.check()?;
    spec.validate()?;
    let counts = class_counts(manifest);
    if counts != plan.original_counts() {
        return Err(Error::Data(format!(
            "plan was not derived from this manifest (plan originals {:?}, manifest {:?})",
            plan.original_counts().0,
            counts.0
        )));
    }
    let needs_synthesis = plan.classes.iter().any(|c| c.synthetic > 0);
    if needs_synthesis && !spec.any_enabled() {
        return Err(Error::Config(
            "augmentation spec has no enabled op but the plan requires synthetic images".into(),
        ));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;

    let mut records: Vec<ManifestRecord> = Vec::with_capacity(plan.final_counts().total());
    let mut jobs: Vec<SynthJob> = Vec::new();
    let mut sources: HashMap<ClassLabel, Vec<(String, image::RgbImage)>> = HashMap::new();
    let mut substitutions = Vec::new();

    for class_plan in &plan.classes {
        let label = class_plan.label;
        let members: Vec<&ManifestRecord> =
            manifest.records.iter().filter(|r| r.label == label).collect();

        if class_plan.keep < members.len() {
            let mut order: Vec<usize> = (0..members.len()).collect();
            let mut rng = seed::rng(seed::derive(
                master_seed,
                seed::name_key("sample") ^ label.index() as u64,
            ));
            order.shuffle(&mut rng);
            let mut chosen: Vec<usize> = order[..class_plan.keep].to_vec();
            chosen.sort_unstable();
            for i in chosen {
                let mut record = members[i].clone();
                if record.origin == Origin::Original {
                    record.origin = Origin::Sampled;
                }
                record.image_ref = absolute_ref(manifest, &record.image_ref);
                records.push(record);
            }
        } else {
            for r in &members {
                let mut record = (*r).clone();
                record.image_ref = absolute_ref(manifest, &record.image_ref);
                if let Some(src) = &record.source_ref {
                    record.source_ref = Some(absolute_ref(manifest, src));
                }
                records.push(record);
            }
        }

        if class_plan.synthetic == 0 {
            continue;
        }
        let originals: Vec<&ManifestRecord> = members
            .iter()
            .copied()
            .filter(|r| r.origin != Origin::Synthetic)
            .collect();
        let loaded: Vec<(String, std::result::Result<image::RgbImage, String>)> = pool.install(|| {
            originals
                .par_iter()
                .map(|r| {
                    let path = manifest.resolve(&r.image_ref);
                    let img = image::open(&path)
                        .map(|i| i.to_rgb8())
                        .map_err(|e| e.to_string());
                    (absolute_ref(manifest, &r.image_ref), img)
                })
                .collect()
        });
        let mut readable = Vec::new();
        for (image_ref, result) in loaded {
            match result {
                Ok(img) => readable.push((image_ref, img)),
                Err(reason) => {
                    log::warn!("source {image_ref} unreadable ({reason}); substituting next source");
                    substitutions.push(Substitution {
                        unreadable: image_ref,
                        reason,
                    });
                }
            }
        }
        if readable.is_empty() {
            return Err(Error::Data(format!(
                "class {label} needs {} synthetic images but has no readable source",
                class_plan.synthetic
            )));
        }

        let stems = unique_stems(&readable);
        let mut per_source = vec![0usize; readable.len()];
        let class_dir = out_dir.join(label.name());
        fs::create_dir_all(&class_dir).map_err(|e| Error::io(&class_dir, e))?;
        for j in 0..class_plan.synthetic {
            let source_index = j % readable.len();
            let k = per_source[source_index];
            per_source[source_index] += 1;
            let image_ref = format!("{}/{}_aug{}.png", label.name(), stems[source_index], k);
            jobs.push(SynthJob {
                label,
                source_index,
                image_ref: image_ref.clone(),
                record_index: records.len(),
            });
            records.push(ManifestRecord {
                image_ref,
                label,
                origin: Origin::Synthetic,
                source_ref: Some(readable[source_index].0.clone()),
                item_seed: 0,
            });
        }
        sources.insert(label, readable);
    }

    let mut balanced = DatasetManifest {
        records,
        split: manifest.split,
        master_seed,
        base_dir: out_dir.to_path_buf(),
    };
    balanced.assign_item_seeds();

    pool.install(|| {
        jobs.par_iter().try_for_each(|job| -> Result<()> {
            let source = &sources[&job.label][job.source_index].1;
            let seed_value = balanced.records[job.record_index].item_seed;
            let augmented = apply_augmentation(source, spec, seed_value)?;
            let path = out_dir.join(&job.image_ref);
            augmented
                .save_with_format(&path, image::ImageFormat::Png)
                .map_err(|e| Error::Image { path, source: e })
        })
    })?;

    balanced.validate()?;
    Ok(BalanceOutcome {
        manifest: balanced,
        substitutions,
    })
}

fn absolute_ref(manifest: &DatasetManifest, image_ref: &str) -> String {
    manifest.resolve(image_ref).to_string_lossy().into_owned()
}

/// File stems per source; colliding stems fall back to the full file name with dots replaced.
fn unique_stems(sources: &[(String, image::RgbImage)]) -> Vec<String> {
    let stem_of = |r: &str| {
        Path::new(r)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "image".to_string())
    };
    let mut freq: HashMap<String, usize> = HashMap::new();
    for (r, _) in sources {
        *freq.entry(stem_of(r)).or_default() += 1;
    }
    sources
        .iter()
        .map(|(r, _)| {
            let stem = stem_of(r);
            if freq[&stem] > 1 {
                Path::new(r)
                    .file_name()
                    .map(|s| s.to_string_lossy().replace('.', "_"))
                    .unwrap_or(stem)
            } else {
                stem
            }
        })
        .collect()
}
