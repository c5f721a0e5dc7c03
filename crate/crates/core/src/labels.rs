//! The ten abnormality classes and their fixed index order.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub const NUM_CLASSES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ClassLabel {
    Angioectasia = 0,
    Bleeding = 1,
    Erosion = 2,
    Erythema = 3,
    ForeignBody = 4,
    Lymphangiectasia = 5,
    Normal = 6,
    Polyp = 7,
    Ulcer = 8,
    Worms = 9,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; NUM_CLASSES] = [
        ClassLabel::Angioectasia,
        ClassLabel::Bleeding,
        ClassLabel::Erosion,
        ClassLabel::Erythema,
        ClassLabel::ForeignBody,
        ClassLabel::Lymphangiectasia,
        ClassLabel::Normal,
        ClassLabel::Polyp,
        ClassLabel::Ulcer,
        ClassLabel::Worms,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            ClassLabel::Angioectasia => "Angioectasia",
            ClassLabel::Bleeding => "Bleeding",
            ClassLabel::Erosion => "Erosion",
            ClassLabel::Erythema => "Erythema",
            ClassLabel::ForeignBody => "Foreign Body",
            ClassLabel::Lymphangiectasia => "Lymphangiectasia",
            ClassLabel::Normal => "Normal",
            ClassLabel::Polyp => "Polyp",
            ClassLabel::Ulcer => "Ulcer",
            ClassLabel::Worms => "Worms",
        }
    }

    pub fn from_index(index: usize) -> Result<Self> {
        Self::ALL.get(index).copied().ok_or_else(|| {
            Error::InvalidInput(format!(
                "class index {index} out of range 0..{NUM_CLASSES}"
            ))
        })
    }

    /// Matches a folder or file name against the canonical class names after
    /// trimming, lowercasing and collapsing runs of spaces, underscores and hyphens.
    pub fn from_name(name: &str) -> Option<Self> {
        let wanted = normalize_name(name);
        Self::ALL
            .into_iter()
            .find(|label| normalize_name(label.name()) == wanted)
    }
}

pub fn normalize_name(name: &str) -> String {
    let mut out = String::with_capacity(name.len());
    let mut pending_space = false;
    for ch in name.trim().chars() {
        if ch == ' ' || ch == '_' || ch == '-' {
            pending_space = true;
            continue;
        }
        if pending_space && !out.is_empty() {
            out.push(' ');
        }
        pending_space = false;
        out.extend(ch.to_lowercase());
    }
    out
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for ClassLabel {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for ClassLabel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let name = String::deserialize(deserializer)?;
        ClassLabel::from_name(&name)
            .ok_or_else(|| serde::de::Error::custom(format!("unknown class name `{name}`")))
    }
}
