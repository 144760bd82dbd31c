//! Corpus manifests and in-memory utterance records.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::analysis::PhoneAlignment;
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::numerics::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Gender {
    #[serde(rename = "M")]
    Male,
    #[serde(rename = "F")]
    Female,
}

impl Gender {
    pub const ALL: [Gender; 2] = [Gender::Male, Gender::Female];

    pub fn as_str(&self) -> &'static str {
        match self {
            Gender::Male => "M",
            Gender::Female => "F",
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Gender::Male => "male",
            Gender::Female => "female",
        }
    }

    /// The 0/1 value appended to frames when gender is a model input.
    pub fn indicator(&self) -> f64 {
        match self {
            Gender::Male => 1.0,
            Gender::Female => 0.0,
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Gender {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "M" | "m" | "male" => Ok(Gender::Male),
            "F" | "f" | "female" => Ok(Gender::Female),
            _ => Err(Error::invalid(format!("unknown gender '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::invalid(format!("unknown split '{s}'"))),
        }
    }
}

/// One manifest line. Paths are stored as written; resolve them against the
/// manifest's directory with [`Manifest::resolve`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub path: String,
    pub speaker_id: String,
    pub gender: Gender,
    pub height_cm: f64,
    pub age_years: f64,
    pub split: Split,
    #[serde(default, deserialize_with = "empty_as_none")]
    pub alignment_path: Option<String>,
}

fn empty_as_none<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Option<String>, D::Error> {
    let s: Option<String> = Option::deserialize(d)?;
    Ok(s.filter(|s| !s.is_empty()))
}

impl ManifestRow {
    /// Utterance id: the audio path without its extension.
    pub fn utterance_id(&self) -> String {
        let p = Path::new(&self.path);
        p.with_extension("").to_string_lossy().replace(['/', '\\'], "_")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub root: PathBuf,
    pub rows: Vec<ManifestRow>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .delimiter(b'\t')
            .from_path(path)
            .map_err(|e| Error::format("manifest", format!("{}: {e}", path.display())))?;
        let mut rows = Vec::new();
        for (i, rec) in reader.deserialize::<ManifestRow>().enumerate() {
            let row = rec.map_err(|e| Error::format("manifest", format!("{} line {}: {e}", path.display(), i + 2)))?;
            rows.push(row);
        }
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Manifest { root, rows })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .delimiter(b'\t')
            .from_path(path)
            .map_err(|e| Error::format("manifest", format!("{}: {e}", path.display())))?;
        for row in &self.rows {
            w.serialize(row)
                .map_err(|e| Error::format("manifest", e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        let p = Path::new(rel);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestRow> {
        self.rows.iter().filter(move |r| r.split == split)
    }

    /// Errors if a speaker appears in more than one split, or with
    /// inconsistent labels.
    pub fn check_speakers(&self) -> Result<()> {
        let mut seen: std::collections::BTreeMap<&str, &ManifestRow> = Default::default();
        for row in &self.rows {
            if let Some(prev) = seen.insert(&row.speaker_id, row) {
                if prev.split != row.split {
                    return Err(Error::invalid(format!(
                        "speaker {} appears in both {} and {}",
                        row.speaker_id, prev.split, row.split
                    )));
                }
                if prev.gender != row.gender || prev.height_cm != row.height_cm || prev.age_years != row.age_years {
                    return Err(Error::invalid(format!("speaker {} has inconsistent labels", row.speaker_id)));
                }
            }
        }
        Ok(())
    }
}

/// Features and labels for one utterance (or one speed-perturbed copy).
#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceRecord {
    pub id: String,
    pub speaker_id: String,
    pub gender: Gender,
    pub height_cm: f64,
    pub age_years: f64,
    /// Normalized acoustic features, `T x 83`.
    pub features: FeatureMatrix,
    /// Speed factor the audio was perturbed by; 1.0 for the original.
    pub speed: f64,
    pub alignment: Option<PhoneAlignment>,
}

impl UtteranceRecord {
    /// The model input: the features, optionally with the gender indicator
    /// appended to every frame.
    pub fn model_input(&self, gender_feature: bool) -> Matrix {
        with_gender_column(&self.features.values, gender_feature.then_some(self.gender))
    }
}

pub fn with_gender_column(x: &Matrix, gender: Option<Gender>) -> Matrix {
    match gender {
        None => x.clone(),
        Some(g) => {
            let f = x.cols();
            Matrix::from_fn(x.rows(), f + 1, |r, c| if c < f { x.get(r, c) } else { g.indicator() })
        }
    }
}

/// Errors if any speaker occurs in both sets.
pub fn check_disjoint_speakers(a: &[UtteranceRecord], b: &[UtteranceRecord]) -> Result<()> {
    let left: BTreeSet<&str> = a.iter().map(|u| u.speaker_id.as_str()).collect();
    if let Some(u) = b.iter().find(|u| left.contains(u.speaker_id.as_str())) {
        return Err(Error::invalid(format!("speaker {} occurs in both splits", u.speaker_id)));
    }
    Ok(())
}
