//! Run configuration: a sectioned TOML file layered over defaults, with
//! `section.key=value` overrides from the command line on top.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use xattn::datagen::SyntheticSpec;
use xattn::eval::GenderHandling;
use xattn::features::{CmvnMode, FeatureConfig};
use xattn::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Where `synth-data` writes audio, alignments, and the manifest.
    pub corpus_dir: PathBuf,
    pub manifest: PathBuf,
    pub cache_dir: PathBuf,
    /// Checkpoint, history, tables, and run metadata.
    pub run_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            corpus_dir: "work/corpus".into(),
            manifest: "work/corpus/manifest.tsv".into(),
            cache_dir: "work/cache".into(),
            run_dir: "work/run".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureSection {
    pub window_ms: f64,
    pub hop_ms: f64,
    pub n_mels: usize,
    pub cmvn: CmvnMode,
    /// Cache and train on 0.9x and 1.1x copies of training utterances.
    pub speed_perturb: bool,
}

impl Default for FeatureSection {
    fn default() -> Self {
        let f = FeatureConfig::default();
        FeatureSection {
            window_ms: f.window_ms,
            hop_ms: f.hop_ms,
            n_mels: f.n_mels,
            cmvn: CmvnMode::default(),
            speed_perturb: true,
        }
    }
}

impl FeatureSection {
    pub fn extraction(&self) -> FeatureConfig {
        FeatureConfig {
            window_ms: self.window_ms,
            hop_ms: self.hop_ms,
            n_mels: self.n_mels,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub gender_handling: GenderHandling,
    /// Phones listed at each end of the attention ranking.
    pub top_k: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            gender_handling: GenderHandling::None,
            top_k: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub synth: SyntheticSpec,
    pub features: FeatureSection,
    pub train: TrainConfig,
    pub eval: EvalSection,
}

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

fn parse_value(raw: &str) -> toml::Value {
    // Anything that is not a TOML literal is taken as a bare string.
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Applies one `section.key=value` override to a config table.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), ConfigError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| ConfigError(format!("override '{assignment}' is not of the form key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(ConfigError(format!("override key '{key}' is malformed")));
    }
    let (last, parents) = parts.split_last().expect("split yields at least one part");
    let mut node = table;
    for p in parents {
        let entry = node
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| ConfigError(format!("override '{key}': '{p}' is not a section")))?;
    }
    node.insert(last.to_string(), parse_value(raw.trim()));
    Ok(())
}

impl RunConfig {
    /// Defaults, then `file`, then `overrides`, then validation.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut table = match file {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
                toml::from_str::<toml::Table>(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError(format!("configuration: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let wrap = |section: &str, r: xattn::Result<()>| r.map_err(|e| ConfigError(format!("[{section}] {e}")));
        wrap("synth", self.synth.validate())?;
        wrap("train", self.train.validate())?;
        if !(self.features.window_ms > 0.0 && self.features.hop_ms > 0.0) || self.features.n_mels == 0 {
            return Err(ConfigError("[features] window_ms, hop_ms, and n_mels must be positive".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_take_precedence_over_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        fs::write(&path, "[train]\nn_units = 8\nseed = 3\n").unwrap();
        let cfg = RunConfig::load(Some(&path), &["train.seed=5".into(), "features.cmvn=corpus".into()]).unwrap();
        assert_eq!(cfg.train.n_units, 8);
        assert_eq!(cfg.train.seed, 5);
        assert_eq!(cfg.features.cmvn, CmvnMode::Corpus);
        assert_eq!(cfg.train.batch_size, TrainConfig::default().batch_size);
    }

    #[test]
    fn nested_and_array_overrides() {
        let cfg = RunConfig::load(
            None,
            &["train.spec_augment.n_time_masks=0".into(), "train.a_grid=[0.5]".into()],
        )
        .unwrap();
        assert_eq!(cfg.train.spec_augment.n_time_masks, 0);
        assert_eq!(cfg.train.a_grid, vec![0.5]);
    }

    #[test]
    fn parse_errors_carry_a_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        fs::write(&path, "[train]\nn_units = 8\nseed = = 3\n").unwrap();
        let err = RunConfig::load(Some(&path), &[]).unwrap_err();
        assert!(err.0.contains("line 3"), "{}", err.0);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(RunConfig::load(None, &["train.n_unit=3".into()]).is_err());
        assert!(RunConfig::load(None, &["train.dropout=1.5".into()]).is_err());
        assert!(RunConfig::load(None, &["seed".into()]).is_err());
    }

    #[test]
    fn snapshot_roundtrips() {
        let cfg = RunConfig::load(None, &["train.seed=9".into()]).unwrap();
        let back: RunConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }
}
