//! Error metrics and the per-gender comparison table.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Gender, UtteranceRecord};
use crate::error::{Error, Result};
use crate::model::Technique;

fn check_pair(y: &[f64], yhat: &[f64]) -> Result<()> {
    if y.len() != yhat.len() {
        return Err(Error::invalid("target and prediction lengths differ"));
    }
    if y.is_empty() {
        return Err(Error::invalid("metric over an empty set"));
    }
    Ok(())
}

pub fn rmse(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_pair(y, yhat)?;
    let ss: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((ss / y.len() as f64).sqrt())
}

pub fn mae(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_pair(y, yhat)?;
    Ok(y.iter().zip(yhat).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64)
}

/// Population standard deviation.
pub fn std_dev(y: &[f64]) -> f64 {
    if y.is_empty() {
        return 0.0;
    }
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    (y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenderHandling {
    #[default]
    None,
    /// Gender appended to every input frame as a 0/1 value.
    BinaryFeature,
    /// One model per gender.
    SeparateModels,
}

impl GenderHandling {
    pub fn as_str(&self) -> &'static str {
        match self {
            GenderHandling::None => "none",
            GenderHandling::BinaryFeature => "binary_feature",
            GenderHandling::SeparateModels => "separate_models",
        }
    }
}

impl std::str::FromStr for GenderHandling {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(GenderHandling::None),
            "binary_feature" => Ok(GenderHandling::BinaryFeature),
            "separate_models" => Ok(GenderHandling::SeparateModels),
            _ => Err(Error::invalid(format!("unknown gender handling '{s}'"))),
        }
    }
}

/// Which speakers a row covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenderGroup {
    All,
    Male,
    Female,
}

impl GenderGroup {
    pub fn as_str(&self) -> &'static str {
        match self {
            GenderGroup::All => "all",
            GenderGroup::Male => "male",
            GenderGroup::Female => "female",
        }
    }

    fn contains(&self, g: Gender) -> bool {
        match self {
            GenderGroup::All => true,
            GenderGroup::Male => g == Gender::Male,
            GenderGroup::Female => g == Gender::Female,
        }
    }
}

/// The model setting a row describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Setting {
    pub technique: Technique,
    pub multitask: bool,
    pub gender_handling: GenderHandling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub technique: Technique,
    pub multitask: bool,
    pub gender_handling: GenderHandling,
    pub gender: GenderGroup,
    pub n_utterances: usize,
    pub rmse_height_cm: f64,
    pub mae_height_cm: f64,
    pub rmse_age_yr: f64,
    pub mae_age_yr: f64,
}

/// Anything that predicts `(height_cm, age_years)` for an utterance.
pub trait Regressor: Sync {
    fn predict(&self, utt: &UtteranceRecord) -> Result<(f64, f64)>;
}

/// Returns the true labels.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleRegressor;

impl Regressor for OracleRegressor {
    fn predict(&self, utt: &UtteranceRecord) -> Result<(f64, f64)> {
        Ok((utt.height_cm, utt.age_years))
    }
}

/// Predicts fixed values, usually the training-set means.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantRegressor {
    pub height_cm: f64,
    pub age_years: f64,
}

impl ConstantRegressor {
    pub fn mean_of(set: &[UtteranceRecord]) -> Result<Self> {
        if set.is_empty() {
            return Err(Error::invalid("mean predictor of an empty set"));
        }
        let n = set.len() as f64;
        Ok(ConstantRegressor {
            height_cm: set.iter().map(|u| u.height_cm).sum::<f64>() / n,
            age_years: set.iter().map(|u| u.age_years).sum::<f64>() / n,
        })
    }
}

impl Regressor for ConstantRegressor {
    fn predict(&self, _: &UtteranceRecord) -> Result<(f64, f64)> {
        Ok((self.height_cm, self.age_years))
    }
}

/// Per-utterance predictions alongside the labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub gender: Vec<Gender>,
    pub height: Vec<f64>,
    pub age: Vec<f64>,
    pub pred_height: Vec<f64>,
    pub pred_age: Vec<f64>,
}

pub fn predict_all(model: &dyn Regressor, set: &[UtteranceRecord]) -> Result<Predictions> {
    let preds: Vec<(f64, f64)> = set.par_iter().map(|u| model.predict(u)).collect::<Result<_>>()?;
    Ok(Predictions {
        gender: set.iter().map(|u| u.gender).collect(),
        height: set.iter().map(|u| u.height_cm).collect(),
        age: set.iter().map(|u| u.age_years).collect(),
        pred_height: preds.iter().map(|p| p.0).collect(),
        pred_age: preds.iter().map(|p| p.1).collect(),
    })
}

impl Predictions {
    /// Metrics for one group, or `None` if it has no utterances.
    pub fn row(&self, setting: Setting, group: GenderGroup) -> Result<Option<EvalRow>> {
        let idx: Vec<usize> = (0..self.gender.len()).filter(|&i| group.contains(self.gender[i])).collect();
        if idx.is_empty() {
            return Ok(None);
        }
        let pick = |v: &[f64]| idx.iter().map(|&i| v[i]).collect::<Vec<f64>>();
        let (h, ph, a, pa) = (pick(&self.height), pick(&self.pred_height), pick(&self.age), pick(&self.pred_age));
        Ok(Some(EvalRow {
            technique: setting.technique,
            multitask: setting.multitask,
            gender_handling: setting.gender_handling,
            gender: group,
            n_utterances: idx.len(),
            rmse_height_cm: rmse(&h, &ph)?,
            mae_height_cm: mae(&h, &ph)?,
            rmse_age_yr: rmse(&a, &pa)?,
            mae_age_yr: mae(&a, &pa)?,
        }))
    }

    pub fn rows(&self, setting: Setting, gender_partition: bool) -> Result<Vec<EvalRow>> {
        let groups: &[GenderGroup] = if gender_partition {
            &[GenderGroup::Male, GenderGroup::Female]
        } else {
            &[GenderGroup::All]
        };
        let mut rows = Vec::new();
        for &g in groups {
            rows.extend(self.row(setting, g)?);
        }
        Ok(rows)
    }
}

/// Scores `model` on `test_set`, one row per gender when partitioning
/// (absent genders produce no row), otherwise a single row.
pub fn evaluate(
    model: &dyn Regressor,
    setting: Setting,
    test_set: &[UtteranceRecord],
    gender_partition: bool,
) -> Result<Vec<EvalRow>> {
    if test_set.is_empty() {
        return Err(Error::invalid("empty test set"));
    }
    predict_all(model, test_set)?.rows(setting, gender_partition)
}

const COLUMNS: [&str; 9] = [
    "technique",
    "multitask",
    "gender_handling",
    "gender",
    "n",
    "rmse_height_cm",
    "mae_height_cm",
    "rmse_age_yr",
    "mae_age_yr",
];

fn cells(r: &EvalRow) -> [String; 9] {
    [
        r.technique.to_string(),
        r.multitask.to_string(),
        r.gender_handling.as_str().to_string(),
        r.gender.as_str().to_string(),
        r.n_utterances.to_string(),
        format!("{:.4}", r.rmse_height_cm),
        format!("{:.4}", r.mae_height_cm),
        format!("{:.4}", r.rmse_age_yr),
        format!("{:.4}", r.mae_age_yr),
    ]
}

/// Tab-separated rows with a header; metrics at full precision.
pub fn to_tsv(rows: &[EvalRow]) -> String {
    let mut out = COLUMNS.join("\t");
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.technique,
            r.multitask,
            r.gender_handling.as_str(),
            r.gender.as_str(),
            r.n_utterances,
            r.rmse_height_cm,
            r.mae_height_cm,
            r.rmse_age_yr,
            r.mae_age_yr
        );
    }
    out
}

/// Column-aligned plain text.
pub fn format_table(rows: &[EvalRow]) -> String {
    let body: Vec<[String; 9]> = rows.iter().map(cells).collect();
    let mut widths: Vec<usize> = COLUMNS.iter().map(|c| c.len()).collect();
    for row in &body {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, vals: &[&str]| {
        let parts: Vec<String> = vals
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (v, &w))| if i < 4 { format!("{v:<w$}") } else { format!("{v:>w$}") })
            .collect();
        out.push_str(parts.join("  ").trim_end());
        out.push('\n');
    };
    line(&mut out, &COLUMNS);
    let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
    line(&mut out, &rule.iter().map(String::as_str).collect::<Vec<_>>());
    for row in &body {
        line(&mut out, &row.iter().map(String::as_str).collect::<Vec<_>>());
    }
    out
}
