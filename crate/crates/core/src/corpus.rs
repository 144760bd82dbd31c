//! Manifest-driven feature caching and loading of normalized utterances.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::analysis::PhoneAlignment;
use crate::data::{Manifest, ManifestRow, Split, UtteranceRecord};
use crate::error::{Error, Result};
use crate::features::{
    extract_features, read_feature_cache, read_wav, speed_perturb, write_feature_cache, CmvnMode, CmvnStats,
    FeatureConfig, FeatureMatrix,
};

/// Speed copies made of each training utterance when augmenting.
pub const SPEED_FACTORS: [f64; 3] = [1.0, 0.9, 1.1];

pub fn cache_path(cache_dir: &Path, row: &ManifestRow, speed: f64) -> PathBuf {
    let id = row.utterance_id();
    if speed == 1.0 {
        cache_dir.join(format!("{id}.xaf"))
    } else {
        cache_dir.join(format!("{id}.sp{speed:.2}.xaf"))
    }
}

/// Speed factors cached for a row: all of [`SPEED_FACTORS`] for training
/// rows when augmenting, otherwise only the original.
pub fn speeds_for(row: &ManifestRow, augment: bool) -> &'static [f64] {
    if augment && row.split == Split::Train {
        &SPEED_FACTORS
    } else {
        &SPEED_FACTORS[..1]
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExtractReport {
    pub written: usize,
    pub skipped: usize,
    /// Audio path and error message for every row that failed.
    pub failed: Vec<(PathBuf, String)>,
}

fn is_fresh(cache: &Path, source: &Path) -> bool {
    let modified = |p: &Path| fs::metadata(p).and_then(|m| m.modified()).ok();
    match (modified(cache), modified(source)) {
        (Some(c), Some(s)) => c >= s,
        _ => false,
    }
}

/// Writes one raw feature file per (row, speed). Entries newer than their
/// audio are skipped; failures are collected, not fatal.
pub fn extract_to_cache(manifest: &Manifest, cache_dir: &Path, augment: bool, cfg: &FeatureConfig) -> Result<ExtractReport> {
    fs::create_dir_all(cache_dir).map_err(|e| Error::io(cache_dir, e))?;
    let per_row: Vec<std::result::Result<(usize, usize), (PathBuf, String)>> = manifest
        .rows
        .par_iter()
        .map(|row| {
            let wav = manifest.resolve(&row.path);
            let todo: Vec<f64> = speeds_for(row, augment)
                .iter()
                .copied()
                .filter(|&s| !is_fresh(&cache_path(cache_dir, row, s), &wav))
                .collect();
            let total = speeds_for(row, augment).len();
            if todo.is_empty() {
                return Ok((0, total));
            }
            let run = || -> Result<()> {
                let clip = read_wav(&wav)?;
                for &s in &todo {
                    let audio = if s == 1.0 { clip.clone() } else { speed_perturb(&clip, s)? };
                    let fm = extract_features(&audio, cfg)?;
                    write_feature_cache(&cache_path(cache_dir, row, s), &fm)?;
                }
                Ok(())
            };
            run().map(|_| (todo.len(), total - todo.len())).map_err(|e| (wav.clone(), e.to_string()))
        })
        .collect();
    let mut report = ExtractReport::default();
    for r in per_row {
        match r {
            Ok((w, s)) => {
                report.written += w;
                report.skipped += s;
            }
            Err(f) => report.failed.push(f),
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadOptions {
    pub cmvn: CmvnMode,
    /// Load cached speed copies of training utterances.
    pub include_perturbed: bool,
    /// Attach phone alignments where the manifest names one.
    pub alignments: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            cmvn: CmvnMode::Utterance,
            include_perturbed: true,
            alignments: true,
        }
    }
}

/// Normalized utterances by split.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub train: Vec<UtteranceRecord>,
    pub val: Vec<UtteranceRecord>,
    pub test: Vec<UtteranceRecord>,
    /// Training-split statistics when normalizing at corpus level.
    pub stats: Option<CmvnStats>,
}

impl Corpus {
    pub fn split(&self, split: Split) -> &[UtteranceRecord] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

fn load_alignment(manifest: &Manifest, row: &ManifestRow) -> Result<Option<PhoneAlignment>> {
    let Some(rel) = &row.alignment_path else {
        return Ok(None);
    };
    let wav = manifest.resolve(&row.path);
    let sr = hound::WavReader::open(&wav)
        .map_err(|source| Error::Wav { path: wav.clone(), source })?
        .spec()
        .sample_rate;
    PhoneAlignment::read(&manifest.resolve(rel), sr).map(Some)
}

/// Reads cached features for every manifest row and normalizes them.
///
/// With [`CmvnMode::Corpus`] the statistics come from the training split
/// (including its speed copies) and are applied to every split.
pub fn load_corpus(manifest: &Manifest, cache_dir: &Path, opts: LoadOptions) -> Result<Corpus> {
    load_corpus_with_stats(manifest, cache_dir, opts, None)
}

/// Like [`load_corpus`], but corpus-level normalization uses `stats` when
/// given instead of recomputing them, so a manifest without training rows
/// can be loaded for a trained model.
pub fn load_corpus_with_stats(
    manifest: &Manifest,
    cache_dir: &Path,
    opts: LoadOptions,
    stats: Option<&CmvnStats>,
) -> Result<Corpus> {
    manifest.check_speakers()?;
    let jobs: Vec<(&ManifestRow, f64)> = manifest
        .rows
        .iter()
        .flat_map(|row| {
            let speeds = speeds_for(row, opts.include_perturbed);
            speeds.iter().map(move |&s| (row, s))
        })
        .filter(|(row, s)| *s == 1.0 || cache_path(cache_dir, row, *s).exists())
        .collect();
    let raw: Vec<(&ManifestRow, f64, FeatureMatrix, Option<PhoneAlignment>)> = jobs
        .par_iter()
        .map(|&(row, s)| {
            let fm = read_feature_cache(&cache_path(cache_dir, row, s))?;
            let align = if opts.alignments && s == 1.0 { load_alignment(manifest, row)? } else { None };
            Ok((row, s, fm, align))
        })
        .collect::<Result<_>>()?;
    let stats = match (opts.cmvn, stats) {
        (CmvnMode::Utterance, _) => None,
        (CmvnMode::Corpus, Some(st)) => Some(st.clone()),
        (CmvnMode::Corpus, None) => Some(CmvnStats::from_matrices(
            raw.iter().filter(|r| r.0.split == Split::Train).map(|r| &r.2.values),
        )?),
    };
    let records: Vec<UtteranceRecord> = raw
        .into_par_iter()
        .map(|(row, s, fm, alignment)| {
            let features = match &stats {
                Some(st) => st.apply(&fm)?,
                None => crate::features::cmvn(&fm)?,
            };
            let id = if s == 1.0 { row.utterance_id() } else { format!("{}.sp{s:.2}", row.utterance_id()) };
            Ok(UtteranceRecord {
                id,
                speaker_id: row.speaker_id.clone(),
                gender: row.gender,
                height_cm: row.height_cm,
                age_years: row.age_years,
                features,
                speed: s,
                alignment,
            })
        })
        .collect::<Result<_>>()?;
    let mut corpus = Corpus {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        stats,
    };
    for (rec, row) in records.into_iter().zip(jobs.iter().map(|j| j.0)) {
        match row.split {
            Split::Train => corpus.train.push(rec),
            Split::Val => corpus.val.push(rec),
            Split::Test => corpus.test.push(rec),
        }
    }
    Ok(corpus)
}
