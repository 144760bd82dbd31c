//! Subcommand implementations.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};
use xattn::analysis::{accumulate_attention, frames_to_phones, ranking_report, PhoneAttentionTable};
use xattn::corpus::{cache_path, extract_to_cache, load_corpus, load_corpus_with_stats, speeds_for, LoadOptions};
use xattn::data::{Manifest, Split};
use xattn::datagen::generate;
use xattn::eval::{format_table, predict_all, to_tsv, EvalRow, OracleRegressor, Regressor, Setting};
use xattn::features::{CmvnMode, CmvnStats, N_PITCH};
use xattn::model::checkpoint::{Checkpoint, NamedTensor};
use xattn::model::Technique;
use xattn::training::{fit_profiler, Profiler};

use crate::config::{ConfigError, RunConfig};

/// Exit status 2 for usage and configuration problems, 1 for everything else.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<xattn::Error> for Failure {
    fn from(e: xattn::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Usage(e.0)
    }
}

pub type CmdResult<T = ()> = Result<T, Failure>;

fn write(path: &Path, contents: impl AsRef<[u8]>) -> CmdResult {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Failure::Runtime(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, contents).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn read_manifest(cfg: &RunConfig) -> CmdResult<Manifest> {
    if !cfg.paths.manifest.exists() {
        return Err(Failure::Usage(format!("manifest {} does not exist", cfg.paths.manifest.display())));
    }
    Ok(Manifest::read(&cfg.paths.manifest)?)
}

fn only_split(manifest: &Manifest, split: Split) -> Manifest {
    Manifest {
        root: manifest.root.clone(),
        rows: manifest.split(split).cloned().collect(),
    }
}

pub fn synth_data(cfg: &RunConfig) -> CmdResult {
    let manifest = generate(&cfg.synth, &cfg.paths.corpus_dir)?;
    let counts = [Split::Train, Split::Val, Split::Test].map(|s| manifest.split(s).count());
    println!(
        "wrote {} utterances ({} train, {} val, {} test) to {}",
        manifest.rows.len(),
        counts[0],
        counts[1],
        counts[2],
        cfg.paths.corpus_dir.join("manifest.tsv").display()
    );
    Ok(())
}

pub fn extract_features(cfg: &RunConfig, augment: bool) -> CmdResult {
    let manifest = read_manifest(cfg)?;
    let report = extract_to_cache(&manifest, &cfg.paths.cache_dir, augment, &cfg.features.extraction())?;
    println!(
        "feature cache {}: {} written, {} up to date, {} failed",
        cfg.paths.cache_dir.display(),
        report.written,
        report.skipped,
        report.failed.len()
    );
    if report.failed.is_empty() {
        return Ok(());
    }
    for (path, msg) in &report.failed {
        eprintln!("  {}: {msg}", path.display());
    }
    Err(Failure::Runtime(format!("{} audio files could not be processed", report.failed.len())))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// SHA-256 over the manifest and every cached feature file it references.
fn inputs_digest(cfg: &RunConfig, manifest: &Manifest) -> CmdResult<String> {
    let mut h = Sha256::new();
    let read = |p: &Path| fs::read(p).map_err(|e| Failure::Runtime(format!("{}: {e}", p.display())));
    h.update(read(&cfg.paths.manifest)?);
    for row in &manifest.rows {
        for &s in speeds_for(row, cfg.features.speed_perturb) {
            let p = cache_path(&cfg.paths.cache_dir, row, s);
            if s == 1.0 || p.exists() {
                h.update(read(&p)?);
            }
        }
    }
    Ok(hex(&h.finalize()))
}

#[derive(Serialize)]
struct RunMetadata<'a> {
    version: &'a str,
    seed: u64,
    technique: Technique,
    config_sha256: String,
    inputs_sha256: String,
    n_train: usize,
    n_val: usize,
    selected_a: Vec<(String, Option<f64>)>,
}

const CMVN_MODE_KEY: &str = "cmvn";

fn put_cmvn(ck: &mut Checkpoint, mode: CmvnMode, stats: Option<&CmvnStats>) {
    let name = match mode {
        CmvnMode::Utterance => "utterance",
        CmvnMode::Corpus => "corpus",
    };
    ck.meta.insert(CMVN_MODE_KEY.into(), name.into());
    if let Some(st) = stats {
        for (n, v) in [("cmvn/mean", &st.mean), ("cmvn/std", &st.std)] {
            ck.tensors.push(NamedTensor {
                name: n.into(),
                shape: vec![v.len()],
                data: v.clone(),
            });
        }
    }
}

fn get_cmvn(ck: &Checkpoint) -> CmdResult<(CmvnMode, Option<CmvnStats>)> {
    let mode = match ck.meta_value(CMVN_MODE_KEY)? {
        "utterance" => CmvnMode::Utterance,
        "corpus" => CmvnMode::Corpus,
        other => return Err(Failure::Runtime(format!("checkpoint has unknown CMVN mode '{other}'"))),
    };
    let stats = match (ck.tensor("cmvn/mean"), ck.tensor("cmvn/std")) {
        (Some(m), Some(s)) => Some(CmvnStats {
            mean: m.data.clone(),
            std: s.data.clone(),
        }),
        _ if mode == CmvnMode::Corpus => {
            return Err(Failure::Runtime("checkpoint uses corpus CMVN but stores no statistics".into()))
        }
        _ => None,
    };
    Ok((mode, stats))
}

pub fn checkpoint_path(cfg: &RunConfig) -> PathBuf {
    cfg.paths.run_dir.join("model.xamp")
}

pub fn train(cfg: &RunConfig) -> CmdResult {
    let manifest = read_manifest(cfg)?;
    let opts = LoadOptions {
        cmvn: cfg.features.cmvn,
        include_perturbed: cfg.features.speed_perturb,
        alignments: false,
    };
    let corpus = load_corpus(&manifest, &cfg.paths.cache_dir, opts)?;
    if corpus.train.is_empty() || corpus.val.is_empty() {
        return Err(Failure::Usage("the manifest needs both train and val rows to train".into()));
    }
    println!("training on {} utterances, validating on {}", corpus.train.len(), corpus.val.len());
    let (profiler, histories) = fit_profiler(&cfg.train, cfg.eval.gender_handling, &corpus.train, &corpus.val)?;

    let run = &cfg.paths.run_dir;
    fs::create_dir_all(run).map_err(|e| Failure::Runtime(format!("{}: {e}", run.display())))?;
    let mut ck = profiler.to_checkpoint();
    put_cmvn(&mut ck, cfg.features.cmvn, corpus.stats.as_ref());
    ck.write(&checkpoint_path(cfg))?;
    for (label, h) in &histories {
        write(&run.join(format!("history-{label}.jsonl")), h.to_jsonl())?;
        if let Some(a) = h.selected_a {
            println!("{label}: selected a = {a}");
        }
    }
    let snapshot = cfg.to_toml();
    write(&run.join("config.toml"), &snapshot)?;
    let meta = RunMetadata {
        version: env!("CARGO_PKG_VERSION"),
        seed: cfg.train.seed,
        technique: cfg.train.technique,
        config_sha256: hex(&Sha256::digest(snapshot.as_bytes())),
        inputs_sha256: inputs_digest(cfg, &manifest)?,
        n_train: corpus.train.len(),
        n_val: corpus.val.len(),
        selected_a: histories.iter().map(|(l, h)| (l.clone(), h.selected_a)).collect(),
    };
    write(&run.join("run.json"), serde_json::to_string_pretty(&meta).expect("metadata serializes") + "\n")?;
    println!("checkpoint written to {}", checkpoint_path(cfg).display());
    Ok(())
}

/// Every disagreement between the configuration and a checkpoint.
fn mismatches(cfg: &RunConfig, profiler: &Profiler, cmvn: CmvnMode) -> Vec<String> {
    let mut out = Vec::new();
    let mut check = |what: &str, config: String, checkpoint: String| {
        if config != checkpoint {
            out.push(format!("{what}: config has {config}, checkpoint has {checkpoint}"));
        }
    };
    let model = &profiler.estimator_for(xattn::data::Gender::Male).attention_model().config;
    let n_inputs = cfg.features.n_mels + N_PITCH + usize::from(profiler.gender_feature);
    check("technique", cfg.train.technique.to_string(), model.technique.to_string());
    check("multitask", cfg.train.multitask.to_string(), profiler.multitask().to_string());
    check(
        "gender_handling",
        cfg.eval.gender_handling.as_str().into(),
        profiler.gender_handling().as_str().into(),
    );
    check("n_units", cfg.train.n_units.to_string(), model.n_units.to_string());
    check("d_att", cfg.train.d_att.to_string(), model.d_att.to_string());
    check("n_frames_max", cfg.train.n_frames_max.to_string(), model.n_frames_max.to_string());
    check("input features", n_inputs.to_string(), model.n_inputs.to_string());
    check("cmvn", format!("{:?}", cfg.features.cmvn), format!("{cmvn:?}"));
    out
}

/// Loads a checkpoint and checks it against the configuration.
fn load_model(cfg: &RunConfig, path: &Path) -> CmdResult<(Profiler, Option<CmvnStats>)> {
    let ck = Checkpoint::read(path)?;
    let profiler = Profiler::from_checkpoint(&ck)?;
    let (mode, stats) = get_cmvn(&ck)?;
    let bad = mismatches(cfg, &profiler, mode);
    if !bad.is_empty() {
        return Err(Failure::Usage(format!(
            "checkpoint {} does not match the configuration:\n  {}",
            path.display(),
            bad.join("\n  ")
        )));
    }
    Ok((profiler, stats))
}

fn setting(cfg: &RunConfig) -> Setting {
    Setting {
        technique: cfg.train.technique,
        multitask: cfg.train.multitask,
        gender_handling: cfg.eval.gender_handling,
    }
}

fn score(model: &dyn Regressor, setting: Setting, test: &[xattn::data::UtteranceRecord]) -> CmdResult<Vec<EvalRow>> {
    if test.is_empty() {
        return Err(Failure::Usage("the manifest has no test rows".into()));
    }
    let preds = predict_all(model, test)?;
    let mut rows = preds.rows(setting, false)?;
    rows.extend(preds.rows(setting, true)?);
    Ok(rows)
}

/// Scores the checkpoint (or a perfect oracle) on the test split and writes
/// the table in text and TSV form.
pub fn evaluate(cfg: &RunConfig, checkpoint: Option<&Path>, oracle: bool) -> CmdResult<Vec<EvalRow>> {
    let manifest = only_split(&read_manifest(cfg)?, Split::Test);
    let opts = |cmvn| LoadOptions {
        cmvn,
        include_perturbed: false,
        alignments: false,
    };
    let (rows, stem) = if oracle {
        let corpus = load_corpus(&manifest, &cfg.paths.cache_dir, opts(CmvnMode::Utterance))?;
        (score(&OracleRegressor, setting(cfg), &corpus.test)?, "eval-oracle")
    } else {
        let path = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| checkpoint_path(cfg));
        let (profiler, stats) = load_model(cfg, &path)?;
        let corpus = load_corpus_with_stats(&manifest, &cfg.paths.cache_dir, opts(cfg.features.cmvn), stats.as_ref())?;
        (score(&profiler, setting(cfg), &corpus.test)?, "eval")
    };
    let table = format_table(&rows);
    print!("{table}");
    write(&cfg.paths.run_dir.join(format!("{stem}.txt")), &table)?;
    write(&cfg.paths.run_dir.join(format!("{stem}.tsv")), to_tsv(&rows))?;
    Ok(rows)
}

/// Accumulates test-split frame attention by phone and writes the table and
/// the ranking report.
pub fn analyze_attention(cfg: &RunConfig, checkpoint: Option<&Path>) -> CmdResult<PhoneAttentionTable> {
    if cfg.train.technique == Technique::LastHidden {
        return Err(Failure::Usage("technique last_hidden has no frame attention to analyze".into()));
    }
    let manifest = only_split(&read_manifest(cfg)?, Split::Test);
    let path = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| checkpoint_path(cfg));
    let (profiler, stats) = load_model(cfg, &path)?;
    let opts = LoadOptions {
        cmvn: cfg.features.cmvn,
        include_perturbed: false,
        alignments: true,
    };
    let corpus = load_corpus_with_stats(&manifest, &cfg.paths.cache_dir, opts, stats.as_ref())?;
    let aligned: Vec<_> = corpus.test.iter().filter(|u| u.alignment.is_some()).collect();
    if aligned.is_empty() {
        return Err(Failure::Usage("no test utterance has a phone alignment".into()));
    }
    let per_utt: Vec<PhoneAttentionTable> = aligned
        .par_iter()
        .map(|u| {
            let model = profiler.estimator_for(u.gender).attention_model();
            let fwd = model.predict(&profiler.model_input(u))?;
            let alpha = fwd.frame_weights().expect("attention technique");
            let align = u.alignment.as_ref().expect("filtered");
            let labels = frames_to_phones(align, alpha.len(), u.features.window_ms, u.features.hop_ms)?;
            let mut t = PhoneAttentionTable::new();
            accumulate_attention(alpha, &labels, None, &mut t)?;
            Ok(t)
        })
        .collect::<xattn::Result<_>>()?;
    let mut table = PhoneAttentionTable::new();
    for t in &per_utt {
        table.merge(t);
    }
    let drift = (table.total_weight() - table.n_utterances as f64).abs();
    if drift > 1e-9 {
        return Err(Failure::Runtime(format!(
            "attention mass {} differs from the utterance count {} by {drift:e}",
            table.total_weight(),
            table.n_utterances
        )));
    }
    let report = ranking_report(&table, cfg.eval.top_k)?;
    print!("{report}");
    if aligned.len() < corpus.test.len() {
        println!("({} test utterances without alignment skipped)", corpus.test.len() - aligned.len());
    }
    write(&cfg.paths.run_dir.join("phones.tsv"), table.to_tsv())?;
    write(&cfg.paths.run_dir.join("phones.txt"), &report)?;
    Ok(table)
}

pub fn pipeline(cfg: &RunConfig) -> CmdResult {
    synth_data(cfg)?;
    let cfg = &RunConfig {
        paths: crate::config::Paths {
            manifest: cfg.paths.corpus_dir.join("manifest.tsv"),
            ..cfg.paths.clone()
        },
        ..cfg.clone()
    };
    extract_features(cfg, cfg.features.speed_perturb)?;
    train(cfg)?;
    evaluate(cfg, None, false)?;
    if cfg.train.technique != Technique::LastHidden {
        analyze_attention(cfg, None)?;
    }
    Ok(())
}
