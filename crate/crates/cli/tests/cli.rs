use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn xattn(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xattn"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

const TINY: &str = r#"
[synth]
n_speakers = 10
utterances_per_speaker = 2
duration_range_s = [1.0, 1.2]
train_fraction = 0.5
val_fraction = 0.2

[features]
cmvn = "corpus"
speed_perturb = true

[train]
n_units = 4
d_att = 4
max_epochs = 2
a_grid = [0.5]
"#;

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
    dir
}

#[test]
fn pipeline_writes_a_self_describing_run() {
    let dir = setup();
    let d = dir.path();
    let out = xattn(d, &["pipeline", "-c", "tiny.toml"]);
    assert!(out.status.success(), "{}", text(&out));
    let run = d.join("work/run");
    for f in ["model.xamp", "config.toml", "run.json", "history-all.jsonl", "eval.tsv", "eval.txt", "phones.tsv", "phones.txt"] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("run.json")).unwrap()).unwrap();
    assert_eq!(meta["inputs_sha256"].as_str().unwrap().len(), 64);

    // Re-running evaluate from the stored config reproduces the table bitwise.
    let table = fs::read(run.join("eval.tsv")).unwrap();
    fs::remove_file(run.join("eval.tsv")).unwrap();
    let out = xattn(d, &["evaluate", "-c", "work/run/config.toml"]);
    assert!(out.status.success(), "{}", text(&out));
    assert_eq!(fs::read(run.join("eval.tsv")).unwrap(), table);

    // Attention mass per utterance is 1.
    let manifest = fs::read_to_string(d.join("work/corpus/manifest.tsv")).unwrap();
    let n_test = manifest.lines().filter(|l| l.split('\t').any(|c| c == "test")).count();
    let phones = fs::read_to_string(run.join("phones.tsv")).unwrap();
    let total: f64 = phones.lines().skip(1).map(|l| l.split('\t').nth(1).unwrap().parse::<f64>().unwrap()).sum();
    assert!(n_test > 0);
    assert!((total - n_test as f64).abs() < 1e-6, "{total} vs {n_test}");

    let out = xattn(d, &["evaluate", "-c", "work/run/config.toml", "--oracle"]);
    assert!(out.status.success(), "{}", text(&out));
    let oracle = fs::read_to_string(run.join("eval-oracle.tsv")).unwrap();
    for line in oracle.lines().skip(1) {
        let cells: Vec<&str> = line.split('\t').collect();
        assert!(cells[5..].iter().all(|c| c.parse::<f64>().unwrap() == 0.0), "{line}");
    }

    let out = xattn(d, &["evaluate", "-c", "work/run/config.toml", "--set", "train.n_units=8"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out).contains("n_units: config has 8, checkpoint has 4"), "{}", text(&out));

    // Warm cache: nothing rewritten.
    let out = xattn(d, &["extract-features", "-c", "tiny.toml", "--augment"]);
    assert!(out.status.success());
    assert!(text(&out).contains(" 0 written"), "{}", text(&out));
}

#[test]
fn configuration_errors_exit_with_status_two() {
    let dir = setup();
    let d = dir.path();
    fs::write(d.join("bad.toml"), "[synth]\nn_speakers = 3\nseed = = 1\n").unwrap();
    let out = xattn(d, &["synth-data", "-c", "bad.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out).contains("line 3"), "{}", text(&out));

    let out = xattn(d, &["train", "--set", "train.not_a_key=1"]);
    assert_eq!(out.status.code(), Some(2));
    let out = xattn(d, &["no-such-command"]);
    assert_eq!(out.status.code(), Some(2));
    let out = xattn(d, &["extract-features", "--set", "paths.manifest=missing.tsv"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn synth_data_creates_the_output_directory() {
    let dir = setup();
    let d = dir.path();
    let out = xattn(d, &["synth-data", "-c", "tiny.toml", "--set", "paths.corpus_dir=deep/new/dir"]);
    assert!(out.status.success(), "{}", text(&out));
    assert!(d.join("deep/new/dir/manifest.tsv").exists());
}

#[test]
fn unreadable_audio_fails_with_status_one() {
    let dir = setup();
    let d = dir.path();
    assert!(xattn(d, &["synth-data", "-c", "tiny.toml"]).status.success());
    let wav = fs::read_dir(d.join("work/corpus/wav")).unwrap().next().unwrap().unwrap().path();
    fs::write(&wav, b"garbage").unwrap();
    let out = xattn(d, &["extract-features", "-c", "tiny.toml"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out).contains(wav.file_name().unwrap().to_str().unwrap()), "{}", text(&out));
}
