//! End-to-end tests of the `sensegram` binary: exit codes, stream
//! discipline, the synth -> train -> eval pipeline, and the
//! dump-config/environment round trip.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_sensegram"));
    // tests must not inherit SENSEGRAM_* settings from the harness
    cmd.env_clear();
    cmd
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary should spawn")
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn assert_code(out: &Output, expected: i32, what: &str) {
    assert_eq!(
        out.status.code(),
        Some(expected),
        "{what}: expected exit {expected}\nstdout: {}\nstderr: {}",
        stdout_of(out),
        stderr_of(out)
    );
}

/// Two balanced topics with one K=2 pseudoword; 200k tokens.
fn write_spec(dir: &Path) -> PathBuf {
    let spec = dir.join("spec.json");
    std::fs::write(
        &spec,
        r#"{
  "topics": [
    {"types": 200, "exponent": 1.0},
    {"types": 200, "exponent": 1.0}
  ],
  "corpus_tokens": 200000,
  "sentence_tokens": {"min": 5, "max": 15},
  "pseudowords": [
    {"token": "bank", "sources": [{"topic": 0, "rank": 2}, {"topic": 1, "rank": 2}]}
  ],
  "seed": 42
}"#,
    )
    .unwrap();
    spec
}

fn write_lexicon(dir: &Path) -> PathBuf {
    let lexicon = dir.join("lexicon.tsv");
    std::fs::write(&lexicon, "# sense counts\nbank\t2\n").unwrap();
    lexicon
}

/// synth + train with fixed settings; returns (corpus, truth, model dir).
fn synth_and_train(dir: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let spec = write_spec(dir);
    let corpus = dir.join("corpus.txt");
    let truth = dir.join("truth.tsv");
    let model = dir.join("model");
    let out = run(bin()
        .args(["synth", "--spec"])
        .arg(&spec)
        .arg("--out")
        .arg(&corpus)
        .arg("--truth")
        .arg(&truth));
    assert_code(&out, 0, "synth");
    let lexicon = write_lexicon(dir);
    let out = run(bin()
        .args(["train", "--corpus"])
        .arg(&corpus)
        .arg("--lexicon")
        .arg(&lexicon)
        .arg("--out")
        .arg(&model)
        .args(["--window", "5", "--dim", "32", "--epochs", "3", "--workers", "1", "--seed", "7"]));
    assert_code(&out, 0, "train");
    (corpus, truth, model)
}

#[test]
fn help_exits_zero_with_usage_text() {
    let out = run(bin().arg("--help"));
    assert_code(&out, 0, "--help");
    let text = stdout_of(&out);
    for sub in ["build-vocab", "train", "nearest", "project", "senses-assign", "synth", "eval"] {
        assert!(text.contains(sub), "usage text should list {sub}:\n{text}");
    }
}

#[test]
fn train_without_corpus_is_a_usage_error() {
    let out = run(bin().arg("train"));
    assert_code(&out, 1, "train with no flags");
    assert!(stderr_of(&out).contains("--corpus"), "error should name the missing flag");
}

#[test]
fn missing_input_file_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(bin()
        .args(["train", "--corpus", "/nonexistent/corpus.txt", "--out"])
        .arg(dir.path().join("model")));
    assert_code(&out, 2, "train on a missing corpus");
}

#[test]
fn invalid_settings_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus.txt");
    std::fs::write(&corpus, "a b c a b c a b c a b c a b c a b c\n").unwrap();
    let out = run(bin()
        .args(["train", "--corpus"])
        .arg(&corpus)
        .arg("--out")
        .arg(dir.path().join("model"))
        .args(["--dim", "0", "--min-count", "1"]));
    assert_code(&out, 1, "train with dim 0");

    let out = run(bin().args(["train", "--bogus-flag"]));
    assert_code(&out, 1, "unknown flag");
}

#[test]
fn build_vocab_writes_the_documented_header() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus.txt");
    std::fs::write(&corpus, "a a a a a b b b b b c\n").unwrap();
    let vocab = dir.path().join("vocab.txt");
    let out = run(bin()
        .args(["build-vocab", "--corpus"])
        .arg(&corpus)
        .arg("--out")
        .arg(&vocab)
        .args(["--min-count", "5"]));
    assert_code(&out, 0, "build-vocab");
    let text = std::fs::read_to_string(&vocab).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("SENSEGRAM-VOCAB v1 total=10"));
    assert_eq!(lines.next(), Some("a\t5"));
    assert_eq!(lines.next(), Some("b\t5"));
    assert_eq!(lines.next(), None, "c is below min count");
}

#[test]
fn synth_train_eval_smoke_completes_quickly_with_purity_report() {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let (corpus, truth, model) = synth_and_train(dir.path());

    let report = dir.path().join("report.json");
    let out = run(bin()
        .args(["eval", "--model"])
        .arg(&model)
        .arg("--corpus")
        .arg(&corpus)
        .arg("--truth")
        .arg(&truth)
        .arg("--report")
        .arg(&report));
    assert_code(&out, 0, "eval");

    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let purity = json["purity"].as_f64().expect("report.json must carry a numeric purity");
    assert!((0.0..=1.0).contains(&purity), "purity {purity} out of range");
    assert!(json["pseudowords"][0]["senses"][0]["purity_contribution"].is_number());
    assert!(
        started.elapsed().as_secs() < 120,
        "smoke pipeline took {:?}, budget is 2 minutes",
        started.elapsed()
    );
}

#[test]
fn dump_config_env_round_trip_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path());
    let corpus = dir.path().join("corpus.txt");
    let truth = dir.path().join("truth.tsv");
    let out = run(bin()
        .args(["synth", "--spec"])
        .arg(&spec)
        .arg("--out")
        .arg(&corpus)
        .arg("--truth")
        .arg(&truth));
    assert_code(&out, 0, "synth");
    let lexicon = write_lexicon(dir.path());

    let flags_model = dir.path().join("model-flags");
    let mut train_flags = bin();
    train_flags
        .args(["train", "--corpus"])
        .arg(&corpus)
        .arg("--lexicon")
        .arg(&lexicon)
        .arg("--out")
        .arg(&flags_model)
        .args(["--window", "5", "--dim", "16", "--epochs", "1", "--workers", "1", "--seed", "9"]);
    let out = run(&mut train_flags);
    assert_code(&out, 0, "train via flags");

    // same invocation with --dump-config prints the merged settings
    let mut dump_cmd = bin();
    dump_cmd
        .args(["train", "--corpus"])
        .arg(&corpus)
        .arg("--lexicon")
        .arg(&lexicon)
        .arg("--out")
        .arg(&flags_model)
        .args(["--window", "5", "--dim", "16", "--epochs", "1", "--workers", "1", "--seed", "9"])
        .arg("--dump-config");
    let out = run(&mut dump_cmd);
    assert_code(&out, 0, "dump-config");
    let dump = stdout_of(&out);
    let vars: Vec<(String, String)> = dump
        .lines()
        .filter(|l| !l.is_empty())
        .map(|l| {
            let (k, v) = l.split_once('=').expect("dump lines are KEY=VALUE");
            (k.to_string(), v.to_string())
        })
        .collect();
    assert!(vars.iter().all(|(k, _)| k.starts_with("SENSEGRAM_")));
    assert!(vars.iter().any(|(k, v)| k == "SENSEGRAM_SEED" && v == "9"));

    // re-ingest the dump as environment, overriding only the output path
    let env_model = dir.path().join("model-env");
    let mut train_env = bin();
    train_env.arg("train");
    for (k, v) in &vars {
        train_env.env(k, v);
    }
    train_env.env("SENSEGRAM_OUT", &env_model);
    let out = run(&mut train_env);
    assert_code(&out, 0, "train via environment");

    for file in ["header.json", "vocab.txt", "sense_counts.tsv", "context.bin", "sense.bin"] {
        let a = std::fs::read(flags_model.join(file)).unwrap();
        let b = std::fs::read(env_model.join(file)).unwrap();
        assert_eq!(a, b, "{file} should be byte-identical across flag and env runs");
    }
}

#[test]
fn nearest_prints_ranked_tab_separated_neighbors() {
    let dir = tempfile::tempdir().unwrap();
    let (_corpus, _truth, model) = synth_and_train(dir.path());
    let out = run(bin()
        .args(["nearest", "--model"])
        .arg(&model)
        .args(["--query", "bank#1", "--k", "5"]));
    assert_code(&out, 0, "nearest");
    let text = stdout_of(&out);
    let rows: Vec<(&str, f64)> = text
        .lines()
        .map(|l| {
            let (label, sim) = l.split_once('\t').expect("label<TAB>similarity");
            (label, sim.parse::<f64>().unwrap())
        })
        .collect();
    assert_eq!(rows.len(), 5);
    assert!(rows.windows(2).all(|w| w[0].1 >= w[1].1), "similarities must descend");
    assert!(rows.iter().all(|(l, s)| *l != "bank#1" && (-1.0..=1.0).contains(s)));

    let out = run(bin()
        .args(["nearest", "--model"])
        .arg(&model)
        .args(["--query", "no-such-label"]));
    assert_code(&out, 2, "nearest with unknown label");
    assert!(stderr_of(&out).contains("closest matches"));
}

#[test]
fn project_writes_tsv_and_svg_and_warns_on_rank_deficiency() {
    let dir = tempfile::tempdir().unwrap();
    let (_corpus, _truth, model) = synth_and_train(dir.path());
    let coords = dir.path().join("coords.tsv");
    let svg = dir.path().join("coords.svg");
    let out = run(bin()
        .args(["project", "--model"])
        .arg(&model)
        .args(["--labels", "bank#1,bank#2,t0w3,t1w3,t0w5,t1w5", "--out"])
        .arg(&coords)
        .arg("--svg")
        .arg(&svg));
    assert_code(&out, 0, "project");
    let tsv = std::fs::read_to_string(&coords).unwrap();
    assert_eq!(tsv.lines().count(), 6);
    for line in tsv.lines() {
        let fields: Vec<&str> = line.split('\t').collect();
        assert_eq!(fields.len(), 3);
        fields[1].parse::<f64>().unwrap();
        fields[2].parse::<f64>().unwrap();
    }
    assert!(std::fs::read_to_string(&svg).unwrap().starts_with("<svg"));

    // two points span one dimension: the second eigenvalue is zero
    let out = run(bin()
        .args(["project", "--model"])
        .arg(&model)
        .args(["--labels", "bank#1,bank#2", "--out"])
        .arg(dir.path().join("pair.tsv")));
    assert_code(&out, 0, "project with 2 labels");
    assert!(
        stderr_of(&out).contains("warning"),
        "rank-deficient projection should warn on stderr"
    );
}

#[test]
fn senses_assign_reports_posteriors_per_occurrence() {
    let dir = tempfile::tempdir().unwrap();
    let (_corpus, _truth, model) = synth_and_train(dir.path());
    let out = run(bin()
        .args(["senses-assign", "--model"])
        .arg(&model)
        .args(["--text", "t0w0 t0w4 bank t0w9 zzz"]));
    assert_code(&out, 0, "senses-assign");
    let text = stdout_of(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 5, "one row per whitespace token:\n{text}");
    let bank_row: Vec<&str> = lines[2].split('\t').collect();
    assert_eq!(bank_row[0], "2");
    assert_eq!(bank_row[1], "bank");
    assert!(bank_row[2].starts_with("bank#"));
    assert!(bank_row[3].contains("bank#1:") && bank_row[3].contains("bank#2:"));
    let probs: Vec<f64> = bank_row[3]
        .split(' ')
        .map(|p| p.split_once(':').unwrap().1.parse::<f64>().unwrap())
        .collect();
    let total: f64 = probs.iter().sum();
    assert!((total - 1.0).abs() < 2e-4, "printed posterior should sum to 1, got {total}");
    assert!(lines[4].contains("oov"));
}

#[test]
fn synth_rejects_bad_specs_with_the_right_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad_json = dir.path().join("bad.json");
    std::fs::write(&bad_json, "{not json").unwrap();
    let out = run(bin()
        .args(["synth", "--spec"])
        .arg(&bad_json)
        .arg("--out")
        .arg(dir.path().join("c.txt"))
        .arg("--truth")
        .arg(dir.path().join("t.tsv")));
    assert_code(&out, 2, "malformed spec JSON");

    let empty_topics = dir.path().join("empty.json");
    std::fs::write(
        &empty_topics,
        r#"{"topics": [], "corpus_tokens": 100, "sentence_tokens": {"min": 2, "max": 4}, "seed": 1}"#,
    )
    .unwrap();
    let out = run(bin()
        .args(["synth", "--spec"])
        .arg(&empty_topics)
        .arg("--out")
        .arg(dir.path().join("c.txt"))
        .arg("--truth")
        .arg(dir.path().join("t.tsv")));
    assert_code(&out, 1, "semantically invalid spec");
}
