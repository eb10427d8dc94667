//! End-to-end runs of the binary: every subcommand, exit codes, and
//! reproducibility of primary outputs.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_nishan"))
}

fn sample_atis() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/sample.atis")
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawn");
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn ingest(dir: &Path) -> PathBuf {
    let out_dir = dir.join("ingest");
    run_ok(bin()
        .arg("ingest")
        .arg(sample_atis())
        .args(["--format", "atis", "--min-count", "7"])
        .arg("--out")
        .arg(&out_dir));
    out_dir.join("corpus.tsv")
}

#[test]
fn ingest_reports_kept_classes_and_writes_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("ingest");
    let out = run_ok(bin()
        .arg("ingest")
        .arg(sample_atis())
        .args(["--format", "atis"])
        .arg("--out")
        .arg(&out_dir));
    let stdout = String::from_utf8_lossy(&out.stdout);
    // the 4-sample class is dropped by the default threshold
    assert!(stdout.contains("classes: 4"), "stdout: {stdout}");
    assert!(!stdout.contains("meal"));
    assert!(out_dir.join("corpus.tsv").exists());
    assert!(out_dir.join("summary.json").exists());
    assert!(out_dir.join("config.txt").exists());
}

#[test]
fn unknown_format_is_a_usage_error() {
    let out = bin()
        .arg("ingest")
        .arg(sample_atis())
        .args(["--format", "parquet"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn empty_input_exits_with_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.atis");
    std::fs::write(&empty, "").unwrap();
    let out = bin()
        .arg("ingest")
        .arg(&empty)
        .args(["--format", "atis"])
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn malformed_line_reports_its_number() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.atis");
    std::fs::write(&bad, "BOS a b EOS flight\nBOS x EOS\n").unwrap();
    let out = bin()
        .arg("ingest")
        .arg(&bad)
        .args(["--format", "atis"])
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn pretrain_with_zero_epochs_keeps_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = ingest(dir.path());
    let out_a = dir.path().join("enc-a");
    let out_b = dir.path().join("enc-b");
    for out in [&out_a, &out_b] {
        let output = run_ok(bin()
            .arg("pretrain")
            .arg("--corpus")
            .arg(&corpus)
            .args(["--epochs", "0", "--l-seq", "8", "--d-h", "12", "--seed", "3"])
            .arg("--out")
            .arg(out));
        let stdout = String::from_utf8_lossy(&output.stdout);
        assert!(stdout.contains("select 0.25 / mask 0.8 / random 0.1 / keep 0.1"));
    }
    let a = std::fs::read(out_a.join("encoder.ckpt")).unwrap();
    let b = std::fs::read(out_b.join("encoder.ckpt")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn pretrain_short_run_writes_falling_loss_csv() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = ingest(dir.path());
    let out_dir = dir.path().join("enc");
    run_ok(bin()
        .arg("pretrain")
        .arg("--corpus")
        .arg(&corpus)
        .args([
            "--epochs", "12", "--batch-size", "16", "--lr", "0.005", "--l-seq", "8", "--d-h",
            "12", "--seed", "3",
        ])
        .arg("--out")
        .arg(&out_dir));
    let csv = std::fs::read_to_string(out_dir.join("losses.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "step,mlm,scl,total");
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert!(rows.len() >= 12);
    let first: f64 = rows.first().unwrap()[3];
    let last: f64 = rows.last().unwrap()[3];
    assert!(last < first, "loss should trend down: {first} -> {last}");
}

fn train_run(dir: &Path, corpus: &Path, encoder: &Path, out_name: &str) -> PathBuf {
    let out_dir = dir.join(out_name);
    run_ok(bin()
        .arg("train")
        .arg("--corpus")
        .arg(corpus)
        .arg("--encoder")
        .arg(encoder)
        .args([
            "--split-mode",
            "same",
            "--n-way",
            "3",
            "--k-shot",
            "2",
            "--q-query",
            "3",
            "--lr",
            "0.001",
            "--max-episodes",
            "30",
            "--eval-every",
            "10",
            "--patience",
            "10",
            "--seed",
            "7",
        ])
        .arg("--out")
        .arg(&out_dir));
    out_dir
}

#[test]
fn train_and_eval_round_trip_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = ingest(dir.path());
    let enc_dir = dir.path().join("enc");
    run_ok(bin()
        .arg("pretrain")
        .arg("--corpus")
        .arg(&corpus)
        .args(["--epochs", "0", "--l-seq", "8", "--d-h", "12", "--seed", "3"])
        .arg("--out")
        .arg(&enc_dir));

    let run_a = train_run(dir.path(), &corpus, &enc_dir, "run-a");
    let run_b = train_run(dir.path(), &corpus, &enc_dir, "run-b");
    assert_eq!(
        std::fs::read(run_a.join("history.csv")).unwrap(),
        std::fs::read(run_b.join("history.csv")).unwrap(),
        "identical seeds must reproduce history byte for byte"
    );
    assert_eq!(
        std::fs::read(run_a.join("head.ckpt")).unwrap(),
        std::fs::read(run_b.join("head.ckpt")).unwrap()
    );
    let history = std::fs::read_to_string(run_a.join("history.csv")).unwrap();
    assert!(history.starts_with("episode,ce,ucl1,ucl2,total,val_accuracy,val_wf1"));

    // single-measure evaluation writes a report with the expected keys
    let eval_dir = dir.path().join("eval");
    run_ok(bin()
        .arg("eval")
        .arg("--corpus")
        .arg(&corpus)
        .arg("--encoder")
        .arg(&enc_dir)
        .arg("--checkpoint")
        .arg(run_a.join("head.ckpt"))
        .args(["--split-mode", "same", "--k-shot", "2", "--seed", "7"])
        .arg("--out")
        .arg(&eval_dir));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(eval_dir.join("report.json")).unwrap())
            .unwrap();
    for key in [
        "accuracy",
        "weighted_precision",
        "weighted_recall",
        "weighted_f1",
        "bias_category",
        "bias_error_type",
        "model",
        "similarity",
        "n_way",
        "k_shot",
        "seen_fraction",
        "seed",
        "t",
        "tau",
    ] {
        assert!(report.get(key).is_some(), "missing key {key}");
    }
    assert_eq!(report["similarity"], "cosine");

    // substituting a measure at inference time needs no retraining
    let eval_kl = dir.path().join("eval-kl");
    run_ok(bin()
        .arg("eval")
        .arg("--corpus")
        .arg(&corpus)
        .arg("--encoder")
        .arg(&enc_dir)
        .arg("--checkpoint")
        .arg(run_a.join("head.ckpt"))
        .args(["--split-mode", "same", "--k-shot", "2", "--seed", "7", "--similarity", "kl"])
        .arg("--out")
        .arg(&eval_kl));

    // the full sweep emits one row per measure
    let eval_all = dir.path().join("eval-all");
    run_ok(bin()
        .arg("eval")
        .arg("--corpus")
        .arg(&corpus)
        .arg("--encoder")
        .arg(&enc_dir)
        .arg("--checkpoint")
        .arg(run_a.join("head.ckpt"))
        .args(["--split-mode", "same", "--k-shot", "2", "--seed", "7", "--similarity", "all"])
        .arg("--out")
        .arg(&eval_all));
    let sweep = std::fs::read_to_string(eval_all.join("sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 14, "header plus 13 measures");

    // eval with identical flags reproduces the report byte for byte
    let eval_dir2 = dir.path().join("eval2");
    run_ok(bin()
        .arg("eval")
        .arg("--corpus")
        .arg(&corpus)
        .arg("--encoder")
        .arg(&enc_dir)
        .arg("--checkpoint")
        .arg(run_a.join("head.ckpt"))
        .args(["--split-mode", "same", "--k-shot", "2", "--seed", "7"])
        .arg("--out")
        .arg(&eval_dir2));
    assert_eq!(
        std::fs::read(eval_dir.join("report.json")).unwrap(),
        std::fs::read(eval_dir2.join("report.json")).unwrap()
    );

    // report consolidates runs into CSV and markdown
    let report_dir = dir.path().join("report");
    run_ok(bin()
        .arg("report")
        .arg(&eval_dir)
        .arg(&eval_kl)
        .arg("--out")
        .arg(&report_dir));
    let csv = std::fs::read_to_string(report_dir.join("consolidated.csv")).unwrap();
    assert!(csv.starts_with("model,seen_fraction,k_shot,similarity"));
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.contains("bias"));
    assert!(report_dir.join("consolidated.md").exists());
}

#[test]
fn train_with_too_many_ways_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = ingest(dir.path());
    let enc_dir = dir.path().join("enc");
    run_ok(bin()
        .arg("pretrain")
        .arg("--corpus")
        .arg(&corpus)
        .args(["--epochs", "0", "--l-seq", "8", "--d-h", "12", "--seed", "3"])
        .arg("--out")
        .arg(&enc_dir));
    let out = bin()
        .arg("train")
        .arg("--corpus")
        .arg(&corpus)
        .arg("--encoder")
        .arg(&enc_dir)
        .args([
            "--split-mode", "same", "--n-way", "9", "--k-shot", "1", "--q-query", "1",
            "--max-episodes", "5", "--seed", "1",
        ])
        .arg("--out")
        .arg(dir.path().join("run"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("classes"));
}

#[test]
fn config_file_fills_defaults_and_rejects_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.conf");
    std::fs::write(&good, "min-count=45\n").unwrap();
    let out_dir = dir.path().join("ingest");
    let out = run_ok(bin()
        .arg("ingest")
        .arg(sample_atis())
        .args(["--format", "atis"])
        .arg("--config")
        .arg(&good)
        .arg("--out")
        .arg(&out_dir));
    // min-count 45 keeps only the 60- and 50-sample classes
    assert!(String::from_utf8_lossy(&out.stdout).contains("classes: 2"));

    let bad = dir.path().join("bad.conf");
    std::fs::write(&bad, "bogus-key=1\n").unwrap();
    let out = bin()
        .arg("ingest")
        .arg(sample_atis())
        .args(["--format", "atis"])
        .arg("--config")
        .arg(&bad)
        .arg("--out")
        .arg(dir.path().join("x"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn report_on_missing_directory_fails() {
    let out = bin()
        .arg("report")
        .arg("/nonexistent/run")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}
