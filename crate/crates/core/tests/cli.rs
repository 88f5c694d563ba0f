//! End-to-end runs of the `qsim` binary on a generated dataset.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use qsim::experiment::read_annotations;

fn qsim(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qsim"))
        .current_dir(dir)
        .env_remove("QSIM_WORKERS")
        .args(args)
        .output()
        .expect("running qsim")
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// A generated dataset with a small, fast experiment config.
fn dataset() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    ok(qsim(dir.path(), &["synth", "--out", "data"]));
    let data = dir.path().join("data");
    for f in ["corpus.tsv", "embeddings.txt", "train.tsv", "dev.tsv", "experiment.txt"] {
        assert!(data.join(f).is_file(), "{f} missing");
    }
    (dir, data)
}

const FAST: [&str; 8] = [
    "-s",
    "max_epochs=2",
    "-s",
    "pretrain=false",
    "-s",
    "hidden_dim=8",
    "-s",
    "batch_size=25",
];

fn with_fast<'a>(args: &[&'a str]) -> Vec<&'a str> {
    let mut all = vec!["-c", "experiment.txt"];
    all.extend_from_slice(&FAST);
    all.extend_from_slice(args);
    all
}

#[test]
fn train_five_seeds_then_evaluate() {
    let (_tmp, data) = dataset();
    let stdout = ok(qsim(
        &data,
        &with_fast(&["-s", "runs=5", "-s", "output_dir=five", "train"]),
    ));
    let out = data.join("five");
    for seed in 1..=5 {
        let run = out.join(format!("run_{seed}"));
        for f in ["model.ckpt", "history.csv", "history.jsonl"] {
            assert!(run.join(f).is_file(), "run_{seed}/{f} missing");
        }
        // header plus epochs 0..=2
        assert_eq!(fs::read_to_string(run.join("history.csv")).unwrap().lines().count(), 4);
    }
    let table = fs::read_to_string(out.join("summary.tsv")).unwrap();
    assert_eq!(table, stdout);
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 7);
    assert!(lines[0].starts_with("seed\tmethod\tpooling\tdev MAP"));
    assert_eq!(
        lines[1..6]
            .iter()
            .map(|l| l.split('\t').next().unwrap())
            .collect::<Vec<_>>(),
        ["1", "2", "3", "4", "5"]
    );
    assert!(lines[6].starts_with("mean\tRCNN\t"));
    assert!(lines.iter().all(|l| l.split('\t').count() == 11));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["runs"].as_array().unwrap().len(), 5);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("train.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seeds"], serde_json::json!([1, 2, 3, 4, 5]));
    assert!(out.join("train.config.txt").is_file());

    let eval = ok(qsim(
        &data,
        &with_fast(&[
            "-s",
            "output_dir=five",
            "evaluate",
            "--checkpoint",
            "five/run_3/model.ckpt",
        ]),
    ));
    let rows: Vec<&str> = eval.lines().collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0].split('\t').count(), 10);
    let cells: Vec<&str> = rows[1].split('\t').collect();
    assert_eq!(&cells[..2], ["RCNN", "last"]);
    let dev_map: f64 = cells[2].parse().unwrap();
    assert!((0.0..=100.0).contains(&dev_map));
    assert_eq!(&cells[6..], ["-", "-", "-", "-"]);

    let bm25 = ok(qsim(
        &data,
        &with_fast(&["-s", "output_dir=five", "evaluate", "--baseline", "bm25"]),
    ));
    assert!(bm25.lines().nth(1).unwrap().starts_with("BM25\t-\t"));

    let sig = ok(qsim(
        &data,
        &with_fast(&[
            "-s",
            "output_dir=five",
            "-s",
            "significance_resamples=1000",
            "evaluate",
            "--checkpoint",
            "five/run_1/model.ckpt",
            "--against",
            "five/run_2/model.ckpt",
        ]),
    ));
    assert!(sig.lines().count() >= 3, "{sig}");
}

#[test]
fn repeated_runs_are_identical() {
    let (_tmp, data) = dataset();
    for dir in ["a", "b"] {
        ok(qsim(
            &data,
            &with_fast(&["-s", "runs=2", "-s", &format!("output_dir={dir}"), "train"]),
        ));
    }
    for f in [
        "summary.tsv",
        "summary.json",
        "run_1/model.ckpt",
        "run_2/model.ckpt",
        "run_2/history.jsonl",
    ] {
        assert_eq!(
            fs::read(data.join("a").join(f)).unwrap(),
            fs::read(data.join("b").join(f)).unwrap(),
            "{f} differs"
        );
    }
}

#[test]
fn exit_codes() {
    let (_tmp, data) = dataset();
    let code = |out: Output| (out.status.code(), String::from_utf8_lossy(&out.stderr).into_owned());

    let (c, err) = code(qsim(&data, &with_fast(&["-s", "architecture=transformer", "train"])));
    assert_eq!(c, Some(1));
    assert!(err.contains("architecture"), "{err}");

    let (c, err) = code(qsim(&data, &with_fast(&["-s", "no_such_key=1", "train"])));
    assert_eq!(c, Some(1));
    assert!(err.contains("no_such_key"), "{err}");

    let (c, _) = code(qsim(&data, &["frobnicate"]));
    assert_eq!(c, Some(1));

    let out = Command::new(env!("CARGO_BIN_EXE_qsim"))
        .current_dir(&data)
        .env("QSIM_WORKERS", "zero")
        .args(with_fast(&["evaluate", "--baseline", "bm25"]))
        .output()
        .unwrap();
    let (c, err) = code(out);
    assert_eq!(c, Some(1));
    assert!(err.contains("QSIM_WORKERS"), "{err}");

    fs::write(data.join("broken.tsv"), "1\ttitle one\tbody\nnot-a-number\tt\tb\n").unwrap();
    let (c, err) = code(qsim(
        &data,
        &with_fast(&["-s", "corpus=broken.tsv", "evaluate", "--baseline", "bm25"]),
    ));
    assert_eq!(c, Some(2));
    assert!(err.contains("broken.tsv:2"), "{err}");
}

#[test]
fn retrieved_pools_round_trip() {
    let (_tmp, data) = dataset();
    ok(qsim(
        &data,
        &with_fast(&["retrieve", "--save-index", "bm25.json", "--out", "pools.tsv"]),
    ));
    let pools = read_annotations(&data.join("pools.tsv"), 20).unwrap();
    let dev = read_annotations(&data.join("dev.tsv"), 20).unwrap();
    assert_eq!(pools.len() + pools.excluded, dev.len() + dev.excluded);
    assert!(!pools.is_empty());
    for q in &pools.queries {
        assert_eq!(q.candidates.len(), 20);
        assert!(!q.candidates.contains(&q.query_id));
    }
    ok(qsim(
        &data,
        &with_fast(&["retrieve", "--index", "bm25.json", "--out", "again.tsv"]),
    ));
    assert_eq!(
        fs::read(data.join("pools.tsv")).unwrap(),
        fs::read(data.join("again.tsv")).unwrap()
    );
    // the retrieved pools can stand in for the dev set
    let eval = ok(qsim(
        &data,
        &with_fast(&["-s", "dev=pools.tsv", "evaluate", "--baseline", "tfidf"]),
    ));
    assert!(eval.lines().nth(1).unwrap().starts_with("TF-IDF\t-\t"));
}

#[test]
fn pretrain_gates_and_decode() {
    let (_tmp, data) = dataset();
    ok(qsim(
        &data,
        &with_fast(&[
            "-s",
            "pretrain_epochs=1",
            "-s",
            "scalar_decay=true",
            "-s",
            "output_dir=pt",
            "pretrain",
        ]),
    ));
    let pt = data.join("pt/pretrain");
    for f in ["encoder.ckpt", "seq2seq.ckpt", "perplexity.csv"] {
        assert!(pt.join(f).is_file(), "{f} missing");
    }
    let ppl = fs::read_to_string(pt.join("perplexity.csv")).unwrap();
    assert_eq!(ppl.lines().next(), Some("epoch,train_loss,heldout_perplexity"));

    let profile = ok(qsim(
        &data,
        &with_fast(&["analyze-gates", "--checkpoint", "pt/pretrain/encoder.ckpt", "--profile"]),
    ));
    assert_eq!(profile.lines().next(), Some("position,max,mean,count"));
    assert!(profile.lines().count() > 2);

    let trace = ok(qsim(
        &data,
        &with_fast(&[
            "analyze-gates",
            "--checkpoint",
            "pt/pretrain/encoder.ckpt",
            "--trace",
            "1",
            "--heatmap",
        ]),
    ));
    assert!(trace.contains("token,weight"));

    let decoded = qsim(
        &data,
        &with_fast(&[
            "decode",
            "--checkpoint",
            "pt/pretrain/seq2seq.ckpt",
            "--question",
            "1",
            "--max-len",
            "5",
        ]),
    );
    let text = ok(decoded);
    assert!(text.split_whitespace().count() <= 5);

    // an encoder checkpoint is not a decoder
    let wrong = qsim(
        &data,
        &with_fast(&["decode", "--checkpoint", "pt/pretrain/encoder.ckpt", "--question", "1"]),
    );
    assert_ne!(wrong.status.code(), Some(0));
}
