use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn streamwait(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_streamwait"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = streamwait(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    streamwait(dir, args).status.code().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) {
    std::fs::write(dir.join(name), text).unwrap();
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

#[test]
fn masks_prints_the_grid() {
    let dir = TempDir::new().unwrap();
    let grid = ok(dir.path(), &["masks", "--encoder", "pbe", "--k", "2", "--len", "4"]);
    assert_eq!(grid, "1100\n1100\n1110\n1111\n");
    let uni = ok(dir.path(), &["masks", "--encoder", "unidirectional", "--len", "3"]);
    assert_eq!(uni, "100\n110\n111\n");
    let bi = ok(dir.path(), &["masks", "--encoder", "bidirectional", "--len", "3", "--available", "2"]);
    assert!(bi.starts_with("110\n110\n"), "{bi}");
}

#[test]
fn bleu_of_identical_text_is_perfect() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "refs.txt", "a b c d e\nf g h i\n");
    write(dir.path(), "hyp.txt", "a b c d e\nf g h i\n");
    let out = ok(dir.path(), &["bleu", "--hyp", "hyp.txt", "--refs", "refs.txt"]);
    assert!(out.starts_with("BLEU = 100.00"), "{out}");
    let json = ok(dir.path(), &["bleu", "--hyp", "hyp.txt", "--refs", "refs.txt", "--json"]);
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert!(v.is_object());

    write(dir.path(), "short.txt", "a b c d e\n");
    assert_eq!(code(dir.path(), &["bleu", "--hyp", "short.txt", "--refs", "refs.txt"]), 3);
}

#[test]
fn resegment_recovers_reference_boundaries() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "refs.txt", "the cat sat\non the mat\n");
    write(dir.path(), "hyp.txt", "the cat sat on the mat\n");
    ok(dir.path(), &["resegment", "--hyp", "hyp.txt", "--refs", "refs.txt", "--out", "seg.txt"]);
    assert_eq!(read(dir.path(), "seg.txt"), "the cat sat\non the mat\n");
}

#[test]
fn latency_of_a_handwritten_trace() {
    let dir = TempDir::new().unwrap();
    // wait-1 over one sentence of three tokens: delays 1, 2, 3
    let mut trace = String::new();
    for i in 1..=3 {
        trace += &format!("{{\"time\":{},\"action\":\"READ\",\"src_pos\":{i},\"sentence\":1}}\n", 2 * i - 2);
        trace += &format!("{{\"time\":{},\"action\":\"WRITE\",\"tgt_pos\":{i},\"sentence\":1}}\n", 2 * i - 1);
    }
    write(dir.path(), "trace.jsonl", &trace);
    write(dir.path(), "seg.tsv", "1\t1\n");
    let csv = ok(dir.path(), &["latency", "--trace", "trace.jsonl", "--segmentation", "seg.tsv"]);
    let rows: Vec<Vec<f64>> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').skip(1).map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 2);
    let want = [6.0 / 9.0, 1.0, 1.0];
    for (got, want) in rows[0].iter().zip(want) {
        assert!((got - want).abs() < 1e-12, "{csv}");
    }
    let sentence = ok(
        dir.path(),
        &["latency", "--trace", "trace.jsonl", "--segmentation", "seg.tsv", "--mode", "sentence"],
    );
    assert_eq!(sentence, csv);

    write(dir.path(), "bad.jsonl", "not json\n");
    assert_eq!(code(dir.path(), &["latency", "--trace", "bad.jsonl", "--segmentation", "seg.tsv"]), 3);
    assert_eq!(
        code(dir.path(), &["latency", "--trace", "trace.jsonl", "--segmentation", "seg.tsv", "--dal-scale", "0"]),
        2
    );
}

#[test]
fn end_to_end_workflow() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(d, &[
        "generate-task", "--task", "copy", "--documents", "12", "--seed", "1",
        "--out-source", "src.txt", "--out-target", "tgt.txt", "--out-index", "docs.tsv",
    ]);
    let docs = read(d, "docs.tsv");
    assert_eq!(docs.lines().count(), 12);
    let sentences = read(d, "src.txt").lines().count();
    assert_eq!(read(d, "tgt.txt").lines().count(), sentences);

    ok(d, &[
        "build-corpus", "--source", "src.txt", "--target", "tgt.txt", "--index", "docs.tsv",
        "--history", "5", "--out-source", "train.src", "--out-target", "train.tgt",
    ]);
    assert_eq!(read(d, "train.src").lines().count(), sentences);

    ok(d, &[
        "train-toy", "--source", "train.src", "--target", "train.tgt", "--encoder", "pbe",
        "--history", "5", "--steps", "10", "--dim", "16", "--ffn", "32", "--out", "model.json",
    ]);

    ok(d, &[
        "decode", "--checkpoint", "model.json", "--source", "src.txt", "--k", "2",
        "--out", "hyp.txt", "--trace", "trace.jsonl", "--segmentation", "seg.tsv",
    ]);
    assert_eq!(read(d, "hyp.txt").lines().count(), sentences);
    assert_eq!(read(d, "seg.tsv").lines().count(), sentences);
    let latency = ok(d, &["latency", "--trace", "trace.jsonl", "--segmentation", "seg.tsv"]);
    assert_eq!(latency.lines().count(), sentences + 2);

    write(d, "run.toml", "seed = 4\n[policy]\nk = 2\n[model]\ncheckpoint = \"model.json\"\nhistory = 5\n[data]\nsource = \"src.txt\"\nrefs = \"tgt.txt\"\n");
    // relative paths in the config resolve against its directory, not the working directory
    let elsewhere = TempDir::new().unwrap();
    let config = d.join("run.toml");
    let reports = d.join("reports.json");
    let csv = ok(elsewhere.path(), &[
        "run", "--config", config.to_str().unwrap(), "--out", reports.to_str().unwrap(),
    ]);
    assert!(csv.starts_with("k,gamma,window,history,BLEU,AP,AL,DAL\n"), "{csv}");
    assert_eq!(csv.lines().count(), 2);
    let again = ok(d, &["report", "--input", "reports.json"]);
    assert_eq!(again, csv);
    let plot = ok(d, &["report", "--input", "reports.json", "--format", "plot-data", "--axis", "dal"]);
    let v: serde_json::Value = serde_json::from_str(&plot).unwrap();
    assert_eq!(v["x_axis"], "DAL");

    // flags override the file
    let k4 = ok(d, &["run", "--config", "run.toml", "--k", "4", "--window", "1"]);
    assert!(k4.lines().nth(1).unwrap().starts_with("4,1,1,5,"), "{k4}");

    assert_eq!(code(d, &["run", "--config", "missing.toml"]), 2);
    write(d, "typo.toml", "[policy]\nkk = 2\n");
    assert_eq!(code(d, &["run", "--config", "typo.toml"]), 2);
    assert_eq!(code(d, &["run", "--source", "src.txt", "--refs", "tgt.txt", "--k", "2"]), 2);
    assert_eq!(
        code(d, &["decode", "--checkpoint", "nope.json", "--source", "src.txt", "--k", "2"]),
        2
    );
    assert_eq!(code(d, &["decode", "--checkpoint", "model.json", "--source", "src.txt", "--k", "0"]), 2);
}

#[test]
fn segmenter_round_trip() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(d, &[
        "generate-task", "--task", "copy", "--documents", "10", "--seed", "2",
        "--out-source", "src.txt", "--out-target", "tgt.txt", "--out-index", "docs.tsv",
    ]);
    ok(d, &[
        "train-segmenter", "--sentences", "src.txt", "--window", "1", "--steps", "20", "--out", "seg.json",
    ]);
    let out = ok(d, &["segment", "--params", "seg.json", "--input", "src.txt"]);
    let total: usize = read(d, "src.txt").split_whitespace().count();
    let ends: Vec<usize> = out.lines().map(|l| l.trim().parse().unwrap()).collect();
    assert!(ends.windows(2).all(|p| p[0] < p[1]));
    assert_eq!(*ends.last().unwrap(), total);
    assert_eq!(code(d, &["segment", "--params", "absent.json", "--input", "src.txt"]), 2);
}

#[test]
fn unknown_flags_are_usage_errors() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(dir.path(), &["masks", "--len", "3", "--bogus"]), 2);
    assert_eq!(code(dir.path(), &["masks", "--len", "3", "--encoder", "sideways"]), 2);
}
