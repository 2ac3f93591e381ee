use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn regmapr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_regmapr")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

const WORDS: [&str; 12] = ["a", "man", "dog", "cat", "runs", "sits", "the", "big", "large", "park", "plays", "small"];

/// Tiny corpus: label 1 iff the sentences share a word, so MA alone separates it.
fn write_corpus(dir: &Path) {
    let mut glove = String::new();
    for (i, w) in WORDS.iter().enumerate() {
        let v: Vec<String> = (0..5).map(|j| format!("{:.2}", ((i * 7 + j * 3) % 11) as f64 / 10.0 - 0.5)).collect();
        writeln!(glove, "{w} {}", v.join(" ")).unwrap();
    }
    std::fs::write(dir.join("glove.txt"), glove).unwrap();
    for (name, offset, n) in [("train.jsonl", 0, 24), ("dev.jsonl", 5, 8), ("test.jsonl", 9, 8)] {
        let mut s = String::new();
        for k in 0..n {
            let i = k + offset;
            let a = [WORDS[i % 6], WORDS[(i + 1) % 6]];
            let b = if k % 2 == 1 { [WORDS[6 + i % 6], a[0]] } else { [WORDS[6 + i % 6], WORDS[6 + (i + 2) % 6]] };
            writeln!(s, r#"{{"s1": "{} {}", "s2": "{} {}", "label": {}}}"#, a[0], a[1], b[0], b[1], k % 2).unwrap();
        }
        std::fs::write(dir.join(name), s).unwrap();
    }
    std::fs::write(
        dir.join("config.json"),
        r#"{"task": "paraphrase", "train_data": "train.jsonl", "dev_data": "dev.jsonl", "test_data": "test.jsonl",
            "glove": "glove.txt", "embedding_dim": 5, "hidden": 6, "head_hidden": 8, "mode": "MA",
            "batch_size": 4, "lr": 0.01, "max_epochs": 6, "d_e": 0.1, "d_f": 0.1, "d_w": 0.1}"#,
    )
    .unwrap();
}

#[test]
fn usage_errors_exit_1() {
    for args in [&["no-such-command"][..], &["ppdb-stats"], &["gradcheck", "--bogus"]] {
        let out = regmapr(args);
        assert_eq!(code(&out), 1, "{args:?}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("Usage: regmapr"), "{args:?}");
    }
    assert_eq!(code(&regmapr(&["train", "--lr", "x"])), 1);
    assert_eq!(code(&regmapr(&["--help"])), 0);
    let out = regmapr(&["train", "--task", "paraphrase"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("no training data"));
}

#[test]
fn missing_inputs_exit_2() {
    let out = regmapr(&["ppdb-stats", "/nonexistent/ppdb.txt"]);
    assert_eq!(code(&out), 2);
    let out = regmapr(&["analyze", "/nonexistent/data.jsonl", "--ppdb", "/nonexistent/ppdb"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn ppdb_stats_on_three_lines() {
    let path = fixture("three_lines.ppdb");
    let out = regmapr(&["--json", "ppdb-stats", path.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    assert_eq!(v["pair_count"], 2);
    assert_eq!(v["word_count"], 2);
    assert_eq!(v["build"]["lines"], 3);
    assert_eq!(v["build"]["self_pairs"], 1);
    assert_eq!(v["histogram"], serde_json::json!([[1, 2]]));
    let sym = json(&regmapr(&["--json", "ppdb-stats", path.to_str().unwrap(), "--symmetrize"]));
    assert_eq!(sym["pair_count"], 4);
    let table = regmapr(&["ppdb-stats", path.to_str().unwrap(), "--bin-width", "1"]);
    assert!(String::from_utf8_lossy(&table.stdout).contains("bin_start\tcount\n1\t2\n"));
}

#[test]
fn gradcheck_passes_and_fails_on_tolerance() {
    let out = regmapr(&["gradcheck", "--seed", "7"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("max relative error"));
    let strict = regmapr(&["gradcheck", "--probes", "1", "--tolerance", "1e-300"]);
    assert_eq!(code(&strict), 3);
}

#[test]
fn eval_reproduces_train_test_metrics_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path());
    let d = |n: &str| dir.path().join(n).to_str().unwrap().to_string();
    let out = regmapr(&[
        "--json",
        "--deterministic",
        "train",
        &d("config.json"),
        "--checkpoint",
        &d("model.ckpt"),
        "--report",
        &d("report.json"),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&out);
    assert_eq!(report, serde_json::from_str::<Value>(&std::fs::read_to_string(d("report.json")).unwrap()).unwrap());
    assert!(report["best_epoch"].as_u64().unwrap() >= 1);
    let eval = regmapr(&["--json", "eval", &d("model.ckpt"), &d("test.jsonl"), "--glove", &d("glove.txt")]);
    assert_eq!(code(&eval), 0, "{}", String::from_utf8_lossy(&eval.stderr));
    let eval = json(&eval);
    assert_eq!(eval["pairs"], 8);
    assert_eq!(eval["metrics"], report["test"]);
    for k in ["accuracy", "f1"] {
        let a = eval["metrics"]["values"][k].as_f64().unwrap();
        let b = report["test"]["values"][k].as_f64().unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

#[test]
fn train_is_reproducible_and_flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path());
    let cfg = dir.path().join("config.json");
    let run = |ckpt: &str, extra: &[&str]| {
        let ck = dir.path().join(ckpt);
        let mut args = vec!["--json", "--deterministic", "--seed", "3", "train", cfg.to_str().unwrap(), "--checkpoint", ck.to_str().unwrap()];
        args.extend_from_slice(extra);
        let out = regmapr(&args);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        (json(&out), std::fs::read(ck).unwrap())
    };
    let (r1, c1) = run("a.ckpt", &[]);
    let (r2, c2) = run("b.ckpt", &[]);
    assert_eq!(r1["batch_losses"], r2["batch_losses"]);
    assert_eq!(c1, c2);
    let (r3, _) = run("c.ckpt", &["--max-epochs", "2", "--no-rollback", "--decay-on", "prev"]);
    assert_eq!(r3["epochs"].as_array().unwrap().len(), 2);
    assert_eq!(r3["config"]["rollback"], false);
    assert_eq!(r3["config"]["decay_on"], "prev");
    assert_eq!(r3["config"]["seed"], 3);
}

#[test]
fn grid_sweeps_requested_points() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path());
    let cfg = dir.path().join("config.json");
    let out = regmapr(&[
        "--json",
        "grid",
        cfg.to_str().unwrap(),
        "--grid-d-e",
        "0,0.3",
        "--grid-d-f",
        "0",
        "--grid-d-w",
        "0,0.1",
        "--max-epochs",
        "2",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    let points = v["points"].as_array().unwrap();
    assert_eq!(points.len(), 4);
    let de: Vec<f64> = points.iter().map(|p| p["d_e"].as_f64().unwrap()).collect();
    assert_eq!(de, [0.0, 0.0, 0.3, 0.3]);
    let bad = regmapr(&["grid", cfg.to_str().unwrap(), "--grid-d-e", "1.5"]);
    assert_eq!(code(&bad), 1);
}

#[test]
fn analyze_and_featurize_fixture() {
    let core = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures");
    let data = core.join("analysis_pairs.jsonl");
    let ppdb = core.join("analysis_ppdb.txt");
    let out = regmapr(&["analyze", data.to_str().unwrap(), "--ppdb", ppdb.to_str().unwrap(), "--symmetrize"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let tsv = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = tsv.lines().collect();
    assert_eq!(lines[0], "feature\tR_P\tR_N\tR");
    assert_eq!(lines.len(), 4);
    assert!(lines[3].starts_with("MAPR\t"));
    assert_eq!(lines[3].split('\t').nth(3).unwrap().parse::<f64>().unwrap(), 2.0);

    let out = regmapr(&["featurize", data.to_str().unwrap(), "--ppdb", ppdb.to_str().unwrap(), "--symmetrize"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let records: Vec<Value> =
        String::from_utf8(out.stdout).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 6);
    // "the big dog" vs "the large puppy"
    assert_eq!(records[1]["bits1"], serde_json::json!([[1, 0], [0, 1], [0, 1]]));
    let needs_ppdb = regmapr(&["featurize", data.to_str().unwrap(), "--mode", "PR"]);
    assert_eq!(code(&needs_ppdb), 1);
}
