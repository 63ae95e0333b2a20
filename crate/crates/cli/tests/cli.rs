use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const SMALL_TRAIN: &str = "\
heldout_docs = 30
pipeline.seq_len = 16
pipeline.embedding_dim = 8
pipeline.hidden = 16
pipeline.surrogates = 2
pipeline.pretrain.hidden = 16
pipeline.pretrain.epochs = 60
pipeline.pretrain.embedding_lr_scale = 30
pipeline.pretrain.rank = 3
pipeline.train.epochs = 60
pipeline.accuracy_floor = 0.8
";

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_onmanifold"));
    c.env("RUST_LOG", "warn").env_remove("ONMANIFOLD_RUN_DIR");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Generates a small corpus and trains a bundle; returns (data dir, train dir).
fn small_bundle(root: &Path) -> (PathBuf, PathBuf) {
    let data = root.join("data");
    let out = run(&[
        "gen-data",
        "--run-dir",
        p(&data),
        "--docs",
        "330",
        "--vocab-size",
        "200",
        "--seed",
        "4",
        "--set",
        "corpus.min_length=10",
        "--set",
        "corpus.max_length=20",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let conf = root.join("small.conf");
    std::fs::write(&conf, SMALL_TRAIN).unwrap();
    let train = root.join("train");
    let out = run(&[
        "train",
        "-c",
        p(&conf),
        "--corpus",
        p(&data.join("corpus.csv")),
        "--run-dir",
        p(&train),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    (data, train)
}

#[test]
fn explain_flags_at_most_k_words_per_method() {
    let dir = tempfile::tempdir().unwrap();
    let (data, train) = small_bundle(dir.path());
    let out_dir = dir.path().join("explain");
    let out = run(&[
        "explain",
        "--model",
        p(&train.join("model")),
        "--input",
        p(&data.join("corpus.csv")),
        "--truth",
        p(&data.join("corpus.truth.json")),
        "-k",
        "10",
        "-t",
        "0.1",
        "--run-dir",
        p(&out_dir),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let all = read_json(&out_dir.join("explanations.json"));
    let docs = all["documents"].as_array().unwrap();
    assert_eq!(docs.len(), 330);
    assert_eq!(all["threshold"]["value"], 0.1);
    for d in docs {
        for method in ["ours", "max_norm"] {
            let selected = d[method]["selected"].as_array().unwrap();
            assert!(selected.len() <= 10);
            for w in selected {
                let pos = w["position"].as_u64().unwrap() as usize;
                let flags = d["words"][pos]["selected_by"].as_array().unwrap();
                assert!(flags.iter().any(|f| f == method), "{d}");
            }
        }
        for w in d["ours"]["selected"].as_array().unwrap() {
            assert!(w["normalized_norm"].as_f64().unwrap() < 0.1);
        }
    }
    let precision = read_json(&out_dir.join("precision.json"));
    assert_eq!(precision["documents"], 330);
    assert!(out_dir.join("index.html").exists());
    let html = std::fs::read_to_string(out_dir.join("docs/00000_doc00000.html")).unwrap();
    assert!(!html.contains("<script"));
}

#[test]
fn missing_surrogate_exits_1_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let (data, train) = small_bundle(dir.path());
    let missing = train.join("model").join("surrogate1.json");
    std::fs::remove_file(&missing).unwrap();
    let out = run(&[
        "explain",
        "--model",
        p(&train.join("model")),
        "--input",
        p(&data.join("corpus.csv")),
        "--run-dir",
        p(&dir.path().join("explain")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains(p(&missing)), "{err}");
    assert!(!dir.path().join("explain").exists());
}

#[test]
fn runs_reproduce_from_resolved_config() {
    let dir = tempfile::tempdir().unwrap();
    let (_, train) = small_bundle(dir.path());
    let again = dir.path().join("again");
    let out = run(&["train", "-c", p(&train.join("resolved_config.txt")), "--run-dir", p(&again)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for file in [
        "resolved_config.txt",
        "training.json",
        "lineage.json",
        "model/manifest.json",
        "model/classifier.json",
        "model/surrogate0.json",
        "model/embedding0.json",
    ] {
        let a = std::fs::read(train.join(file)).unwrap();
        let b = std::fs::read(again.join(file)).unwrap();
        assert!(a == b, "{file} differs");
    }
    let meta = read_json(&train.join("metadata.json"));
    assert!(meta["started_unix"].as_f64().unwrap() > 0.0);
}

#[test]
fn analyze_reports_embedding_and_histogram() {
    let dir = tempfile::tempdir().unwrap();
    let (data, train) = small_bundle(dir.path());
    let out_dir = dir.path().join("analyze");
    let out = run(&[
        "analyze",
        "--model",
        p(&train.join("model")),
        "--input",
        p(&data.join("corpus.csv")),
        "--run-dir",
        p(&out_dir),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["manifold.json", "manifold.svg", "histogram.csv", "histogram.svg", "threshold.json"] {
        assert!(out_dir.join(f).exists(), "{f}");
    }
    let t = read_json(&out_dir.join("threshold.json"));
    assert!(t["threshold"].as_f64().unwrap() > 0.0);
}

#[test]
fn verify_theorem_default_scale_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("verify");
    let out = run(&[
        "verify-theorem",
        "--trials",
        "200",
        "--ambient-dim",
        "512",
        "--codim",
        "256",
        "--width",
        "1024",
        "--run-dir",
        p(&out_dir),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = read_json(&out_dir.join("theorem.json"));
    assert_eq!(r["violation_rate"], 0.0);
    assert_eq!(r["trials"].as_array().unwrap().len(), 200);
}

#[test]
fn failed_check_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "verify-theorem",
        "--experiments",
        "corollary",
        "--set",
        "corollary.codims=8,16,32",
        "--set",
        "corollary.width=32",
        "--set",
        "corollary.trials=20",
        "--set",
        "corollary.tolerance=0",
        "--run-dir",
        p(&dir.path().join("v")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let summary = read_json(&dir.path().join("v/verify_summary.json"));
    assert_eq!(summary["corollary"], false);
}

#[test]
fn configuration_errors_exit_1_and_name_the_key() {
    let out = run(&["train", "--set", "pipeline.trian.epochs=3"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("pipeline.trian.epochs"));
    let out = run(&["explain", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(1));
    let out = run(&["train"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--corpus"));
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("bad.conf");
    std::fs::write(&conf, "k = 10\nthreshold = high\n").unwrap();
    let out = run(&["explain", "-c", p(&conf)]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn run_dir_defaults_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .env("ONMANIFOLD_RUN_DIR", dir.path())
        .args(["gen-data", "--docs", "20", "--vocab-size", "100"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("gen-data/corpus.csv").exists());
    assert!(dir.path().join("gen-data/resolved_config.txt").exists());
}

#[test]
fn print_config_flags_override_file() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("c.conf");
    std::fs::write(&conf, "k = 3\nthreshold = 0.2\n").unwrap();
    let out = run(&["explain", "-c", p(&conf), "-k", "7", "--print-config"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("\nk = 7\n"), "{text}");
    assert!(text.contains("threshold = 0.2"), "{text}");
}

#[test]
fn shipped_presets_parse() {
    let presets = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/presets");
    for (command, file) in [
        ("gen-data", "full-scale-gen-data.conf"),
        ("train", "full-scale-train.conf"),
        ("explain", "milli-filter.conf"),
        ("analyze", "milli-filter.conf"),
    ] {
        let out = run(&[command, "-c", p(&presets.join(file)), "--print-config"]);
        assert!(out.status.success(), "{file}: {}", String::from_utf8_lossy(&out.stderr));
    }
}
