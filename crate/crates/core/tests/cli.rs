use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use gru4rec::cli::RunManifest;
use gru4rec::synthetic::PlantedRule;

fn gru4rec(args: &[&str], data_root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gru4rec"))
        .args(args)
        .env("GRU4REC_DATA_ROOT", data_root)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// A raw generic TSV following a planted rule, one session per 10 minutes.
fn write_raw(path: &Path) {
    let rule = PlantedRule::new(30, 9);
    let mut text = String::from("SessionId\tItemId\tTime\n");
    let mut t = 0u64;
    for (s, items) in rule.sessions(1500, 2, 6, 10).iter().enumerate() {
        for i in items {
            text.push_str(&format!("{s}\tsku-{i}\t{t}\n"));
            t += 20;
        }
        t += 600;
    }
    fs::write(path, text).unwrap();
}

#[test]
fn preprocess_train_eval_baseline_pipeline() {
    let root = tempfile::tempdir().unwrap();
    write_raw(&root.path().join("raw.tsv"));
    let work = root.path().join("work");
    let w = |p: &str| work.join(p).display().to_string();

    // Relative input resolved through the data root.
    let out = gru4rec(
        &["preprocess", "--dataset", "generic-tsv", "--input", "raw.tsv", "--output-dir", &w("data"), "--test-days", "1"],
        root.path(),
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let stats: serde_json::Value = serde_json::from_str(&fs::read_to_string(work.join("data/stats.json")).unwrap()).unwrap();
    assert!(stats["train"]["events"].as_u64().unwrap() > 1000);
    assert!(stats["test"]["sessions"].as_u64().unwrap() > 0);

    let train = [
        "train", "--train", &w("data/train.tsv"), "--output", &w("model.gru"), "--layers", "32",
        "--batch_size", "16", "--n_sample", "16", "--learning_rate", "0.1", "--n_epochs", "3",
        "--sample_cache", "10000",
    ];
    let out = gru4rec(&train, root.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let manifest: RunManifest =
        serde_json::from_str(&fs::read_to_string(work.join("model.gru.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.command, "train");
    assert_eq!(manifest.seed, Some(42));
    assert_eq!(manifest.checksums.len(), 3);
    assert!(work.join("model.gru.items.tsv").is_file());

    let out = gru4rec(&["eval", "--model", &w("model.gru"), "--test", &w("data/test.tsv"), "--output-dir", &w("eval")], root.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let rows: Vec<String> = fs::read_to_string(work.join("eval/eval.tsv")).unwrap().lines().map(String::from).collect();
    assert_eq!(rows.len(), 5);
    let recall20: f64 = rows[4].split('\t').nth(1).unwrap().parse().unwrap();
    assert!(recall20 > 0.9, "{rows:?}");
    let recall1: f64 = rows[1].split('\t').nth(1).unwrap().parse().unwrap();

    let out = gru4rec(
        &["baseline", "--train", &w("data/train.tsv"), "--test", &w("data/test.tsv"), "--output-dir", &w("eval"), "--cutoffs", "1"],
        root.path(),
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let rows = fs::read_to_string(work.join("eval/baseline.tsv")).unwrap();
    assert_eq!(rows.lines().count(), 2);
    let pop1: f64 = rows.lines().nth(1).unwrap().split('\t').nth(1).unwrap().parse().unwrap();
    assert!(recall1 > 3.0 * pop1, "recall@1: model {recall1} vs popularity {pop1}");
}

#[test]
fn exit_codes_follow_the_contract() {
    let root = tempfile::tempdir().unwrap();
    let p = |s: &str| root.path().join(s).display().to_string();

    let out = gru4rec(&["preprocess", "--dataset", "diginetica", "--input", "missing.csv", "--output-dir", &p("out")], root.path());
    assert_eq!(code(&out), 2);
    assert!(!root.path().join("out").exists());

    let out = gru4rec(&["preprocess", "--dataset", "nope", "--input", "x", "--output-dir", &p("out")], root.path());
    assert_eq!(code(&out), 1);

    fs::write(root.path().join("t.tsv"), "SessionId\tItemId\tTime\n1\ta\t0\n1\tb\t1\n").unwrap();
    let out = gru4rec(
        &["train", "--train", &p("t.tsv"), "--output", &p("m.gru"), "--loss", "cross-entropy", "--final_act", "relu", "--n_epochs", "0"],
        root.path(),
    );
    assert_eq!(code(&out), 1);
    let err = stderr(&out);
    assert!(err.contains("softmax") && err.contains("n_epochs"), "{err}");
    assert!(!root.path().join("m.gru").exists());

    fs::write(root.path().join("bad.gru"), b"GRU4REC\0not really a model file at all, just bytes").unwrap();
    let out = gru4rec(&["eval", "--model", &p("bad.gru"), "--test", &p("t.tsv"), "--output-dir", &p("ev")], root.path());
    assert_eq!(code(&out), 3);
}

#[test]
fn help_enumerates_hyperparameters() {
    let out = gru4rec(&["train", "--help"], Path::new("."));
    let help = String::from_utf8_lossy(&out.stdout);
    for key in gru4rec::training::PARAM_KEYS {
        assert!(help.contains(&format!("--{key}")), "--{key} missing from help");
    }
}
