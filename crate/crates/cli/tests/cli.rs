use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_tabqual");

fn tabqual(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .arg("--quiet")
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = tabqual(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    tabqual(dir, args).status.code().expect("exit code")
}

fn csv_rows(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().count() - 1
}

/// Labeled and unlabeled synthetic corpora in a fresh directory.
fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["synth", "generate", "--out", "lab", "--n-docs", "80", "--seed", "1"]);
    ok(dir.path(), &["synth", "generate", "--out", "unl", "--n-docs", "60", "--seed", "2", "--id-prefix", "u"]);
    dir
}

#[test]
fn scoring_pipeline_end_to_end() {
    let w = workspace();
    let d = w.path();
    ok(d, &["synth", "corrupt", "--corpus", "lab", "--out", "preds", "--seed", "3"]);
    let summary = ok(d, &["eval", "--corpus", "lab", "--predictions", "preds", "--out", "ev"]);
    assert!(summary.contains("docs 80"), "{summary}");
    assert_eq!(csv_rows(&d.join("ev/per_doc.csv")), 80);

    ok(d, &["features", "--corpus", "lab", "--predictions", "preds", "--lexicon-min-docs", "3", "--out", "f.csv"]);
    ok(d, &["fit-stats", "--features", "f.csv", "--out", "stats.json"]);
    ok(d, &["transform", "--features", "f.csv", "--stats", "stats.json", "--out", "v.csv"]);
    let header = fs::read_to_string(d.join("v.csv")).unwrap().lines().next().unwrap().to_string();
    assert_eq!(header.split(',').count(), 1 + 108);

    ok(d, &["train-quality", "--vectors", "v.csv", "--labels", "ev/per_doc.csv", "--trials", "2", "--importance", "imp.csv", "--out", "m.json"]);
    assert_eq!(csv_rows(&d.join("imp.csv")), 108);
    ok(d, &["score", "--model", "m.json", "--vectors", "v.csv", "--out", "s.csv"]);
    assert_eq!(csv_rows(&d.join("s.csv")), 80);

    ok(d, &["filter", "--scores", "s.csv", "--alpha", "0.5", "--out", "loose.csv"]);
    ok(d, &["filter", "--scores", "s.csv", "--alpha", "0.9", "--out", "tight.csv"]);
    let ids = |p: &str| -> Vec<String> {
        fs::read_to_string(d.join(p)).unwrap().lines().skip(1).map(str::to_owned).collect()
    };
    let (loose, tight) = (ids("loose.csv"), ids("tight.csv"));
    assert!(tight.iter().all(|t| loose.contains(t)));

    ok(d, &["diversify", "--train-features", "f.csv", "--candidates", "f.csv", "--stats", "stats.json", "--k-max", "4", "--out", "div"]);
    let chosen = fs::read_to_string(d.join("div/selected.txt")).unwrap();
    assert!((1..=4).contains(&chosen.lines().count()));
    assert!(d.join("div/decision_trace.csv").is_file());
}

#[test]
fn subcommands_are_idempotent() {
    let w = workspace();
    let d = w.path();
    for out in ["p1", "p2"] {
        ok(d, &["synth", "corrupt", "--corpus", "lab", "--out", out, "--seed", "9"]);
        ok(d, &["eval", "--corpus", "lab", "--predictions", out, "--out", &format!("{out}-ev")]);
        ok(d, &["features", "--corpus", "lab", "--predictions", out, "--out", &format!("{out}.csv")]);
    }
    let same = |a: &str, b: &str| fs::read(d.join(a)).unwrap() == fs::read(d.join(b)).unwrap();
    assert!(same("p1-ev/per_doc.csv", "p2-ev/per_doc.csv"));
    assert!(same("p1-ev/metrics.json", "p2-ev/metrics.json"));
    assert!(same("p1.csv", "p2.csv"));
    // rerunning into an existing output replaces it with identical content
    ok(d, &["eval", "--corpus", "lab", "--predictions", "p1", "--out", "p1-ev"]);
    assert!(same("p1-ev/per_doc.csv", "p2-ev/per_doc.csv"));
}

#[test]
fn curation_writes_one_verdict_per_document() {
    let w = tempfile::tempdir().unwrap();
    let d = w.path();
    ok(d, &["synth", "generate", "--out", "pages", "--n-docs", "12", "--hints"]);
    ok(d, &["curate", "--corpus", "pages", "--out", "cur"]);
    assert_eq!(csv_rows(&d.join("cur/verdicts.csv")), 12);
    let kept = fs::read_to_string(d.join("cur/kept.txt")).unwrap().lines().count();
    assert!(kept <= 12);
}

fn write_config(dir: &Path, name: &str, out: &str, extractor: serde_json::Value) -> PathBuf {
    let cfg = serde_json::json!({
        "labeled_dir": "lab",
        "unlabeled_dir": "unl",
        "out_dir": out,
        "ssl": { "max_iterations": 2, "lexicon_min_docs": 3, "search": { "n_trials": 2 } },
        "extractor": extractor,
    });
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

#[test]
fn run_ssl_and_report() {
    let w = workspace();
    let d = w.path();
    write_config(d, "stub.json", "run", serde_json::json!({ "kind": "stub" }));
    let stdout = ok(d, &["run-ssl", "--config", "stub.json"]);
    assert!(stdout.contains("it0\t") && stdout.contains("best iteration"), "{stdout}");
    for f in ["config.json", "summary.json", "quality/model.json", "quality/stats.json", "it0/scores.csv"] {
        assert!(d.join("run").join(f).is_file(), "missing {f}");
    }

    ok(d, &["report", "--run", "run", "--out", "rep"]);
    let report: serde_json::Value = serde_json::from_slice(&fs::read(d.join("rep/report.json")).unwrap()).unwrap();
    let n_iter = csv_rows(&d.join("rep/history.csv"));
    assert!(n_iter >= 2);
    assert!(report["best_iteration"].as_u64().unwrap() < n_iter as u64);
    assert!(csv_rows(&d.join("rep/correlation.csv")) > 0);

    // same config and seed, same results
    write_config(d, "again.json", "run2", serde_json::json!({ "kind": "stub" }));
    ok(d, &["run-ssl", "--config", "again.json"]);
    assert_eq!(
        fs::read(d.join("run/summary.json")).unwrap(),
        fs::read(d.join("run2/summary.json")).unwrap()
    );
}

#[test]
fn run_ssl_drives_an_external_extractor() {
    let w = workspace();
    let d = w.path();
    let oracle = d.join("unl");
    let command = format!("{BIN} --quiet synth stub-extractor --oracle-dir {}", oracle.display());
    write_config(d, "cmd.json", "run", serde_json::json!({ "kind": "command", "command": command }));
    let stdout = ok(d, &["run-ssl", "--config", "cmd.json", "--max-iterations", "1"]);
    assert!(stdout.contains("it1\t"), "{stdout}");
    let manifest = fs::read_to_string(d.join("run/it1/training_manifest.json")).unwrap();
    assert!(manifest.contains("lab"));
}

#[test]
fn exit_codes() {
    let w = workspace();
    let d = w.path();
    assert_eq!(code(d, &["--help"]), 0);
    assert_eq!(code(d, &["no-such-command"]), 1);
    assert_eq!(code(d, &["eval", "--corpus", "lab"]), 1);
    assert_eq!(code(d, &["--workers", "0", "eval", "--corpus", "lab", "--predictions", "x", "--out", "y"]), 1);
    assert_eq!(code(d, &["eval", "--corpus", "missing", "--predictions", "x", "--out", "y"]), 2);
    assert_eq!(code(d, &["filter", "--scores", "nope.csv", "--alpha", "0.5", "--out", "k.csv"]), 2);

    write_config(d, "bad.json", "bad", serde_json::json!({ "kind": "command", "command": "false" }));
    assert_eq!(code(d, &["run-ssl", "--config", "bad.json"]), 3);
    assert!(!d.join("bad").exists(), "failed run left a partial output directory");
}
