use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dbksvd::io::{load_codes, load_matrix};

fn dbksvd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dbksvd"))
        .args(args)
        .env("DBKSVD_LOG", "error")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = dbksvd(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Writes a planted problem under `dir` and returns its prefix.
fn planted(dir: &Path, d: usize, m: usize, k: usize, n: usize) -> PathBuf {
    let prefix = dir.join("planted");
    ok(&[
        "synth",
        "--out",
        p(&prefix),
        "--d",
        &d.to_string(),
        "--atoms",
        &m.to_string(),
        "--sparsity",
        &k.to_string(),
        "--samples",
        &n.to_string(),
        "--seed",
        "3",
    ]);
    prefix
}

fn history_rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

#[test]
fn synth_train_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    planted(dir.path(), 32, 64, 4, 4096);
    for suffix in [".y.emb1", ".dict.emb1", ".codes.spx1", ".json"] {
        assert!(dir.path().join(format!("planted{suffix}")).exists(), "{suffix}");
    }
    let y = dir.path().join("planted.y.emb1");
    let dict = dir.path().join("dict.emb1");
    ok(&[
        "train", "--data", p(&y), "--atoms", "64", "--sparsity", "4", "--iters", "10", "--batch", "1024",
        "--seed", "1", "--out", p(&dict), "--workers", "1",
    ]);
    assert_eq!(load_matrix(&dict).unwrap().shape(), (32, 64));

    let history = std::fs::read_to_string(dir.path().join("dict.history.csv")).unwrap();
    let mut lines = history.lines();
    assert_eq!(
        lines.next(),
        Some("iter,batch,mre_train,varexp_train,mre_val,varexp_val,encode_s,update_s")
    );
    let rows = history_rows(&dir.path().join("dict.history.csv"));
    assert_eq!(rows.len(), 10);
    let first: f64 = rows[0][2].parse().unwrap();
    let last: f64 = rows[9][2].parse().unwrap();
    assert!(last < first, "{first} -> {last}");

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("dict.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "completed");
    assert_eq!(manifest["config"]["sparsity"], 4);
    assert_eq!(manifest["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
    assert!(manifest["finished"].is_string());

    let out = ok(&["eval", "--dict", p(&dict), "--data", p(&y), "--sparsity", "4", "--workers", "1"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("metric,value\n"), "{text}");
    for key in ["mutual_coherence,", "welch_bound,", "recoverability_limit,", "mean_relative_error,", "variance_explained,"] {
        assert!(text.contains(key), "{key} missing from {text}");
    }
    let ve: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("variance_explained,"))
        .unwrap()
        .parse()
        .unwrap();
    assert!(ve > 0.5, "{ve}");
}

#[test]
fn missing_sparsity_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = planted(dir.path(), 8, 16, 2, 64);
    let y = format!("{}.y.emb1", p(&prefix));
    let dict = dir.path().join("s.emb1");
    let out = dbksvd(&["train", "--data", &y, "--atoms", "16", "--out", p(&dict)]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("--sparsity") && err.contains("Usage"), "{err}");
}

#[test]
fn groups_flag_selects_matryoshka() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = planted(dir.path(), 32, 64, 8, 1024);
    let y = format!("{}.y.emb1", p(&prefix));
    let dict = dir.path().join("m.emb1");
    ok(&[
        "train", "--data", &y, "--atoms", "64", "--sparsity", "8", "--iters", "2", "--batch", "512", "--groups",
        "16,48", "--out", p(&dict), "--workers", "1",
    ]);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("m.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["groups"], serde_json::json!([16, 48]));

    let bad = dbksvd(&[
        "train", "--data", &y, "--atoms", "64", "--sparsity", "8", "--groups", "16,40", "--out", p(&dict),
    ]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn manifest_rerun_reproduces_history() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = planted(dir.path(), 16, 32, 3, 2048);
    let y = format!("{}.y.emb1", p(&prefix));
    let a = dir.path().join("a.emb1");
    let b = dir.path().join("b.emb1");
    ok(&[
        "train", "--data", &y, "--atoms", "32", "--sparsity", "3", "--iters", "6", "--batch", "512", "--seed",
        "11", "--workers", "2", "--out", p(&a),
    ]);
    ok(&["train", "--from-manifest", p(&dir.path().join("a.manifest.json")), "--out", p(&b)]);
    let ra = history_rows(&dir.path().join("a.history.csv"));
    let rb = history_rows(&dir.path().join("b.history.csv"));
    assert_eq!(ra.len(), rb.len());
    for (x, y) in ra.iter().zip(&rb) {
        assert_eq!(x[..2], y[..2]);
        for c in 2..6 {
            let (u, v): (f64, f64) = (x[c].parse().unwrap(), y[c].parse().unwrap());
            assert!((u - v).abs() <= 1e-6, "column {c}: {u} vs {v}");
        }
    }
    assert_eq!(load_matrix(&a).unwrap(), load_matrix(&b).unwrap());
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = planted(dir.path(), 8, 16, 2, 256);
    let y = format!("{}.y.emb1", p(&prefix));
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# run settings\natoms = 16\nsparsity = 2\niters = 4\nbatch = 128\nworkers = 1\n").unwrap();
    let dict = dir.path().join("c.emb1");
    ok(&["train", "--data", &y, "--config", p(&cfg), "--iters", "2", "--out", p(&dict)]);
    assert_eq!(history_rows(&dir.path().join("c.history.csv")).len(), 2);
}

#[test]
fn unknown_strategy_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = planted(dir.path(), 8, 16, 2, 64);
    let y = format!("{}.y.emb1", p(&prefix));
    let dict = dir.path().join("u.emb1");
    let out = dbksvd(&[
        "train", "--data", &y, "--atoms", "16", "--sparsity", "2", "--strategy", "omp", "--out", p(&dict),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("db-ksvd"));
}

#[test]
fn baseline_strategy_trains() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = planted(dir.path(), 8, 16, 2, 256);
    let y = format!("{}.y.emb1", p(&prefix));
    let dict = dir.path().join("k.emb1");
    ok(&[
        "train", "--data", &y, "--atoms", "16", "--sparsity", "2", "--iters", "2", "--batch", "128", "--strategy",
        "ksvd", "--solver", "dense", "--workers", "1", "--out", p(&dict),
    ]);
    assert_eq!(load_matrix(&dict).unwrap().shape(), (8, 16));
}

#[test]
fn eval_orthonormal_dictionary() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = dir.path().join("ortho");
    ok(&[
        "synth", "--out", p(&prefix), "--d", "8", "--atoms", "8", "--sparsity", "2", "--samples", "16",
        "--orthonormal", "--precision", "f64",
    ]);
    let hist = dir.path().join("hist.csv");
    let out = ok(&[
        "eval",
        "--dict",
        &format!("{}.dict.emb1", p(&prefix)),
        "--histogram",
        p(&hist),
    ]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().any(|l| l == "mutual_coherence,0"), "{text}");
    assert!(text.lines().any(|l| l == "recoverability_limit,inf"), "{text}");
    let hist = std::fs::read_to_string(hist).unwrap();
    assert_eq!(hist.lines().next(), Some("bin_lo,bin_hi,count"));
    assert_eq!(hist.lines().count(), 101);
}

#[test]
fn encode_writes_codes_and_rejects_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = planted(dir.path(), 16, 32, 3, 300);
    let y = format!("{}.y.emb1", p(&prefix));
    let dict = format!("{}.dict.emb1", p(&prefix));
    let codes = dir.path().join("x.spx1");
    ok(&["encode", "--dict", &dict, "--data", &y, "--sparsity", "3", "--batch", "128", "--out", p(&codes)]);
    let x = load_codes(&codes).unwrap();
    assert_eq!(x.samples(), 300);
    assert!(x.k() <= 3);

    let sub = dir.path().join("sub");
    std::fs::create_dir_all(&sub).unwrap();
    let other = planted(&sub, 8, 16, 2, 10);
    let out = dbksvd(&[
        "encode",
        "--dict",
        &dict,
        "--data",
        &format!("{}.y.emb1", p(&other)),
        "--sparsity",
        "3",
        "--out",
        p(&codes),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn io_errors_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.emb1");
    std::fs::write(&junk, b"NOPE and some more bytes to pass the header length").unwrap();
    let out = dbksvd(&["eval", "--dict", p(&junk)]);
    assert_eq!(out.status.code(), Some(3));
    let missing = dbksvd(&["eval", "--dict", p(&dir.path().join("absent.emb1"))]);
    assert_eq!(missing.status.code(), Some(3));
}

#[test]
fn bench_reports_one_summary_row_per_setting() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench.csv");
    ok(&[
        "bench", "--d", "16", "--atoms", "32", "--sparsity", "4", "--batch", "256", "--trials", "2", "--workers",
        "1,2", "--out", p(&out),
    ]);
    let detail = std::fs::read_to_string(&out).unwrap();
    assert_eq!(detail.lines().next(), Some("phase,trial,seconds,workers,batch"));
    assert_eq!(detail.lines().count(), 1 + 2 * 2 * 6);
    let summary = std::fs::read_to_string(dir.path().join("bench.summary.csv")).unwrap();
    let rows: Vec<&str> = summary.lines().collect();
    assert_eq!(rows[0], "workers,batch,gram,mp,encode,form,eigen,update");
    assert_eq!(rows.len(), 3);
    assert!(rows[1].starts_with("1,256,") && rows[2].starts_with("2,256,"));

    let bad = dbksvd(&["bench", "--d", "0", "--trials", "1"]);
    assert_eq!(bad.status.code(), Some(2));
}
