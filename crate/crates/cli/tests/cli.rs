use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

const SMOKE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/configs/smoke.toml");

fn cfs(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cfs")).current_dir(dir).args(args).output().expect("spawn cfs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = cfs(dir, args);
    assert!(out.status.success(), "cfs {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).trim().to_string()
}

/// Runs every subcommand with the smoke config's default paths under `dir`.
fn smoke_pipeline(dir: &Path) -> Vec<PathBuf> {
    ok(dir, &["--config", SMOKE, "gen-data"]);
    ok(dir, &["--config", SMOKE, "train"]);
    ok(dir, &["--config", SMOKE, "baseline"]);
    ok(dir, &["--config", SMOKE, "oracle"]);
    let mut args = vec!["--config", SMOKE, "evaluate", "--checkpoint", "smoke/policy.ckpt", "--oracle", "smoke/oracle.txt"];
    let masks = ["norm_0.1", "lasso_0.05", "tree", "ftest_4"].map(|m| format!("smoke/masks/{m}.mask"));
    for m in &masks {
        args.extend(["--masks", m.as_str()]);
    }
    ok(dir, &args);
    let table = ok(dir, &["report", "smoke/report/report.json"]);
    fs::write(dir.join("smoke/table.txt"), &table.stdout).unwrap();
    let mut files: Vec<PathBuf> = [
        "smoke/dataset.bin",
        "smoke/policy.ckpt",
        "smoke/policy.log.jsonl",
        "smoke/oracle.txt",
        "smoke/report/report.json",
        "smoke/report/report.txt",
        "smoke/report/loss.csv",
        "smoke/report/usage.csv",
        "smoke/report/weighted_usage.csv",
        "smoke/table.txt",
    ]
    .iter()
    .map(|f| dir.join(f))
    .collect();
    files.extend(masks.iter().map(|m| dir.join(m)));
    files
}

#[test]
fn smoke_pipeline_runs_and_reproduces() {
    let start = Instant::now();
    let a = tempfile::tempdir().unwrap();
    let files_a = smoke_pipeline(a.path());
    assert!(start.elapsed() < Duration::from_secs(120), "smoke pipeline took {:?}", start.elapsed());

    let table = fs::read_to_string(a.path().join("smoke/table.txt")).unwrap();
    for row in ["all_factors", "rankcfs", "norm:0.1", "lasso:0.05", "tree", "ftest:4", "oracle_pooled", "oracle_per_cluster"] {
        assert!(table.lines().any(|l| l.starts_with(row)), "missing row {row}:\n{table}");
    }
    let loss = fs::read_to_string(a.path().join("smoke/report/loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 1 + 200);

    let b = tempfile::tempdir().unwrap();
    let files_b = smoke_pipeline(b.path());
    for (fa, fb) in files_a.iter().zip(&files_b) {
        assert_eq!(fs::read(fa).unwrap(), fs::read(fb).unwrap(), "{} differs between runs", fa.display());
    }
}

#[test]
fn evaluate_rejects_checkpoint_of_other_p() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let small = d.join("small.toml");
    fs::write(&small, "[baselines]\nmethods = []\n[generation]\nnum_page_views = 40\np = 6\nl = 8\n[training]\nt_max = 10\nhidden = [4]\n").unwrap();
    let small = small.to_str().unwrap();
    ok(d, &["--config", small, "gen-data", "--out", "p6.bin"]);
    ok(d, &["--config", small, "train", "--dataset", "p6.bin", "--out", "p6.ckpt"]);
    ok(d, &["--config", SMOKE, "gen-data", "--out", "p8.bin"]);
    let out = cfs(d, &["--config", SMOKE, "evaluate", "--dataset", "p8.bin", "--checkpoint", "p6.ckpt", "--out", "r"]);
    assert!(!out.status.success());
    let err = stderr(&out);
    assert!(err.starts_with("error[shape]:"), "{err}");
    assert_eq!(err.lines().count(), 1);
}

#[test]
fn report_is_byte_identical_on_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("tiny.toml");
    fs::write(&cfg, "[baselines]\nmethods = [\"ftest:2\"]\n[generation]\nnum_page_views = 60\np = 5\nl = 4\nnum_clusters = 1\n").unwrap();
    let cfg = cfg.to_str().unwrap();
    ok(d, &["--config", cfg, "gen-data", "--out", "d.bin"]);
    ok(d, &["--config", cfg, "baseline", "--dataset", "d.bin", "--method", "ftest:2", "--out", "f.mask"]);
    ok(d, &["--config", cfg, "evaluate", "--dataset", "d.bin", "--masks", "f.mask", "--out", "r"]);
    let first = ok(d, &["report", "r/report.json"]).stdout;
    let second = ok(d, &["report", "r/report.json"]).stdout;
    assert!(!first.is_empty());
    assert_eq!(first, second);
}

#[test]
fn config_errors_are_one_line_and_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("bad.toml"), "seed = 1\n[training]\nt_max = 10\nactor_rate = 0.1\n").unwrap();
    let out = cfs(d, &["--config", "bad.toml", "gen-data"]);
    assert!(!out.status.success());
    let err = stderr(&out);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error[config]: bad.toml:4:"), "{err}");
    assert!(err.contains("actor_rate"), "{err}");
}

#[test]
fn missing_inputs_are_named() {
    let dir = tempfile::tempdir().unwrap();
    let out = cfs(dir.path(), &["train", "--dataset", "nowhere.bin", "--out", "x.ckpt"]);
    assert!(!out.status.success());
    let err = stderr(&out);
    assert!(err.starts_with("error[missing-file]:") && err.contains("nowhere.bin"), "{err}");
    let out = cfs(dir.path(), &["--config", "absent.toml", "gen-data"]);
    assert!(stderr(&out).starts_with("error[io]:") && stderr(&out).contains("absent.toml"));
}

#[test]
fn commands_do_not_modify_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("c.toml"), "[baselines]\nmethods = []\n[generation]\nnum_page_views = 40\np = 4\nl = 4\n[training]\nt_max = 20\nhidden = [4]\n").unwrap();
    ok(d, &["--config", "c.toml", "gen-data", "--out", "d.bin"]);
    let before = fs::read(d.join("d.bin")).unwrap();
    ok(d, &["--config", "c.toml", "train", "--dataset", "d.bin", "--out", "m.ckpt"]);
    let ckpt = fs::read(d.join("m.ckpt")).unwrap();
    ok(d, &["--config", "c.toml", "evaluate", "--dataset", "d.bin", "--checkpoint", "m.ckpt", "--out", "r"]);
    assert_eq!(fs::read(d.join("d.bin")).unwrap(), before);
    assert_eq!(fs::read(d.join("m.ckpt")).unwrap(), ckpt);
}

#[test]
fn resumed_training_matches_one_long_run() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let base = "[baselines]\nmethods = []\n[generation]\nnum_page_views = 40\np = 4\nl = 4\n[training]\nhidden = [8]\nlog_interval = 10\n";
    fs::write(d.join("long.toml"), format!("{base}t_max = 60\n")).unwrap();
    fs::write(d.join("short.toml"), format!("{base}t_max = 30\n")).unwrap();
    ok(d, &["--config", "long.toml", "gen-data", "--out", "d.bin"]);
    ok(d, &["--config", "long.toml", "train", "--dataset", "d.bin", "--out", "long.ckpt"]);
    ok(d, &["--config", "short.toml", "train", "--dataset", "d.bin", "--out", "half.ckpt"]);
    ok(d, &["--config", "long.toml", "train", "--dataset", "d.bin", "--checkpoint", "half.ckpt", "--out", "resumed.ckpt"]);
    assert_eq!(fs::read(d.join("long.ckpt")).unwrap(), fs::read(d.join("resumed.ckpt")).unwrap());
}
