use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fedlaw_cli::{mean_std, parse_config};

fn fedlaw(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedlaw"))
        .args(args)
        .output()
        .expect("spawn fedlaw")
}

fn canonical_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/canonical.toml")
}

fn canonical_text() -> String {
    fs::read_to_string(canonical_path()).unwrap()
}

/// The canonical config with `key = value` lines replaced.
fn variant(dir: &Path, name: &str, edits: &[(&str, &str)]) -> PathBuf {
    let mut text = canonical_text();
    for (key, value) in edits {
        let line = text
            .lines()
            .find(|l| l.starts_with(&format!("{key} =")))
            .unwrap_or_else(|| panic!("no key {key}"))
            .to_string();
        text = text.replace(&line, &format!("{key} = {value}"));
    }
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn run_ok(args: &[&str]) -> Output {
    let out = fedlaw(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

#[test]
fn short_run_row_accounting() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = variant(tmp.path(), "c.toml", &[("epochs", "2")]);
    let out = tmp.path().join("out");
    run_ok(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--output",
        out.to_str().unwrap(),
    ]);
    let acc = rows(&out.join("acc_epoch.csv"));
    assert_eq!(acc.len(), 2);
    assert_eq!(acc[1][0], "1");
    let weights = rows(&out.join("weights.csv"));
    assert_eq!(weights.len(), 2 * 10);
    for epoch in ["0", "1"] {
        let sum: f64 = weights
            .iter()
            .filter(|r| r[1] == epoch)
            .map(|r| r[3].parse::<f64>().unwrap())
            .sum();
        assert!((sum - 1.0).abs() <= 1e-9);
    }
    assert_eq!(weights.iter().filter(|r| r[4] == "1").count(), 2 * 4);
    assert_eq!(rows(&out.join("detection.csv")).len(), 1);
    let manifest: toml::Table = fs::read_to_string(out.join("manifest.toml")).unwrap().parse().unwrap();
    assert_eq!(manifest["resolved"]["s"].as_integer(), Some(6));
    assert_eq!(manifest["runs"][0]["diverged"].as_bool(), Some(false));
}

#[test]
fn identical_runs_write_identical_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = variant(
        tmp.path(),
        "c.toml",
        &[("epochs", "15"), ("repeats", "2"), ("execution", "\"parallel\"")],
    );
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_ok(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--output",
        a.to_str().unwrap(),
    ]);
    run_ok(&[
        "--threads",
        "2",
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--output",
        b.to_str().unwrap(),
    ]);
    for file in ["acc_epoch.csv", "weights.csv", "detection.csv", "manifest.toml"] {
        assert_eq!(
            fs::read(a.join(file)).unwrap(),
            fs::read(b.join(file)).unwrap(),
            "{file}"
        );
    }
}

#[test]
fn seed_flag_overrides_the_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = variant(tmp.path(), "c.toml", &[("epochs", "1"), ("repeats", "2")]);
    let out = tmp.path().join("o");
    run_ok(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--output",
        out.to_str().unwrap(),
        "--seed",
        "41",
    ]);
    let manifest: toml::Table = fs::read_to_string(out.join("manifest.toml")).unwrap().parse().unwrap();
    assert_eq!(manifest["base_seed"].as_integer(), Some(41));
    assert_eq!(manifest["runs"][1]["seed"].as_integer(), Some(42));
}

#[test]
fn canonical_config_recalls_every_attacker() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = variant(tmp.path(), "c.toml", &[("repeats", "3")]);
    let out = tmp.path().join("o");
    run_ok(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--output",
        out.to_str().unwrap(),
    ]);
    let det = rows(&out.join("detection.csv"));
    assert_eq!(det.len(), 3);
    for r in det {
        assert_eq!(r[6].parse::<f64>().unwrap(), 1.0, "recall of run {}", r[0]);
    }
}

#[test]
fn sweep_summary_matches_per_run_csvs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = variant(tmp.path(), "c.toml", &[("epochs", "5"), ("repeats", "3")]);
    let out = tmp.path().join("sweep");
    run_ok(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--output",
        out.to_str().unwrap(),
        "--param",
        "beta",
        "--values",
        "0.01,0.001",
    ]);
    let summary = rows(&out.join("summary.csv"));
    assert_eq!(summary.len(), 2);
    for row in summary {
        let acc = rows(&out.join(format!("beta-{}", row[1])).join("acc_epoch.csv"));
        let last = acc.last().unwrap();
        let finals: Vec<f64> = last[1..4].iter().map(|v| v.parse().unwrap()).collect();
        let (mean, std) = mean_std(&finals);
        assert_eq!(row[2].parse::<f64>().unwrap(), mean);
        assert_eq!(row[3].parse::<f64>().unwrap(), std);
        assert_eq!(row[4], "3");
    }
}

#[test]
fn single_value_sweep_equals_a_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = variant(tmp.path(), "c.toml", &[("epochs", "4"), ("q", "0.7")]);
    let (run_dir, sweep_dir) = (tmp.path().join("run"), tmp.path().join("sweep"));
    run_ok(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--output",
        run_dir.to_str().unwrap(),
    ]);
    run_ok(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--output",
        sweep_dir.to_str().unwrap(),
        "--param",
        "q",
        "--values",
        "0.7",
    ]);
    for file in ["acc_epoch.csv", "weights.csv", "detection.csv", "manifest.toml"] {
        assert_eq!(
            fs::read(run_dir.join(file)).unwrap(),
            fs::read(sweep_dir.join("q-0.7").join(file)).unwrap(),
            "{file}"
        );
    }
    assert_eq!(rows(&sweep_dir.join("summary.csv")).len(), 1);
}

#[test]
fn twelve_value_beta_grid_gives_twelve_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = variant(
        tmp.path(),
        "c.toml",
        &[("epochs", "1"), ("per_class", "40"), ("batch_size", "16")],
    );
    let out = tmp.path().join("grid");
    let values = "1e-2,9e-3,7e-3,5e-3,3e-3,1e-3,9e-4,7e-4,5e-4,3e-4,2e-4,1e-4";
    run_ok(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--output",
        out.to_str().unwrap(),
        "--param",
        "beta",
        "--values",
        values,
    ]);
    assert_eq!(rows(&out.join("summary.csv")).len(), 12);
}

#[test]
fn aggregator_sweep_runs_every_baseline() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = variant(tmp.path(), "c.toml", &[("epochs", "2"), ("per_class", "40")]);
    let out = tmp.path().join("agg");
    let values = "fedlaw,bsum,fedavg,krum,trimmed_mean,cwmed,bulyan,cclip,rfa,huber";
    run_ok(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--output",
        out.to_str().unwrap(),
        "--param",
        "aggregator",
        "--values",
        values,
    ]);
    let summary = rows(&out.join("summary.csv"));
    assert_eq!(
        summary.iter().map(|r| r[1].as_str()).collect::<Vec<_>>().join(","),
        values
    );
}

#[test]
fn divergence_is_recorded_with_exit_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = variant(tmp.path(), "c.toml", &[("alpha", "1e12"), ("epochs", "30")]);
    let out = tmp.path().join("o");
    run_ok(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--output",
        out.to_str().unwrap(),
    ]);
    let manifest: toml::Table = fs::read_to_string(out.join("manifest.toml")).unwrap().parse().unwrap();
    let run = &manifest["runs"][0];
    assert_eq!(run["diverged"].as_bool(), Some(true));
    let completed = run["epochs_completed"].as_integer().unwrap() as usize;
    let acc = rows(&out.join("acc_epoch.csv"));
    assert_eq!(acc.len(), 30);
    assert!(acc[completed..].iter().all(|r| r[1].is_empty()));
}

#[test]
fn projection_subcommand() {
    let out = run_ok(&[
        "project",
        "--input",
        "0.9,0.1,0.5,0.3,0.7",
        "--s",
        "3",
        "--t",
        "0.3333333333",
    ]);
    let w: Vec<f64> = String::from_utf8(out.stdout)
        .unwrap()
        .trim()
        .split(',')
        .map(|v| v.parse().unwrap())
        .collect();
    assert_eq!(w.len(), 5);
    assert_eq!([w[1], w[3]], [0.0, 0.0]);
    for i in [0, 2, 4] {
        assert!((w[i] - 1.0 / 3.0).abs() <= 1e-12);
    }

    let out = run_ok(&["project", "--input", "0.25,0,0.5,0.25", "--s", "3", "--t", "0.5"]);
    assert_eq!(
        String::from_utf8(out.stdout).unwrap().trim(),
        "2.5000000000000000e-1,0.0000000000000000e0,5.0000000000000000e-1,2.5000000000000000e-1"
    );

    let bad = fedlaw(&["project", "--input", "0.5,0.5,0.5", "--s", "2", "--t", "0.4"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("infeasible"));
}

#[test]
fn partition_stats_cover_the_training_split() {
    let out = run_ok(&["partition-stats", "--config", canonical_path().to_str().unwrap()]);
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 11);
    let mut total = 0;
    for line in &lines[1..] {
        let f: Vec<usize> = line.split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(f[2], f[4..].iter().sum::<usize>());
        total += f[2];
    }
    // 80% of 5 * 400 examples.
    assert_eq!(total, 1600);
    assert_eq!(
        lines[1..].iter().filter(|l| l.split(',').nth(3) == Some("1")).count(),
        4
    );
}

#[test]
fn config_errors_exit_one_with_location() {
    let tmp = tempfile::tempdir().unwrap();
    let typo = variant(tmp.path(), "typo.toml", &[("spread", "0.3\nsprd = 1")]);
    let bad_type = variant(tmp.path(), "type.toml", &[("alpha", "\"fast\"")]);
    let bad_value = variant(tmp.path(), "value.toml", &[("q", "1.5")]);
    let bad_method = variant(
        tmp.path(),
        "method.toml",
        &[("method", "\"baseline\"\nkind = \"krum\"\nretaind = 2")],
    );
    for (path, needle) in [
        (&typo, "sprd"),
        (&bad_type, "line 25"),
        (&bad_value, "q"),
        (&bad_method, "engine.method.retaind"),
    ] {
        let out = fedlaw(&[
            "run",
            "--config",
            path.to_str().unwrap(),
            "--output",
            tmp.path().join("x").to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(1), "{}", path.display());
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.contains(needle), "{err}");
    }
    assert_eq!(
        fedlaw(&["run", "--config", "/no/such/file.toml", "--output", "/tmp/x"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        fedlaw(&[
            "sweep",
            "--config",
            canonical_path().to_str().unwrap(),
            "--output",
            "/tmp/x",
            "--param",
            "alpha",
            "--values",
            "1"
        ])
        .status
        .code(),
        Some(1)
    );
    assert_eq!(
        fedlaw(&["run", "--config", canonical_path().to_str().unwrap()])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(fedlaw(&["frobnicate"]).status.code(), Some(1));
}

#[test]
fn output_dir_that_is_a_file_is_a_runtime_error() {
    let tmp = tempfile::tempdir().unwrap();
    let blocker = tmp.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let cfg = variant(tmp.path(), "c.toml", &[("epochs", "1")]);
    let out = fedlaw(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--output",
        blocker.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        parse_config(&fs::read_to_string(&path).unwrap(), &path.display().to_string()).unwrap();
    }
}
