//! End-to-end checks of the `lfd` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn lfd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lfd"))
        .args(args)
        .output()
        .expect("spawn lfd")
}

fn corpus(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/corpus")
        .join(format!("{name}.csv"))
        .to_string_lossy()
        .into_owned()
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

/// Data rows of a CSV file split into fields.
fn rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "status {:?}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
}

fn out_dir(tmp: &tempfile::TempDir, name: &str) -> PathBuf {
    tmp.path().join(name)
}

#[test]
fn gaussian_run_reports_full_schedule() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = out_dir(&tmp, "g");
    let out = lfd(&[
        "run",
        "--preset",
        "gaussian",
        "--M",
        "200",
        "--alpha",
        "0.1",
        "--epsilon",
        "0.1",
        "--N",
        "1",
        "--seed",
        "7",
        "--eval-draws",
        "2000",
        "--eval-grid",
        "-6,6,41",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_ok(&out);
    let schedule = read(&dir, "schedule.txt");
    assert!(schedule.lines().any(|l| l == "T=171666"), "{schedule}");

    let lambda = rows(&read(&dir, "lambda.csv"));
    assert_eq!(lambda.len(), 200);
    let weights: Vec<f64> = lambda.iter().map(|r| r[2].parse().unwrap()).collect();
    assert!(weights.iter().all(|w| *w >= 0.0));
    assert!((weights.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    assert_eq!(lambda[0][1], "0");

    let avg = rows(&read(&dir, "avg_test.csv"));
    assert_eq!(avg.len(), 41);
    for r in &avg {
        let v: f64 = r[1].parse().unwrap();
        assert!((0.0..=1.0).contains(&v));
        assert!(r[2] == "0" || r[2] == "1");
    }
    let diag = read(&dir, "diagnostics.csv");
    assert!(diag.starts_with("metric,null_index,estimate,std_error,draws\n"));
    assert_eq!(
        rows(&diag)
            .iter()
            .filter(|r| r[0] == "avg_test_size")
            .count(),
        200
    );
}

#[test]
fn discrete_run_is_exact_and_repeatable() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (out_dir(&tmp, "a"), out_dir(&tmp, "b"));
    let toy = corpus("toy2");
    for dir in [&a, &b] {
        let out = lfd(&[
            "run",
            "--discrete",
            &toy,
            "--alpha",
            "0.1",
            "--epsilon",
            "0.05",
            "--out",
            dir.to_str().unwrap(),
        ]);
        assert_ok(&out);
    }
    let diag = rows(&read(&a, "diagnostics.csv"));
    assert!(diag.iter().all(|r| r[3] == "0" && r[4] == "0"), "{diag:?}");
    for name in [
        "lambda.csv",
        "schedule.txt",
        "diagnostics.csv",
        "avg_test.csv",
    ] {
        assert_eq!(read(&a, name), read(&b, name), "{name}");
    }
    // the config echo differs only in the output directory
    let strip = |s: String| {
        s.lines()
            .filter(|l| !l.starts_with("output_dir"))
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(
        strip(read(&a, "resolved_config.toml")),
        strip(read(&b, "resolved_config.toml"))
    );
}

#[test]
fn trace_and_randomized_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = out_dir(&tmp, "t");
    let out = lfd(&[
        "run",
        "--discrete",
        &corpus("m2_k5"),
        "--T",
        "50",
        "--trace",
        "--randomized-y",
        "3,4",
        "--oracle",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_ok(&out);
    assert_eq!(rows(&read(&dir, "trace.csv")).len(), 50 * 2);
    assert_eq!(rows(&read(&dir, "grid_bits.csv")).len(), 50 * 5);
    let randomized = rows(&read(&dir, "randomized.csv"));
    assert_eq!(randomized.len(), 2);
    for r in &randomized {
        let t: u64 = r[1].parse().unwrap();
        assert!((1..=50).contains(&t));
    }
    let diag = rows(&read(&dir, "diagnostics.csv"));
    assert!(diag.iter().any(|r| r[0] == "v_bar"));
    assert!(diag.iter().any(|r| r[0] == "gap"));
}

#[test]
fn config_file_values_are_overridden_by_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = out_dir(&tmp, "c");
    let cfg = tmp.path().join("run.toml");
    std::fs::write(
        &cfg,
        format!(
            "discrete_csv = {:?}\nalpha = 0.2\nepsilon = 0.2\nseed = 5\nT = 30\n",
            corpus("m3_k8")
        ),
    )
    .unwrap();
    let out = lfd(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "6",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_ok(&out);
    let resolved = read(&dir, "resolved_config.toml");
    assert!(resolved.contains("seed = 6"), "{resolved}");
    assert!(resolved.contains("alpha = 0.2"));
    assert!(read(&dir, "schedule.txt").starts_with("T=30\n"));
}

#[test]
fn oracle_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let g = out_dir(&tmp, "g");
    assert_ok(&lfd(&[
        "oracle",
        "--preset",
        "gaussian",
        "--theta1",
        "2",
        "--alpha",
        "0.1",
        "--out",
        g.to_str().unwrap(),
    ]));
    let row = &rows(&read(&g, "oracle.csv"))[0];
    let v: f64 = row[0].parse().unwrap();
    assert!((v - 0.763_78).abs() <= 5e-5, "{v}");
    assert_eq!(row[1], "AnalyticGaussian");

    let d = out_dir(&tmp, "d");
    assert_ok(&lfd(&[
        "oracle",
        "--discrete",
        &corpus("toy2"),
        "--alpha",
        "0.1",
        "--out",
        d.to_str().unwrap(),
    ]));
    let row = &rows(&read(&d, "oracle.csv"))[0];
    assert_eq!(row[0], "0.5");
    assert_eq!(row[1], "SortM1");
}

#[test]
fn oracle_refuses_four_nulls() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("m4.csv");
    std::fs::write(
        &csv,
        "atom,f_1,f_2,f_3,f_4,g\n0,0.5,0.4,0.3,0.2,0.1\n1,0.5,0.6,0.7,0.8,0.9\n",
    )
    .unwrap();
    let out = lfd(&[
        "oracle",
        "--discrete",
        csv.to_str().unwrap(),
        "--out",
        tmp.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("M ≤ 3 required"));
    assert!(!tmp.path().join("o").exists());
}

#[test]
fn concentration_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let omega = 10f64.ln().sqrt().to_string();
    let toy = corpus("toy2");
    let run = |name: &str, runs: &str| {
        let dir = out_dir(&tmp, name);
        let out = lfd(&[
            "concentration",
            "--discrete",
            &toy,
            "--epsilon",
            "0.3",
            "--omega",
            &omega,
            "--runs",
            runs,
            "--seed",
            "1",
            "--out",
            dir.to_str().unwrap(),
        ]);
        assert_ok(&out);
        dir
    };
    let a = run("a", "100");
    let b = run("b", "100");
    assert_eq!(read(&a, "concentration.csv"), read(&b, "concentration.csv"));
    assert_eq!(rows(&read(&a, "concentration.csv")).len(), 100);
    let summary = &rows(&read(&a, "concentration_summary.csv"))[0];
    let bound: f64 = summary[3].parse().unwrap();
    assert!((bound - 0.1).abs() < 1e-12);

    let single = run("one", "1");
    assert_eq!(rows(&read(&single, "concentration.csv")).len(), 1);
}

#[test]
fn timing_rows_and_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = out_dir(&tmp, "t");
    let out = lfd(&[
        "timing",
        "--draw-counts",
        "1,10",
        "--T",
        "300",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_ok(&out);
    let table = rows(&read(&dir, "timing.csv"));
    assert_eq!(
        table.iter().map(|r| r[0].as_str()).collect::<Vec<_>>(),
        ["1", "10"]
    );
    let secs: Vec<f64> = table.iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(secs[1] >= secs[0], "{secs:?}");

    let quick = out_dir(&tmp, "q");
    assert_ok(&lfd(&[
        "timing",
        "--draw-counts",
        "1",
        "--T",
        "100",
        "--out",
        quick.to_str().unwrap(),
    ]));
    let secs: f64 = rows(&read(&quick, "timing.csv"))[0][1].parse().unwrap();
    assert!(secs < 1.0, "{secs}");

    let cfg = tmp.path().join("empty.toml");
    std::fs::write(&cfg, "draw_counts = []\n").unwrap();
    let out = lfd(&[
        "timing",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir(&tmp, "e").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn exit_codes() {
    assert_eq!(lfd(&["run", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(lfd(&["run", "--alpha", "1.5"]).status.code(), Some(1));
    assert_eq!(lfd(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(lfd(&["--help"]).status.code(), Some(0));
    let out = lfd(&["run", "--discrete", "/nonexistent/table.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(
        lfd(&["validate", "--discrete", &corpus("m2_k12")])
            .status
            .code(),
        Some(0)
    );
}
