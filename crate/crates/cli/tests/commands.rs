use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ecfkit::data::{read_coding_csv, read_design_csv, write_matrix_csv, MatrixRole};
use ecfkit::design::binary_gramian;
use serde_json::Value;

fn ecfkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ecfkit"))
        .args(args)
        .env_remove("ECFKIT_THREADS")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = ecfkit(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(p).unwrap()).unwrap()
}

fn small_toy(dir: &Path) -> PathBuf {
    let p = dir.join("toy.csv");
    ok(&["toy", "--classes", "6", "--per-class", "30", "--seed", "3", "--out", s(&p)]);
    p
}

#[test]
fn missing_input_exits_2_and_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.csv");
    let out = ecfkit(&["design", "--input", s(&missing), "--out", s(&dir.path().join("d.csv"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.csv"));
}

#[test]
fn distance_above_length_exits_2_before_work() {
    let dir = tempfile::tempdir().unwrap();
    let out = ecfkit(&[
        "factorize",
        "--design",
        s(&dir.path().join("never_read.csv")),
        "--length",
        "4",
        "--min-distance",
        "5",
        "--out",
        s(&dir.path().join("x.csv")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("exceeds"));
}

#[test]
fn unknown_source_and_bad_thread_count_exit_2() {
    assert_eq!(ecfkit(&["evaluate", "--input", "x.csv", "--source", "ovo"]).status.code(), Some(2));
    let out = Command::new(env!("CARGO_BIN_EXE_ecfkit"))
        .args(["baseline", "--kind", "ova", "--classes", "3", "--out", "/dev/null"])
        .env("ECFKIT_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn design_output_satisfies_invariants_and_policies_mirror() {
    let dir = tempfile::tempdir().unwrap();
    let toy = small_toy(dir.path());
    let hard = dir.path().join("hard.csv");
    let easy = dir.path().join("easy.csv");
    let report = dir.path().join("hard.json");
    ok(&["design", "--input", s(&toy), "--policy", "hard", "--out", s(&hard), "--report", s(&report)]);
    ok(&["design", "--input", s(&toy), "--policy", "easy", "--length", "6", "--out", s(&easy)]);

    let r = json(&report);
    let l = r["length"].as_u64().unwrap() as usize;
    let d = read_design_csv(&hard, Some(l)).unwrap();
    assert!(d.min_eigenvalue() >= -1e-8);
    assert_eq!(r["classes"], 6);
    assert_eq!(r["config"]["policy"], "hard");

    // Raw Hard and Easy entries are mirror images, so the order of the class
    // pairs by distance is reversed between them.
    let dist: Vec<Vec<f64>> = serde_json::from_value(r["distances"].clone()).unwrap();
    let mut pairs: Vec<(usize, usize)> = (0..6).flat_map(|i| ((i + 1)..6).map(move |j| (i, j))).collect();
    pairs.sort_by(|a, b| dist[a.0][a.1].total_cmp(&dist[b.0][b.1]));
    let e = read_design_csv(&easy, Some(6)).unwrap();
    let (closest, farthest) = (pairs[0], pairs[pairs.len() - 1]);
    assert!(d.values()[closest] < d.values()[farthest]);
    assert!(e.values()[closest] > e.values()[farthest]);
}

#[test]
fn factorize_recovers_a_binary_gramian_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let (db, _) = binary_gramian(10, 6, 4).unwrap();
    let design = dir.path().join("db.csv");
    write_matrix_csv(&design, db.values(), MatrixRole::Design).unwrap();
    let (x1, x2) = (dir.path().join("x1.csv"), dir.path().join("x2.csv"));
    let report = dir.path().join("f.json");
    let args = |x: &Path| {
        vec![
            "factorize".to_string(),
            "--design".into(),
            s(&design).into(),
            "--min-distance".into(),
            "1".into(),
            "--seed".into(),
            "2".into(),
            "--out".into(),
            s(x).into(),
            "--report".into(),
            s(&report).into(),
        ]
    };
    let a1 = args(&x1);
    ok(&a1.iter().map(String::as_str).collect::<Vec<_>>());
    let r = json(&report);
    assert!(r["discrete_objective"].as_f64().unwrap() <= 1e-6, "{}", r["discrete_objective"]);
    assert_eq!(r["validation"]["valid"], true);
    for key in ["seed", "cycles", "objective_trace", "relaxed_objective", "threshold", "converged", "wall_time_ms"] {
        assert!(r.get(key).is_some(), "{key}");
    }
    let a2 = args(&x2);
    ok(&a2.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(std::fs::read(&x1).unwrap(), std::fs::read(&x2).unwrap());
    assert_eq!(read_coding_csv(&x1).unwrap().classes(), 10);
}

#[test]
fn analyze_reports_tables() {
    let dir = tempfile::tempdir().unwrap();
    let x = dir.path().join("ova.csv");
    let report = dir.path().join("a.json");
    let profile = dir.path().join("h.csv");
    ok(&["baseline", "--kind", "ova", "--classes", "4", "--out", s(&x)]);
    ok(&["analyze", "--coding", s(&x), "--min-distance", "1", "--out", s(&profile), "--report", s(&report)]);
    let r = json(&report);
    assert_eq!(r["min_distance"], 2);
    assert_eq!(r["global_correction"], 0);
    assert_eq!(r["pairwise_correction"][0][0], Value::Null);
    assert_eq!(r["pairwise_correction"][0][1], 0);
    assert_eq!(r["validation"]["valid"], true);
    assert_eq!(std::fs::read_to_string(&profile).unwrap().lines().next(), Some("0,2,2,2"));
}

#[test]
fn evaluate_ova_and_an_ecf_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let toy = small_toy(dir.path());
    let report = dir.path().join("ova.json");
    ok(&["evaluate", "--input", s(&toy), "--source", "ova", "--report", s(&report)]);
    let r = json(&report);
    assert_eq!(r["results"][0]["fold_accuracies"].as_array().unwrap().len(), 5);
    assert!(r["results"][0]["mean"].is_number());

    let curve = dir.path().join("sweep.csv");
    let preds = dir.path().join("preds.csv");
    ok(&[
        "evaluate",
        "--input",
        s(&toy),
        "--source",
        "ecf-h",
        "--length",
        "7",
        "--min-distance",
        "1,3,5,7",
        "--out",
        s(&curve),
        "--predictions",
        s(&preds),
    ]);
    let text = std::fs::read_to_string(&curve).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "source,min_distance,dichotomies,mean,std");
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("ecf-h,1,"));
    assert_eq!(std::fs::read_to_string(&preds).unwrap().lines().count(), 1 + 4 * 180);
}

#[test]
fn experiment_curves() {
    let dir = tempfile::tempdir().unwrap();
    let conv = dir.path().join("conv.csv");
    let report = dir.path().join("conv.json");
    ok(&[
        "experiment-convergence",
        "--classes",
        "10",
        "--seeds",
        "10",
        "--out",
        s(&conv),
        "--report",
        s(&report),
    ]);
    let r = json(&report);
    let g = &r["groups"][0];
    assert!(g["mean_final"].as_f64().unwrap() <= 1e-6);
    assert_eq!(g["mean_curve_non_increasing"], true);
    let text = std::fs::read_to_string(&conv).unwrap();
    let cycles: Vec<usize> = text.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(cycles, (0..=15).collect::<Vec<_>>());
    let means: Vec<f64> = text.lines().skip(1).map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect();
    assert!(means.windows(2).all(|w| w[1] <= w[0] + 1e-8));

    let toy = small_toy(dir.path());
    let design = dir.path().join("d.csv");
    ok(&["design", "--input", s(&toy), "--out", s(&design)]);
    let out = dir.path().join("order");
    let report = dir.path().join("order.json");
    ok(&[
        "experiment-order",
        "--design",
        s(&design),
        "--trials",
        "8",
        "--cycles",
        "5",
        "--out",
        s(&out),
        "--report",
        s(&report),
    ]);
    let r = json(&report);
    for order in ["cyclic", "random"] {
        assert_eq!(r[order]["non_increasing_per_pass"], true, "{order}");
        assert_eq!(r[order]["non_increasing_per_update"], true, "{order}");
        let text = std::fs::read_to_string(out.join(format!("order_{order}.csv"))).unwrap();
        assert_eq!(text.lines().next(), Some("updates,mean,std"));
        assert_eq!(text.lines().count(), 1 + 6 * 5 + 1);
    }
}
