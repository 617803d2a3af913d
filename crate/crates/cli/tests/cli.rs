use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn intreg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_intreg"))
        .args(args)
        .env_remove("INTREG_SEED")
        .output()
        .expect("spawn intreg")
}

fn ok(args: &[&str]) -> String {
    let out = intreg(args);
    assert!(
        out.status.success(),
        "intreg {} failed: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn synth_writes_a_header_and_n_rows_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    ok(&["--seed", "3", "synth", "--kind", "sin", "--n", "200", "--m", "20", "-o", p(&a)]);
    ok(&["--seed", "3", "synth", "--kind", "sin", "-o", p(&b)]);
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text.lines().count(), 201);
    assert_eq!(text.lines().next().unwrap().split(',').count(), 22);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn seed_changes_the_data() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    ok(&["--seed", "1", "synth", "--kind", "abs", "--n", "30", "--m", "2", "-o", p(&a)]);
    ok(&["--seed", "2", "synth", "--kind", "abs", "--n", "30", "--m", "2", "-o", p(&b)]);
    assert_ne!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn run_reports_five_finite_fold_errors() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    let jsonl = dir.path().join("r.jsonl");
    ok(&["synth", "--kind", "linear", "--n", "50", "--m", "3", "-o", p(&data)]);
    let stdout = ok(&["run", "--model", "constant", "--data", p(&data), "-o", p(&jsonl)]);
    let errors: Vec<f64> = stdout
        .lines()
        .filter(|l| l.starts_with("fold "))
        .map(|l| l.split_whitespace().nth(3).unwrap().parse().unwrap())
        .collect();
    assert_eq!(errors.len(), 5, "{stdout}");
    assert!(errors.iter().all(|e| e.is_finite() && *e >= 0.0));
    assert!(stdout.contains("mean "));
    let lines = fs::read_to_string(&jsonl).unwrap();
    assert_eq!(lines.lines().count(), 5);
    assert!(!lines.contains("train_seconds"));
}

#[test]
fn unknown_model_and_missing_file_fail() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    ok(&["synth", "--kind", "linear", "--n", "20", "--m", "2", "-o", p(&data)]);
    let out = intreg(&["run", "--model", "forest", "--data", p(&data)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown model"));
    let out = intreg(&["run", "--model", "constant", "--data", "/nonexistent/x.csv"]);
    assert!(!out.status.success());
}

#[test]
fn bench_then_report_rerenders_identical_tables() {
    let dir = tempfile::tempdir().unwrap();
    let mut data = Vec::new();
    for kind in ["linear", "sin", "abs"] {
        let path = dir.path().join(format!("{kind}.csv"));
        ok(&["--seed", "5", "synth", "--kind", kind, "--n", "30", "--m", "2", "-o", p(&path)]);
        data.push(path);
    }
    let bench_dir = dir.path().join("bench");
    let mut args = vec!["--seed", "5", "bench", "--fast", "--log-scale", "-o", p(&bench_dir)];
    for d in &data {
        args.extend(["--data", p(d)]);
    }
    ok(&args);
    let summary = fs::read_to_string(bench_dir.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 3 * 7);
    let reports = fs::read_to_string(bench_dir.join("reports.jsonl")).unwrap();
    assert_eq!(reports.lines().count(), 3 * 7 * 5);

    let report_dir = dir.path().join("report");
    ok(&[
        "report",
        "--reports",
        p(&bench_dir.join("reports.jsonl")),
        "--log-scale",
        "-o",
        p(&report_dir),
    ]);
    for f in ["summary.csv", "rank_counts.csv", "plot_data.csv"] {
        assert_eq!(
            fs::read(bench_dir.join(f)).unwrap(),
            fs::read(report_dir.join(f)).unwrap(),
            "{f} differs"
        );
    }
}

#[test]
fn bench_without_datasets_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = intreg(&["bench", "--models", "constant", "-o", p(dir.path())]);
    assert!(!out.status.success());
}
