//! End-to-end command-line tests: stores, exit codes, reproducibility.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_nugget-forge"))
}

fn workdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("nf-cli-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run_ok(cmd: &mut Command) -> String {
    let out = cmd.output().expect("command runs");
    assert!(
        out.status.success(),
        "command failed: {:?}\nstdout: {}\nstderr: {}",
        cmd,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).to_string()
}

fn materialize_bench(dir: &Path) -> PathBuf {
    run_ok(bin().args(["bench", "--out"]).arg(dir));
    dir.join("config.json")
}

#[test]
fn extract_is_reproducible_and_reports_the_rate() {
    let dir = workdir("extract");
    let config = materialize_bench(&dir);

    let stdout = run_ok(bin().args(["extract", "--config"]).arg(&config));
    assert!(stdout.contains("actionable rate: 50/50"), "stdout: {stdout}");
    let nuggets = dir.join("out").join("nuggets.jsonl");
    let first = std::fs::read(&nuggets).unwrap();
    assert!(!first.is_empty());
    assert!(dir.join("out").join("skipped.jsonl").exists());

    run_ok(bin().args(["extract", "--config"]).arg(&config));
    assert_eq!(std::fs::read(&nuggets).unwrap(), first, "re-run must be byte-identical");
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn optimize_writes_logs_and_reruns_identically() {
    let dir = workdir("optimize");
    let config = materialize_bench(&dir);
    run_ok(bin().args(["extract", "--config"]).arg(&config));

    let stdout =
        run_ok(bin().args(["optimize", "--config"]).arg(&config).args(["--event", "ev-001"]));
    assert!(stdout.contains("n-ev-001"), "stdout: {stdout}");
    let log_path = dir.join("out").join("runs").join("n-ev-001").join("log.json");
    let store_path = dir.join("out").join("optimized").join("E.jsonl");
    let first_log = std::fs::read(&log_path).unwrap();
    let first_store = std::fs::read(&store_path).unwrap();

    run_ok(bin().args(["optimize", "--config"]).arg(&config).args(["--event", "ev-001"]));
    assert_eq!(std::fs::read(&log_path).unwrap(), first_log);
    assert_eq!(std::fs::read(&store_path).unwrap(), first_store);

    // unknown event id is an input error: exit code 2
    let out = bin()
        .args(["optimize", "--config"])
        .arg(&config)
        .args(["--event", "ev-does-not-exist"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn eval_writes_reports_and_guards_the_fingerprint() {
    let dir = workdir("eval");
    let config = materialize_bench(&dir);
    run_ok(bin().args(["extract", "--config"]).arg(&config));

    let csv = run_ok(
        bin()
            .args(["eval", "--config"])
            .arg(&config)
            .args(["--variants", "A,B", "--sources", "in_sample", "--format", "csv"]),
    );
    // one row per (variant, source, metric) plus the header
    assert_eq!(csv.lines().count(), 1 + 2 * 1 * 2, "csv: {csv}");
    assert!(dir.join("out").join("report.json").exists());
    assert!(dir.join("out").join("report.txt").exists());
    assert!(dir.join("out").join("report.csv").exists());

    // a different config fingerprint in the same output dir is an
    // integrity error: exit code 3
    std::fs::write(dir.join("out").join("fingerprint.txt"), "0000000000000000\n").unwrap();
    let out = bin()
        .args(["eval", "--config"])
        .arg(&config)
        .args(["--variants", "A", "--sources", "in_sample"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn replay_and_negctl_emit_traces() {
    let dir = workdir("replay");
    let config = materialize_bench(&dir);
    run_ok(bin().args(["extract", "--config"]).arg(&config));
    run_ok(bin().args(["optimize", "--config"]).arg(&config).args(["--event", "ev-000"]));

    run_ok(
        bin()
            .args(["replay", "--config"])
            .arg(&config)
            .args(["--query", "why can't my analyst configure another dashboard in the portal v10?"])
            .args(["--nugget", "n-ev-000"]),
    );
    let traces = std::fs::read_to_string(dir.join("out").join("traces.jsonl")).unwrap();
    assert_eq!(traces.lines().count(), 1);
    assert!(traces.contains("\"input_query\""));

    let stdout = run_ok(
        bin().args(["negctl", "--config"]).arg(&config).args(["--n", "25"]),
    );
    assert!(stdout.contains("negative control:"), "stdout: {stdout}");
    assert!(dir.join("out").join("negctl").join("summary.json").exists());
    assert!(dir.join("out").join("negctl").join("flagged.jsonl").exists());
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn report_renders_stored_reports() {
    let dir = workdir("report");
    let config = materialize_bench(&dir);
    run_ok(bin().args(["extract", "--config"]).arg(&config));
    run_ok(
        bin()
            .args(["eval", "--config"])
            .arg(&config)
            .args(["--variants", "A", "--sources", "in_sample"]),
    );
    let table = run_ok(
        bin().args(["report", "--input"]).arg(dir.join("out").join("report.json")),
    );
    assert!(table.contains("variant"), "table: {table}");
    let csv = run_ok(
        bin()
            .args(["report", "--input"])
            .arg(dir.join("out").join("report.json"))
            .args(["--format", "csv"]),
    );
    assert!(csv.starts_with("variant,source,metric"));

    // unreadable input: exit code 2
    let out = bin().args(["report", "--input", "/nonexistent.json"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn extract_reports_na_for_an_empty_stream() {
    let dir = workdir("empty");
    let config = materialize_bench(&dir);
    std::fs::write(dir.join("feedback.jsonl"), "").unwrap();
    let stdout = run_ok(bin().args(["extract", "--config"]).arg(&config));
    assert!(stdout.contains("actionable rate: n/a"), "stdout: {stdout}");
    assert!(dir.join("out").join("nuggets.jsonl").exists());
    std::fs::remove_dir_all(&dir).ok();
}
