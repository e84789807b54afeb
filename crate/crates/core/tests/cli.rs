mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use common::*;
use simflock::executor::TrialStatus;
use simflock::workflows::StudyReport;

fn example(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("examples").join(name)
}

fn simflock(cwd: &Path, args: &[&str]) -> Output {
    Command::new(SIMFLOCK).args(args).current_dir(cwd).env_remove("SIMFLOCK_WORKERS").output().unwrap()
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

#[test]
fn lander_example_runs_to_a_report() {
    let tmp = tempfile::tempdir().unwrap();
    let out = simflock(tmp.path(), &["run", example("lander_paramest.json").to_str().unwrap(), "--out-dir", "out", "--log-to-file"]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let stdout = text(&out.stdout);
    let report = StudyReport::load(&tmp.path().join("out")).unwrap();
    assert_eq!(report.trials.len(), 50);
    let best = report.summary.best_trial.clone().unwrap();
    assert!(stdout.contains(&format!("best trial: {} with J = {}", best.trial_id, best.objective)), "{stdout}");
    assert!(stdout.contains(&format!("rmse = {}", best.rmse.unwrap())));
    assert!(tmp.path().join("out/best_so_far.csv").is_file());
    let logs: Vec<_> = std::fs::read_dir(tmp.path()).unwrap().flatten().filter(|e| e.file_name().to_string_lossy().starts_with("simflock_log_")).collect();
    assert_eq!(logs.len(), 1);

    let again = simflock(tmp.path(), &["report", "out"]);
    assert_eq!(again.status.code(), Some(0));
    assert!(text(&again.stdout).contains(&format!("best trial: {}", best.trial_id)));
}

#[test]
fn granular_example_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = simflock(tmp.path(), &["run", example("granular_doe.json").to_str().unwrap(), "--out-dir", "g", "--log-to-file"]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let report = StudyReport::load(&tmp.path().join("g")).unwrap();
    assert_eq!(report.trials.len(), 20);
    assert_eq!(report.summary.peak_concurrency, 2);
    for t in &report.trials {
        let rejected = real(&t.config, "kappa") >= real(&t.config, "lambda");
        assert_eq!(t.status == TrialStatus::Rejected, rejected);
    }
    assert!(report.count(TrialStatus::Rejected) >= 1);
}

#[test]
fn seed_override_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let file = example("lander_paramest.json");
    for dir in ["a", "b"] {
        let out = simflock(tmp.path(), &["run", file.to_str().unwrap(), "--seed", "11", "--max-concurrent", "2", "--out-dir", dir, "--log-to-file"]);
        assert_eq!(out.status.code(), Some(0));
    }
    let a = StudyReport::load(&tmp.path().join("a")).unwrap();
    let b = StudyReport::load(&tmp.path().join("b")).unwrap();
    assert_eq!(a.summary.seed, 11);
    assert_eq!(a.trials.iter().map(|t| &t.config).collect::<Vec<_>>(), b.trials.iter().map(|t| &t.config).collect::<Vec<_>>());
}

#[test]
fn invalid_file_exits_2_with_position() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("bad.json"), "{\n  \"workflow\": \"doe\",\n  \"budjet\": 3\n}\n").unwrap();
    let out = simflock(tmp.path(), &["run", "bad.json"]);
    assert_eq!(out.status.code(), Some(2));
    let err = text(&out.stderr);
    assert!(err.contains("bad.json:3:"), "{err}");

    std::fs::write(tmp.path().join("empty.json"), r#"{"workflow":"opt","space":{}}"#).unwrap();
    let out = simflock(tmp.path(), &["run", "empty.json"]);
    assert_eq!(out.status.code(), Some(2));
    let err = text(&out.stderr);
    // Every problem is listed.
    assert!(err.contains("objective_metric") && err.contains("budget"), "{err}");
}

#[test]
fn unreachable_workers_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let out = simflock(tmp.path(), &["run", example("lander_paramest.json").to_str().unwrap(), "--workers", &format!("tcp://127.0.0.1:{port}"), "--log-to-file"]);
    assert_eq!(out.status.code(), Some(3), "{}", text(&out.stderr));
    assert!(text(&out.stderr).contains("unreachable"));
}

#[test]
fn workers_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(
        tmp.path().join("b.json"),
        r#"{"workflow":"opt","objective_metric":"branin","budget":4,
            "space":{"x1":{"type":"uniform","lo":-5,"hi":10},"x2":{"type":"uniform","lo":0,"hi":15}}}"#,
    )
    .unwrap();
    let out = Command::new(SIMFLOCK).args(["run", "b.json", "--log-to-file"]).current_dir(tmp.path()).env("SIMFLOCK_WORKERS", BRANIN).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    assert_eq!(StudyReport::load(&tmp.path().join("simflock_out")).unwrap().trials.len(), 4);
}

#[test]
fn info_and_usage() {
    let tmp = tempfile::tempdir().unwrap();
    for topic in ["workflows", "search", "scheduler", "distributions"] {
        let out = simflock(tmp.path(), &["info", topic]);
        assert_eq!(out.status.code(), Some(0));
        assert!(!out.stdout.is_empty());
    }
    assert_eq!(simflock(tmp.path(), &["info", "bogus"]).status.code(), Some(2));
    assert_eq!(simflock(tmp.path(), &["--help"]).status.code(), Some(0));
    assert_eq!(simflock(tmp.path(), &["report", "nowhere"]).status.code(), Some(1));
}

#[test]
fn worker_subcommand_serves_studies() {
    use std::io::{BufRead, BufReader};
    let mut child = Command::new(SIMFLOCK)
        .args(["worker", "--listen", "127.0.0.1:0", "--slots", "2", "--", LANDER])
        .stdout(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on ").unwrap().to_owned();

    let tmp = tempfile::tempdir().unwrap();
    let out = simflock(tmp.path(), &["run", example("lander_paramest.json").to_str().unwrap(), "--workers", &addr, "--out-dir", "r", "--log-to-file"]);
    let _ = child.kill();
    let _ = child.wait();
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let report = StudyReport::load(&tmp.path().join("r")).unwrap();
    assert_eq!(report.count(TrialStatus::Completed), 50);
    assert!(report.summary.peak_concurrency <= 2);
}
