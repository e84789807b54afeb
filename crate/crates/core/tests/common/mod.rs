#![allow(dead_code)]

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use simflock::executor::WorkerEndpoint;
use simflock::protocol::{encode_request, parse_message, Metrics, SimMessage, SimRequest};
use simflock::{Distribution, ParamConfig, ParamSpace, ParamValue};

pub const LANDER: &str = env!("CARGO_BIN_EXE_simflock-demo-lander");
pub const GRANULAR: &str = env!("CARGO_BIN_EXE_simflock-demo-granular");
pub const BRANIN: &str = env!("CARGO_BIN_EXE_simflock-demo-branin");
pub const SIMFLOCK: &str = env!("CARGO_BIN_EXE_simflock");

pub fn local(bin: &str) -> WorkerEndpoint {
    WorkerEndpoint::local(vec![bin.to_owned()])
}

pub fn config(pairs: &[(&str, f64)]) -> ParamConfig {
    pairs.iter().map(|(k, v)| (k.to_string(), ParamValue::Real(*v))).collect()
}

/// Runs a demo binary once over stdio and returns its final metrics.
pub fn run_once(bin: &str, cfg: ParamConfig) -> Metrics {
    let line = encode_request(&SimRequest::new(0, cfg, 0, None)).unwrap();
    let mut child = Command::new(bin).stdin(Stdio::piped()).stdout(Stdio::piped()).spawn().unwrap();
    child.stdin.take().unwrap().write_all(line.as_bytes()).unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    match parse_message(text.lines().last().unwrap()).unwrap() {
        SimMessage::Done { metrics } => metrics,
        other => panic!("unexpected {other:?}"),
    }
}

pub fn lander_theta_star() -> ParamConfig {
    config(&[("beta", 0.35), ("alpha2", 0.52), ("f_y", 3000.0)])
}

pub fn lander_space() -> ParamSpace {
    ParamSpace::new()
        .with("beta", Distribution::uniform(0.1, 1.2))
        .with("alpha2", Distribution::uniform(0.1, 1.2))
        .with("f_y", Distribution::uniform(500.0, 8000.0))
}

pub fn granular_space() -> ParamSpace {
    ParamSpace::new()
        .with("mu_s", Distribution::uniform(0.4, 1.2))
        .with("rho", Distribution::uniform(1520.0, 1780.0))
        .with("lambda", Distribution::uniform(0.02, 0.10))
        .with("kappa", Distribution::uniform(0.005, 0.03))
        .with("E", Distribution::uniform(5e5, 5e6))
        .with("nu", Distribution::uniform(0.2, 0.45))
}

pub fn branin_space() -> ParamSpace {
    ParamSpace::new().with("x1", Distribution::uniform(-5.0, 10.0)).with("x2", Distribution::uniform(0.0, 15.0))
}

pub fn real(cfg: &ParamConfig, key: &str) -> f64 {
    cfg[key].as_f64().unwrap()
}

/// Writes an executable-free shell script; run it as `["/bin/sh", path, ...]`.
pub fn script(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

pub fn sh(script: &Path, args: &[&str]) -> WorkerEndpoint {
    let mut cmd = vec!["/bin/sh".to_owned(), script.to_string_lossy().into_owned()];
    cmd.extend(args.iter().map(|s| s.to_string()));
    WorkerEndpoint::local(cmd)
}

/// Simulator that records how many copies of itself are running, then succeeds.
/// Usage: `sh counting.sh DIR TAG`.
pub const COUNTING_SIM: &str = r#"read line
d="$1"
mkdir "$d/run.$$"
echo $$ > "$d/pid.$2.$$"
ls "$d" | grep -c '^run\.' >> "$d/counts"
sleep 0.02
rmdir "$d/run.$$"
rm -f "$d/pid.$2.$$"
echo '{"type":"done","metrics":{"ok":1}}'
"#;

pub fn max_count(dir: &Path) -> usize {
    std::fs::read_to_string(dir.join("counts")).unwrap_or_default().lines().filter_map(|l| l.trim().parse().ok()).max().unwrap_or(0)
}
