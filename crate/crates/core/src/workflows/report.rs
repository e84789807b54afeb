//! Study reports: the in-memory summary, `report.json`, `best_so_far.csv`
//! and the plain-text study log.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::executor::{TrialRecord, TrialStatus};
use crate::protocol::Metrics;
use crate::{Mode, ParamConfig};

pub const REPORT_FILE: &str = "report.json";
pub const BEST_SO_FAR_FILE: &str = "best_so_far.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestTrial {
    pub trial_id: u64,
    pub objective: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rmse: Option<f64>,
    pub config: ParamConfig,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub workflow: String,
    pub seed: u64,
    pub trial_count: usize,
    pub status_counts: BTreeMap<String, usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
    /// `J` or `NLL` for parameter estimation, else the metric name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_trial: Option<BestTrial>,
    /// Per-trial objective in trial order; null where the trial has none.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective_history: Option<Vec<Option<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rmse_history: Option<Vec<Option<f64>>>,
    /// Best objective seen up to each trial; null before the first success.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_so_far: Option<Vec<Option<f64>>>,
    pub total_wall_time: f64,
    pub peak_concurrency: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub removed_workers: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub summary: Summary,
    pub trials: Vec<TrialRecord>,
}

/// Running best under `mode`; `None` until the first finite value.
pub fn best_so_far_curve(objectives: &[Option<f64>], mode: Mode) -> Vec<Option<f64>> {
    let mut best: Option<f64> = None;
    objectives
        .iter()
        .map(|o| {
            if let Some(v) = *o {
                if best.is_none_or(|b| mode.is_better(v, b)) {
                    best = Some(v);
                }
            }
            best
        })
        .collect()
}

/// Index of the best objective; ties go to the earliest.
pub fn best_index(objectives: &[Option<f64>], mode: Mode) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, o) in objectives.iter().enumerate() {
        if let Some(v) = *o {
            if best.is_none_or(|(_, b)| mode.is_better(v, b)) {
                best = Some((i, v));
            }
        }
    }
    best.map(|(i, _)| i)
}

pub fn status_counts(trials: &[TrialRecord]) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for t in trials {
        *out.entry(t.status.to_string()).or_insert(0) += 1;
    }
    out
}

impl StudyReport {
    pub fn best_trial_id(&self) -> Option<u64> {
        self.summary.best_trial.as_ref().map(|b| b.trial_id)
    }

    pub fn count(&self, status: TrialStatus) -> usize {
        self.trials.iter().filter(|t| t.status == status).count()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Writes `report.json` and, for studies with an objective, `best_so_far.csv`.
    pub fn write_files(&self, out_dir: &Path) -> io::Result<()> {
        fs::create_dir_all(out_dir)?;
        fs::write(out_dir.join(REPORT_FILE), self.to_json() + "\n")?;
        if let (Some(obj), Some(best)) = (&self.summary.objective_history, &self.summary.best_so_far) {
            fs::write(out_dir.join(BEST_SO_FAR_FILE), best_so_far_csv(&self.trials, obj, best))?;
        }
        Ok(())
    }

    pub fn load(out_dir: &Path) -> io::Result<Self> {
        let text = fs::read_to_string(out_dir.join(REPORT_FILE))?;
        serde_json::from_str(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("{REPORT_FILE}: {e}")))
    }

    /// Short human summary, derived from the report alone.
    pub fn summary_text(&self) -> String {
        let s = &self.summary;
        let mut out = String::new();
        let _ = writeln!(out, "workflow: {} (seed {})", s.workflow, s.seed);
        let counts: Vec<String> = s.status_counts.iter().map(|(k, v)| format!("{k} {v}")).collect();
        let _ = writeln!(out, "trials: {} ({})", s.trial_count, counts.join(", "));
        match &s.best_trial {
            Some(b) => {
                let name = s.objective_name.as_deref().unwrap_or("objective");
                let _ = write!(out, "best trial: {} with {name} = {}", b.trial_id, b.objective);
                if let Some(r) = b.rmse {
                    let _ = write!(out, ", rmse = {r}");
                }
                out.push('\n');
                let _ = writeln!(out, "best config: {}", format_config(&b.config));
            }
            None => out.push_str("best trial: none\n"),
        }
        let _ = writeln!(out, "total wall time: {:.3} s", s.total_wall_time);
        let _ = writeln!(out, "peak concurrency: {}", s.peak_concurrency);
        if s.best_so_far.is_some() {
            let _ = writeln!(out, "best-so-far curve: {BEST_SO_FAR_FILE}");
        }
        if let Some(p) = &s.log_file {
            let _ = writeln!(out, "log: {}", p.display());
        }
        for w in &s.removed_workers {
            let _ = writeln!(out, "removed worker: {w}");
        }
        for w in &s.warnings {
            let _ = writeln!(out, "warning: {w}");
        }
        out
    }

    /// Per-trial table followed by the summary.
    pub fn log_text(&self) -> String {
        let mut out = String::new();
        let has_obj = self.summary.objective_history.is_some();
        let _ = write!(out, "{:>6}  {:<9}  {:>8}  {:>10}", "trial", "status", "attempts", "wall_s");
        if has_obj {
            let _ = write!(out, "  {:>14}", self.summary.objective_name.as_deref().unwrap_or("objective"));
        }
        out.push_str("  config | metrics\n");
        for (i, t) in self.trials.iter().enumerate() {
            let _ = write!(out, "{:>6}  {:<9}  {:>8}  {:>10.4}", t.trial_id, t.status, t.attempts, t.wall_time);
            if let Some(obj) = &self.summary.objective_history {
                match obj.get(i).copied().flatten() {
                    Some(v) => {
                        let _ = write!(out, "  {v:>14.6e}");
                    }
                    None => {
                        let _ = write!(out, "  {:>14}", "-");
                    }
                }
            }
            let _ = write!(out, "  {} | {}", format_config(&t.config), format_metrics(&t.metrics));
            if let Some(e) = &t.error {
                let _ = write!(out, " | {}", e.replace('\n', " "));
            }
            out.push('\n');
        }
        out.push('\n');
        out.push_str(&self.summary_text());
        out
    }
}

fn format_config(c: &ParamConfig) -> String {
    let parts: Vec<String> = c.iter().map(|(k, v)| format!("{k}={v}")).collect();
    parts.join(" ")
}

fn format_metrics(m: &Metrics) -> String {
    let parts: Vec<String> = m.iter().map(|(k, v)| format!("{k}={v}")).collect();
    parts.join(" ")
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn best_so_far_csv(trials: &[TrialRecord], objective: &[Option<f64>], best: &[Option<f64>]) -> String {
    let mut out = String::from("trial_id,objective,best\n");
    for ((t, o), b) in trials.iter().zip(objective).zip(best) {
        let _ = writeln!(out, "{},{},{}", t.trial_id, cell(*o), cell(*b));
    }
    out
}

/// Creates `simflock_log_YYYYMMDD_HHMMSS.txt` in `dir`, adding `_1`, `_2`, ...
/// if the name is taken.
pub fn create_log_file(dir: &Path) -> io::Result<(PathBuf, fs::File)> {
    let stem = chrono::Local::now().format("simflock_log_%Y%m%d_%H%M%S").to_string();
    for n in 0u32.. {
        let name = if n == 0 { format!("{stem}.txt") } else { format!("{stem}_{n}.txt") };
        let path = dir.join(name);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(f) => return Ok((path, f)),
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e),
        }
    }
    unreachable!("u32 suffixes exhausted")
}

/// Writes the study log to a new timestamped file in `dir`, or to stdout.
pub fn write_log(report: &StudyReport, to_file: bool, dir: &Path) -> io::Result<Option<PathBuf>> {
    let text = report.log_text();
    if to_file {
        let (path, mut f) = create_log_file(dir)?;
        f.write_all(text.as_bytes())?;
        Ok(Some(path))
    } else {
        let mut out = io::stdout().lock();
        out.write_all(text.as_bytes())?;
        out.flush()?;
        Ok(None)
    }
}
