//! The JSON study file read by `simflock run`.
//!
//! ```json
//! {
//!   "workflow": "param_est",
//!   "space": {"f_y": {"type": "uniform", "lo": 500, "hi": 8000}},
//!   "budget": 50,
//!   "rule": {"type": "least_squares"},
//!   "targets": {"peak_accel": 30.1},
//!   "simulator": {"command": ["simflock-demo-lander"]}
//! }
//! ```
//!
//! Unknown keys are errors everywhere in the file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::doe::SamplingDesign;
use crate::executor::{self, WorkerEndpoint};
use crate::scheduler::SchedulerKind;
use crate::search::{DEFAULT_CANDIDATES, DEFAULT_N_INITIAL};
use crate::workflows::{EstimationRule, SearchSpec, StudySpec, Workflow};
use crate::{Mode, ParamSpace};

pub const DEFAULT_OUT_DIR: &str = "simflock_out";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkflowKind {
    ParamEst,
    BayesOpt,
    Opt,
    #[serde(rename = "doe")]
    DoE,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    LeastSquares,
    GaussianMle,
}

/// Estimation rule as written in the file. Targets may sit here or at the top level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleSpec {
    #[serde(rename = "type")]
    pub kind: RuleKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub targets: Option<BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigmas: Option<BTreeMap<String, f64>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulatorSpec {
    /// Local simulator executable and arguments.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<Vec<String>>,
    /// Concurrent-trial cap for the local command.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slots: Option<usize>,
    /// Remote workers as `host:port`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tcp: Option<Vec<String>>,
}

fn default_one() -> usize {
    1
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyFile {
    pub workflow: WorkflowKind,
    pub space: ParamSpace,
    #[serde(default)]
    pub budget: Option<usize>,
    #[serde(default = "default_one")]
    pub max_concurrent: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub auto_run: bool,
    #[serde(default)]
    pub log_to_file: bool,
    #[serde(default)]
    pub search: Option<SearchSpec>,
    #[serde(default)]
    pub scheduler: Option<SchedulerKind>,
    #[serde(default)]
    pub design: Option<SamplingDesign>,
    #[serde(default)]
    pub rule: Option<RuleSpec>,
    #[serde(default)]
    pub targets: Option<BTreeMap<String, f64>>,
    #[serde(default)]
    pub mode: Option<Mode>,
    #[serde(default)]
    pub objective_metric: Option<String>,
    #[serde(default)]
    pub simulator: Option<SimulatorSpec>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub retries: Option<u32>,
    /// Seconds.
    #[serde(default)]
    pub trial_timeout: Option<f64>,
    #[serde(default)]
    pub cpus_per_trial: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StudyFileError {
    #[error("cannot read {path}: {detail}")]
    Io { path: PathBuf, detail: String },
    #[error("{path}:{line}:{column}: {detail}")]
    Parse { path: PathBuf, line: usize, column: usize, detail: String },
    #[error("invalid study file: {}", reasons.join("; "))]
    Invalid { reasons: Vec<String> },
}

/// Command-line values that replace file values.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub max_concurrent: Option<usize>,
    pub seed: Option<u64>,
    pub log_to_file: bool,
    pub workers: Option<Vec<WorkerEndpoint>>,
    pub out_dir: Option<PathBuf>,
}

pub fn parse_study_file(text: &str, path: &Path) -> Result<StudyFile, StudyFileError> {
    serde_json::from_str(text).map_err(|e| StudyFileError::Parse {
        path: path.to_owned(),
        line: e.line(),
        column: e.column(),
        detail: e.to_string(),
    })
}

pub fn load_study_file(path: &Path) -> Result<StudyFile, StudyFileError> {
    let text = fs::read_to_string(path).map_err(|e| StudyFileError::Io { path: path.to_owned(), detail: e.to_string() })?;
    parse_study_file(&text, path)
}

impl StudyFile {
    fn rule(&self, reasons: &mut Vec<String>) -> Option<EstimationRule> {
        let spec = self.rule.clone().unwrap_or(RuleSpec { kind: RuleKind::LeastSquares, targets: None, weights: None, sigmas: None });
        let targets = match (&spec.targets, &self.targets) {
            (Some(_), Some(_)) => {
                reasons.push("targets given both in `rule` and at the top level".into());
                return None;
            }
            (Some(t), None) | (None, Some(t)) => t.clone(),
            (None, None) => {
                reasons.push("param_est needs `targets`".into());
                return None;
            }
        };
        match spec.kind {
            RuleKind::LeastSquares => {
                if spec.sigmas.is_some() {
                    reasons.push("`sigmas` belongs to the gaussian_mle rule".into());
                }
                Some(EstimationRule::LeastSquares { targets, weights: spec.weights.unwrap_or_default() })
            }
            RuleKind::GaussianMle => {
                if spec.weights.is_some() {
                    reasons.push("`weights` belongs to the least_squares rule".into());
                }
                Some(EstimationRule::GaussianMle { targets, sigmas: spec.sigmas.unwrap_or_default() })
            }
        }
    }

    fn pool(&self, reasons: &mut Vec<String>) -> Vec<WorkerEndpoint> {
        let mut pool = Vec::new();
        if let Some(sim) = &self.simulator {
            if let Some(cmd) = &sim.command {
                pool.push(WorkerEndpoint::LocalProcess { command: cmd.clone(), slots: sim.slots });
            } else if sim.slots.is_some() {
                reasons.push("simulator.slots needs simulator.command".into());
            }
            for addr in sim.tcp.iter().flatten() {
                pool.push(WorkerEndpoint::remote(addr.trim_start_matches("tcp://")));
            }
        }
        if pool.is_empty() {
            match WorkerEndpoint::from_env() {
                Ok(Some(eps)) => pool = eps,
                Ok(None) => {}
                Err(e) => reasons.push(format!("{}: {e}", executor::WORKERS_ENV)),
            }
        }
        pool
    }

    /// Builds the study spec, collecting every problem found.
    pub fn to_spec(&self, overrides: &Overrides) -> Result<StudySpec, StudyFileError> {
        let mut reasons = Vec::new();
        let unused = |reasons: &mut Vec<String>, key: &str, present: bool| {
            if present {
                reasons.push(format!("`{key}` is not used by the {} workflow", self.workflow_name()));
            }
        };
        let needs_metric = |reasons: &mut Vec<String>| -> String {
            self.objective_metric.clone().unwrap_or_else(|| {
                reasons.push(format!("{} needs `objective_metric`", self.workflow_name()));
                String::new()
            })
        };

        let workflow = match self.workflow {
            WorkflowKind::ParamEst => {
                unused(&mut reasons, "design", self.design.is_some());
                unused(&mut reasons, "objective_metric", self.objective_metric.is_some());
                if self.mode.is_some_and(|m| m != Mode::Min) {
                    reasons.push("param_est always minimizes its score".into());
                }
                let rule = self.rule(&mut reasons);
                rule.map(|rule| Workflow::ParamEst { rule, search: self.search.clone().unwrap_or_default() })
            }
            WorkflowKind::BayesOpt => {
                unused(&mut reasons, "design", self.design.is_some());
                unused(&mut reasons, "rule", self.rule.is_some());
                unused(&mut reasons, "targets", self.targets.is_some());
                let (n_initial, candidates) = match &self.search {
                    None => (DEFAULT_N_INITIAL, DEFAULT_CANDIDATES),
                    Some(SearchSpec::GpBo { n_initial, candidates, kernel: None }) => (*n_initial, *candidates),
                    Some(_) => {
                        reasons.push("bayes_opt always uses gp_bo; only its n_initial and candidates may be set".into());
                        (DEFAULT_N_INITIAL, DEFAULT_CANDIDATES)
                    }
                };
                let objective_metric = needs_metric(&mut reasons);
                Some(Workflow::BayesOpt { objective_metric, mode: self.mode.unwrap_or_default(), n_initial, candidates })
            }
            WorkflowKind::Opt => {
                unused(&mut reasons, "design", self.design.is_some());
                unused(&mut reasons, "rule", self.rule.is_some());
                unused(&mut reasons, "targets", self.targets.is_some());
                let objective_metric = needs_metric(&mut reasons);
                Some(Workflow::Opt { objective_metric, mode: self.mode.unwrap_or_default(), search: self.search.clone().unwrap_or_default() })
            }
            WorkflowKind::DoE => {
                for (key, present) in [
                    ("search", self.search.is_some()),
                    ("rule", self.rule.is_some()),
                    ("targets", self.targets.is_some()),
                    ("mode", self.mode.is_some()),
                    ("objective_metric", self.objective_metric.is_some()),
                ] {
                    unused(&mut reasons, key, present);
                }
                match &self.design {
                    Some(d) => Some(Workflow::DoE { design: d.clone() }),
                    None => {
                        reasons.push("doe needs `design`".into());
                        None
                    }
                }
            }
        };

        let pool = match &overrides.workers {
            Some(w) => w.clone(),
            None => self.pool(&mut reasons),
        };
        let timeout = match self.trial_timeout {
            None => executor::DEFAULT_TIMEOUT,
            Some(t) if t > 0.0 && t.is_finite() => Duration::from_secs_f64(t),
            Some(t) => {
                reasons.push(format!("trial_timeout {t} must be a positive number of seconds"));
                executor::DEFAULT_TIMEOUT
            }
        };

        let Some(workflow) = workflow else {
            return Err(StudyFileError::Invalid { reasons });
        };
        let spec = StudySpec {
            workflow,
            space: self.space.clone(),
            budget: self.budget,
            max_concurrent: overrides.max_concurrent.unwrap_or(self.max_concurrent),
            seed: overrides.seed.unwrap_or(self.seed),
            auto_run: self.auto_run,
            log_to_file: overrides.log_to_file || self.log_to_file,
            scheduler: self.scheduler.clone().unwrap_or_default(),
            pool,
            out_dir: Some(overrides.out_dir.clone().or_else(|| self.out_dir.clone()).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))),
            log_dir: None,
            retries: self.retries.unwrap_or(0),
            trial_timeout: timeout,
            cpus_per_trial: self.cpus_per_trial.unwrap_or(1),
        };
        reasons.extend(spec.problems());
        if reasons.is_empty() {
            Ok(spec)
        } else {
            Err(StudyFileError::Invalid { reasons })
        }
    }

    fn workflow_name(&self) -> &'static str {
        match self.workflow {
            WorkflowKind::ParamEst => "param_est",
            WorkflowKind::BayesOpt => "bayes_opt",
            WorkflowKind::Opt => "opt",
            WorkflowKind::DoE => "doe",
        }
    }
}
