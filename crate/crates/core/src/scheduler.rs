//! Trial schedulers: decide whether a running trial continues after each
//! intermediate report.
//!
//! [`SchedulerKind::Asha`] implements asynchronous successive halving: rungs
//! sit at budgets `grace · reduction^k` below `max_t`, and a trial reporting
//! at a rung continues only if its metric ranks within the top
//! `⌈m / reduction⌉` of the `m` metrics recorded at that rung so far.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Mode;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SchedulerError {
    #[error("report is missing the scheduler metric `{name}`")]
    MissingMetric { name: String },
    #[error("trial {0} is not registered with the scheduler")]
    UnknownTrial(u64),
    #[error("invalid scheduler settings: {0}")]
    InvalidSettings(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "scheduler", deny_unknown_fields)]
pub enum SchedulerKind {
    #[default]
    #[serde(rename = "fifo")]
    Fifo,
    #[serde(rename = "asha")]
    Asha { metric: String, mode: Mode, grace: u32, max_t: u32, reduction: u32 },
}

impl SchedulerKind {
    pub fn check(&self) -> Result<(), SchedulerError> {
        match self {
            SchedulerKind::Fifo => Ok(()),
            SchedulerKind::Asha { metric, grace, max_t, reduction, .. } => {
                let bad = |m: &str| Err(SchedulerError::InvalidSettings(m.into()));
                if metric.is_empty() {
                    return bad("metric name must be nonempty");
                }
                if *grace == 0 {
                    return bad("grace must be positive");
                }
                if grace > max_t {
                    return bad("grace must not exceed max_t");
                }
                if *reduction < 2 {
                    return bad("reduction must be at least 2");
                }
                Ok(())
            }
        }
    }

    /// Number of intermediate reports a simulator should emit, if any.
    pub fn report_steps(&self) -> Option<u32> {
        match self {
            SchedulerKind::Fifo => None,
            SchedulerKind::Asha { max_t, .. } => Some(*max_t),
        }
    }

    /// Rung budgets, in increasing order.
    pub fn rung_budgets(&self) -> Vec<u32> {
        match *self {
            SchedulerKind::Fifo => Vec::new(),
            SchedulerKind::Asha { grace, max_t, reduction, .. } => {
                let mut out = Vec::new();
                let mut b = u64::from(grace);
                while b < u64::from(max_t) {
                    out.push(b as u32);
                    b *= u64::from(reduction);
                }
                out
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Continue,
    Prune,
}

/// Metrics recorded at one rung, in arrival order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Rung {
    pub budget: u32,
    pub records: Vec<(u64, f64)>,
}

/// Stateful scheduler instance for one study.
#[derive(Debug, Clone)]
pub struct TrialScheduler {
    kind: SchedulerKind,
    live: HashSet<u64>,
    rungs: Vec<Rung>,
    pruned: usize,
}

impl TrialScheduler {
    pub fn new(kind: SchedulerKind) -> Result<Self, SchedulerError> {
        kind.check()?;
        let rungs = kind.rung_budgets().into_iter().map(|budget| Rung { budget, records: Vec::new() }).collect();
        Ok(TrialScheduler { kind, live: HashSet::new(), rungs, pruned: 0 })
    }

    pub fn kind(&self) -> &SchedulerKind {
        &self.kind
    }

    pub fn rungs(&self) -> &[Rung] {
        &self.rungs
    }

    pub fn pruned_count(&self) -> usize {
        self.pruned
    }

    /// Marks a trial as running. FIFO keeps no state.
    pub fn on_start(&mut self, trial_id: u64) {
        if matches!(self.kind, SchedulerKind::Asha { .. }) {
            self.live.insert(trial_id);
        }
    }

    pub fn on_report(&mut self, trial_id: u64, step: u32, metrics: &BTreeMap<String, f64>) -> Result<Decision, SchedulerError> {
        let SchedulerKind::Asha { metric, mode, reduction, .. } = &self.kind else {
            return Ok(Decision::Continue);
        };
        if !self.live.contains(&trial_id) {
            return Err(SchedulerError::UnknownTrial(trial_id));
        }
        let value = *metrics.get(metric).ok_or_else(|| SchedulerError::MissingMetric { name: metric.clone() })?;
        let Some(rung) = self.rungs.iter_mut().find(|r| r.budget == step) else {
            return Ok(Decision::Continue);
        };
        if rung.records.iter().any(|(id, _)| *id == trial_id) {
            return Ok(Decision::Continue);
        }
        rung.records.push((trial_id, value));
        let m = rung.records.len();
        let keep = m.div_ceil(*reduction as usize);
        let better = rung.records.iter().filter(|(_, v)| mode.is_better(*v, value)).count();
        if better < keep {
            Ok(Decision::Continue)
        } else {
            self.pruned += 1;
            Ok(Decision::Prune)
        }
    }

    /// Stops tracking a trial. Rung records are kept for later comparisons.
    pub fn on_complete(&mut self, trial_id: u64, _final_metrics: &BTreeMap<String, f64>) -> Result<(), SchedulerError> {
        if matches!(self.kind, SchedulerKind::Fifo) {
            return Ok(());
        }
        if self.live.remove(&trial_id) {
            Ok(())
        } else {
            Err(SchedulerError::UnknownTrial(trial_id))
        }
    }
}
