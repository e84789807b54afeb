//! The four study workflows and their lifecycle.
//!
//! * `ParamEst`: fit parameters to target outputs under an estimation rule.
//! * `BayesOpt`: optimize one metric with GP Bayesian optimization.
//! * `Opt`: optimize one metric with a chosen search algorithm.
//! * `DoE`: run a fixed design with no objective.
//!
//! [`build_and_run`] either runs the study at once (`auto_run`) or hands back
//! a [`Study`] whose setters apply until [`Study::build`]; [`Study::run`]
//! follows.

pub mod estimation;
pub mod report;

use std::collections::HashMap;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::doe::SamplingDesign;
use crate::executor::{self, ExecEvent, ExecutorConfig, ExecutorError, Feed, ReportAction, Resources, TrialRecord, TrialSource, TrialSpec, TrialStatus, WorkerEndpoint};
use crate::param_space::validate_space;
use crate::protocol::Metrics;
use crate::scheduler::{Decision, SchedulerError, SchedulerKind, TrialScheduler};
use crate::search::{KernelParams, Observation, SearchAlg, Searcher, DEFAULT_CANDIDATES, DEFAULT_N_INITIAL};
use crate::seed;
use crate::{Mode, ParamConfig, ParamSpace};

pub use estimation::{score_gaussian_mle, score_least_squares, EstimationError, EstimationRule};
pub use report::{write_log, BestTrial, StudyReport, Summary};

const SEARCH_STREAM: u64 = 1;
const DESIGN_STREAM: u64 = 2;
const FALLBACK_STREAM: u64 = 3;

/// Search algorithm as configured; the seed comes from the study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "search", deny_unknown_fields)]
pub enum SearchSpec {
    #[default]
    #[serde(rename = "random")]
    Random,
    #[serde(rename = "grid")]
    Grid,
    #[serde(rename = "gp_bo")]
    GpBo {
        #[serde(default = "default_n_initial")]
        n_initial: usize,
        #[serde(default = "default_candidates", rename = "candidates_per_step", alias = "candidates")]
        candidates: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        kernel: Option<KernelParams>,
    },
}

fn default_n_initial() -> usize {
    DEFAULT_N_INITIAL
}

fn default_candidates() -> usize {
    DEFAULT_CANDIDATES
}

impl SearchSpec {
    pub fn gp_default() -> Self {
        SearchSpec::GpBo { n_initial: DEFAULT_N_INITIAL, candidates: DEFAULT_CANDIDATES, kernel: None }
    }

    pub fn to_alg(&self, study_seed: u64) -> SearchAlg {
        let seed = seed::splitmix64(study_seed.wrapping_add(SEARCH_STREAM));
        match self {
            SearchSpec::Random => SearchAlg::Random { seed },
            SearchSpec::Grid => SearchAlg::Grid,
            SearchSpec::GpBo { n_initial, candidates, kernel } => {
                SearchAlg::GpBayesOpt { seed, n_initial: *n_initial, kernel: kernel.clone(), candidates_per_step: *candidates }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Workflow {
    ParamEst { rule: EstimationRule, search: SearchSpec },
    BayesOpt { objective_metric: String, mode: Mode, n_initial: usize, candidates: usize },
    Opt { objective_metric: String, mode: Mode, search: SearchSpec },
    DoE { design: SamplingDesign },
}

impl Workflow {
    pub fn name(&self) -> &'static str {
        match self {
            Workflow::ParamEst { .. } => "param_est",
            Workflow::BayesOpt { .. } => "bayes_opt",
            Workflow::Opt { .. } => "opt",
            Workflow::DoE { .. } => "doe",
        }
    }

    fn search(&self) -> Option<SearchSpec> {
        match self {
            Workflow::ParamEst { search, .. } | Workflow::Opt { search, .. } => Some(search.clone()),
            Workflow::BayesOpt { n_initial, candidates, .. } => {
                Some(SearchSpec::GpBo { n_initial: *n_initial, candidates: *candidates, kernel: None })
            }
            Workflow::DoE { .. } => None,
        }
    }

    fn mode(&self) -> Option<Mode> {
        match self {
            Workflow::ParamEst { .. } => Some(Mode::Min),
            Workflow::BayesOpt { mode, .. } | Workflow::Opt { mode, .. } => Some(*mode),
            Workflow::DoE { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudySpec {
    pub workflow: Workflow,
    pub space: ParamSpace,
    /// Number of trials. Required except for DoE, whose design sets it.
    pub budget: Option<usize>,
    pub max_concurrent: usize,
    pub seed: u64,
    pub auto_run: bool,
    pub log_to_file: bool,
    pub scheduler: SchedulerKind,
    pub pool: Vec<WorkerEndpoint>,
    /// Where `report.json` and `best_so_far.csv` go; nothing is written if unset.
    pub out_dir: Option<PathBuf>,
    /// Directory for the log file; the working directory if unset.
    pub log_dir: Option<PathBuf>,
    pub retries: u32,
    pub trial_timeout: Duration,
    pub cpus_per_trial: u32,
}

impl StudySpec {
    pub fn new(workflow: Workflow, space: ParamSpace, pool: Vec<WorkerEndpoint>) -> Self {
        StudySpec {
            workflow,
            space,
            budget: None,
            max_concurrent: 1,
            seed: 0,
            auto_run: true,
            log_to_file: false,
            scheduler: SchedulerKind::Fifo,
            pool,
            out_dir: None,
            log_dir: None,
            retries: 0,
            trial_timeout: executor::DEFAULT_TIMEOUT,
            cpus_per_trial: 1,
        }
    }

    /// Every problem with the spec.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.space.is_empty() {
            out.push("parameter space is empty".to_owned());
        }
        if let Err(e) = validate_space(&self.space) {
            out.push(e.to_string());
        }
        if self.max_concurrent == 0 {
            out.push("max_concurrent must be at least 1".to_owned());
        }
        if self.cpus_per_trial == 0 {
            out.push("cpus_per_trial must be at least 1".to_owned());
        }
        if self.trial_timeout.is_zero() {
            out.push("trial_timeout must be positive".to_owned());
        }
        if self.pool.is_empty() {
            out.push("no simulator or workers configured".to_owned());
        }
        for ep in &self.pool {
            if let Err(e) = ep.check() {
                out.push(e.to_string());
            }
        }
        match &self.workflow {
            Workflow::DoE { design } => match design.planned_size(&self.space) {
                Ok(n) => {
                    if let Some(b) = self.budget {
                        if b != n {
                            out.push(format!("budget {b} differs from the design size {n}"));
                        }
                    }
                }
                Err(e) => out.push(e.to_string()),
            },
            other => {
                match self.budget {
                    None => out.push("budget is required".to_owned()),
                    Some(0) => out.push("budget must be at least 1".to_owned()),
                    Some(_) => {}
                }
                if let Workflow::ParamEst { rule, .. } = other {
                    out.extend(rule.problems());
                }
                if let Workflow::BayesOpt { objective_metric, .. } | Workflow::Opt { objective_metric, .. } = other {
                    if objective_metric.is_empty() {
                        out.push("objective_metric must be nonempty".to_owned());
                    }
                }
                if let Some(search) = other.search() {
                    if let Err(e) = search.to_alg(self.seed).check(&self.space) {
                        out.push(e.to_string());
                    }
                }
            }
        }
        if let Err(e) = self.scheduler.check() {
            out.push(e.to_string());
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WorkflowError {
    #[error("invalid study: {}", reasons.join("; "))]
    InvalidSpec { reasons: Vec<String> },
    #[error("{0}")]
    LifecycleError(String),
    #[error(transparent)]
    Executor(#[from] ExecutorError),
    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for WorkflowError {
    fn from(e: std::io::Error) -> Self {
        WorkflowError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stage {
    Configuring,
    Built,
    Finished,
}

/// A study in manual mode: configure, then `build`, then `run`.
#[derive(Debug)]
pub struct Study {
    spec: StudySpec,
    stage: Stage,
    design: Option<Vec<ParamConfig>>,
    budget: usize,
    warnings: Vec<String>,
}

pub enum Construction {
    Finished(StudyReport),
    Manual(Study),
}

impl Construction {
    pub fn into_report(self) -> Option<StudyReport> {
        match self {
            Construction::Finished(r) => Some(r),
            Construction::Manual(_) => None,
        }
    }

    pub fn into_study(self) -> Option<Study> {
        match self {
            Construction::Manual(s) => Some(s),
            Construction::Finished(_) => None,
        }
    }
}

/// Validates the spec; with `auto_run` also builds and runs it.
pub fn build_and_run(spec: StudySpec) -> Result<Construction, WorkflowError> {
    let reasons = spec.problems();
    if !reasons.is_empty() {
        return Err(WorkflowError::InvalidSpec { reasons });
    }
    let auto = spec.auto_run;
    let mut study = Study { spec, stage: Stage::Configuring, design: None, budget: 0, warnings: Vec::new() };
    if auto {
        study.build()?;
        Ok(Construction::Finished(study.run()?))
    } else {
        Ok(Construction::Manual(study))
    }
}

impl Study {
    pub fn spec(&self) -> &StudySpec {
        &self.spec
    }

    fn configurable(&mut self, what: &str) -> Result<&mut StudySpec, WorkflowError> {
        match self.stage {
            Stage::Configuring => Ok(&mut self.spec),
            _ => Err(WorkflowError::LifecycleError(format!("cannot set {what} after build()"))),
        }
    }

    pub fn set_max_concurrent(&mut self, n: usize) -> Result<(), WorkflowError> {
        self.configurable("max_concurrent")?.max_concurrent = n;
        Ok(())
    }

    pub fn set_resources(&mut self, resources: Resources) -> Result<(), WorkflowError> {
        self.configurable("resources")?.cpus_per_trial = resources.cpus;
        Ok(())
    }

    pub fn set_search(&mut self, search: SearchSpec) -> Result<(), WorkflowError> {
        let spec = self.configurable("search")?;
        match &mut spec.workflow {
            Workflow::ParamEst { search: s, .. } | Workflow::Opt { search: s, .. } => {
                *s = search;
                Ok(())
            }
            Workflow::BayesOpt { .. } => Err(WorkflowError::InvalidSpec {
                reasons: vec!["bayes_opt always uses GP Bayesian optimization".into()],
            }),
            Workflow::DoE { .. } => Err(WorkflowError::InvalidSpec { reasons: vec!["doe has no search algorithm".into()] }),
        }
    }

    pub fn set_scheduler(&mut self, scheduler: SchedulerKind) -> Result<(), WorkflowError> {
        self.configurable("scheduler")?.scheduler = scheduler;
        Ok(())
    }

    pub fn set_budget(&mut self, budget: usize) -> Result<(), WorkflowError> {
        self.configurable("budget")?.budget = Some(budget);
        Ok(())
    }

    pub fn set_seed(&mut self, seed: u64) -> Result<(), WorkflowError> {
        self.configurable("seed")?.seed = seed;
        Ok(())
    }

    pub fn set_retries(&mut self, retries: u32) -> Result<(), WorkflowError> {
        self.configurable("retries")?.retries = retries;
        Ok(())
    }

    pub fn set_trial_timeout(&mut self, timeout: Duration) -> Result<(), WorkflowError> {
        self.configurable("trial_timeout")?.trial_timeout = timeout;
        Ok(())
    }

    pub fn set_pool(&mut self, pool: Vec<WorkerEndpoint>) -> Result<(), WorkflowError> {
        self.configurable("pool")?.pool = pool;
        Ok(())
    }

    pub fn set_log_to_file(&mut self, on: bool) -> Result<(), WorkflowError> {
        self.configurable("log_to_file")?.log_to_file = on;
        Ok(())
    }

    pub fn set_out_dir(&mut self, dir: Option<PathBuf>) -> Result<(), WorkflowError> {
        self.configurable("out_dir")?.out_dir = dir;
        Ok(())
    }

    pub fn set_log_dir(&mut self, dir: Option<PathBuf>) -> Result<(), WorkflowError> {
        self.configurable("log_dir")?.log_dir = dir;
        Ok(())
    }

    /// Revalidates the spec and fixes the trial plan. Configuration is frozen afterwards.
    pub fn build(&mut self) -> Result<(), WorkflowError> {
        if self.stage != Stage::Configuring {
            return Err(WorkflowError::LifecycleError("build() called twice".into()));
        }
        let reasons = self.spec.problems();
        if !reasons.is_empty() {
            return Err(WorkflowError::InvalidSpec { reasons });
        }
        let spec = &self.spec;
        match &spec.workflow {
            Workflow::DoE { design } => {
                let mut rng = seed::stream(spec.seed, DESIGN_STREAM);
                let rows = design.generate(&spec.space, &mut rng).map_err(|e| WorkflowError::InvalidSpec { reasons: vec![e.to_string()] })?;
                self.budget = rows.len();
                self.design = Some(rows);
            }
            other => {
                let mut budget = spec.budget.expect("validated");
                if matches!(other.search(), Some(SearchSpec::Grid)) {
                    let size = crate::doe::full_factorial_len(&spec.space).map_err(|e| WorkflowError::InvalidSpec { reasons: vec![e.to_string()] })?;
                    if budget > size {
                        self.warnings.push(format!("budget {budget} clamped to the grid size {size}"));
                        budget = size;
                    }
                }
                self.budget = budget;
            }
        }
        self.stage = Stage::Built;
        Ok(())
    }

    pub fn run(&mut self) -> Result<StudyReport, WorkflowError> {
        match self.stage {
            Stage::Configuring => return Err(WorkflowError::LifecycleError("run() called before build()".into())),
            Stage::Finished => return Err(WorkflowError::LifecycleError("study has already run".into())),
            Stage::Built => {}
        }
        self.stage = Stage::Finished;
        let spec = &self.spec;
        let scheduler = TrialScheduler::new(spec.scheduler.clone()).map_err(|e| WorkflowError::InvalidSpec { reasons: vec![e.to_string()] })?;

        let mut env = Vec::new();
        if let Some(dir) = &spec.out_dir {
            std::fs::create_dir_all(dir)?;
            let abs = std::path::absolute(dir).unwrap_or_else(|_| dir.clone());
            env.push((crate::demo::OUT_DIR_ENV.to_owned(), abs.to_string_lossy().into_owned()));
        }
        let cfg = ExecutorConfig {
            max_concurrent: spec.max_concurrent,
            retries: spec.retries,
            timeout: spec.trial_timeout,
            report_steps: spec.scheduler.report_steps(),
            env,
        };

        let mut driver = Driver::new(spec, self.budget, self.design.take(), scheduler);
        let started = Instant::now();
        let outcome = executor::run_feed(&mut driver, &spec.pool, &cfg)?;
        let total = started.elapsed().as_secs_f64();

        let mut warnings = std::mem::take(&mut self.warnings);
        warnings.append(&mut driver.warnings);
        let mut report = assemble(spec, outcome.records, &driver, total, outcome.peak_concurrency, outcome.removed_workers, warnings);

        let log_dir = spec.log_dir.clone().unwrap_or_else(|| PathBuf::from("."));
        report.summary.log_file = write_log(&report, spec.log_to_file, &log_dir)?;
        if let Some(dir) = &spec.out_dir {
            report.write_files(dir)?;
        }
        Ok(report)
    }
}

#[derive(Debug, Clone, Copy)]
struct Score {
    objective: f64,
    rmse: Option<f64>,
}

enum Plan {
    Search { searcher: Box<Searcher>, mode: Mode, gp_initial: Option<usize> },
    Design(std::vec::IntoIter<ParamConfig>),
}

/// Feeds the executor and scores results as they arrive.
struct Driver<'a> {
    spec: &'a StudySpec,
    plan: Plan,
    budget: usize,
    issued: usize,
    scheduler: TrialScheduler,
    unit_points: HashMap<u64, Vec<f64>>,
    history: Vec<Observation>,
    scores: HashMap<u64, Score>,
    warnings: Vec<String>,
    fallback: seed::SeededRng,
}

impl<'a> Driver<'a> {
    fn new(spec: &'a StudySpec, budget: usize, design: Option<Vec<ParamConfig>>, scheduler: TrialScheduler) -> Self {
        let plan = match design {
            Some(rows) => Plan::Design(rows.into_iter()),
            None => {
                let search = spec.workflow.search().expect("objective workflows have a search");
                let gp_initial = match &search {
                    SearchSpec::GpBo { n_initial, .. } => Some(*n_initial),
                    _ => None,
                };
                Plan::Search {
                    searcher: Box::new(Searcher::new(search.to_alg(spec.seed))),
                    mode: spec.workflow.mode().expect("objective workflows have a mode"),
                    gp_initial,
                }
            }
        };
        Driver {
            spec,
            plan,
            budget,
            issued: 0,
            scheduler,
            unit_points: HashMap::new(),
            history: Vec::new(),
            scores: HashMap::new(),
            warnings: Vec::new(),
            fallback: seed::stream(spec.seed, FALLBACK_STREAM),
        }
    }

    fn score(&self, metrics: &Metrics) -> Result<Option<Score>, String> {
        let s = match &self.spec.workflow {
            Workflow::DoE { .. } => return Ok(None),
            Workflow::ParamEst { rule, .. } => {
                let (objective, rmse) = rule.score(metrics).map_err(|e| e.to_string())?;
                Score { objective, rmse }
            }
            Workflow::BayesOpt { objective_metric, .. } | Workflow::Opt { objective_metric, .. } => {
                let v = metrics.get(objective_metric).ok_or_else(|| EstimationError::MissingOutput { name: objective_metric.clone() }.to_string())?;
                Score { objective: *v, rmse: None }
            }
        };
        if s.objective.is_finite() {
            Ok(Some(s))
        } else {
            Err(format!("objective is not finite ({})", s.objective))
        }
    }
}

impl TrialSource for Driver<'_> {
    fn next_spec(&mut self, in_flight: usize) -> Feed {
        if self.issued >= self.budget {
            return Feed::Done;
        }
        let trial_id = self.issued as u64;
        let (config, unit_point) = match &mut self.plan {
            Plan::Design(rows) => match rows.next() {
                Some(c) => (c, None),
                None => return Feed::Done,
            },
            Plan::Search { searcher, mode, gp_initial } => {
                // Past the space-filling phase, each GP proposal sees every finished trial.
                if gp_initial.is_some_and(|n| self.issued >= n) && in_flight > 0 {
                    return Feed::Wait;
                }
                match searcher.suggest(&self.spec.space, &self.history, *mode) {
                    Ok(p) => (p.config, Some(p.unit_point)),
                    Err(crate::search::SearchError::GridExhausted) => return Feed::Done,
                    Err(e) => {
                        self.warnings.push(format!("trial {trial_id}: search failed ({e}); sampled uniformly instead"));
                        let u: Vec<f64> = (0..self.spec.space.len()).map(|_| self.fallback.random::<f64>()).collect();
                        match self.spec.space.config_at(&u) {
                            Ok(c) => (c, Some(u)),
                            Err(_) => return Feed::Done,
                        }
                    }
                }
            }
        };
        self.issued += 1;
        if let Some(u) = unit_point {
            self.unit_points.insert(trial_id, u);
        }
        self.scheduler.on_start(trial_id);
        Feed::Spec(TrialSpec {
            trial_id,
            config,
            seed: seed::trial_seed(self.spec.seed, trial_id),
            resources: Resources { cpus: self.spec.cpus_per_trial },
        })
    }

    fn on_report(&mut self, trial_id: u64, step: u32, metrics: &Metrics) -> ReportAction {
        match self.scheduler.on_report(trial_id, step, metrics) {
            Ok(Decision::Continue) => ReportAction::Continue,
            Ok(Decision::Prune) => ReportAction::Prune,
            Err(e @ SchedulerError::MissingMetric { .. }) => ReportAction::Fail(e.to_string()),
            Err(_) => ReportAction::Continue,
        }
    }

    fn on_record(&mut self, record: &mut TrialRecord) {
        let _ = self.scheduler.on_complete(record.trial_id, &record.metrics);
        if record.status != TrialStatus::Completed {
            return;
        }
        match self.score(&record.metrics) {
            Ok(None) => {}
            Ok(Some(score)) => {
                self.scores.insert(record.trial_id, score);
                let obs = Observation {
                    trial_id: record.trial_id,
                    config: record.config.clone(),
                    unit_point: self.unit_points.get(&record.trial_id).cloned().unwrap_or_default(),
                    objective: score.objective,
                };
                let at = self.history.partition_point(|o| o.trial_id < record.trial_id);
                self.history.insert(at, obs);
            }
            Err(why) => record.fail(why),
        }
    }

    fn on_event(&mut self, event: &ExecEvent) {
        if let ExecEvent::WorkerRemoved { worker } = event {
            self.warnings.push(format!("worker {worker} removed after repeated connection failures"));
        }
    }
}

fn assemble(
    spec: &StudySpec,
    trials: Vec<TrialRecord>,
    driver: &Driver<'_>,
    total_wall_time: f64,
    peak_concurrency: usize,
    removed_workers: Vec<String>,
    mut warnings: Vec<String>,
) -> StudyReport {
    let mode = spec.workflow.mode();
    let (objective_name, objective_history, rmse_history, best_so_far, best_trial) = match mode {
        None => (None, None, None, None, None),
        Some(mode) => {
            let obj: Vec<Option<f64>> = trials.iter().map(|t| driver.scores.get(&t.trial_id).map(|s| s.objective)).collect();
            let rmse: Vec<Option<f64>> = trials.iter().map(|t| driver.scores.get(&t.trial_id).and_then(|s| s.rmse)).collect();
            let curve = report::best_so_far_curve(&obj, mode);
            let best = report::best_index(&obj, mode).map(|i| {
                let t = &trials[i];
                let s = driver.scores[&t.trial_id];
                BestTrial { trial_id: t.trial_id, objective: s.objective, rmse: s.rmse, config: t.config.clone(), metrics: t.metrics.clone() }
            });
            if best.is_none() {
                warnings.push("no trial completed with a score; there is no best trial".into());
            }
            let name = match &spec.workflow {
                Workflow::ParamEst { rule: EstimationRule::LeastSquares { .. }, .. } => "J".to_owned(),
                Workflow::ParamEst { rule: EstimationRule::GaussianMle { .. }, .. } => "NLL".to_owned(),
                Workflow::BayesOpt { objective_metric, .. } | Workflow::Opt { objective_metric, .. } => objective_metric.clone(),
                Workflow::DoE { .. } => unreachable!(),
            };
            let has_rmse = rmse.iter().any(Option::is_some);
            (Some(name), Some(obj), has_rmse.then_some(rmse), Some(curve), best)
        }
    };
    StudyReport {
        summary: Summary {
            workflow: spec.workflow.name().to_owned(),
            seed: spec.seed,
            trial_count: trials.len(),
            status_counts: report::status_counts(&trials),
            mode,
            objective_name,
            best_trial,
            objective_history,
            rmse_history,
            best_so_far,
            total_wall_time,
            peak_concurrency,
            log_file: None,
            removed_workers,
            warnings,
        },
        trials,
    }
}

/// Convenience for library callers: validate, build and run regardless of `auto_run`.
pub fn run_study(mut spec: StudySpec) -> Result<StudyReport, WorkflowError> {
    spec.auto_run = true;
    Ok(build_and_run(spec)?.into_report().expect("auto_run returns a report"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Distribution;

    fn space() -> ParamSpace {
        ParamSpace::new().with("x", Distribution::uniform(0.0, 1.0))
    }

    fn sh(script: &str) -> WorkerEndpoint {
        WorkerEndpoint::local(["sh", "-c", script])
    }

    fn opt_spec(budget: usize) -> StudySpec {
        let mut s = StudySpec::new(
            Workflow::Opt { objective_metric: "y".into(), mode: Mode::Min, search: SearchSpec::Random },
            space(),
            vec![sh(r#"read l; echo '{"type":"done","metrics":{"y":1.0}}'"#)],
        );
        s.budget = Some(budget);
        s
    }

    #[test]
    fn invalid_spec_lists_every_reason() {
        let mut s = opt_spec(0);
        s.max_concurrent = 0;
        s.pool.clear();
        let Err(WorkflowError::InvalidSpec { reasons }) = build_and_run(s) else { panic!() };
        assert_eq!(reasons.len(), 3, "{reasons:?}");
    }

    #[test]
    fn manual_lifecycle_order() {
        let mut s = opt_spec(2);
        s.auto_run = false;
        let mut study = build_and_run(s).unwrap().into_study().unwrap();
        assert!(matches!(study.run(), Err(WorkflowError::LifecycleError(_))));
        study.set_max_concurrent(2).unwrap();
        study.build().unwrap();
        assert!(matches!(study.set_max_concurrent(3), Err(WorkflowError::LifecycleError(_))));
        assert!(matches!(study.build(), Err(WorkflowError::LifecycleError(_))));
        let r = study.run().unwrap();
        assert_eq!(r.trials.len(), 2);
        assert!(matches!(study.run(), Err(WorkflowError::LifecycleError(_))));
    }

    #[test]
    fn bayes_opt_search_is_fixed() {
        let mut s = opt_spec(2);
        s.workflow = Workflow::BayesOpt { objective_metric: "y".into(), mode: Mode::Min, n_initial: 2, candidates: 16 };
        s.auto_run = false;
        let mut study = build_and_run(s).unwrap().into_study().unwrap();
        assert!(matches!(study.set_search(SearchSpec::Random), Err(WorkflowError::InvalidSpec { .. })));
    }

    #[test]
    fn budget_one_picks_trial_zero() {
        let r = run_study(opt_spec(1)).unwrap();
        assert_eq!(r.best_trial_id(), Some(0));
    }

    #[test]
    fn missing_objective_metric_fails_trial() {
        let mut s = opt_spec(2);
        s.workflow = Workflow::Opt { objective_metric: "nope".into(), mode: Mode::Min, search: SearchSpec::Random };
        let r = run_study(s).unwrap();
        assert!(r.trials.iter().all(|t| t.status == TrialStatus::Failed && t.error.as_deref().unwrap().contains("nope")));
        assert_eq!(r.best_trial_id(), None);
        assert!(!r.summary.warnings.is_empty());
    }

    #[test]
    fn all_rejected_gives_no_best_and_a_warning() {
        let mut s = opt_spec(3);
        s.pool = vec![sh(r#"read l; echo '{"type":"rejected","reason":"no"}'"#)];
        let r = run_study(s).unwrap();
        assert_eq!(r.count(TrialStatus::Rejected), 3);
        assert!(r.summary.best_trial.is_none());
        assert_eq!(r.summary.warnings.len(), 1);
        assert!(r.trials.iter().all(|t| t.attempts == 1 && t.error.as_deref() == Some("no")));
    }

    #[test]
    fn grid_budget_is_clamped() {
        let mut s = opt_spec(10);
        s.space = ParamSpace::new().with("a", Distribution::grid([1i64, 2, 3]));
        s.workflow = Workflow::Opt { objective_metric: "y".into(), mode: Mode::Min, search: SearchSpec::Grid };
        let r = run_study(s).unwrap();
        assert_eq!(r.trials.len(), 3);
        let mut seen: Vec<String> = r.trials.iter().map(|t| t.config["a"].to_string()).collect();
        seen.sort();
        assert_eq!(seen, ["1", "2", "3"]);
        assert!(r.summary.warnings.iter().any(|w| w.contains("clamped")));
    }

    #[test]
    fn doe_full_factorial_has_no_objective_fields() {
        let mut s = opt_spec(1);
        s.budget = None;
        s.space = ParamSpace::new().with("a", Distribution::grid([1i64, 2]));
        s.workflow = Workflow::DoE { design: SamplingDesign::FullFactorial };
        let r = run_study(s).unwrap();
        assert_eq!(r.trials.len(), 2);
        let json = r.to_json();
        assert!(!json.contains("objective") && !json.contains("best_trial"), "{json}");
    }
}
