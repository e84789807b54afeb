//! Search algorithms: propose the next configuration given completed history.
//!
//! A [`Searcher`] owns the mutable state of one algorithm (RNG, grid cursor,
//! Sobol stream) and is driven serially by the study loop. Every proposal
//! carries the unit-cube point it was generated from; the GP is fitted on
//! those points, so categorical parameters enter it by ordinal position.

pub mod acquisition;
pub mod gp;

use std::collections::HashSet;

use rand::Rng;
use thiserror::Error;

use crate::doe::{self, full_factorial_at, full_factorial_len, DesignError, SobolSeq};
use crate::param_space::{ParamConfig, ParamError, ParamSpace};
use crate::seed::{self, SeededRng};
use crate::Mode;

pub use acquisition::{ei_from_moments, expected_improvement};
pub use gp::{gp_fit, gp_fit_fixed, gp_posterior, GpError, KernelParams, SurrogateState};

pub const DEFAULT_N_INITIAL: usize = 8;
pub const DEFAULT_CANDIDATES: usize = 512;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SearchError {
    #[error("grid search has visited every configuration")]
    GridExhausted,
    #[error("parameter `{name}` is continuous; grid search needs enumerable supports")]
    NotEnumerable { name: String },
    #[error("invalid search settings: {0}")]
    InvalidSettings(String),
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error(transparent)]
    Design(#[from] DesignError),
}

#[derive(Debug, Clone, PartialEq)]
pub enum SearchAlg {
    Random {
        seed: u64,
    },
    Grid,
    GpBayesOpt {
        seed: u64,
        n_initial: usize,
        /// Starting kernel for hyperparameter search; `None` uses
        /// [`KernelParams::default_for`].
        kernel: Option<KernelParams>,
        candidates_per_step: usize,
    },
}

impl SearchAlg {
    pub fn gp_default(seed: u64) -> Self {
        SearchAlg::GpBayesOpt { seed, n_initial: DEFAULT_N_INITIAL, kernel: None, candidates_per_step: DEFAULT_CANDIDATES }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SearchAlg::Random { .. } => "random",
            SearchAlg::Grid => "grid",
            SearchAlg::GpBayesOpt { .. } => "gp_bo",
        }
    }

    /// Checks the settings against `space`.
    pub fn check(&self, space: &ParamSpace) -> Result<(), SearchError> {
        match self {
            SearchAlg::Random { .. } => Ok(()),
            SearchAlg::Grid => match space.first_continuous() {
                Some(name) => Err(SearchError::NotEnumerable { name: name.into() }),
                None => Ok(()),
            },
            SearchAlg::GpBayesOpt { n_initial, kernel, candidates_per_step, .. } => {
                if *n_initial < 2 {
                    return Err(SearchError::InvalidSettings("n_initial must be at least 2".into()));
                }
                if *candidates_per_step == 0 {
                    return Err(SearchError::InvalidSettings("candidates_per_step must be positive".into()));
                }
                if space.len() > doe::MAX_DIMENSIONS {
                    return Err(DesignError::DimensionTooLarge { requested: space.len(), max: doe::MAX_DIMENSIONS }.into());
                }
                if let Some(k) = kernel {
                    k.check()?;
                    if k.lengthscales.len() != space.len() {
                        return Err(SearchError::InvalidSettings(format!(
                            "kernel has {} lengthscales for {} parameters",
                            k.lengthscales.len(),
                            space.len()
                        )));
                    }
                }
                Ok(())
            }
        }
    }
}

/// A completed, scored trial as seen by the search algorithm.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub trial_id: u64,
    pub config: ParamConfig,
    /// Unit-cube point recorded when the config was proposed.
    pub unit_point: Vec<f64>,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub config: ParamConfig,
    pub unit_point: Vec<f64>,
}

#[derive(Debug, Clone)]
enum State {
    Random(SeededRng),
    Grid { cursor: usize },
    Gp { rng: SeededRng, init: Option<SobolSeq>, candidates: Option<Vec<Vec<f64>>> },
}

/// Stateful driver for one search algorithm.
#[derive(Debug, Clone)]
pub struct Searcher {
    alg: SearchAlg,
    state: State,
    last_fit: Option<SurrogateState>,
}

impl Searcher {
    pub fn new(alg: SearchAlg) -> Self {
        let state = match alg {
            SearchAlg::Random { seed } => State::Random(seed::rng(seed)),
            SearchAlg::Grid => State::Grid { cursor: 0 },
            SearchAlg::GpBayesOpt { seed, .. } => State::Gp { rng: seed::rng(seed), init: None, candidates: None },
        };
        Searcher { alg, state, last_fit: None }
    }

    pub fn alg(&self) -> &SearchAlg {
        &self.alg
    }

    /// The GP fitted for the most recent model-based proposal.
    pub fn last_fit(&self) -> Option<&SurrogateState> {
        self.last_fit.as_ref()
    }

    /// True once a GP searcher has left its space-filling phase for `history`.
    pub fn is_model_based(&self, history_len: usize) -> bool {
        matches!(self.alg, SearchAlg::GpBayesOpt { n_initial, .. } if history_len >= n_initial)
    }

    /// Proposes the next configuration.
    pub fn suggest(&mut self, space: &ParamSpace, history: &[Observation], mode: Mode) -> Result<Proposal, SearchError> {
        self.alg.check(space)?;
        match (&mut self.state, &self.alg) {
            (State::Random(rng), _) => {
                let unit_point: Vec<f64> = (0..space.len()).map(|_| rng.random::<f64>()).collect();
                Ok(Proposal { config: space.config_at(&unit_point)?, unit_point })
            }
            (State::Grid { cursor }, _) => {
                let total = full_factorial_len(space).map_err(|e| match e {
                    DesignError::NotEnumerable { name } => SearchError::NotEnumerable { name },
                    other => other.into(),
                })?;
                let visited: HashSet<usize> = history.iter().filter_map(|o| grid_index(space, &o.config)).collect();
                while *cursor < total && visited.contains(cursor) {
                    *cursor += 1;
                }
                if *cursor >= total {
                    return Err(SearchError::GridExhausted);
                }
                let config = full_factorial_at(space, *cursor).expect("cursor within grid");
                *cursor += 1;
                let unit_point = space
                    .iter()
                    .map(|(name, d)| d.unit_of(&config[name]).expect("grid value in support"))
                    .collect();
                Ok(Proposal { config, unit_point })
            }
            (State::Gp { rng, init, candidates }, SearchAlg::GpBayesOpt { n_initial, kernel, candidates_per_step, .. }) => {
                let d = space.len();
                if history.len() < *n_initial {
                    let seq = init.get_or_insert_with(|| SobolSeq::new(d).expect("dimension checked"));
                    let unit_point = seq.next_point();
                    return Ok(Proposal { config: space.config_at(&unit_point)?, unit_point });
                }
                let x: Vec<Vec<f64>> = history.iter().map(|o| o.unit_point.clone()).collect();
                let y: Vec<f64> = history.iter().map(|o| o.objective).collect();
                let start = kernel.clone().unwrap_or_else(|| KernelParams::default_for(d));
                let state = gp_fit(&x, &y, &start)?;
                let best = y.iter().copied().reduce(|a, b| if mode.is_better(b, a) { b } else { a }).expect("history nonempty");

                let base = candidates.get_or_insert_with(|| {
                    doe::gen_sobol(d, *candidates_per_step, 0).expect("dimension checked").rows().to_vec()
                });
                let shift: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
                // Strict comparison keeps the lowest candidate index on ties.
                let mut best_ei = f64::NEG_INFINITY;
                let mut best_point = Vec::new();
                for c in base.iter() {
                    let point: Vec<f64> = c.iter().zip(&shift).map(|(a, s)| wrap_unit(a + s)).collect();
                    let ei = expected_improvement(&state, &point, best, mode);
                    if ei > best_ei {
                        best_ei = ei;
                        best_point = point;
                    }
                }
                self.last_fit = Some(state);
                Ok(Proposal { config: space.config_at(&best_point)?, unit_point: best_point })
            }
            (State::Gp { .. }, _) => unreachable!("state matches algorithm"),
        }
    }
}

fn wrap_unit(x: f64) -> f64 {
    let w = x - x.floor();
    if w >= 1.0 {
        0.0
    } else {
        w
    }
}

fn grid_index(space: &ParamSpace, config: &ParamConfig) -> Option<usize> {
    let mut index = 0usize;
    for (name, d) in space.iter() {
        index = index * d.support_size()? + d.index_of(config.get(name)?)?;
    }
    Some(index)
}

/// One-shot proposal from a fresh searcher.
pub fn suggest(alg: &SearchAlg, space: &ParamSpace, history: &[Observation], mode: Mode) -> Result<Proposal, SearchError> {
    Searcher::new(alg.clone()).suggest(space, history, mode)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::param_space::{Distribution, ParamValue};

    fn obs(trial_id: u64, config: ParamConfig, unit_point: Vec<f64>, objective: f64) -> Observation {
        Observation { trial_id, config, unit_point, objective }
    }

    #[test]
    fn grid_returns_only_remaining_point() {
        let space = ParamSpace::new().with("a", Distribution::grid([1i64, 2]));
        let mut seen = ParamConfig::new();
        seen.insert("a".into(), ParamValue::Int(1));
        let p = suggest(&SearchAlg::Grid, &space, &[obs(0, seen, vec![0.25], 0.0)], Mode::Min).unwrap();
        assert_eq!(p.config["a"], ParamValue::Int(2));
        assert_eq!(p.unit_point, vec![0.75]);
    }

    #[test]
    fn grid_visits_everything_once_then_exhausts() {
        let space = ParamSpace::new()
            .with("a", Distribution::grid([1i64, 2, 3]))
            .with("b", Distribution::choice(["x", "y"]))
            .with("c", Distribution::rand_int(0, 2));
        let mut s = Searcher::new(SearchAlg::Grid);
        let mut seen = Vec::new();
        for _ in 0..12 {
            let p = s.suggest(&space, &[], Mode::Min).unwrap();
            assert!(!seen.contains(&p.config));
            seen.push(p.config);
        }
        assert_eq!(s.suggest(&space, &[], Mode::Min), Err(SearchError::GridExhausted));
    }

    #[test]
    fn grid_rejects_continuous() {
        let space = ParamSpace::new().with("a", Distribution::uniform(0.0, 1.0));
        assert_eq!(suggest(&SearchAlg::Grid, &space, &[], Mode::Min), Err(SearchError::NotEnumerable { name: "a".into() }));
    }

    #[test]
    fn random_is_reproducible() {
        let space = ParamSpace::new().with("a", Distribution::uniform(0.0, 1.0)).with("k", Distribution::rand_int(0, 9));
        let alg = SearchAlg::Random { seed: 11 };
        let a = suggest(&alg, &space, &[], Mode::Min).unwrap();
        let b = suggest(&alg, &space, &[], Mode::Min).unwrap();
        assert_eq!(a, b);
        let c = suggest(&SearchAlg::Random { seed: 12 }, &space, &[], Mode::Min).unwrap();
        assert_ne!(a, c);
        assert!(space.admits(&a.config));
    }

    #[test]
    fn gp_starts_with_first_sobol_point() {
        let space = ParamSpace::new().with("x", Distribution::uniform(-5.0, 10.0)).with("y", Distribution::uniform(0.0, 15.0));
        let p = suggest(&SearchAlg::GpBayesOpt { seed: 3, n_initial: 4, kernel: None, candidates_per_step: 16 }, &space, &[], Mode::Min)
            .unwrap();
        let first = doe::gen_sobol(2, 1, 0).unwrap().rows()[0].clone();
        assert_eq!(p.unit_point, first);
        assert_eq!(p.config, space.config_at(&first).unwrap());
    }

    #[test]
    fn gp_initial_phase_walks_sobol() {
        let space = ParamSpace::new().with("x", Distribution::uniform(0.0, 1.0));
        let mut s = Searcher::new(SearchAlg::GpBayesOpt { seed: 0, n_initial: 3, kernel: None, candidates_per_step: 8 });
        let pts: Vec<f64> = (0..3).map(|_| s.suggest(&space, &[], Mode::Min).unwrap().unit_point[0]).collect();
        assert_eq!(pts, [0.5, 0.75, 0.25]);
    }

    #[test]
    fn gp_moves_toward_minimum() {
        let space = ParamSpace::new().with("x", Distribution::uniform(0.0, 1.0));
        let f = |x: f64| (x - 0.3).powi(2);
        let mut s = Searcher::new(SearchAlg::GpBayesOpt { seed: 1, n_initial: 3, kernel: None, candidates_per_step: 64 });
        let mut history = Vec::new();
        for t in 0..12 {
            let p = s.suggest(&space, &history, Mode::Min).unwrap();
            let x = p.config["x"].as_f64().unwrap();
            history.push(obs(t, p.config, p.unit_point, f(x)));
        }
        let best = history.iter().map(|o| o.objective).fold(f64::INFINITY, f64::min);
        assert!(best < 1e-3, "best {best}");
        assert!(s.last_fit().is_some());
    }

    #[test]
    fn gp_settings_are_checked() {
        let space = ParamSpace::new().with("x", Distribution::uniform(0.0, 1.0));
        let bad = SearchAlg::GpBayesOpt { seed: 0, n_initial: 1, kernel: None, candidates_per_step: 8 };
        assert!(matches!(suggest(&bad, &space, &[], Mode::Min), Err(SearchError::InvalidSettings(_))));
        let bad = SearchAlg::GpBayesOpt { seed: 0, n_initial: 2, kernel: Some(KernelParams::default_for(3)), candidates_per_step: 8 };
        assert!(bad.check(&space).is_err());
    }

    #[test]
    fn wrap_stays_in_unit_interval() {
        assert_eq!(wrap_unit(1.25), 0.25);
        assert_eq!(wrap_unit(0.5), 0.5);
        assert!(wrap_unit(1.0f64.next_down() + 0.999_999_999_999) < 1.0);
    }
}
