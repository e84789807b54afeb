//! Simulation-study orchestration.
//!
//! `simflock` runs parameter-estimation, optimization and design-of-experiments
//! studies over an external simulator executable. A study is a parameter space
//! plus a workflow; the crate handles sampling, dispatch over a bounded worker
//! pool, early termination, aggregation and reporting.
//!
//! Simulators are ordinary executables that speak a line-delimited JSON
//! protocol on stdin/stdout (see [`protocol`]). Remote workers relay the same
//! protocol over TCP (see [`executor::worker`]).

// `!(x > 0.0)` is used on purpose so NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod demo;
pub mod doe;
pub mod executor;
pub mod param_space;
pub mod protocol;
pub mod scheduler;
pub mod search;
pub mod seed;
pub mod study_file;
pub mod workflows;

mod linalg;

use serde::{Deserialize, Serialize};

pub use param_space::{Distribution, ParamConfig, ParamSpace, ParamValue};

/// Direction of optimization for an objective or a scheduler metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Min,
    Max,
}

impl Mode {
    /// True if `a` is strictly better than `b` under this mode.
    pub fn is_better(self, a: f64, b: f64) -> bool {
        match self {
            Mode::Min => a < b,
            Mode::Max => a > b,
        }
    }

    /// The worst possible objective value, used for failed trials.
    pub fn worst(self) -> f64 {
        match self {
            Mode::Min => f64::INFINITY,
            Mode::Max => f64::NEG_INFINITY,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Min => "min",
            Mode::Max => "max",
        }
    }
}
