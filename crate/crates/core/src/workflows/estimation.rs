//! Scoring rules that turn simulator outputs into a scalar trial score.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::Metrics;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimationError {
    #[error("simulator output is missing `{name}`")]
    MissingOutput { name: String },
    #[error("sigma for `{name}` must be positive and finite")]
    InvalidSigma { name: String },
    #[error("invalid estimation rule: {0}")]
    InvalidRule(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", deny_unknown_fields)]
pub enum EstimationRule {
    /// `J = Σ w_k (y_k − t_k)²`. Missing weights are 1.
    #[serde(rename = "least_squares")]
    LeastSquares {
        targets: BTreeMap<String, f64>,
        #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
        weights: BTreeMap<String, f64>,
    },
    /// Gaussian negative log-likelihood. Missing sigmas are 1.
    #[serde(rename = "gaussian_mle")]
    GaussianMle {
        targets: BTreeMap<String, f64>,
        #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
        sigmas: BTreeMap<String, f64>,
    },
}

impl EstimationRule {
    pub fn least_squares(targets: impl IntoIterator<Item = (String, f64)>) -> Self {
        EstimationRule::LeastSquares { targets: targets.into_iter().collect(), weights: BTreeMap::new() }
    }

    pub fn targets(&self) -> &BTreeMap<String, f64> {
        match self {
            EstimationRule::LeastSquares { targets, .. } | EstimationRule::GaussianMle { targets, .. } => targets,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            EstimationRule::LeastSquares { .. } => "least_squares",
            EstimationRule::GaussianMle { .. } => "gaussian_mle",
        }
    }

    /// Every violation, not just the first.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let targets = self.targets();
        if targets.is_empty() {
            out.push("estimation rule needs at least one target".to_owned());
        }
        for (k, v) in targets {
            if !v.is_finite() {
                out.push(format!("target `{k}` is not finite"));
            }
        }
        let (label, extra) = match self {
            EstimationRule::LeastSquares { weights, .. } => ("weight", weights),
            EstimationRule::GaussianMle { sigmas, .. } => ("sigma", sigmas),
        };
        for (k, v) in extra {
            if !targets.contains_key(k) {
                out.push(format!("{label} given for `{k}`, which is not a target"));
            }
            if !(*v > 0.0 && v.is_finite()) {
                out.push(format!("{label} for `{k}` must be positive and finite"));
            }
        }
        out
    }

    /// Objective value and, for unit-weight least squares, the RMSE.
    pub fn score(&self, metrics: &Metrics) -> Result<(f64, Option<f64>), EstimationError> {
        match self {
            EstimationRule::LeastSquares { .. } => score_least_squares(self, metrics),
            EstimationRule::GaussianMle { .. } => Ok((score_gaussian_mle(self, metrics)?, None)),
        }
    }
}

fn output(metrics: &Metrics, name: &str) -> Result<f64, EstimationError> {
    metrics.get(name).copied().ok_or_else(|| EstimationError::MissingOutput { name: name.to_owned() })
}

/// Returns `(J, rmse)`; `rmse = √(J/K)` is present only when every weight is 1.
pub fn score_least_squares(rule: &EstimationRule, metrics: &Metrics) -> Result<(f64, Option<f64>), EstimationError> {
    let EstimationRule::LeastSquares { targets, weights } = rule else {
        return Err(EstimationError::InvalidRule("not a least-squares rule".into()));
    };
    if targets.is_empty() {
        return Err(EstimationError::InvalidRule("no targets".into()));
    }
    let mut j = 0.0;
    for (name, t) in targets {
        let r = output(metrics, name)? - t;
        j += weights.get(name).copied().unwrap_or(1.0) * r * r;
    }
    let unit = weights.values().all(|w| *w == 1.0);
    let rmse = unit.then(|| (j / targets.len() as f64).sqrt());
    Ok((j, rmse))
}

pub fn score_gaussian_mle(rule: &EstimationRule, metrics: &Metrics) -> Result<f64, EstimationError> {
    let EstimationRule::GaussianMle { targets, sigmas } = rule else {
        return Err(EstimationError::InvalidRule("not a Gaussian MLE rule".into()));
    };
    if targets.is_empty() {
        return Err(EstimationError::InvalidRule("no targets".into()));
    }
    let mut nll = 0.0;
    for (name, t) in targets {
        let s = sigmas.get(name).copied().unwrap_or(1.0);
        if !(s > 0.0 && s.is_finite()) {
            return Err(EstimationError::InvalidSigma { name: name.clone() });
        }
        let r = output(metrics, name)? - t;
        nll += r * r / (2.0 * s * s) + (s * (2.0 * PI).sqrt()).ln();
    }
    Ok(nll)
}
