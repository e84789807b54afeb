//! Line-delimited JSON protocol between the orchestrator and a simulator.
//!
//! The orchestrator writes one [`SimRequest`] line to the simulator's stdin.
//! The simulator answers with zero or more `report` lines followed by exactly
//! one terminal line (`done`, `rejected` or `error`), then exits with code 0.
//!
//! ```text
//! > {"type":"run","trial_id":0,"config":{"f_y":3000.0},"seed":7}
//! < {"type":"report","step":1,"metrics":{"peak_accel":10.1}}
//! < {"type":"done","metrics":{"peak_accel":41.2}}
//! ```

use std::collections::BTreeMap;
use std::fmt;

use serde::de::{self, MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

use crate::ParamConfig;

pub type Metrics = BTreeMap<String, f64>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtocolError {
    #[error("non-finite value for `{key}`")]
    NonFiniteValue { key: String },
    #[error("malformed line at offset {offset}: {detail}")]
    MalformedLine { offset: usize, detail: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(clippy::manual_non_exhaustive)]
pub struct SimRequest {
    #[serde(rename = "type", serialize_with = "ser_run", deserialize_with = "de_run")]
    kind: (),
    pub trial_id: u64,
    pub config: ParamConfig,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report_steps: Option<u32>,
}

fn ser_run<S: serde::Serializer>(_: &(), s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str("run")
}

fn de_run<'de, D: Deserializer<'de>>(d: D) -> Result<(), D::Error> {
    let s = String::deserialize(d)?;
    if s == "run" {
        Ok(())
    } else {
        Err(de::Error::custom(format!("unknown request type `{s}`")))
    }
}

impl SimRequest {
    pub fn new(trial_id: u64, config: ParamConfig, seed: u64, report_steps: Option<u32>) -> Self {
        SimRequest { kind: (), trial_id, config, seed, report_steps }
    }
}

/// A message from simulator to orchestrator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", deny_unknown_fields)]
pub enum SimMessage {
    #[serde(rename = "report")]
    Report {
        #[serde(deserialize_with = "de_step")]
        step: u32,
        #[serde(deserialize_with = "de_metrics")]
        metrics: Metrics,
    },
    #[serde(rename = "done")]
    Done {
        #[serde(deserialize_with = "de_metrics")]
        metrics: Metrics,
    },
    #[serde(rename = "rejected")]
    Rejected { reason: String },
    #[serde(rename = "error")]
    Error { detail: String },
}

impl SimMessage {
    pub fn is_terminal(&self) -> bool {
        !matches!(self, SimMessage::Report { .. })
    }

    pub fn kind(&self) -> &'static str {
        match self {
            SimMessage::Report { .. } => "report",
            SimMessage::Done { .. } => "done",
            SimMessage::Rejected { .. } => "rejected",
            SimMessage::Error { .. } => "error",
        }
    }
}

fn de_step<'de, D: Deserializer<'de>>(d: D) -> Result<u32, D::Error> {
    let step = u32::deserialize(d)?;
    if step == 0 {
        return Err(de::Error::custom("step must be >= 1"));
    }
    Ok(step)
}

/// Metrics map that rejects duplicate names. Non-finite values cannot be
/// written in JSON, and out-of-range literals are rejected by the parser.
fn de_metrics<'de, D: Deserializer<'de>>(d: D) -> Result<Metrics, D::Error> {
    struct V;
    impl<'de> Visitor<'de> for V {
        type Value = Metrics;

        fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            f.write_str("an object of finite numbers")
        }

        fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Metrics, A::Error> {
            let mut out = Metrics::new();
            while let Some(k) = map.next_key::<String>()? {
                let v: f64 = map.next_value()?;
                if !v.is_finite() {
                    return Err(de::Error::custom(format!("metric `{k}` is not finite")));
                }
                if out.insert(k.clone(), v).is_some() {
                    return Err(de::Error::custom(format!("duplicate metric `{k}`")));
                }
            }
            Ok(out)
        }
    }
    d.deserialize_map(V)
}

fn check_metrics(metrics: &Metrics) -> Result<(), ProtocolError> {
    match metrics.iter().find(|(_, v)| !v.is_finite()) {
        Some((k, _)) => Err(ProtocolError::NonFiniteValue { key: k.clone() }),
        None => Ok(()),
    }
}

fn malformed(line: &str, e: serde_json::Error) -> ProtocolError {
    // Single-line input: serde's 1-based column points just past the offending token.
    let offset = if e.line() <= 1 { e.column().saturating_sub(1) } else { line.len() };
    ProtocolError::MalformedLine { offset: offset.min(line.len()), detail: e.to_string() }
}

fn strip_newline(line: &str) -> &str {
    line.strip_suffix('\n').map(|l| l.strip_suffix('\r').unwrap_or(l)).unwrap_or(line)
}

/// Encodes a request as one JSON line, newline-terminated.
pub fn encode_request(req: &SimRequest) -> Result<String, ProtocolError> {
    if let Some((k, _)) = req.config.iter().find(|(_, v)| !v.is_finite()) {
        return Err(ProtocolError::NonFiniteValue { key: k.clone() });
    }
    let mut s = serde_json::to_string(req).expect("request serializes");
    s.push('\n');
    Ok(s)
}

pub fn parse_request(line: &str) -> Result<SimRequest, ProtocolError> {
    let line = strip_newline(line);
    serde_json::from_str(line).map_err(|e| malformed(line, e))
}

/// Encodes a simulator message as one JSON line, newline-terminated.
pub fn encode_message(msg: &SimMessage) -> Result<String, ProtocolError> {
    match msg {
        SimMessage::Report { step: 0, .. } => {
            return Err(ProtocolError::MalformedLine { offset: 0, detail: "step must be >= 1".into() })
        }
        SimMessage::Report { metrics, .. } | SimMessage::Done { metrics } => check_metrics(metrics)?,
        _ => {}
    }
    let mut s = serde_json::to_string(msg).expect("message serializes");
    s.push('\n');
    Ok(s)
}

pub fn parse_message(line: &str) -> Result<SimMessage, ProtocolError> {
    let line = strip_newline(line);
    if line.contains('\n') {
        return Err(ProtocolError::MalformedLine { offset: line.find('\n').unwrap(), detail: "embedded newline".into() });
    }
    serde_json::from_str(line).map_err(|e| malformed(line, e))
}
