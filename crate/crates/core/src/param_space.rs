//! Parameter distributions and the inverse-CDF bridge from the unit interval.
//!
//! Every sampler in the crate (random search, DoE designs, GP candidates)
//! works in the unit hypercube and converts coordinates to parameter values
//! through [`Distribution::sample_unit`]. `RandInt` is half-open: `[lo, hi)`.

use std::fmt;

use indexmap::IndexMap;
use rand::Rng;
use serde::de::{self, MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// A concrete parameter value.
#[derive(Debug, Clone, PartialEq)]
pub enum ParamValue {
    Real(f64),
    Int(i64),
    Str(String),
}

impl ParamValue {
    pub fn as_f64(&self) -> Option<f64> {
        match *self {
            ParamValue::Real(v) => Some(v),
            ParamValue::Int(v) => Some(v as f64),
            ParamValue::Str(_) => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            ParamValue::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn is_finite(&self) -> bool {
        match *self {
            ParamValue::Real(v) => v.is_finite(),
            _ => true,
        }
    }
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Real(v) => write!(f, "{v}"),
            ParamValue::Int(v) => write!(f, "{v}"),
            ParamValue::Str(s) => f.write_str(s),
        }
    }
}

impl From<f64> for ParamValue {
    fn from(v: f64) -> Self {
        ParamValue::Real(v)
    }
}

impl From<i64> for ParamValue {
    fn from(v: i64) -> Self {
        ParamValue::Int(v)
    }
}

impl From<&str> for ParamValue {
    fn from(v: &str) -> Self {
        ParamValue::Str(v.to_owned())
    }
}

impl Serialize for ParamValue {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            ParamValue::Real(v) => s.serialize_f64(*v),
            ParamValue::Int(v) => s.serialize_i64(*v),
            ParamValue::Str(v) => s.serialize_str(v),
        }
    }
}

impl<'de> Deserialize<'de> for ParamValue {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = ParamValue;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a number or a string")
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<ParamValue, E> {
                Ok(ParamValue::Int(v))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<ParamValue, E> {
                i64::try_from(v)
                    .map(ParamValue::Int)
                    .map_err(|_| E::custom("integer out of range"))
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> Result<ParamValue, E> {
                Ok(ParamValue::Real(v))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<ParamValue, E> {
                Ok(ParamValue::Str(v.to_owned()))
            }
        }
        d.deserialize_any(V)
    }
}

/// A concrete assignment of values, keyed by parameter name in space order.
pub type ParamConfig = IndexMap<String, ParamValue>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParamError {
    #[error("invalid distribution for `{name}`: {reason}")]
    InvalidDistribution { name: String, reason: String },
    #[error("unit coordinate {0} is outside [0, 1)")]
    OutOfRange(f64),
    #[error("duplicate parameter name `{0}`")]
    DuplicateName(String),
}

/// Sampling law for one parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", deny_unknown_fields)]
pub enum Distribution {
    #[serde(rename = "uniform")]
    Uniform { lo: f64, hi: f64 },
    #[serde(rename = "loguniform")]
    LogUniform { lo: f64, hi: f64 },
    /// Integers in `[lo, hi)`.
    #[serde(rename = "randint")]
    RandInt { lo: i64, hi: i64 },
    #[serde(rename = "randn")]
    Randn { mean: f64, stddev: f64 },
    /// Sampled categorical.
    #[serde(rename = "choice")]
    Choice { values: Vec<ParamValue> },
    /// Enumerated exhaustively by grid search and full factorial designs.
    #[serde(rename = "grid")]
    GridValues { values: Vec<ParamValue> },
}

/// Lower clamp for the normal quantile, in standard deviations.
pub const RANDN_TAIL_GUARD: f64 = 8.0;

impl Distribution {
    pub fn uniform(lo: f64, hi: f64) -> Self {
        Distribution::Uniform { lo, hi }
    }

    pub fn log_uniform(lo: f64, hi: f64) -> Self {
        Distribution::LogUniform { lo, hi }
    }

    pub fn rand_int(lo: i64, hi: i64) -> Self {
        Distribution::RandInt { lo, hi }
    }

    pub fn randn(mean: f64, stddev: f64) -> Self {
        Distribution::Randn { mean, stddev }
    }

    pub fn choice<V: Into<ParamValue>>(values: impl IntoIterator<Item = V>) -> Self {
        Distribution::Choice { values: values.into_iter().map(Into::into).collect() }
    }

    pub fn grid<V: Into<ParamValue>>(values: impl IntoIterator<Item = V>) -> Self {
        Distribution::GridValues { values: values.into_iter().map(Into::into).collect() }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Distribution::Uniform { .. } => "uniform",
            Distribution::LogUniform { .. } => "loguniform",
            Distribution::RandInt { .. } => "randint",
            Distribution::Randn { .. } => "randn",
            Distribution::Choice { .. } => "choice",
            Distribution::GridValues { .. } => "grid",
        }
    }

    /// Checks the distribution's invariants, returning the reason on failure.
    pub fn check(&self) -> Result<(), String> {
        match *self {
            Distribution::Uniform { lo, hi } => {
                if !lo.is_finite() || !hi.is_finite() {
                    return Err("bounds must be finite".into());
                }
                if lo >= hi {
                    return Err(format!("lower bound {lo} must be below upper bound {hi}"));
                }
            }
            Distribution::LogUniform { lo, hi } => {
                if !lo.is_finite() || !hi.is_finite() {
                    return Err("bounds must be finite".into());
                }
                if lo <= 0.0 {
                    return Err(format!("lower bound {lo} must be positive"));
                }
                if lo >= hi {
                    return Err(format!("lower bound {lo} must be below upper bound {hi}"));
                }
            }
            Distribution::RandInt { lo, hi } => {
                if lo >= hi {
                    return Err(format!("lower bound {lo} must be below upper bound {hi}"));
                }
            }
            Distribution::Randn { mean, stddev } => {
                if !mean.is_finite() || !stddev.is_finite() {
                    return Err("mean and stddev must be finite".into());
                }
                if stddev < 0.0 {
                    return Err(format!("stddev {stddev} must be nonnegative"));
                }
            }
            Distribution::Choice { ref values } | Distribution::GridValues { ref values } => {
                if values.is_empty() {
                    return Err("values must be nonempty".into());
                }
                if let Some(v) = values.iter().find(|v| !v.is_finite()) {
                    return Err(format!("value {v} is not finite"));
                }
                for (i, v) in values.iter().enumerate() {
                    if values[..i].contains(v) {
                        return Err(format!("duplicate value {v}"));
                    }
                }
            }
        }
        Ok(())
    }

    /// Number of distinct values, for enumerable distributions.
    pub fn support_size(&self) -> Option<usize> {
        match self {
            Distribution::RandInt { lo, hi } => usize::try_from(hi.checked_sub(*lo)?).ok(),
            Distribution::Choice { values } | Distribution::GridValues { values } => Some(values.len()),
            _ => None,
        }
    }

    /// The `index`-th value of an enumerable support, in listed order.
    pub fn enumerate_at(&self, index: usize) -> Option<ParamValue> {
        match self {
            Distribution::RandInt { lo, hi } => {
                let v = lo.checked_add(i64::try_from(index).ok()?)?;
                (v < *hi).then_some(ParamValue::Int(v))
            }
            Distribution::Choice { values } | Distribution::GridValues { values } => values.get(index).cloned(),
            _ => None,
        }
    }

    /// Position of `value` in an enumerable support.
    pub fn index_of(&self, value: &ParamValue) -> Option<usize> {
        match (self, value) {
            (Distribution::RandInt { lo, hi }, ParamValue::Int(v)) if v >= lo && v < hi => {
                usize::try_from(v - lo).ok()
            }
            (Distribution::Choice { values } | Distribution::GridValues { values }, v) => {
                values.iter().position(|x| x == v)
            }
            _ => None,
        }
    }

    /// Whether `value` lies in the support.
    pub fn contains(&self, value: &ParamValue) -> bool {
        match (self, value) {
            (Distribution::Uniform { lo, hi } | Distribution::LogUniform { lo, hi }, ParamValue::Real(v)) => {
                v >= lo && v < hi
            }
            (Distribution::Randn { .. }, ParamValue::Real(v)) => v.is_finite(),
            _ => self.index_of(value).is_some(),
        }
    }

    /// Inverse-transform sample at unit coordinate `u`.
    pub fn sample_unit(&self, u: f64) -> Result<ParamValue, ParamError> {
        if !(0.0..1.0).contains(&u) {
            return Err(ParamError::OutOfRange(u));
        }
        Ok(match self {
            Distribution::Uniform { lo, hi } => ParamValue::Real(clamp_half_open(lo + u * (hi - lo), *lo, *hi)),
            Distribution::LogUniform { lo, hi } => {
                let (a, b) = (lo.ln(), hi.ln());
                ParamValue::Real(clamp_half_open((a + u * (b - a)).exp(), *lo, *hi))
            }
            Distribution::RandInt { lo, hi } => {
                let span = (hi - lo) as f64;
                let offset = ((u * span).floor() as i64).min(hi - lo - 1);
                ParamValue::Int(lo + offset)
            }
            Distribution::Randn { mean, stddev } => ParamValue::Real(mean + stddev * standard_normal_quantile(u)),
            Distribution::Choice { values } | Distribution::GridValues { values } => {
                let idx = ((u * values.len() as f64).floor() as usize).min(values.len() - 1);
                values[idx].clone()
            }
        })
    }

    /// Draws one value using the next uniform variate of `rng`.
    pub fn sample_random<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamValue {
        let u: f64 = rng.random();
        self.sample_unit(u).expect("rng uniform draws lie in [0, 1)")
    }

    /// Unit coordinate that maps back onto `value` (the stratum centre for
    /// enumerable supports). Used to embed fixed configs for the GP.
    pub fn unit_of(&self, value: &ParamValue) -> Option<f64> {
        match (self, value) {
            (Distribution::Uniform { lo, hi }, v) => Some(((v.as_f64()? - lo) / (hi - lo)).clamp(0.0, 1.0)),
            (Distribution::LogUniform { lo, hi }, v) => {
                Some(((v.as_f64()?.ln() - lo.ln()) / (hi.ln() - lo.ln())).clamp(0.0, 1.0))
            }
            (Distribution::Randn { mean, stddev }, v) => {
                if *stddev == 0.0 {
                    return Some(0.5);
                }
                Some(standard_normal_cdf((v.as_f64()? - mean) / stddev))
            }
            _ => {
                let n = self.support_size()?;
                Some((self.index_of(value)? as f64 + 0.5) / n as f64)
            }
        }
    }
}

fn clamp_half_open(v: f64, lo: f64, hi: f64) -> f64 {
    if v >= hi {
        hi.next_down()
    } else if v < lo {
        lo
    } else {
        v
    }
}

/// Inverse of the standard normal CDF (Acklam's rational approximation,
/// relative error below 1.2e-9). `u = 0` maps to the lower tail guard and
/// the result is clamped to `±RANDN_TAIL_GUARD`.
pub fn standard_normal_quantile(u: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.024_25;

    if u <= 0.0 {
        return -RANDN_TAIL_GUARD;
    }
    if u >= 1.0 {
        return RANDN_TAIL_GUARD;
    }
    let x = if u < P_LOW {
        let q = (-2.0 * u.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if u <= 1.0 - P_LOW {
        let q = u - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - u).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    x.clamp(-RANDN_TAIL_GUARD, RANDN_TAIL_GUARD)
}

pub fn standard_normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Ordered mapping from parameter name to distribution. Insertion order
/// defines the dimension index used by designs and the GP.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
#[serde(transparent)]
pub struct ParamSpace {
    params: IndexMap<String, Distribution>,
}

impl ParamSpace {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builder-style insert; panics on a duplicate name.
    pub fn with(mut self, name: impl Into<String>, dist: Distribution) -> Self {
        let name = name.into();
        self.insert(name.clone(), dist).unwrap_or_else(|e| panic!("{e}"));
        self
    }

    pub fn insert(&mut self, name: impl Into<String>, dist: Distribution) -> Result<(), ParamError> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(ParamError::DuplicateName(name));
        }
        self.params.insert(name, dist);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Distribution> {
        self.params.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Distribution)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn distributions(&self) -> impl Iterator<Item = &Distribution> {
        self.params.values()
    }

    /// First parameter whose support is not enumerable, if any.
    pub fn first_continuous(&self) -> Option<&str> {
        self.iter().find(|(_, d)| d.support_size().is_none()).map(|(n, _)| n)
    }

    /// Maps a unit-cube point (one coordinate per parameter) to a config.
    pub fn config_at(&self, point: &[f64]) -> Result<ParamConfig, ParamError> {
        debug_assert_eq!(point.len(), self.len());
        self.iter()
            .zip(point)
            .map(|((name, dist), &u)| Ok((name.to_owned(), dist.sample_unit(u)?)))
            .collect()
    }

    /// Checks that `config` has exactly this space's keys with in-support values.
    pub fn admits(&self, config: &ParamConfig) -> bool {
        config.len() == self.len()
            && self.iter().all(|(n, d)| config.get(n).is_some_and(|v| d.contains(v)))
    }
}

impl<'de> Deserialize<'de> for ParamSpace {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = ParamSpace;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a map from parameter name to distribution")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<ParamSpace, A::Error> {
                let mut space = ParamSpace::new();
                while let Some((name, dist)) = map.next_entry::<String, Distribution>()? {
                    space.insert(name, dist).map_err(de::Error::custom)?;
                }
                Ok(space)
            }
        }
        d.deserialize_map(V)
    }
}

/// Validates every entry, reporting the first offending parameter.
pub fn validate_space(space: &ParamSpace) -> Result<(), ParamError> {
    for (name, dist) in space.iter() {
        if name.is_empty() {
            return Err(ParamError::InvalidDistribution { name: name.into(), reason: "empty parameter name".into() });
        }
        dist.check()
            .map_err(|reason| ParamError::InvalidDistribution { name: name.into(), reason })?;
    }
    Ok(())
}

pub fn sample_unit(d: &Distribution, u: f64) -> Result<ParamValue, ParamError> {
    d.sample_unit(u)
}

pub fn sample_random<R: Rng + ?Sized>(d: &Distribution, rng: &mut R) -> ParamValue {
    d.sample_random(rng)
}
