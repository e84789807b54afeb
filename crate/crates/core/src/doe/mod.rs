//! Design-of-experiments generators.
//!
//! Designs live in the unit hypercube (`[0, 1)` per column, one column per
//! parameter in space order) and are mapped to configs by [`materialize`].
//! Full factorial designs enumerate supports directly instead.

mod directions;
pub mod sobol;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::param_space::{ParamConfig, ParamError, ParamSpace};
pub use sobol::{SobolSeq, MAX_DIMENSIONS};

/// Default cap on the number of full factorial configurations.
pub const FULL_FACTORIAL_CAP: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DesignError {
    #[error("parameter `{name}` has a continuous support and cannot be enumerated")]
    NotEnumerable { name: String },
    #[error("full factorial would produce {size} configurations (cap {cap})")]
    BudgetExceeded { size: String, cap: usize },
    #[error("Sobol sequence supports at most {max} dimensions, {requested} requested")]
    DimensionTooLarge { requested: usize, max: usize },
    #[error("design has {design} columns but the space has {space} parameters")]
    DimensionMismatch { design: usize, space: usize },
    #[error("design must request at least one sample")]
    EmptyDesign,
    #[error(transparent)]
    Param(#[from] ParamError),
}

/// How a DoE study lays out its ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "design", deny_unknown_fields)]
pub enum SamplingDesign {
    #[serde(rename = "full_factorial")]
    FullFactorial,
    #[serde(rename = "lhs")]
    LatinHypercube {
        n: usize,
        /// Place points at stratum centres instead of jittering them.
        #[serde(default)]
        midpoint: bool,
    },
    #[serde(rename = "sobol")]
    Sobol {
        n: usize,
        #[serde(default)]
        skip: u64,
    },
}

impl SamplingDesign {
    /// Checks the design against `space` without generating it; returns the
    /// number of configurations it will produce.
    pub fn planned_size(&self, space: &ParamSpace) -> Result<usize, DesignError> {
        match *self {
            SamplingDesign::FullFactorial => full_factorial_size(space, FULL_FACTORIAL_CAP),
            SamplingDesign::LatinHypercube { n, .. } => {
                if n == 0 {
                    return Err(DesignError::EmptyDesign);
                }
                Ok(n)
            }
            SamplingDesign::Sobol { n, .. } => {
                if n == 0 {
                    return Err(DesignError::EmptyDesign);
                }
                if space.len() > MAX_DIMENSIONS {
                    return Err(DesignError::DimensionTooLarge { requested: space.len(), max: MAX_DIMENSIONS });
                }
                Ok(n)
            }
        }
    }

    /// Generates the design's configurations over `space`.
    pub fn generate<R: Rng + ?Sized>(&self, space: &ParamSpace, rng: &mut R) -> Result<Vec<ParamConfig>, DesignError> {
        self.planned_size(space)?;
        match *self {
            SamplingDesign::FullFactorial => gen_full_factorial(space),
            SamplingDesign::LatinHypercube { n, midpoint } => {
                let design = if midpoint {
                    gen_latin_hypercube_midpoint(space.len(), n, rng)
                } else {
                    gen_latin_hypercube(space.len(), n, rng)
                };
                materialize(&design, space)
            }
            SamplingDesign::Sobol { n, skip } => materialize(&gen_sobol(space.len(), n, skip)?, space),
        }
    }
}

/// `n × d` matrix of unit-cube coordinates; column `j` is parameter `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    dim: usize,
    rows: Vec<Vec<f64>>,
}

impl DesignMatrix {
    pub fn new(dim: usize, rows: Vec<Vec<f64>>) -> Self {
        assert!(rows.iter().all(|r| r.len() == dim), "ragged design matrix");
        DesignMatrix { dim, rows }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        self.rows.iter().map(move |r| r[j])
    }
}

fn full_factorial_size(space: &ParamSpace, cap: usize) -> Result<usize, DesignError> {
    let mut size: usize = 1;
    for (name, dist) in space.iter() {
        let n = dist.support_size().ok_or_else(|| DesignError::NotEnumerable { name: name.into() })?;
        size = size
            .checked_mul(n)
            .filter(|&s| s <= cap)
            .ok_or_else(|| DesignError::BudgetExceeded { size: "more than cap".into(), cap })?;
    }
    Ok(size)
}

/// Number of configs in the full factorial product, or an error if some
/// parameter is continuous.
pub fn full_factorial_len(space: &ParamSpace) -> Result<usize, DesignError> {
    full_factorial_size(space, usize::MAX)
}

/// The `index`-th element of the Cartesian product (first parameter varies slowest).
pub fn full_factorial_at(space: &ParamSpace, mut index: usize) -> Option<ParamConfig> {
    let sizes: Vec<usize> = space.distributions().map(|d| d.support_size()).collect::<Option<_>>()?;
    let mut picks = vec![0; sizes.len()];
    for (pick, &n) in picks.iter_mut().zip(&sizes).rev() {
        *pick = index % n;
        index /= n;
    }
    if index != 0 {
        return None;
    }
    space
        .iter()
        .zip(picks)
        .map(|((name, d), i)| Some((name.to_owned(), d.enumerate_at(i)?)))
        .collect()
}

pub fn gen_full_factorial(space: &ParamSpace) -> Result<Vec<ParamConfig>, DesignError> {
    gen_full_factorial_capped(space, FULL_FACTORIAL_CAP)
}

pub fn gen_full_factorial_capped(space: &ParamSpace, cap: usize) -> Result<Vec<ParamConfig>, DesignError> {
    let size = full_factorial_size(space, cap).map_err(|e| match e {
        DesignError::BudgetExceeded { cap, .. } => DesignError::BudgetExceeded {
            size: full_factorial_len(space).map_or_else(|_| "overflow".into(), |s| s.to_string()),
            cap,
        },
        other => other,
    })?;
    Ok((0..size).map(|i| full_factorial_at(space, i).expect("index within product")).collect())
}

/// Bounds of stratum `k` of `n`, computed the same way everywhere so that
/// membership checks are exact.
pub fn stratum_bounds(k: usize, n: usize) -> (f64, f64) {
    (k as f64 / n as f64, (k + 1) as f64 / n as f64)
}

fn lhs<R: Rng + ?Sized>(d: usize, n: usize, rng: &mut R, mut offset: impl FnMut(&mut R) -> f64) -> DesignMatrix {
    let mut rows = vec![vec![0.0; d]; n];
    let mut strata: Vec<usize> = (0..n).collect();
    for j in 0..d {
        strata.shuffle(rng);
        for (row, &k) in rows.iter_mut().zip(&strata) {
            let (lo, hi) = stratum_bounds(k, n);
            let x = lo + offset(rng) * (hi - lo);
            row[j] = if x >= hi { hi.next_down() } else { x.max(lo) };
        }
    }
    DesignMatrix::new(d, rows)
}

/// Jittered Latin hypercube: each column holds exactly one point per stratum
/// `[k/n, (k+1)/n)`, at a random offset within the stratum.
pub fn gen_latin_hypercube<R: Rng + ?Sized>(d: usize, n: usize, rng: &mut R) -> DesignMatrix {
    lhs(d, n, rng, |r| r.random::<f64>())
}

/// Latin hypercube with points at stratum centres.
pub fn gen_latin_hypercube_midpoint<R: Rng + ?Sized>(d: usize, n: usize, rng: &mut R) -> DesignMatrix {
    lhs(d, n, rng, |_| 0.5)
}

/// Points `skip + 1 ..= skip + n` of the `d`-dimensional Sobol sequence.
pub fn gen_sobol(d: usize, n: usize, skip: u64) -> Result<DesignMatrix, DesignError> {
    let mut seq = SobolSeq::new(d).ok_or(DesignError::DimensionTooLarge { requested: d, max: MAX_DIMENSIONS })?;
    seq.seek(skip);
    Ok(DesignMatrix::new(d, (0..n).map(|_| seq.next_point()).collect()))
}

/// Maps each design row through the space's inverse CDFs.
pub fn materialize(design: &DesignMatrix, space: &ParamSpace) -> Result<Vec<ParamConfig>, DesignError> {
    if design.dim() != space.len() {
        return Err(DesignError::DimensionMismatch { design: design.dim(), space: space.len() });
    }
    design.rows().iter().map(|row| Ok(space.config_at(row)?)).collect()
}

/// Squared centered L2 discrepancy of a point set in `[0, 1]^d`.
pub fn centered_l2_discrepancy(points: &[Vec<f64>]) -> f64 {
    let n = points.len();
    if n == 0 {
        return 0.0;
    }
    let d = points[0].len();
    let first = (13.0f64 / 12.0).powi(d as i32);
    let second: f64 = points
        .iter()
        .map(|p| {
            p.iter()
                .map(|&x| {
                    let a = (x - 0.5).abs();
                    1.0 + 0.5 * a - 0.5 * a * a
                })
                .product::<f64>()
        })
        .sum::<f64>()
        * 2.0
        / n as f64;
    let mut third = 0.0;
    for p in points {
        for q in points {
            third += p
                .iter()
                .zip(q)
                .map(|(&x, &y)| 1.0 + 0.5 * (x - 0.5).abs() + 0.5 * (y - 0.5).abs() - 0.5 * (x - y).abs())
                .product::<f64>();
        }
    }
    first - second + third / (n * n) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::param_space::{Distribution, ParamValue};
    use crate::seed;

    fn count_per_stratum(col: impl Iterator<Item = f64>, n: usize) -> Vec<usize> {
        let col: Vec<f64> = col.collect();
        (0..n)
            .map(|k| {
                let (lo, hi) = stratum_bounds(k, n);
                col.iter().filter(|&&x| x >= lo && x < hi).count()
            })
            .collect()
    }

    #[test]
    fn full_factorial_two_by_three() {
        let space = ParamSpace::new()
            .with("a", Distribution::grid([1i64, 2]))
            .with("b", Distribution::grid(["x", "y", "z"]));
        let configs = gen_full_factorial(&space).unwrap();
        assert_eq!(configs.len(), 6);
        assert_eq!(configs[0]["a"], ParamValue::Int(1));
        assert_eq!(configs[0]["b"], ParamValue::from("x"));
        assert_eq!(configs[1]["b"], ParamValue::from("y"));
        assert_eq!(configs[5]["a"], ParamValue::Int(2));
        assert_eq!(configs[5]["b"], ParamValue::from("z"));
    }

    #[test]
    fn full_factorial_singleton_and_randint() {
        let space = ParamSpace::new().with("a", Distribution::grid([5i64]));
        let configs = gen_full_factorial(&space).unwrap();
        assert_eq!(configs.len(), 1);
        assert_eq!(configs[0]["a"], ParamValue::Int(5));

        let space = ParamSpace::new().with("k", Distribution::rand_int(-1, 2)).with("c", Distribution::choice(["p", "q"]));
        let ks: Vec<_> = gen_full_factorial(&space).unwrap().iter().map(|c| c["k"].clone()).collect();
        assert_eq!(ks, [-1i64, -1, 0, 0, 1, 1].map(ParamValue::Int));
    }

    #[test]
    fn full_factorial_errors() {
        let space = ParamSpace::new().with("a", Distribution::uniform(0.0, 1.0));
        assert_eq!(gen_full_factorial(&space), Err(DesignError::NotEnumerable { name: "a".into() }));
        let space = ParamSpace::new().with("a", Distribution::rand_int(0, 1000)).with("b", Distribution::rand_int(0, 1001));
        assert!(matches!(gen_full_factorial(&space), Err(DesignError::BudgetExceeded { cap: FULL_FACTORIAL_CAP, .. })));
        let small = ParamSpace::new().with("a", Distribution::rand_int(0, 10));
        assert!(gen_full_factorial_capped(&small, 9).is_err());
        assert_eq!(gen_full_factorial_capped(&small, 10).unwrap().len(), 10);
    }

    #[test]
    fn lhs_examples() {
        let mut rng = seed::rng(5);
        let m = gen_latin_hypercube(1, 4, &mut rng);
        assert_eq!(count_per_stratum(m.column(0), 4), vec![1; 4]);

        let m = gen_latin_hypercube(6, 20, &mut rng);
        assert_eq!((m.len(), m.dim()), (20, 6));
        for j in 0..6 {
            assert_eq!(count_per_stratum(m.column(j), 20), vec![1; 20]);
        }

        let m = gen_latin_hypercube(2, 1, &mut rng);
        assert_eq!(m.len(), 1);
        assert!(m.rows()[0].iter().all(|x| (0.0..1.0).contains(x)));
    }

    #[test]
    fn lhs_stratified_over_random_seeds() {
        for s in 0..40 {
            let mut rng = seed::rng(s);
            let d = 1 + (s as usize % 10);
            let n = 1 + (s as usize * 37 % 200);
            for m in [gen_latin_hypercube(d, n, &mut rng), gen_latin_hypercube_midpoint(d, n, &mut rng)] {
                for j in 0..d {
                    assert_eq!(count_per_stratum(m.column(j), n), vec![1; n], "seed {s}");
                }
            }
        }
    }

    #[test]
    fn lhs_midpoint_uses_centres() {
        let m = gen_latin_hypercube_midpoint(1, 4, &mut seed::rng(0));
        let mut col: Vec<f64> = m.column(0).collect();
        col.sort_by(f64::total_cmp);
        assert_eq!(col, [0.125, 0.375, 0.625, 0.875]);
    }

    #[test]
    fn sobol_examples() {
        let m = gen_sobol(1, 4, 0).unwrap();
        let col: Vec<f64> = m.column(0).collect();
        assert_eq!(col, [0.5, 0.75, 0.25, 0.375]);
        assert_eq!(gen_sobol(2, 1, 0).unwrap().rows(), &[vec![0.5, 0.5]]);
        assert!(gen_sobol(3, 0, 0).unwrap().is_empty());
        assert!(matches!(gen_sobol(MAX_DIMENSIONS + 1, 1, 0), Err(DesignError::DimensionTooLarge { .. })));
        assert_eq!(gen_sobol(2, 3, 1).unwrap().rows(), &gen_sobol(2, 4, 0).unwrap().rows()[1..]);
    }

    #[test]
    fn sobol_matches_reference_generator() {
        // Points 1..=8 of the unscrambled 5-d sequence, from SciPy's qmc.Sobol.
        let expected = [
            [0.5, 0.5, 0.5, 0.5, 0.5],
            [0.75, 0.25, 0.25, 0.25, 0.75],
            [0.25, 0.75, 0.75, 0.75, 0.25],
            [0.375, 0.375, 0.625, 0.875, 0.375],
            [0.875, 0.875, 0.125, 0.375, 0.875],
            [0.625, 0.125, 0.875, 0.625, 0.625],
            [0.125, 0.625, 0.375, 0.125, 0.125],
            [0.1875, 0.3125, 0.9375, 0.4375, 0.5625],
        ];
        let m = gen_sobol(5, 8, 0).unwrap();
        for (row, want) in m.rows().iter().zip(expected) {
            assert_eq!(row.as_slice(), want.as_slice());
        }
    }

    #[test]
    fn sobol_is_deterministic() {
        assert_eq!(gen_sobol(7, 100, 3).unwrap(), gen_sobol(7, 100, 3).unwrap());
    }

    #[test]
    fn materialize_examples() {
        let space = ParamSpace::new()
            .with("mu_s", Distribution::uniform(0.4, 1.2))
            .with("rho", Distribution::uniform(1520.0, 1780.0));
        let configs = materialize(&DesignMatrix::new(2, vec![vec![0.0, 0.0]]), &space).unwrap();
        assert_eq!(configs[0]["mu_s"], ParamValue::Real(0.4));
        assert_eq!(configs[0]["rho"], ParamValue::Real(1520.0));

        let top = 1.0f64.next_down();
        let configs = materialize(&DesignMatrix::new(2, vec![vec![top, top]]), &space).unwrap();
        assert!(configs[0]["mu_s"].as_f64().unwrap() < 1.2);
        assert!(configs[0]["rho"].as_f64().unwrap() < 1780.0);

        assert!(materialize(&DesignMatrix::new(2, vec![]), &space).unwrap().is_empty());
        assert!(matches!(
            materialize(&DesignMatrix::new(1, vec![vec![0.1]]), &space),
            Err(DesignError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn discrepancy_matches_reference() {
        // SciPy qmc.discrepancy(method="CD") on the same points.
        let pts = vec![vec![0.1, 0.2], vec![0.7, 0.4], vec![0.3, 0.9], vec![0.55, 0.05]];
        assert!((centered_l2_discrepancy(&pts) - 0.051_272_829_861_110_925).abs() < 1e-14);
        let sobol = gen_sobol(2, 128, 0).unwrap();
        assert!((centered_l2_discrepancy(sobol.rows()) - 6.718_711_008_724_121e-5).abs() < 1e-15);
    }

    #[test]
    fn design_generate_respects_planned_size() {
        let space = ParamSpace::new().with("a", Distribution::uniform(0.0, 1.0)).with("b", Distribution::rand_int(0, 3));
        let mut rng = seed::rng(1);
        assert_eq!(SamplingDesign::LatinHypercube { n: 7, midpoint: false }.generate(&space, &mut rng).unwrap().len(), 7);
        assert_eq!(SamplingDesign::Sobol { n: 5, skip: 0 }.generate(&space, &mut rng).unwrap().len(), 5);
        assert!(SamplingDesign::FullFactorial.generate(&space, &mut rng).is_err());
        assert_eq!(SamplingDesign::LatinHypercube { n: 0, midpoint: false }.planned_size(&space), Err(DesignError::EmptyDesign));
    }

    #[test]
    fn design_json_forms() {
        let d: SamplingDesign = serde_json::from_str(r#"{"design":"lhs","n":20}"#).unwrap();
        assert_eq!(d, SamplingDesign::LatinHypercube { n: 20, midpoint: false });
        let d: SamplingDesign = serde_json::from_str(r#"{"design":"sobol","n":64,"skip":0}"#).unwrap();
        assert_eq!(d, SamplingDesign::Sobol { n: 64, skip: 0 });
        let d: SamplingDesign = serde_json::from_str(r#"{"design":"full_factorial"}"#).unwrap();
        assert_eq!(d, SamplingDesign::FullFactorial);
        assert!(serde_json::from_str::<SamplingDesign>(r#"{"design":"lhs","n":2,"extra":1}"#).is_err());
    }
}
