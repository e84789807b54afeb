use crate::param_space::standard_normal_cdf;
use crate::Mode;

use super::gp::SurrogateState;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Expected improvement over `best` given posterior moments. Zero when the
/// variance is zero.
pub fn ei_from_moments(mean: f64, var: f64, best: f64, mode: Mode) -> f64 {
    if !(var > 0.0) {
        return 0.0;
    }
    let sigma = var.sqrt();
    let improvement = match mode {
        Mode::Min => best - mean,
        Mode::Max => mean - best,
    };
    let z = improvement / sigma;
    let pdf = INV_SQRT_2PI * (-0.5 * z * z).exp();
    let ei = improvement * standard_normal_cdf(z) + sigma * pdf;
    ei.max(0.0)
}

/// Expected improvement of the GP posterior at `x` over the incumbent `best`.
pub fn expected_improvement(state: &SurrogateState, x: &[f64], best: f64, mode: Mode) -> f64 {
    let (mean, var) = state.posterior(x);
    ei_from_moments(mean, var, best, mode)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::search::gp::{gp_fit_fixed, KernelParams, NOISE_FLOOR};
    use proptest::prelude::*;

    #[test]
    fn zero_variance_gives_zero() {
        assert_eq!(ei_from_moments(1.0, 0.0, 1.0, Mode::Min), 0.0);
        assert_eq!(ei_from_moments(0.0, 0.0, 1.0, Mode::Min), 0.0);
    }

    #[test]
    fn at_incumbent_closed_form() {
        for var in [1e-4f64, 0.3, 2.0, 50.0] {
            let want = var.sqrt() / (2.0 * std::f64::consts::PI).sqrt();
            for mode in [Mode::Min, Mode::Max] {
                assert!((ei_from_moments(0.7, var, 0.7, mode) - want).abs() < 1e-14 * want.max(1.0));
            }
        }
    }

    #[test]
    fn modes_are_mirror_images() {
        let a = ei_from_moments(1.0, 0.5, 2.0, Mode::Min);
        let b = ei_from_moments(-1.0, 0.5, -2.0, Mode::Max);
        assert!((a - b).abs() < 1e-15);
        assert!(a > 1.0, "improvement of 1 plus uncertainty bonus");
    }

    #[test]
    fn vanishes_at_observed_best_with_floor_noise() {
        let x = vec![vec![0.2], vec![0.7]];
        let s = gp_fit_fixed(&x, &[0.0, 1.0], &KernelParams::isotropic(1, 0.1, 1.0, NOISE_FLOOR)).unwrap();
        assert!(expected_improvement(&s, &[0.2], 0.0, Mode::Min) < 1e-5);
    }

    proptest! {
        #[test]
        fn nonnegative(mean in -1e6f64..1e6, var in 0f64..1e6, best in -1e6f64..1e6, max in any::<bool>()) {
            let mode = if max { Mode::Max } else { Mode::Min };
            let ei = ei_from_moments(mean, var, best, mode);
            prop_assert!(ei >= 0.0 && ei.is_finite());
        }
    }
}
