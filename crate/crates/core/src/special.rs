//! Scalar special functions used by the message operators.

use statrs::function::erf::erfc;
pub use statrs::function::gamma::{digamma, ln_gamma};

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;
const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Below this argument the normal CDF is evaluated through the
/// continued-fraction Mills ratio instead of `erfc`.
const TAIL_CUTOFF: f64 = -6.0;

pub fn normal_pdf(z: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * z * z).exp()
}

pub fn normal_ln_pdf(z: f64) -> f64 {
    -0.5 * z * z - 0.5 * LN_2PI
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Upper-tail Mills ratio `(1 - Phi(x)) / phi(x)` for `x > 0`, by the
/// Laplace continued fraction evaluated bottom-up.
fn upper_mills_ratio(x: f64) -> f64 {
    debug_assert!(x > 0.0);
    let mut tail = 0.0;
    for k in (1..=80).rev() {
        tail = k as f64 / (x + tail);
    }
    1.0 / (x + tail)
}

/// `ln Phi(z)`, accurate deep into the lower tail.
pub fn normal_ln_cdf(z: f64) -> f64 {
    if z < TAIL_CUTOFF {
        normal_ln_pdf(z) + upper_mills_ratio(-z).ln()
    } else {
        normal_cdf(z).ln()
    }
}

/// `phi(z) / Phi(z)`, the inverse Mills ratio of the lower truncation.
pub fn inverse_mills(z: f64) -> f64 {
    if z < TAIL_CUTOFF {
        1.0 / upper_mills_ratio(-z)
    } else {
        normal_pdf(z) / normal_cdf(z)
    }
}

/// Numerically stable `ln(sum(exp(v)))`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cdf_matches_known_values() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-15);
        let v = normal_cdf(1.959_963_984_540_054);
        assert!((v - 0.975).abs() < 1e-10, "{v}");
    }

    #[test]
    fn ln_cdf_continuous_across_cutoff() {
        let below = normal_ln_cdf(TAIL_CUTOFF - 1e-9);
        let above = normal_ln_cdf(TAIL_CUTOFF + 1e-9);
        assert!((below - above).abs() < 1e-7, "{below} vs {above}");
    }

    #[test]
    fn ln_cdf_deep_tail_matches_asymptotic() {
        // ln Phi(-40) ~ -x^2/2 - ln(x) - ln(sqrt(2 pi)) - 1/x^2
        let x: f64 = 40.0;
        let approx = -0.5 * x * x - x.ln() - 0.5 * LN_2PI - 1.0 / (x * x);
        assert!((normal_ln_cdf(-x) - approx).abs() < 1e-5);
    }

    #[test]
    fn inverse_mills_tail_limit() {
        // phi(z)/Phi(z) ~ -z for very negative z
        let z = -30.0;
        assert!((inverse_mills(z) / -z - 1.0).abs() < 2e-3);
        assert!(inverse_mills(8.0) < 1e-14);
    }

    #[test]
    fn log_sum_exp_is_stable() {
        assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY]), f64::NEG_INFINITY);
    }
}
