//! Exponential-family distributions used as messages, priors and posteriors.
//!
//! Gaussians are kept in natural-parameter form so that message products and
//! quotients are exact additions. Improper values (zero or negative precision)
//! are representable; only proper values may be read back as moments.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::special::{digamma, inverse_mills, ln_gamma, normal_ln_cdf, LN_2PI};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistError {
    #[error("resulting precision is negative ({0})")]
    ResultingPrecisionNegative(f64),
    #[error("truncated mass below 1e-300 (log mass {0})")]
    TruncatedMassUnderflow(f64),
    #[error("distribution kinds differ: {0} vs {1}")]
    KindMismatch(&'static str, &'static str),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("improper distribution: {0}")]
    Improper(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = std::result::Result<T, DistError>;

/// Log of the smallest truncated mass the greater-than operator accepts.
pub const MIN_LOG_MASS: f64 = -690.775_527_898_213_7; // ln(1e-300)

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian1D {
    pub mean_times_precision: f64,
    pub precision: f64,
}

impl Default for Gaussian1D {
    fn default() -> Self {
        Self::uniform()
    }
}

impl Gaussian1D {
    pub const fn uniform() -> Self {
        Gaussian1D {
            mean_times_precision: 0.0,
            precision: 0.0,
        }
    }

    pub const fn from_natural(mean_times_precision: f64, precision: f64) -> Self {
        Gaussian1D {
            mean_times_precision,
            precision,
        }
    }

    pub fn from_mean_precision(mean: f64, precision: f64) -> Self {
        Gaussian1D {
            mean_times_precision: mean * precision,
            precision,
        }
    }

    pub fn from_moments(mean: f64, variance: f64) -> Self {
        Self::from_mean_precision(mean, 1.0 / variance)
    }

    pub fn is_uniform(&self) -> bool {
        self.precision == 0.0 && self.mean_times_precision == 0.0
    }

    pub fn is_proper(&self) -> bool {
        self.precision > 0.0 && self.precision.is_finite() && self.mean_times_precision.is_finite()
    }

    /// Mean of a proper Gaussian. Improper values yield NaN or infinities and
    /// must go through [`Gaussian1D::moments`] when that matters.
    pub fn mean(&self) -> f64 {
        self.mean_times_precision / self.precision
    }

    pub fn variance(&self) -> f64 {
        1.0 / self.precision
    }

    pub fn moments(&self) -> Result<(f64, f64)> {
        if !self.is_proper() {
            return Err(DistError::Improper(format!("{self:?}")));
        }
        Ok((self.mean(), self.variance()))
    }

    /// `E[x^2]`.
    pub fn second_moment(&self) -> f64 {
        let m = self.mean();
        m * m + self.variance()
    }

    pub fn multiply(&self, other: &Gaussian1D) -> Result<Gaussian1D> {
        let out = self.multiply_unchecked(other);
        if out.precision < 0.0 {
            return Err(DistError::ResultingPrecisionNegative(out.precision));
        }
        Ok(out)
    }

    pub fn multiply_unchecked(&self, other: &Gaussian1D) -> Gaussian1D {
        Gaussian1D {
            mean_times_precision: self.mean_times_precision + other.mean_times_precision,
            precision: self.precision + other.precision,
        }
    }

    /// Quotient in natural parameters. The result may be improper.
    pub fn divide(&self, other: &Gaussian1D) -> Gaussian1D {
        Gaussian1D {
            mean_times_precision: self.mean_times_precision - other.mean_times_precision,
            precision: self.precision - other.precision,
        }
    }

    /// Raises the density to `power` (natural parameters scale).
    pub fn pow(&self, power: f64) -> Gaussian1D {
        Gaussian1D {
            mean_times_precision: self.mean_times_precision * power,
            precision: self.precision * power,
        }
    }

    /// Convex combination of natural parameters; `weight = 1` returns `self`.
    pub fn blend(&self, previous: &Gaussian1D, weight: f64) -> Gaussian1D {
        Gaussian1D {
            mean_times_precision: weight * self.mean_times_precision + (1.0 - weight) * previous.mean_times_precision,
            precision: weight * self.precision + (1.0 - weight) * previous.precision,
        }
    }

    /// `ln \int exp(eta x - precision x^2 / 2) dx`, the normalizer of the
    /// unnormalized density carried by the natural parameters.
    pub fn log_integral(&self) -> f64 {
        if self.is_uniform() {
            return 0.0;
        }
        0.5 * (LN_2PI - self.precision.ln())
            + 0.5 * self.mean_times_precision * self.mean_times_precision / self.precision
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        let m = self.mean();
        0.5 * (self.precision.ln() - LN_2PI) - 0.5 * self.precision * (x - m) * (x - m)
    }

    pub fn entropy(&self) -> f64 {
        0.5 * (1.0 + LN_2PI - self.precision.ln())
    }

    /// Largest absolute change between the natural parameters of two values.
    pub fn max_abs_diff(&self, other: &Gaussian1D) -> f64 {
        (self.mean_times_precision - other.mean_times_precision)
            .abs()
            .max((self.precision - other.precision).abs())
    }

    pub fn kl(&self, q: &Gaussian1D) -> Result<f64> {
        let (m1, v1) = self.moments()?;
        let (m2, v2) = q.moments()?;
        Ok(0.5 * ((v2 / v1).ln() + (v1 + (m1 - m2) * (m1 - m2)) / v2 - 1.0))
    }
}

/// Moments of a Gaussian restricted to `[lower_bound, inf)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedMoments {
    pub mean: f64,
    pub variance: f64,
    pub log_mass: f64,
}

pub fn truncated_moments(prior: &Gaussian1D, lower_bound: f64) -> Result<TruncatedMoments> {
    let (mean, variance) = prior.moments()?;
    if lower_bound == f64::NEG_INFINITY {
        return Ok(TruncatedMoments {
            mean,
            variance,
            log_mass: 0.0,
        });
    }
    let sd = variance.sqrt();
    // z is the standardized distance of the mean above the bound
    let z = (mean - lower_bound) / sd;
    let log_mass = normal_ln_cdf(z);
    if log_mass < MIN_LOG_MASS {
        return Err(DistError::TruncatedMassUnderflow(log_mass));
    }
    let lambda = inverse_mills(z);
    let shrink = (lambda * (lambda + z)).clamp(0.0, 1.0);
    Ok(TruncatedMoments {
        mean: mean + sd * lambda,
        variance: variance * (1.0 - shrink),
        log_mass,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gamma {
    pub shape: f64,
    pub rate: f64,
}

impl Gamma {
    pub fn new(shape: f64, rate: f64) -> Result<Gamma> {
        if !(shape > 0.0 && rate > 0.0) {
            return Err(DistError::InvalidParameter(format!("gamma shape {shape}, rate {rate}")));
        }
        Ok(Gamma { shape, rate })
    }

    /// The multiplicative identity: shape 1, rate 0.
    pub const fn uniform() -> Gamma {
        Gamma { shape: 1.0, rate: 0.0 }
    }

    pub fn is_proper(&self) -> bool {
        self.shape > 0.0 && self.rate > 0.0
    }

    pub fn mean(&self) -> f64 {
        self.shape / self.rate
    }

    pub fn variance(&self) -> f64 {
        self.shape / (self.rate * self.rate)
    }

    /// `E[ln x]`.
    pub fn mean_log(&self) -> f64 {
        digamma(self.shape) - self.rate.ln()
    }

    pub fn multiply(&self, other: &Gamma) -> Gamma {
        Gamma {
            shape: self.shape + other.shape - 1.0,
            rate: self.rate + other.rate,
        }
    }

    pub fn divide(&self, other: &Gamma) -> Gamma {
        Gamma {
            shape: self.shape - other.shape + 1.0,
            rate: self.rate - other.rate,
        }
    }

    pub fn log_integral(&self) -> f64 {
        if self.shape == 1.0 && self.rate == 0.0 {
            return 0.0;
        }
        ln_gamma(self.shape) - self.shape * self.rate.ln()
    }

    pub fn entropy(&self) -> f64 {
        self.shape - self.rate.ln() + ln_gamma(self.shape) + (1.0 - self.shape) * digamma(self.shape)
    }

    /// `E_q[ln p(x)]` for `x ~ q` under this density with fixed parameters.
    pub fn expected_ln_pdf(&self, mean: f64, mean_log: f64) -> f64 {
        self.shape * self.rate.ln() - ln_gamma(self.shape) + (self.shape - 1.0) * mean_log - self.rate * mean
    }

    pub fn max_abs_diff(&self, other: &Gamma) -> f64 {
        (self.shape - other.shape).abs().max((self.rate - other.rate).abs())
    }

    pub fn kl(&self, q: &Gamma) -> Result<f64> {
        if !self.is_proper() || !q.is_proper() {
            return Err(DistError::Improper("gamma".into()));
        }
        let (ap, bp, aq, bq) = (self.shape, self.rate, q.shape, q.rate);
        Ok((ap - aq) * digamma(ap) - ln_gamma(ap) + ln_gamma(aq) + aq * (bp.ln() - bq.ln()) + ap * (bq - bp) / bp)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dirichlet {
    pub pseudo_counts: Vec<f64>,
}

impl Dirichlet {
    pub fn new(pseudo_counts: Vec<f64>) -> Result<Dirichlet> {
        if pseudo_counts.iter().any(|&a| !(a > 0.0)) {
            return Err(DistError::InvalidParameter(format!(
                "dirichlet counts {pseudo_counts:?}"
            )));
        }
        Ok(Dirichlet { pseudo_counts })
    }

    pub fn symmetric(dim: usize, count: f64) -> Dirichlet {
        Dirichlet {
            pseudo_counts: vec![count; dim],
        }
    }

    /// Multiplicative identity (all pseudo counts one).
    pub fn uniform_message(dim: usize) -> Dirichlet {
        Self::symmetric(dim, 1.0)
    }

    pub fn dim(&self) -> usize {
        self.pseudo_counts.len()
    }

    pub fn is_proper(&self) -> bool {
        self.pseudo_counts.iter().all(|&a| a > 0.0)
    }

    pub fn total(&self) -> f64 {
        self.pseudo_counts.iter().sum()
    }

    pub fn mean(&self) -> Vec<f64> {
        let total = self.total();
        self.pseudo_counts.iter().map(|a| a / total).collect()
    }

    pub fn mean_log(&self) -> Vec<f64> {
        let dg_total = digamma(self.total());
        self.pseudo_counts.iter().map(|&a| digamma(a) - dg_total).collect()
    }

    pub fn multiply(&self, other: &Dirichlet) -> Dirichlet {
        Dirichlet {
            pseudo_counts: self
                .pseudo_counts
                .iter()
                .zip(&other.pseudo_counts)
                .map(|(a, b)| a + b - 1.0)
                .collect(),
        }
    }

    pub fn divide(&self, other: &Dirichlet) -> Dirichlet {
        Dirichlet {
            pseudo_counts: self
                .pseudo_counts
                .iter()
                .zip(&other.pseudo_counts)
                .map(|(a, b)| a - b + 1.0)
                .collect(),
        }
    }

    pub fn ln_normalizer(&self) -> f64 {
        self.pseudo_counts.iter().map(|&a| ln_gamma(a)).sum::<f64>() - ln_gamma(self.total())
    }

    pub fn log_integral(&self) -> f64 {
        if self.pseudo_counts.iter().all(|&a| a == 1.0) {
            return 0.0;
        }
        self.ln_normalizer()
    }

    pub fn entropy(&self) -> f64 {
        let k = self.dim() as f64;
        let total = self.total();
        self.ln_normalizer() + (total - k) * digamma(total)
            - self.pseudo_counts.iter().map(|&a| (a - 1.0) * digamma(a)).sum::<f64>()
    }

    pub fn expected_ln_pdf(&self, mean_log: &[f64]) -> f64 {
        -self.ln_normalizer()
            + self
                .pseudo_counts
                .iter()
                .zip(mean_log)
                .map(|(a, l)| (a - 1.0) * l)
                .sum::<f64>()
    }

    pub fn max_abs_diff(&self, other: &Dirichlet) -> f64 {
        self.pseudo_counts
            .iter()
            .zip(&other.pseudo_counts)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn kl(&self, q: &Dirichlet) -> Result<f64> {
        check_dim(self.dim(), q.dim())?;
        let dg_total = digamma(self.total());
        let cross: f64 = self
            .pseudo_counts
            .iter()
            .zip(&q.pseudo_counts)
            .map(|(&a, &b)| (a - b) * (digamma(a) - dg_total))
            .sum();
        Ok(q.ln_normalizer() - self.ln_normalizer() + cross)
    }
}

/// Conjugate Dirichlet update: pseudo counts absorb (possibly fractional)
/// category responsibilities.
pub fn dirichlet_update(prior: &Dirichlet, responsibilities: &[f64]) -> Result<Dirichlet> {
    check_dim(prior.dim(), responsibilities.len())?;
    if responsibilities.iter().any(|&r| !(r >= 0.0)) {
        return Err(DistError::InvalidParameter(format!(
            "negative responsibilities {responsibilities:?}"
        )));
    }
    Ok(Dirichlet {
        pseudo_counts: prior
            .pseudo_counts
            .iter()
            .zip(responsibilities)
            .map(|(a, r)| a + r)
            .collect(),
    })
}

pub const DISCRETE_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discrete {
    probabilities: Vec<f64>,
}

impl Discrete {
    pub fn new(probabilities: Vec<f64>) -> Result<Discrete> {
        if probabilities.len() < 2 {
            return Err(DistError::InvalidParameter(
                "discrete distributions need at least two categories".into(),
            ));
        }
        if probabilities.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(DistError::InvalidParameter(format!(
                "probabilities out of range: {probabilities:?}"
            )));
        }
        let sum: f64 = probabilities.iter().sum();
        if (sum - 1.0).abs() > DISCRETE_SUM_TOL {
            return Err(DistError::InvalidParameter(format!("probabilities sum to {sum}")));
        }
        Ok(Discrete { probabilities })
    }

    pub fn uniform(dim: usize) -> Discrete {
        Discrete {
            probabilities: vec![1.0 / dim as f64; dim],
        }
    }

    pub fn point_mass(dim: usize, index: usize) -> Discrete {
        let mut probabilities = vec![0.0; dim];
        probabilities[index] = 1.0;
        Discrete { probabilities }
    }

    /// Normalizes non-negative weights. All-zero weights give the uniform.
    pub fn from_weights(weights: &[f64]) -> Discrete {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Self::uniform(weights.len());
        }
        Discrete {
            probabilities: weights.iter().map(|w| w / total).collect(),
        }
    }

    pub fn from_log_weights(log_weights: &[f64]) -> Discrete {
        let norm = crate::special::log_sum_exp(log_weights);
        if !norm.is_finite() {
            return Self::uniform(log_weights.len());
        }
        Self::from_weights(&log_weights.iter().map(|l| (l - norm).exp()).collect::<Vec<_>>())
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn dim(&self) -> usize {
        self.probabilities.len()
    }

    pub fn argmax(&self) -> usize {
        // lowest index wins exact ties
        let mut best = 0;
        for (i, &p) in self.probabilities.iter().enumerate() {
            if p > self.probabilities[best] {
                best = i;
            }
        }
        best
    }

    pub fn multiply(&self, other: &Discrete) -> Discrete {
        let w: Vec<f64> = self
            .probabilities
            .iter()
            .zip(&other.probabilities)
            .map(|(a, b)| a * b)
            .collect();
        Self::from_weights(&w)
    }

    pub fn divide(&self, other: &Discrete) -> Discrete {
        let w: Vec<f64> = self
            .probabilities
            .iter()
            .zip(&other.probabilities)
            .map(|(a, b)| if *b > 0.0 { a / b } else { 0.0 })
            .collect();
        Self::from_weights(&w)
    }

    pub fn entropy(&self) -> f64 {
        -self
            .probabilities
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|p| p * p.ln())
            .sum::<f64>()
    }

    pub fn max_abs_diff(&self, other: &Discrete) -> f64 {
        self.probabilities
            .iter()
            .zip(&other.probabilities)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn kl(&self, q: &Discrete) -> Result<f64> {
        check_dim(self.dim(), q.dim())?;
        let mut total = 0.0;
        for (&p, &qp) in self.probabilities.iter().zip(&q.probabilities) {
            if p > 0.0 {
                if qp <= 0.0 {
                    return Ok(f64::INFINITY);
                }
                total += p * (p / qp).ln();
            }
        }
        Ok(total.max(0.0))
    }
}

/// Tagged union over the distribution kinds, used where kinds are mixed
/// (message stores, KL diagnostics).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Distribution {
    Gaussian(Gaussian1D),
    Gamma(Gamma),
    Dirichlet(Dirichlet),
    Discrete(Discrete),
}

impl Distribution {
    pub fn kind(&self) -> &'static str {
        match self {
            Distribution::Gaussian(_) => "gaussian",
            Distribution::Gamma(_) => "gamma",
            Distribution::Dirichlet(_) => "dirichlet",
            Distribution::Discrete(_) => "discrete",
        }
    }

    pub fn kl(&self, q: &Distribution) -> Result<f64> {
        match (self, q) {
            (Distribution::Gaussian(p), Distribution::Gaussian(q)) => p.kl(q),
            (Distribution::Gamma(p), Distribution::Gamma(q)) => p.kl(q),
            (Distribution::Dirichlet(p), Distribution::Dirichlet(q)) => p.kl(q),
            (Distribution::Discrete(p), Distribution::Discrete(q)) => p.kl(q),
            _ => Err(DistError::KindMismatch(self.kind(), q.kind())),
        }
    }
}

pub fn kl_divergence(p: &Distribution, q: &Distribution) -> Result<f64> {
    p.kl(q)
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(DistError::DimensionMismatch { expected, got });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn g(mean: f64, precision: f64) -> Gaussian1D {
        Gaussian1D::from_mean_precision(mean, precision)
    }

    #[test]
    fn multiply_examples() {
        let p = g(0.0, 1.0).multiply(&g(0.0, 1.0)).unwrap();
        assert_eq!(p, g(0.0, 2.0));
        let p = g(1.0, 2.0).multiply(&Gaussian1D::uniform()).unwrap();
        assert_eq!(p, g(1.0, 2.0));
        // precision-weighted mean (1*1 + 3*1) / 2
        let p = g(1.0, 1.0).multiply(&g(3.0, 1.0)).unwrap();
        assert!((p.mean() - 2.0).abs() < 1e-15);
        assert_eq!(p.precision, 2.0);
    }

    #[test]
    fn multiply_rejects_negative_precision() {
        let bad = Gaussian1D::from_natural(0.0, -3.0);
        assert!(matches!(
            g(0.0, 1.0).multiply(&bad),
            Err(DistError::ResultingPrecisionNegative(_))
        ));
    }

    #[test]
    fn divide_examples() {
        assert_eq!(g(0.0, 2.0).divide(&g(0.0, 1.0)), g(0.0, 1.0));
        assert!(g(2.0, 2.0).divide(&g(2.0, 2.0)).is_uniform());
        let q = Gaussian1D::from_natural(4.0, 2.0).divide(&Gaussian1D::from_natural(1.0, 0.5));
        assert_eq!(q, Gaussian1D::from_natural(3.0, 1.5));
    }

    #[test]
    fn moments_round_trip() {
        let x = Gaussian1D::from_moments(-3.25, 0.125);
        let (m, v) = x.moments().unwrap();
        assert!(((m + 3.25) / 3.25).abs() < 1e-12);
        assert!(((v - 0.125) / 0.125).abs() < 1e-12);
        assert!(Gaussian1D::uniform().moments().is_err());
    }

    #[test]
    fn truncated_standard_normal_at_zero() {
        let t = truncated_moments(&g(0.0, 1.0), 0.0).unwrap();
        let pi = std::f64::consts::PI;
        assert!((t.mean - (2.0 / pi).sqrt()).abs() < 1e-12);
        assert!((t.variance - (1.0 - 2.0 / pi)).abs() < 1e-12);
        assert!((t.log_mass - 0.5f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn truncation_far_in_tail_is_near_identity() {
        let t = truncated_moments(&g(5.0, 1.0), 0.0).unwrap();
        assert!((t.mean - 5.0).abs() < 1e-4);
        assert!((t.variance - 1.0).abs() < 1e-4);
    }

    #[test]
    fn truncation_without_bound() {
        let t = truncated_moments(&g(0.0, 1.0), f64::NEG_INFINITY).unwrap();
        assert_eq!((t.mean, t.variance, t.log_mass), (0.0, 1.0, 0.0));
    }

    #[test]
    fn truncation_underflow_is_reported() {
        let err = truncated_moments(&g(0.0, 1.0), 40.0).unwrap_err();
        assert!(matches!(err, DistError::TruncatedMassUnderflow(_)));
        // deep but representable
        let t = truncated_moments(&g(0.0, 1.0), 20.0).unwrap();
        assert!(t.mean > 20.0 && t.mean < 20.1);
        assert!(t.variance > 0.0 && t.variance < 0.01);
    }

    #[test]
    fn kl_examples() {
        assert_eq!(g(0.0, 1.0).kl(&g(0.0, 1.0)).unwrap(), 0.0);
        assert!((g(1.0, 1.0).kl(&g(0.0, 1.0)).unwrap() - 0.5).abs() < 1e-15);
        let u = Discrete::uniform(2);
        assert_eq!(u.kl(&u).unwrap(), 0.0);
        let mismatch = kl_divergence(&Distribution::Gaussian(g(0.0, 1.0)), &Distribution::Discrete(u));
        assert!(matches!(mismatch, Err(DistError::KindMismatch(..))));
    }

    #[test]
    fn dirichlet_update_examples() {
        let d = dirichlet_update(&Dirichlet::symmetric(3, 1.0), &[2.0, 0.0, 1.0]).unwrap();
        assert_eq!(d.pseudo_counts, vec![3.0, 1.0, 2.0]);
        let d = dirichlet_update(&Dirichlet::symmetric(2, 1.0), &[0.0, 0.0]).unwrap();
        assert_eq!(d.pseudo_counts, vec![1.0, 1.0]);
        let d = dirichlet_update(&Dirichlet::symmetric(2, 1.0), &[0.3, 0.7]).unwrap();
        assert!((d.pseudo_counts[0] - 1.3).abs() < 1e-15);
        assert!((d.pseudo_counts[1] - 1.7).abs() < 1e-15);
        assert!(matches!(
            dirichlet_update(&Dirichlet::symmetric(2, 1.0), &[1.0]),
            Err(DistError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn discrete_validation() {
        assert!(Discrete::new(vec![1.0]).is_err());
        assert!(Discrete::new(vec![0.5, 0.6]).is_err());
        assert!(Discrete::new(vec![0.25, 0.75]).is_ok());
        assert_eq!(Discrete::new(vec![0.5, 0.5]).unwrap().argmax(), 0);
    }

    #[test]
    fn gamma_moments_and_entropy() {
        let x = Gamma::new(2.0, 4.0).unwrap();
        assert_eq!(x.mean(), 0.5);
        // exponential(rate 1) has entropy 1
        assert!((Gamma::new(1.0, 1.0).unwrap().entropy() - 1.0).abs() < 1e-12);
        assert!(Gamma::new(0.0, 1.0).is_err());
        let u = Gamma::uniform();
        assert_eq!(x.multiply(&u), x);
        assert_eq!(x.multiply(&u).divide(&u), x);
    }

    fn proper_gaussian() -> impl Strategy<Value = Gaussian1D> {
        (-10.0..10.0f64, 0.01..100.0f64).prop_map(|(m, p)| g(m, p))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]

        #[test]
        fn multiply_commutes_and_divide_inverts(a in proper_gaussian(), b in proper_gaussian(), c in proper_gaussian()) {
            let ab = a.multiply(&b).unwrap();
            prop_assert_eq!(ab, b.multiply(&a).unwrap());
            let left = ab.multiply(&c).unwrap();
            let right = a.multiply(&b.multiply(&c).unwrap()).unwrap();
            prop_assert!(left.max_abs_diff(&right) < 1e-10);
            prop_assert!(ab.divide(&b).max_abs_diff(&a) < 1e-10);
        }

        #[test]
        fn truncation_reduces_variance(a in proper_gaussian(), bound in -5.0..5.0f64) {
            let lower = a.mean() + bound * a.variance().sqrt();
            let t = truncated_moments(&a, lower).unwrap();
            prop_assert!(t.variance < a.variance());
            prop_assert!(t.mean >= lower);
        }

        #[test]
        fn kl_non_negative(
            a in proper_gaussian(), b in proper_gaussian(),
            s1 in 0.1..20.0f64, r1 in 0.1..20.0f64, s2 in 0.1..20.0f64, r2 in 0.1..20.0f64,
            d1 in proptest::collection::vec(0.1..10.0f64, 3),
            d2 in proptest::collection::vec(0.1..10.0f64, 3),
        ) {
            prop_assert!(a.kl(&b).unwrap() >= 0.0);
            let (ga, gb) = (Gamma::new(s1, r1).unwrap(), Gamma::new(s2, r2).unwrap());
            prop_assert!(ga.kl(&gb).unwrap() >= -1e-12);
            let (da, db) = (Dirichlet::new(d1.clone()).unwrap(), Dirichlet::new(d2.clone()).unwrap());
            prop_assert!(da.kl(&db).unwrap() >= -1e-12);
            let (pa, pb) = (Discrete::from_weights(&d1), Discrete::from_weights(&d2));
            prop_assert!(pa.kl(&pb).unwrap() >= 0.0);
            prop_assert!((pa.probabilities().iter().sum::<f64>() - 1.0).abs() < DISCRETE_SUM_TOL);
        }
    }
}
