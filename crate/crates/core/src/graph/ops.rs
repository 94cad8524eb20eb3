//! Local message operators shared by the engines and by prediction.

use crate::dists::{truncated_moments, Discrete, DistError, Gaussian1D};
use crate::special::{log_sum_exp, LN_2PI};

const ARGMAX_TOL: f64 = 1e-10;
const ARGMAX_MAX_SWEEPS: usize = 200;

/// Result of moment-matching an arg-max constraint against Gaussian beliefs.
#[derive(Debug, Clone, PartialEq)]
pub struct ArgmaxTilted {
    /// `ln \int [argmax = class] prod_k g_k(s_k) ds` with each `g_k` the
    /// unnormalized density carried by its natural parameters.
    pub log_z: f64,
    /// Gaussian projections of the constrained marginals.
    pub tilted: Vec<Gaussian1D>,
}

/// Projects `prod_k cavities[k]` restricted to `s_class > s_j` for every
/// `j != class` onto independent Gaussians. The constraint is the product of
/// `C - 1` greater-than factors on score differences, solved by inner EP
/// sweeps until the pairwise messages stop moving.
pub fn argmax_tilted(cavities: &[Gaussian1D], class: usize) -> Result<ArgmaxTilted, DistError> {
    let n = cavities.len();
    if class >= n {
        return Err(DistError::DimensionMismatch {
            expected: n,
            got: class + 1,
        });
    }
    if let Some(bad) = cavities.iter().find(|g| !g.is_proper()) {
        return Err(DistError::Improper(format!("argmax cavity {bad:?}")));
    }
    let others: Vec<usize> = (0..n).filter(|&j| j != class).collect();
    let mut q = cavities.to_vec();
    let mut pair_msgs = vec![(Gaussian1D::uniform(), Gaussian1D::uniform()); others.len()];

    for _ in 0..ARGMAX_MAX_SWEEPS {
        let mut change: f64 = 0.0;
        for (i, &j) in others.iter().enumerate() {
            let cav_y = q[class].divide(&pair_msgs[i].0);
            let cav_j = q[j].divide(&pair_msgs[i].1);
            if !cav_y.is_proper() || !cav_j.is_proper() {
                continue;
            }
            let (new_y, new_j, _) = greater_than(&cav_y, &cav_j)?;
            let msg_y = new_y.divide(&cav_y);
            let msg_j = new_j.divide(&cav_j);
            change = change
                .max(msg_y.max_abs_diff(&pair_msgs[i].0))
                .max(msg_j.max_abs_diff(&pair_msgs[i].1));
            pair_msgs[i] = (msg_y, msg_j);
            q[class] = new_y;
            q[j] = new_j;
        }
        if change < ARGMAX_TOL {
            break;
        }
    }

    // EP evidence of the inner graph: each score has its cavity factor plus
    // the pairs touching it.
    let mut log_z = 0.0;
    for (i, &j) in others.iter().enumerate() {
        let cav_y = q[class].divide(&pair_msgs[i].0);
        let cav_j = q[j].divide(&pair_msgs[i].1);
        let (_, _, log_mass) = greater_than(&cav_y, &cav_j)?;
        log_z += cav_y.log_integral() + cav_j.log_integral() + log_mass;
    }
    for (k, qk) in q.iter().enumerate() {
        let pairs = if k == class { others.len() } else { 1 };
        log_z += (1.0 - pairs as f64) * qk.log_integral();
    }
    Ok(ArgmaxTilted { log_z, tilted: q })
}

/// Moment-matched posteriors of `a` and `b` under `a > b`, plus the log
/// probability of the constraint.
fn greater_than(a: &Gaussian1D, b: &Gaussian1D) -> Result<(Gaussian1D, Gaussian1D, f64), DistError> {
    let (ma, va) = a.moments()?;
    let (mb, vb) = b.moments()?;
    let md = ma - mb;
    let vd = va + vb;
    let t = truncated_moments(&Gaussian1D::from_moments(md, vd), 0.0)?;
    let delta = t.mean - md;
    let shrink = (vd - t.variance) / (vd * vd);
    let new_a = Gaussian1D::from_moments(ma + va / vd * delta, va - va * va * shrink);
    let new_b = Gaussian1D::from_moments(mb - vb / vd * delta, vb - vb * vb * shrink);
    Ok((new_a, new_b, t.log_mass))
}

/// EP messages from an observed arg-max factor to each score variable.
pub fn argmax_factor_ep_message(
    incoming_scores: &[Gaussian1D],
    observed_class: usize,
) -> Result<Vec<Gaussian1D>, DistError> {
    let t = argmax_tilted(incoming_scores, observed_class)?;
    Ok(t.tilted
        .iter()
        .zip(incoming_scores)
        .map(|(post, cav)| post.divide(cav))
        .collect())
}

/// Probability that each score is the largest, via the greater-than
/// machinery run once per candidate class.
pub fn argmax_probabilities(scores: &[Gaussian1D]) -> Result<Discrete, DistError> {
    let base: f64 = scores.iter().map(|g| g.log_integral()).sum();
    let log_p = (0..scores.len())
        .map(|c| argmax_tilted(scores, c).map(|t| t.log_z - base))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Discrete::from_log_weights(&log_p))
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let norm = log_sum_exp(z);
    z.iter().map(|v| (v - norm).exp()).collect()
}

/// Diagonal quadratic upper bound on log-sum-exp with curvature 1/2,
/// expanded at `psi`:
/// `lse(x) <= lse(psi) + g.(x - psi) + |x - psi|^2 / 4`, `g = softmax(psi)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxBound {
    pub psi: Vec<f64>,
}

impl SoftmaxBound {
    pub fn new(dim: usize) -> Self {
        SoftmaxBound { psi: vec![0.0; dim] }
    }

    /// Upper bound on `E[lse(x)]` for independent `x_k ~ N(means_k, vars_k)`.
    pub fn expected_bound(&self, means: &[f64], vars: &[f64]) -> f64 {
        let g = softmax(&self.psi);
        let mut out = log_sum_exp(&self.psi);
        for k in 0..self.psi.len() {
            let d = means[k] - self.psi[k];
            out += g[k] * d + 0.25 * (d * d + vars[k]);
        }
        out
    }

    /// Moves the expansion point to the current means when that tightens the
    /// bound. Never loosens it.
    pub fn tighten(&mut self, means: &[f64], vars: &[f64]) {
        let current = self.expected_bound(means, vars);
        let candidate = SoftmaxBound { psi: means.to_vec() };
        if candidate.expected_bound(means, vars) < current {
            *self = candidate;
        }
    }

    /// Gaussian messages (as log-quadratics) to each score for a soft target
    /// `target` with likelihood weight `weight`.
    pub fn messages(&self, target: &[f64], weight: f64) -> Vec<Gaussian1D> {
        let g = softmax(&self.psi);
        (0..self.psi.len())
            .map(|k| Gaussian1D::from_natural(weight * (target[k] - g[k] + 0.5 * self.psi[k]), 0.5 * weight))
            .collect()
    }

    /// Lower bound on `E[sum_k t_k x_k - lse(x)]`, scaled by `weight`.
    pub fn expected_log_lik(&self, target: &[f64], weight: f64, means: &[f64], vars: &[f64]) -> f64 {
        let linear: f64 = target.iter().zip(means).map(|(t, m)| t * m).sum();
        weight * (linear - self.expected_bound(means, vars))
    }
}

/// VMP messages from a softmax factor given the current score marginals, with
/// the bound expanded at the score means.
pub fn softmax_factor_vmp_update(
    incoming_scores: &[Gaussian1D],
    target: &Discrete,
) -> Result<Vec<Gaussian1D>, DistError> {
    if incoming_scores.len() != target.dim() {
        return Err(DistError::DimensionMismatch {
            expected: target.dim(),
            got: incoming_scores.len(),
        });
    }
    let mut means = Vec::with_capacity(incoming_scores.len());
    let mut vars = Vec::with_capacity(incoming_scores.len());
    for g in incoming_scores {
        let (m, v) = g.moments()?;
        means.push(m);
        vars.push(v);
    }
    let mut bound = SoftmaxBound::new(means.len());
    bound.tighten(&means, &vars);
    Ok(bound.messages(target.probabilities(), 1.0))
}

/// `ln \int g(x) N(x; mean, var) dx` for unnormalized `g`; `var = 0` is a
/// point evaluation.
pub(crate) fn ln_int_with_normal(g: &Gaussian1D, mean: f64, var: f64) -> f64 {
    if var == 0.0 {
        return g.mean_times_precision * mean - 0.5 * g.precision * mean * mean;
    }
    let prod = Gaussian1D::from_natural(g.mean_times_precision + mean / var, g.precision + 1.0 / var);
    -0.5 * mean * mean / var - 0.5 * (LN_2PI + var.ln()) + prod.log_integral()
}

/// Moment-matched single Gaussian for a mixture of `(mean, variance)` pairs.
pub(crate) fn project_mixture(weights: &[f64], components: &[(f64, f64)]) -> Gaussian1D {
    let total: f64 = weights.iter().sum();
    let mean: f64 = weights.iter().zip(components).map(|(w, (m, _))| w * m).sum::<f64>() / total;
    let second: f64 = weights
        .iter()
        .zip(components)
        .map(|(w, (m, v))| w * (v + m * m))
        .sum::<f64>()
        / total;
    Gaussian1D::from_moments(mean, (second - mean * mean).max(f64::MIN_POSITIVE))
}

/// Gate with an uninformative output: the output message is the projection
/// of `sum_k selector[k] * branch_k` and the selector posterior is
/// `selector[k]` times branch `k`'s evidence mass.
pub fn gate_messages(
    selector: &Discrete,
    per_branch_messages: &[Gaussian1D],
) -> Result<(Discrete, Gaussian1D), DistError> {
    gate_messages_with_output(selector, per_branch_messages, &Gaussian1D::uniform())
}

/// Gate whose output variable carries the belief `output_cavity`. Returns
/// the selector responsibilities and the message to the output.
pub fn gate_messages_with_output(
    selector: &Discrete,
    per_branch_messages: &[Gaussian1D],
    output_cavity: &Gaussian1D,
) -> Result<(Discrete, Gaussian1D), DistError> {
    if selector.dim() != per_branch_messages.len() {
        return Err(DistError::DimensionMismatch {
            expected: selector.dim(),
            got: per_branch_messages.len(),
        });
    }
    let mut log_w = Vec::with_capacity(selector.dim());
    let mut components = Vec::with_capacity(selector.dim());
    for (p, branch) in selector.probabilities().iter().zip(per_branch_messages) {
        let (m, v) = branch.moments()?;
        let mass = ln_int_with_normal(output_cavity, m, v);
        log_w.push(p.ln() + mass);
        components.push(branch.multiply_unchecked(output_cavity).moments()?);
    }
    let responsibilities = Discrete::from_log_weights(&log_w);
    let posterior = project_mixture(responsibilities.probabilities(), &components);
    Ok((responsibilities, posterior.divide(output_cavity)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::normal_cdf;

    fn g(mean: f64, precision: f64) -> Gaussian1D {
        Gaussian1D::from_mean_precision(mean, precision)
    }

    #[test]
    fn two_class_messages_are_symmetric() {
        let msgs = argmax_factor_ep_message(&[g(0.0, 1.0), g(0.0, 1.0)], 0).unwrap();
        let post0 = msgs[0].multiply(&g(0.0, 1.0)).unwrap();
        let post1 = msgs[1].multiply(&g(0.0, 1.0)).unwrap();
        // difference N(0, 2) truncated at 0 has mean sqrt(2) * sqrt(2/pi)
        let shift = (2.0 / std::f64::consts::PI).sqrt() * 2f64.sqrt() / 2.0;
        assert!((post0.mean() - shift).abs() < 1e-12);
        assert!((post1.mean() + shift).abs() < 1e-12);
        assert!((post0.variance() - post1.variance()).abs() < 1e-12);
    }

    #[test]
    fn satisfied_constraint_gives_near_uniform_messages() {
        let t = argmax_tilted(&[g(10.0, 1.0), g(0.0, 1.0)], 0).unwrap();
        let base = g(10.0, 1.0).log_integral() + g(0.0, 1.0).log_integral();
        assert!((t.log_z - base).abs() < 1e-10);
        let msgs = argmax_factor_ep_message(&[g(10.0, 1.0), g(0.0, 1.0)], 0).unwrap();
        for m in msgs {
            assert!(m.precision.abs() < 1e-9 && m.mean_times_precision.abs() < 1e-9);
        }
    }

    #[test]
    fn exchangeable_losers_get_identical_messages() {
        let msgs = argmax_factor_ep_message(&[g(0.0, 1.0); 3], 0).unwrap();
        assert!(msgs[1].max_abs_diff(&msgs[2]) < 1e-12);
    }

    #[test]
    fn two_class_log_z_is_exact() {
        let (a, b) = (g(0.3, 2.0), g(-0.4, 0.5));
        let t = argmax_tilted(&[a, b], 0).unwrap();
        let expected = a.log_integral() + b.log_integral() + normal_cdf(0.7 / (0.5f64 + 2.0).sqrt()).ln();
        assert!((t.log_z - expected).abs() < 1e-12);
    }

    #[test]
    fn argmax_probabilities_sum_to_one() {
        let p = argmax_probabilities(&[g(0.5, 1.0), g(0.0, 2.0), g(-0.2, 0.5)]).unwrap();
        assert!((p.probabilities().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let sym = argmax_probabilities(&[g(0.0, 1.0); 4]).unwrap();
        for q in sym.probabilities() {
            assert!((q - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_point_evaluations() {
        for p in softmax(&[0.0, 0.0, 0.0]) {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        let p = softmax(&[2f64.ln(), 0.0]);
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((p[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_messages_vanish_at_symmetric_point() {
        let msgs = softmax_factor_vmp_update(&[g(0.0, 1e6); 3], &Discrete::uniform(3)).unwrap();
        for m in &msgs {
            assert!(m.mean_times_precision.abs() < 1e-12);
        }
        assert!(msgs[0].max_abs_diff(&msgs[2]) < 1e-15);
    }

    #[test]
    fn softmax_bound_is_an_upper_bound() {
        let bound = SoftmaxBound {
            psi: vec![0.3, -1.0, 2.0],
        };
        for x in [[0.0, 0.0, 0.0], [5.0, -3.0, 1.0], [0.3, -1.0, 2.0]] {
            let b = bound.expected_bound(&x, &[0.0; 3]);
            assert!(b + 1e-12 >= log_sum_exp(&x));
        }
    }

    #[test]
    fn gate_examples() {
        let (sel, out) = gate_messages(&Discrete::point_mass(2, 0), &[g(0.0, 1.0), g(9.0, 1.0)]).unwrap();
        assert!(out.max_abs_diff(&g(0.0, 1.0)) < 1e-12);
        assert_eq!(sel.probabilities(), &[1.0, 0.0]);

        let (_, out) = gate_messages(&Discrete::uniform(2), &[g(-1.0, 1.0), g(1.0, 1.0)]).unwrap();
        assert!(out.mean().abs() < 1e-12);
        assert!((out.variance() - 2.0).abs() < 1e-12);

        let selector = Discrete::new(vec![0.3, 0.7]).unwrap();
        let (sel, _) = gate_messages(&selector, &[g(2.0, 3.0), g(2.0, 3.0)]).unwrap();
        assert!(sel.max_abs_diff(&selector) < 1e-12);
    }

    #[test]
    fn gate_output_evidence_reweights_selector() {
        let (sel, _) =
            gate_messages_with_output(&Discrete::uniform(2), &[g(-1.0, 1.0), g(1.0, 1.0)], &g(1.0, 4.0)).unwrap();
        assert!(sel.probabilities()[1] > 0.8);
    }

    #[test]
    fn ln_int_with_normal_matches_closed_form() {
        // \int N(x; 0, 1) N(x; 1, 2) dx = N(1; 0, 3)
        let gnorm = g(0.0, 1.0);
        let lhs = ln_int_with_normal(&gnorm, 1.0, 2.0) - gnorm.log_integral();
        let rhs = -0.5 * (LN_2PI + 3f64.ln()) - 1.0 / 6.0;
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
