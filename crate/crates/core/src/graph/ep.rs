//! Expectation propagation over a [`FactorGraph`].
//!
//! Messages are updated factor by factor following the schedule. Each
//! update divides the current marginal by the factor's previous message to
//! get a cavity, moment-matches the tilted distribution, and stores the
//! (damped) quotient. Factors touching Gamma or Dirichlet variables
//! (random precisions, categorical selectors) send expectation-based
//! messages computed from the current marginals instead.
//!
//! The log-evidence estimate is
//! `sum_f ln \int f prod cavities + sum_v (1 - deg_v) ln \int prod messages`,
//! which is exact on trees of conjugate factors.

use crate::dists::{Dirichlet, Discrete, DistError, Distribution, Gamma, Gaussian1D};
use crate::special::{ln_gamma, log_sum_exp};

use super::ops::{argmax_tilted, ln_int_with_normal, project_mixture};
use super::store::{damp, max_abs_diff, MessageStore};
use super::{Edge, Engine, FactorGraph, FactorId, FactorKind, Observation, Result, Schedule, VarId};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpOptions {
    pub max_iters: usize,
    pub tol: f64,
    /// Step size in `(0, 1]`; 1 disables damping.
    pub damping: f64,
}

impl Default for EpOptions {
    fn default() -> Self {
        EpOptions {
            max_iters: 100,
            tol: 1e-6,
            damping: 0.7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EpResult {
    pub marginals: Vec<Distribution>,
    pub log_evidence: f64,
    pub iterations: usize,
    pub converged: bool,
    pub store: MessageStore,
}

impl EpResult {
    pub fn gaussian(&self, var: VarId) -> Gaussian1D {
        match &self.marginals[var.0] {
            Distribution::Gaussian(g) => *g,
            other => panic!("variable {} is {}, not gaussian", var.0, other.kind()),
        }
    }

    pub fn gamma(&self, var: VarId) -> Gamma {
        match &self.marginals[var.0] {
            Distribution::Gamma(g) => *g,
            other => panic!("variable {} is {}, not gamma", var.0, other.kind()),
        }
    }

    pub fn dirichlet(&self, var: VarId) -> &Dirichlet {
        match &self.marginals[var.0] {
            Distribution::Dirichlet(d) => d,
            other => panic!("variable {} is {}, not dirichlet", var.0, other.kind()),
        }
    }

    pub fn discrete(&self, var: VarId) -> &Discrete {
        match &self.marginals[var.0] {
            Distribution::Discrete(d) => d,
            other => panic!("variable {} is {}, not discrete", var.0, other.kind()),
        }
    }
}

pub fn run_ep(graph: &FactorGraph, schedule: &Schedule, options: &EpOptions) -> Result<EpResult> {
    graph.check_engine(Engine::Ep)?;
    schedule.validate(graph)?;
    let step = options.damping.clamp(f64::MIN_POSITIVE, 1.0);
    let mut store = MessageStore::new(graph);
    let runs = schedule.factor_runs();
    let mut iterations = 0;
    let mut converged = graph.factors().is_empty();

    while !converged && iterations < options.max_iters {
        iterations += 1;
        let mut change: f64 = 0.0;
        for (factor, slots) in &runs {
            let kind = graph.factor(*factor);
            let neighbors = kind.neighbors();
            let updates = factor_messages(graph, &store, *factor, kind, &neighbors)?;
            let fixed = is_constant(kind);
            for &slot in slots {
                let var = neighbors[slot];
                let Some(new) = updates[slot].clone() else { continue };
                if graph.observation(var).is_some() {
                    continue;
                }
                let edge = Edge { factor: *factor, slot };
                let old = store.message(edge);
                let new = if fixed { new } else { damp(new, old, step) };
                if !keeps_marginal_proper(&store, var, old, &new) {
                    continue;
                }
                change = change.max(max_abs_diff(&new, old));
                store.set_message(edge, var, new);
            }
        }
        converged = change < options.tol;
    }

    store.recompute_all();
    let log_evidence = log_evidence(graph, &store)?;
    for (f, kind) in graph.factors().iter().enumerate() {
        store.log_normalizers[f] = factor_log_z(graph, &store, FactorId(f), kind)?;
    }
    Ok(EpResult {
        marginals: store.marginals.clone(),
        log_evidence,
        iterations,
        converged,
        store,
    })
}

fn is_constant(kind: &FactorKind) -> bool {
    matches!(
        kind,
        FactorKind::GaussianPrior { .. }
            | FactorKind::GammaPrior { .. }
            | FactorKind::DirichletPrior { .. }
            | FactorKind::DiscretePrior { .. }
    )
}

fn keeps_marginal_proper(store: &MessageStore, var: VarId, old: &Distribution, new: &Distribution) -> bool {
    match (store.marginal(var), old, new) {
        (Distribution::Gaussian(m), Distribution::Gaussian(o), Distribution::Gaussian(n)) => {
            let next = m.divide(o).multiply_unchecked(n);
            next.precision >= 0.0 && next.precision.is_finite() && next.mean_times_precision.is_finite()
        }
        (Distribution::Gamma(m), Distribution::Gamma(o), Distribution::Gamma(n)) => {
            let next = m.divide(o).multiply(n);
            next.shape > 0.0 && next.rate >= 0.0
        }
        _ => true,
    }
}

/// Belief about a Gaussian neighbor: an observed value or a cavity.
#[derive(Debug, Clone, Copy)]
enum Belief {
    Point(f64),
    Dist(Gaussian1D),
}

impl Belief {
    fn moments(&self) -> Option<(f64, f64)> {
        match self {
            Belief::Point(x) => Some((*x, 0.0)),
            Belief::Dist(g) => g.moments().ok(),
        }
    }

    fn log_integral(&self) -> f64 {
        match self {
            Belief::Point(_) => 0.0,
            Belief::Dist(g) => g.log_integral(),
        }
    }
}

fn belief(graph: &FactorGraph, store: &MessageStore, factor: FactorId, slot: usize, var: VarId) -> Belief {
    match graph.observed_value(var) {
        Some(x) => Belief::Point(x),
        None => Belief::Dist(store.gaussian_cavity(var, Edge { factor, slot })),
    }
}

fn gaussian_marginal(store: &MessageStore, var: VarId) -> Gaussian1D {
    match store.marginal(var) {
        Distribution::Gaussian(g) => *g,
        _ => unreachable!(),
    }
}

fn gamma_marginal(store: &MessageStore, var: VarId) -> Gamma {
    match store.marginal(var) {
        Distribution::Gamma(g) => *g,
        _ => unreachable!(),
    }
}

fn second_moment_about(graph: &FactorGraph, store: &MessageStore, var: VarId, center: f64) -> Option<f64> {
    if let Some(x) = graph.observed_value(var) {
        return Some((x - center) * (x - center));
    }
    let (m, v) = gaussian_marginal(store, var).moments().ok()?;
    Some((m - center) * (m - center) + v)
}

/// Message through `out = in + N(0, 1/precision)` given the belief on `in`.
fn through_noise(input: Belief, precision: f64) -> Option<Gaussian1D> {
    match input {
        Belief::Point(x) => Some(Gaussian1D::from_mean_precision(x, precision)),
        Belief::Dist(g) => {
            let denom = g.precision + precision;
            if denom <= 0.0 {
                return None;
            }
            Some(Gaussian1D::from_natural(
                g.mean_times_precision * precision / denom,
                g.precision * precision / denom,
            ))
        }
    }
}

/// Natural parameters `(eta, tau)` of the belief on one term `t` given a
/// belief on `out = t + rest` with `rest ~ N(offset, spread)`.
fn term_belief(output: Belief, offset: f64, spread: f64) -> Option<(f64, f64)> {
    match output {
        Belief::Dist(g) => {
            let denom = 1.0 + g.precision * spread;
            Some((
                (g.mean_times_precision - g.precision * offset) / denom,
                g.precision / denom,
            ))
        }
        Belief::Point(y) if spread > 0.0 => Some(((y - offset) / spread, 1.0 / spread)),
        Belief::Point(_) => None,
    }
}

fn discrete_weights_excluding(store: &MessageStore, var: VarId, edge: Edge) -> Vec<f64> {
    store.discrete_log_weights(var, Some(edge))
}

fn factor_messages(
    graph: &FactorGraph,
    store: &MessageStore,
    factor: FactorId,
    kind: &FactorKind,
    neighbors: &[VarId],
) -> Result<Vec<Option<Distribution>>> {
    let n = neighbors.len();
    let mut out: Vec<Option<Distribution>> = vec![None; n];
    let gauss = |g: Gaussian1D| Some(Distribution::Gaussian(g));
    match kind {
        FactorKind::GaussianPrior { prior, .. } => out[0] = gauss(*prior),
        FactorKind::GammaPrior { prior, .. } => out[0] = Some(Distribution::Gamma(*prior)),
        FactorKind::DirichletPrior { prior, .. } => out[0] = Some(Distribution::Dirichlet(prior.clone())),
        FactorKind::DiscretePrior { prior, .. } => out[0] = Some(Distribution::Discrete(prior.clone())),
        FactorKind::GaussianNoise { precision, .. } => {
            let input = belief(graph, store, factor, 0, neighbors[0]);
            let output = belief(graph, store, factor, 1, neighbors[1]);
            out[1] = through_noise(input, *precision).and_then(gauss);
            out[0] = through_noise(output, *precision).and_then(gauss);
        }
        FactorKind::LinearScore { coefficients, .. } => {
            linear_messages(graph, store, factor, neighbors, coefficients, &mut out);
        }
        FactorKind::Sum { inputs, .. } => {
            let ones = vec![1.0; inputs.len()];
            linear_messages(graph, store, factor, neighbors, &ones, &mut out);
        }
        FactorKind::ScaledSum { inputs, .. } => {
            scaled_sum_messages(graph, store, factor, neighbors, inputs.len(), &mut out);
        }
        FactorKind::GaussianRandomPrecision { mean, precisions, .. } => {
            let expected: Vec<f64> = precisions.iter().map(|p| gamma_marginal(store, *p).mean()).collect();
            if expected.iter().all(|e| e.is_finite() && *e > 0.0) {
                out[0] = gauss(Gaussian1D::from_mean_precision(*mean, expected.iter().product()));
            }
            if let Some(sq) = second_moment_about(graph, store, neighbors[0], *mean) {
                for j in 0..precisions.len() {
                    let others: f64 = expected
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| *i != j)
                        .map(|(_, e)| e)
                        .product();
                    if others.is_finite() {
                        out[j + 1] = Some(Distribution::Gamma(Gamma {
                            shape: 1.5,
                            rate: 0.5 * sq * others,
                        }));
                    }
                }
            }
        }
        FactorKind::GammaRandomRate { shape, rate, var } => {
            let rate_mean = gamma_marginal(store, *rate).mean();
            if rate_mean.is_finite() && rate_mean > 0.0 {
                out[0] = Some(Distribution::Gamma(Gamma {
                    shape: *shape,
                    rate: rate_mean,
                }));
            }
            let var_mean = gamma_marginal(store, *var).mean();
            if var_mean.is_finite() {
                out[1] = Some(Distribution::Gamma(Gamma {
                    shape: shape + 1.0,
                    rate: var_mean,
                }));
            }
        }
        FactorKind::Categorical {
            selector,
            probabilities,
        } => {
            let theta = store.dirichlet_cavity(*probabilities, Edge { factor, slot: 1 });
            if !theta.is_proper() {
                return Ok(out);
            }
            let mean = theta.mean();
            let responsibilities = match graph.observation(*selector) {
                Some(Observation::Clamped(d)) => d.probabilities().to_vec(),
                _ => {
                    out[0] = Some(Distribution::Discrete(Discrete::from_weights(&mean)));
                    let logw = discrete_weights_excluding(store, *selector, Edge { factor, slot: 0 });
                    let post: Vec<f64> = logw.iter().zip(&mean).map(|(l, m)| l + m.ln()).collect();
                    Discrete::from_log_weights(&post).probabilities().to_vec()
                }
            };
            out[1] = Some(Distribution::Dirichlet(Dirichlet {
                pseudo_counts: responsibilities.iter().map(|r| 1.0 + r).collect(),
            }));
        }
        FactorKind::ArgMax { class, weight, .. } => {
            let cavities: Vec<Gaussian1D> = (0..n)
                .map(|s| store.gaussian_cavity(neighbors[s], Edge { factor, slot: s }))
                .collect();
            if cavities.iter().all(|c| c.is_proper()) {
                let t = argmax_tilted(&cavities, *class)?;
                for s in 0..n {
                    out[s] = gauss(t.tilted[s].divide(&cavities[s]).pow(*weight));
                }
            }
        }
        FactorKind::Gate { selector, cases } => {
            gate_messages_ep(graph, store, factor, neighbors, *selector, cases, &mut out)?;
        }
        FactorKind::Softmax { .. } => unreachable!("rejected by check_engine"),
    }
    Ok(out)
}

fn linear_messages(
    graph: &FactorGraph,
    store: &MessageStore,
    factor: FactorId,
    neighbors: &[VarId],
    coefficients: &[f64],
    out: &mut [Option<Distribution>],
) {
    let inputs: Vec<Belief> = (1..neighbors.len())
        .map(|s| belief(graph, store, factor, s, neighbors[s]))
        .collect();
    let moments: Vec<Option<(f64, f64)>> = inputs.iter().map(|b| b.moments()).collect();
    let mut mean = 0.0;
    let mut var = 0.0;
    let mut improper = 0;
    for (c, m) in coefficients.iter().zip(&moments) {
        match m {
            Some((mu, v)) => {
                mean += c * mu;
                var += c * c * v;
            }
            None if *c != 0.0 => improper += 1,
            None => {}
        }
    }
    if improper == 0 && var > 0.0 {
        out[0] = Some(Distribution::Gaussian(Gaussian1D::from_moments(mean, var)));
    }
    let output = belief(graph, store, factor, 0, neighbors[0]);
    for (d, c) in coefficients.iter().enumerate() {
        let own = moments[d];
        let own_improper = own.is_none() && *c != 0.0;
        if improper > usize::from(own_improper) || *c == 0.0 {
            continue;
        }
        if !matches!(inputs[d], Belief::Dist(_)) {
            continue;
        }
        let (own_mean, own_var) = own.unwrap_or((0.0, 0.0));
        let offset = mean - c * own_mean;
        let spread = var - c * c * own_var;
        if let Some((eta, tau)) = term_belief(output, offset, spread.max(0.0)) {
            out[d + 1] = Some(Distribution::Gaussian(Gaussian1D::from_natural(eta * c, tau * c * c)));
        }
    }
}

fn scaled_sum_messages(
    graph: &FactorGraph,
    store: &MessageStore,
    factor: FactorId,
    neighbors: &[VarId],
    count: usize,
    out: &mut [Option<Distribution>],
) {
    let scale = |k: usize| belief(graph, store, factor, 1 + k, neighbors[1 + k]).moments();
    let input = |k: usize| belief(graph, store, factor, 1 + count + k, neighbors[1 + count + k]).moments();
    let mut terms = Vec::with_capacity(count);
    for k in 0..count {
        let (Some((mb, vb)), Some((mx, vx))) = (scale(k), input(k)) else {
            return;
        };
        let (eb2, ex2) = (mb * mb + vb, mx * mx + vx);
        terms.push((mb, eb2, mx, ex2));
    }
    let term_mean = |t: &(f64, f64, f64, f64)| t.0 * t.2;
    let term_var = |t: &(f64, f64, f64, f64)| t.1 * t.3 - (t.0 * t.2) * (t.0 * t.2);
    let mean: f64 = terms.iter().map(term_mean).sum();
    let var: f64 = terms.iter().map(term_var).sum();
    if var > 0.0 {
        out[0] = Some(Distribution::Gaussian(Gaussian1D::from_moments(mean, var)));
    }
    let output = belief(graph, store, factor, 0, neighbors[0]);
    for (k, t) in terms.iter().enumerate() {
        // belief on this term alone: output minus the other terms
        let Some((eta, tau)) = term_belief(output, mean - term_mean(t), (var - term_var(t)).max(0.0)) else {
            continue;
        };
        out[1 + k] = Some(Distribution::Gaussian(Gaussian1D::from_natural(eta * t.2, tau * t.3)));
        out[1 + count + k] = Some(Distribution::Gaussian(Gaussian1D::from_natural(eta * t.0, tau * t.1)));
    }
    for k in 0..count {
        for slot in [1 + k, 1 + count + k] {
            if graph.observation(neighbors[slot]).is_some() {
                out[slot] = None;
            }
        }
    }
}

struct CaseOutcome {
    /// ln P(case constraint | normalized cavities), weighted.
    log_mass: f64,
    tilted: Vec<(VarId, Gaussian1D)>,
}

fn run_case(case: &FactorKind, cavity_of: &dyn Fn(VarId) -> Gaussian1D) -> Result<Option<CaseOutcome>> {
    let FactorKind::ArgMax { scores, class, weight } = case else {
        unreachable!("EP gates only hold arg-max cases");
    };
    let cavities: Vec<Gaussian1D> = scores.iter().map(|v| cavity_of(*v)).collect();
    if cavities.iter().any(|c| !c.is_proper()) {
        return Ok(None);
    }
    let base: f64 = cavities.iter().map(|c| c.log_integral()).sum();
    match argmax_tilted(&cavities, *class) {
        Ok(t) => Ok(Some(CaseOutcome {
            log_mass: weight * (t.log_z - base),
            tilted: scores.iter().copied().zip(t.tilted).collect(),
        })),
        Err(DistError::TruncatedMassUnderflow(_)) => Ok(Some(CaseOutcome {
            log_mass: f64::NEG_INFINITY,
            tilted: Vec::new(),
        })),
        Err(e) => Err(e.into()),
    }
}

fn gate_messages_ep(
    graph: &FactorGraph,
    store: &MessageStore,
    factor: FactorId,
    neighbors: &[VarId],
    selector: VarId,
    cases: &[FactorKind],
    out: &mut [Option<Distribution>],
) -> Result<()> {
    let cavities: Vec<Gaussian1D> = (1..neighbors.len())
        .map(|s| store.gaussian_cavity(neighbors[s], Edge { factor, slot: s }))
        .collect();
    let slot_of = |v: VarId| neighbors.iter().position(|n| *n == v).expect("gate neighbor");
    let cavity_of = |v: VarId| cavities[slot_of(v) - 1];
    let mut outcomes = Vec::with_capacity(cases.len());
    for case in cases {
        match run_case(case, &cavity_of)? {
            Some(o) => outcomes.push(o),
            None => return Ok(()),
        }
    }
    let log_masses: Vec<f64> = outcomes.iter().map(|o| o.log_mass).collect();

    let clamped = match graph.observation(selector) {
        Some(Observation::Clamped(d)) => Some(d.probabilities().to_vec()),
        _ => None,
    };
    if let Some(weights) = clamped {
        // fixed selector: each case contributes its messages to the power of
        // its selector weight
        let mut acc = vec![Gaussian1D::uniform(); neighbors.len()];
        for (o, w) in outcomes.iter().zip(&weights) {
            for (v, t) in &o.tilted {
                let s = slot_of(*v);
                acc[s] = acc[s].multiply_unchecked(&t.divide(&cavities[s - 1]).pow(*w));
            }
        }
        for s in 1..neighbors.len() {
            out[s] = Some(Distribution::Gaussian(acc[s]));
        }
        return Ok(());
    }

    out[0] = Some(Distribution::Discrete(Discrete::from_log_weights(&log_masses)));
    let prior = discrete_weights_excluding(store, selector, Edge { factor, slot: 0 });
    let post: Vec<f64> = prior.iter().zip(&log_masses).map(|(p, l)| p + l).collect();
    let resp = Discrete::from_log_weights(&post);
    for s in 1..neighbors.len() {
        let cav = cavities[s - 1];
        let Ok(cav_moments) = cav.moments() else { continue };
        let components: Vec<(f64, f64)> = outcomes
            .iter()
            .map(|o| {
                o.tilted
                    .iter()
                    .find(|(v, _)| *v == neighbors[s])
                    .and_then(|(_, t)| t.moments().ok())
                    .unwrap_or(cav_moments)
            })
            .collect();
        let projected = project_mixture(resp.probabilities(), &components);
        out[s] = Some(Distribution::Gaussian(projected.divide(&cav)));
    }
    Ok(())
}

/// `ln \int f prod_v cavity_v` for one factor under the current messages.
fn factor_log_z(graph: &FactorGraph, store: &MessageStore, factor: FactorId, kind: &FactorKind) -> Result<f64> {
    let neighbors = kind.neighbors();
    let cav = |slot: usize| belief(graph, store, factor, slot, neighbors[slot]);
    let value = match kind {
        FactorKind::GaussianPrior { prior, .. } => match cav(0) {
            Belief::Point(x) => prior.ln_pdf(x),
            Belief::Dist(g) => ln_int_with_normal(&g, prior.mean(), prior.variance()),
        },
        FactorKind::GammaPrior { prior, var } => {
            let c = store.gamma_cavity(*var, Edge { factor, slot: 0 });
            prior.shape * prior.rate.ln() - ln_gamma(prior.shape) + prior.multiply(&c).log_integral()
        }
        FactorKind::DirichletPrior { prior, var } => {
            let c = store.dirichlet_cavity(*var, Edge { factor, slot: 0 });
            -prior.ln_normalizer() + prior.multiply(&c).log_integral()
        }
        FactorKind::DiscretePrior { prior, var } => match graph.observation(*var) {
            Some(Observation::Clamped(d)) => d
                .probabilities()
                .iter()
                .zip(prior.probabilities())
                .map(|(q, p)| if *q > 0.0 { q * p.ln() } else { 0.0 })
                .sum(),
            _ => {
                let logw = discrete_weights_excluding(store, *var, Edge { factor, slot: 0 });
                let terms: Vec<f64> = logw
                    .iter()
                    .zip(prior.probabilities())
                    .map(|(l, p)| l + p.ln())
                    .collect();
                log_sum_exp(&terms)
            }
        },
        FactorKind::GaussianNoise { precision, .. } => {
            let noise_var = 1.0 / precision;
            match (cav(0), cav(1)) {
                (Belief::Point(x), Belief::Point(y)) => Gaussian1D::from_mean_precision(x, *precision).ln_pdf(y),
                (Belief::Point(x), Belief::Dist(g)) | (Belief::Dist(g), Belief::Point(x)) => {
                    ln_int_with_normal(&g, x, noise_var)
                }
                (Belief::Dist(a), Belief::Dist(b)) => {
                    if let Ok((m, v)) = a.moments() {
                        a.log_integral() + ln_int_with_normal(&b, m, v + noise_var)
                    } else if let Ok((m, v)) = b.moments() {
                        b.log_integral() + ln_int_with_normal(&a, m, v + noise_var)
                    } else {
                        0.0
                    }
                }
            }
        }
        FactorKind::LinearScore { coefficients, .. } => linear_log_z(coefficients, &cav),
        FactorKind::Sum { inputs, .. } => linear_log_z(&vec![1.0; inputs.len()], &cav),
        FactorKind::ScaledSum { inputs, .. } => {
            let count = inputs.len();
            let mut mean = 0.0;
            let mut var = 0.0;
            let mut base = 0.0;
            for k in 0..count {
                let (b, x) = (cav(1 + k), cav(1 + count + k));
                base += b.log_integral() + x.log_integral();
                let (Some((mb, vb)), Some((mx, vx))) = (b.moments(), x.moments()) else {
                    return Ok(0.0);
                };
                mean += mb * mx;
                var += (mb * mb + vb) * (mx * mx + vx) - (mb * mx) * (mb * mx);
            }
            base + match cav(0) {
                Belief::Point(y) => Gaussian1D::from_moments(mean, var).ln_pdf(y),
                Belief::Dist(g) => ln_int_with_normal(&g, mean, var),
            }
        }
        FactorKind::GaussianRandomPrecision { mean, precisions, .. } => {
            let mut precision = 1.0;
            let mut base = 0.0;
            for (j, p) in precisions.iter().enumerate() {
                let c = store.gamma_cavity(*p, Edge { factor, slot: j + 1 });
                base += c.log_integral();
                precision *= if c.is_proper() {
                    c.mean()
                } else {
                    gamma_marginal(store, *p).mean()
                };
            }
            base + match cav(0) {
                Belief::Point(x) => Gaussian1D::from_mean_precision(*mean, precision).ln_pdf(x),
                Belief::Dist(g) => ln_int_with_normal(&g, *mean, 1.0 / precision),
            }
        }
        FactorKind::GammaRandomRate { shape, var, rate } => {
            let cv = store.gamma_cavity(*var, Edge { factor, slot: 0 });
            let cr = store.gamma_cavity(*rate, Edge { factor, slot: 1 });
            let rate_mean = if cr.is_proper() {
                cr.mean()
            } else {
                gamma_marginal(store, *rate).mean()
            };
            let joined = Gamma {
                shape: shape + cv.shape - 1.0,
                rate: rate_mean + cv.rate,
            };
            shape * rate_mean.ln() - ln_gamma(*shape) + joined.log_integral() + cr.log_integral()
        }
        FactorKind::Categorical {
            selector,
            probabilities,
        } => {
            let theta = store.dirichlet_cavity(*probabilities, Edge { factor, slot: 1 });
            let mean = theta.mean();
            let mix = match graph.observation(*selector) {
                Some(Observation::Clamped(d)) => d
                    .probabilities()
                    .iter()
                    .zip(&mean)
                    .map(|(q, m)| q * m)
                    .sum::<f64>()
                    .ln(),
                _ => {
                    let logw = discrete_weights_excluding(store, *selector, Edge { factor, slot: 0 });
                    let terms: Vec<f64> = logw.iter().zip(&mean).map(|(l, m)| l + m.ln()).collect();
                    log_sum_exp(&terms)
                }
            };
            mix + theta.log_integral()
        }
        FactorKind::ArgMax { class, weight, .. } => {
            let cavities: Vec<Gaussian1D> = (0..neighbors.len())
                .map(|s| store.gaussian_cavity(neighbors[s], Edge { factor, slot: s }))
                .collect();
            let base: f64 = cavities.iter().map(|c| c.log_integral()).sum();
            let t = argmax_tilted(&cavities, *class)?;
            base + weight * (t.log_z - base)
        }
        FactorKind::Gate { selector, cases } => {
            let cavities: Vec<Gaussian1D> = (1..neighbors.len())
                .map(|s| store.gaussian_cavity(neighbors[s], Edge { factor, slot: s }))
                .collect();
            let cavity_of = |v: VarId| cavities[neighbors.iter().position(|n| *n == v).expect("gate neighbor") - 1];
            let base: f64 = cavities.iter().map(|c| c.log_integral()).sum();
            let mut masses = Vec::with_capacity(cases.len());
            for case in cases {
                match run_case(case, &cavity_of)? {
                    Some(o) => masses.push(o.log_mass),
                    None => return Ok(0.0),
                }
            }
            base + match graph.observation(*selector) {
                Some(Observation::Clamped(d)) => d
                    .probabilities()
                    .iter()
                    .zip(&masses)
                    .map(|(p, m)| if *p > 0.0 { p * m } else { 0.0 })
                    .sum::<f64>(),
                _ => {
                    let logw = discrete_weights_excluding(store, *selector, Edge { factor, slot: 0 });
                    let terms: Vec<f64> = logw.iter().zip(&masses).map(|(l, m)| l + m).collect();
                    log_sum_exp(&terms)
                }
            }
        }
        FactorKind::Softmax { .. } => unreachable!("rejected by check_engine"),
    };
    Ok(value)
}

fn linear_log_z(coefficients: &[f64], cav: &dyn Fn(usize) -> Belief) -> f64 {
    let mut mean = 0.0;
    let mut var = 0.0;
    let mut base = 0.0;
    for (d, c) in coefficients.iter().enumerate() {
        let b = cav(d + 1);
        base += b.log_integral();
        match b.moments() {
            Some((m, v)) => {
                mean += c * m;
                var += c * c * v;
            }
            None if *c != 0.0 => return 0.0,
            None => {}
        }
    }
    base + match cav(0) {
        Belief::Point(y) if var == 0.0 => {
            if (y - mean).abs() < 1e-12 {
                0.0
            } else {
                f64::NEG_INFINITY
            }
        }
        Belief::Point(y) => Gaussian1D::from_moments(mean, var).ln_pdf(y),
        Belief::Dist(g) => ln_int_with_normal(&g, mean, var),
    }
}

fn log_evidence(graph: &FactorGraph, store: &MessageStore) -> Result<f64> {
    let mut total = 0.0;
    for (f, kind) in graph.factors().iter().enumerate() {
        total += factor_log_z(graph, store, FactorId(f), kind)?;
    }
    for (v, edges) in store.adjacency.iter().enumerate() {
        let var = VarId(v);
        if graph.observation(var).is_some() || edges.is_empty() {
            continue;
        }
        let degree = edges.len() as f64;
        let l = match store.marginal(var) {
            Distribution::Gaussian(g) => g.log_integral(),
            Distribution::Gamma(g) => g.log_integral(),
            Distribution::Dirichlet(d) => d.log_integral(),
            Distribution::Discrete(_) => log_sum_exp(&store.discrete_log_weights(var, None)),
        };
        total += (1.0 - degree) * l;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::VarKind;
    use crate::special::normal_ln_cdf;

    fn chain() -> (FactorGraph, VarId) {
        let mut g = FactorGraph::new();
        let x = g.add_variable("x", VarKind::Gaussian);
        let y = g.add_variable("y", VarKind::Gaussian);
        g.add_factor(FactorKind::GaussianPrior {
            var: x,
            prior: Gaussian1D::from_mean_precision(0.0, 1.0),
        })
        .unwrap();
        g.add_factor(FactorKind::GaussianNoise {
            input: x,
            output: y,
            precision: 1.0,
        })
        .unwrap();
        g.observe(y, 1.0).unwrap();
        (g, x)
    }

    /// One-feature, two-class BPM: `w ~ N(0, 1)`, class 1 pinned at zero.
    fn tiny_bpm(data: &[(f64, usize)]) -> (FactorGraph, VarId) {
        let mut g = FactorGraph::new();
        let w = g.add_variable("w", VarKind::Gaussian);
        g.add_factor(FactorKind::GaussianPrior {
            var: w,
            prior: Gaussian1D::from_mean_precision(0.0, 1.0),
        })
        .unwrap();
        for (i, (x, y)) in data.iter().enumerate() {
            let s = g.add_variable(format!("s{i}"), VarKind::Gaussian);
            let t0 = g.add_variable(format!("t{i}_0"), VarKind::Gaussian);
            let zero = g.add_variable(format!("z{i}"), VarKind::Gaussian);
            let t1 = g.add_variable(format!("t{i}_1"), VarKind::Gaussian);
            g.observe(zero, 0.0).unwrap();
            g.add_factor(FactorKind::LinearScore {
                output: s,
                inputs: vec![w],
                coefficients: vec![*x],
            })
            .unwrap();
            g.add_factor(FactorKind::GaussianNoise {
                input: s,
                output: t0,
                precision: 1.0,
            })
            .unwrap();
            g.add_factor(FactorKind::GaussianNoise {
                input: zero,
                output: t1,
                precision: 1.0,
            })
            .unwrap();
            g.add_factor(FactorKind::ArgMax {
                scores: vec![t0, t1],
                class: *y,
                weight: 1.0,
            })
            .unwrap();
        }
        (g, w)
    }

    fn run(g: &FactorGraph, damping: f64) -> EpResult {
        let opts = EpOptions {
            damping,
            tol: 1e-10,
            max_iters: 500,
        };
        run_ep(g, &g.default_schedule(), &opts).unwrap()
    }

    /// Posterior mean, variance and log evidence by quadrature on a grid.
    fn quadrature(data: &[(f64, usize)]) -> (f64, f64, f64) {
        let n = 20001;
        let h = 20.0 / (n - 1) as f64;
        let (mut z, mut m1, mut m2) = (0.0, 0.0, 0.0);
        for i in 0..n {
            let w = -10.0 + i as f64 * h;
            let mut lp = Gaussian1D::from_mean_precision(0.0, 1.0).ln_pdf(w);
            for (x, y) in data {
                let sign = if *y == 0 { 1.0 } else { -1.0 };
                lp += normal_ln_cdf(sign * x * w / 2f64.sqrt());
            }
            let p = lp.exp() * h;
            z += p;
            m1 += p * w;
            m2 += p * w * w;
        }
        let mean = m1 / z;
        (mean, m2 / z - mean * mean, z.ln())
    }

    #[test]
    fn linear_gaussian_chain_is_exact() {
        let (g, x) = chain();
        let r = run(&g, 1.0);
        let post = r.gaussian(x);
        assert!((post.mean() - 0.5).abs() < 1e-12);
        assert!((post.precision - 2.0).abs() < 1e-12);
        let expected = Gaussian1D::from_moments(0.0, 2.0).ln_pdf(1.0);
        assert!((r.log_evidence - expected).abs() < 1e-10, "{}", r.log_evidence);
    }

    #[test]
    fn priors_only_graph_returns_priors() {
        let mut g = FactorGraph::new();
        let a = g.add_variable("a", VarKind::Gaussian);
        let b = g.add_variable("b", VarKind::Gamma);
        let prior = Gaussian1D::from_mean_precision(2.0, 4.0);
        g.add_factor(FactorKind::GaussianPrior { var: a, prior }).unwrap();
        let gp = Gamma::new(3.0, 2.0).unwrap();
        g.add_factor(FactorKind::GammaPrior { var: b, prior: gp }).unwrap();
        let r = run(&g, 0.7);
        assert_eq!(r.gaussian(a), prior);
        assert_eq!(r.gamma(b), gp);
        assert!(r.log_evidence.abs() < 1e-12);
        assert!(r.converged);
    }

    #[test]
    fn bpm_matches_quadrature() {
        let data = [(1.0, 0), (0.5, 0), (-0.3, 1), (2.0, 0), (-1.5, 1), (0.2, 1)];
        let (g, w) = tiny_bpm(&data);
        let r = run(&g, 1.0);
        assert!(r.converged);
        let (mean, var, lz) = quadrature(&data);
        let post = r.gaussian(w);
        assert!((post.mean() - mean).abs() < 0.05, "{} vs {mean}", post.mean());
        assert!((post.variance() - var).abs() < 0.05, "{} vs {var}", post.variance());
        assert!((r.log_evidence - lz).abs() < 0.05, "{} vs {lz}", r.log_evidence);
    }

    #[test]
    fn single_instance_evidence_is_normalized() {
        let total: f64 = (0..2)
            .map(|y| {
                let (g, _) = tiny_bpm(&[(0.8, y)]);
                run(&g, 1.0).log_evidence.exp()
            })
            .sum();
        assert!((total - 1.0).abs() < 1e-10, "{total}");
    }

    #[test]
    fn damping_does_not_move_the_fixed_point() {
        let data = [(1.0, 0), (-0.4, 1), (0.7, 1), (1.2, 0)];
        let (g, w) = tiny_bpm(&data);
        let a = run(&g, 1.0).gaussian(w);
        let b = run(&g, 0.5).gaussian(w);
        assert!(a.max_abs_diff(&b) < 1e-6);
    }

    #[test]
    fn marginals_match_message_products() {
        let data = [(1.0, 0), (-0.4, 1), (0.7, 1)];
        let (g, _) = tiny_bpm(&data);
        let r = run(&g, 0.7);
        assert!(r.store.consistency_error() < 1e-8);
    }

    #[test]
    fn softmax_is_rejected() {
        let mut g = FactorGraph::new();
        let a = g.add_variable("a", VarKind::Gaussian);
        let b = g.add_variable("b", VarKind::Gaussian);
        g.add_factor(FactorKind::Softmax {
            scores: vec![a, b],
            target: Discrete::point_mass(2, 0),
            weight: 1.0,
        })
        .unwrap();
        let err = run_ep(&g, &g.default_schedule(), &EpOptions::default()).unwrap_err();
        assert!(matches!(
            err,
            crate::graph::GraphError::UnsupportedFactorForEngine { .. }
        ));
    }
}
