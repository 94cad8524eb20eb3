//! Variational message passing (mean-field coordinate ascent).
//!
//! Every free variable gets its own factor of `q`. Outputs of deterministic
//! factors (`LinearScore`, `Sum`, `ScaledSum`) are not free: their first two
//! moments follow from their parents, and the messages their children send
//! are routed back to those parents. Softmax factors are handled through a
//! quadratic upper bound on log-sum-exp, so each coordinate update maximizes
//! the same bounded ELBO and the trace is non-decreasing.

use crate::dists::{Dirichlet, Discrete, Distribution, Gamma, Gaussian1D};
use crate::special::{ln_gamma, LN_2PI};

use super::ops::SoftmaxBound;
use super::{
    Edge, Engine, FactorGraph, FactorId, FactorKind, GraphError, Observation, Result, Schedule, VarId, VarKind,
};

/// Allowed ELBO decrease before it counts as a bug.
const ELBO_SLACK: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VmpOptions {
    pub max_iters: usize,
    /// Convergence threshold on the relative ELBO change per sweep.
    pub tol: f64,
    /// Return [`GraphError::ElboDecreased`] if the ELBO ever drops.
    pub fail_on_elbo_decrease: bool,
}

impl Default for VmpOptions {
    fn default() -> Self {
        VmpOptions {
            max_iters: 100,
            tol: 1e-6,
            fail_on_elbo_decrease: cfg!(debug_assertions),
        }
    }
}

#[derive(Debug, Clone)]
pub struct VmpResult {
    pub marginals: Vec<Distribution>,
    pub elbo_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl VmpResult {
    pub fn elbo(&self) -> f64 {
        self.elbo_trace.last().copied().unwrap_or(0.0)
    }

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

pub fn run_vmp(graph: &FactorGraph, schedule: &Schedule, options: &VmpOptions) -> Result<VmpResult> {
    graph.check_engine(Engine::Vmp)?;
    schedule.validate(graph)?;
    let mut state = State::new(graph)?;

    let mut order = Vec::new();
    let mut seen = vec![false; graph.variables().len()];
    for edge in &schedule.edges {
        let var = graph.factor(edge.factor).neighbors()[edge.slot];
        if !seen[var.0] && state.is_free(var) {
            seen[var.0] = true;
            order.push(var);
        }
    }

    let mut trace = vec![state.elbo()];
    let mut converged = order.is_empty();
    let mut iterations = 0;
    while !converged && iterations < options.max_iters {
        iterations += 1;
        state.tighten_bounds();
        for &var in &order {
            state.update(var);
        }
        let current = state.elbo();
        let previous = *trace.last().expect("trace starts non-empty");
        trace.push(current);
        if current < previous - ELBO_SLACK * (1.0 + previous.abs()) && options.fail_on_elbo_decrease {
            return Err(GraphError::ElboDecreased {
                previous,
                current,
                iteration: iterations,
            });
        }
        converged = (current - previous).abs() <= options.tol * (1.0 + current.abs());
    }

    let marginals = (0..graph.variables().len()).map(|v| state.marginal(VarId(v))).collect();
    Ok(VmpResult {
        marginals,
        elbo_trace: trace,
        iterations,
        converged,
    })
}

struct State<'g> {
    graph: &'g FactorGraph,
    adjacency: Vec<Vec<Edge>>,
    q: Vec<Distribution>,
    /// Producing factor of each deterministic output.
    producer: Vec<Option<FactorId>>,
    /// `(mean, variance)` of every Gaussian variable.
    moments: Vec<(f64, f64)>,
    /// Softmax bounds per factor: one for `Softmax`, one per case for `Gate`.
    bounds: Vec<Vec<SoftmaxBound>>,
}

impl<'g> State<'g> {
    fn new(graph: &'g FactorGraph) -> Result<State<'g>> {
        let n = graph.variables().len();
        let mut producer = vec![None; n];
        for (f, kind) in graph.factors().iter().enumerate() {
            if !kind.is_deterministic() {
                continue;
            }
            let neighbors = kind.neighbors();
            let output = neighbors[0];
            let inputs_observed = neighbors[1..].iter().all(|v| graph.observation(*v).is_some());
            if graph.observation(output).is_some() {
                if inputs_observed {
                    continue;
                }
                return Err(GraphError::InvalidFactor(format!(
                    "{}: observed output with free inputs is not supported by VMP",
                    kind.name()
                )));
            }
            producer[output.0] = Some(FactorId(f));
        }

        let q = graph
            .variables()
            .iter()
            .enumerate()
            .map(|(v, variable)| {
                if let Some(init) = graph.initial_marginals().get(&VarId(v)) {
                    return init.clone();
                }
                match variable.kind {
                    VarKind::Gaussian => Distribution::Gaussian(Gaussian1D::from_mean_precision(0.0, 1.0)),
                    VarKind::Gamma => Distribution::Gamma(Gamma { shape: 1.0, rate: 1.0 }),
                    VarKind::Dirichlet(k) => Distribution::Dirichlet(Dirichlet::symmetric(k, 1.0)),
                    VarKind::Discrete(k) => match graph.observation(VarId(v)) {
                        Some(Observation::Clamped(d)) => Distribution::Discrete(d.clone()),
                        _ => Distribution::Discrete(Discrete::uniform(k)),
                    },
                }
            })
            .collect();

        let bounds = graph
            .factors()
            .iter()
            .map(|kind| match kind {
                FactorKind::Softmax { scores, .. } => vec![SoftmaxBound::new(scores.len())],
                FactorKind::Gate { cases, .. } => cases
                    .iter()
                    .map(|c| match c {
                        FactorKind::Softmax { scores, .. } => SoftmaxBound::new(scores.len()),
                        _ => SoftmaxBound::new(0),
                    })
                    .collect(),
                _ => Vec::new(),
            })
            .collect();

        let mut state = State {
            graph,
            adjacency: graph.adjacency(),
            q,
            producer,
            moments: vec![(0.0, 0.0); n],
            bounds,
        };
        let mut done = vec![false; n];
        for v in 0..n {
            state.settle(VarId(v), &mut done);
        }
        Ok(state)
    }

    fn is_free(&self, var: VarId) -> bool {
        self.graph.observation(var).is_none() && self.producer[var.0].is_none()
    }

    /// Fills in `moments[var]`, settling derived parents first.
    fn settle(&mut self, var: VarId, done: &mut [bool]) {
        if done[var.0] {
            return;
        }
        done[var.0] = true;
        if self.graph.variable(var).kind != VarKind::Gaussian {
            return;
        }
        if let Some(f) = self.producer[var.0] {
            for parent in self.graph.factor(f).neighbors().into_iter().skip(1) {
                self.settle(parent, done);
            }
        }
        self.refresh(var);
    }

    fn refresh(&mut self, var: VarId) {
        self.moments[var.0] = if let Some(x) = self.graph.observed_value(var) {
            (x, 0.0)
        } else if let Some(f) = self.producer[var.0] {
            self.derived_moments(f)
        } else {
            match &self.q[var.0] {
                Distribution::Gaussian(g) => (g.mean(), g.variance()),
                _ => unreachable!(),
            }
        };
    }

    fn derived_moments(&self, factor: FactorId) -> (f64, f64) {
        let m = |v: &VarId| self.moments[v.0];
        match self.graph.factor(factor) {
            FactorKind::LinearScore {
                inputs, coefficients, ..
            } => inputs.iter().zip(coefficients).fold((0.0, 0.0), |(a, b), (v, c)| {
                let (mu, var) = m(v);
                (a + c * mu, b + c * c * var)
            }),
            FactorKind::Sum { inputs, .. } => inputs.iter().fold((0.0, 0.0), |(a, b), v| {
                let (mu, var) = m(v);
                (a + mu, b + var)
            }),
            FactorKind::ScaledSum { scales, inputs, .. } => {
                scales.iter().zip(inputs).fold((0.0, 0.0), |(a, b), (s, x)| {
                    let ((ms, vs), (mx, vx)) = (m(s), m(x));
                    let mean = ms * mx;
                    (a + mean, b + (ms * ms + vs) * (mx * mx + vx) - mean * mean)
                })
            }
            _ => unreachable!("not deterministic"),
        }
    }

    /// Refreshes every derived variable downstream of `var`.
    fn propagate(&mut self, var: VarId) {
        for i in 0..self.adjacency[var.0].len() {
            let edge = self.adjacency[var.0][i];
            let kind = self.graph.factor(edge.factor);
            if !kind.is_deterministic() || edge.slot == 0 {
                continue;
            }
            let output = kind.neighbors()[0];
            if self.producer[output.0] == Some(edge.factor) {
                self.refresh(output);
                self.propagate(output);
            }
        }
    }

    fn gamma_q(&self, var: VarId) -> Gamma {
        match &self.q[var.0] {
            Distribution::Gamma(g) => *g,
            _ => unreachable!(),
        }
    }

    fn dirichlet_q(&self, var: VarId) -> &Dirichlet {
        match &self.q[var.0] {
            Distribution::Dirichlet(d) => d,
            _ => unreachable!(),
        }
    }

    fn discrete_q(&self, var: VarId) -> &[f64] {
        match &self.q[var.0] {
            Distribution::Discrete(d) => d.probabilities(),
            _ => unreachable!(),
        }
    }

    fn second_moment(&self, var: VarId) -> f64 {
        let (m, v) = self.moments[var.0];
        m * m + v
    }

    fn score_moments(&self, scores: &[VarId]) -> (Vec<f64>, Vec<f64>) {
        scores.iter().map(|v| self.moments[v.0]).unzip()
    }

    /// Gaussian message `(eta, tau)` from the factor on `edge` to its
    /// Gaussian neighbor.
    fn gaussian_message(&self, edge: Edge) -> (f64, f64) {
        let kind = self.graph.factor(edge.factor);
        let slot = edge.slot;
        match kind {
            FactorKind::GaussianPrior { prior, .. } => (prior.mean_times_precision, prior.precision),
            FactorKind::GaussianRandomPrecision { mean, precisions, .. } => {
                let p: f64 = precisions.iter().map(|v| self.gamma_q(*v).mean()).product();
                (mean * p, p)
            }
            FactorKind::GaussianNoise {
                input,
                output,
                precision,
            } => {
                let other = if slot == 0 { output } else { input };
                (precision * self.moments[other.0].0, *precision)
            }
            FactorKind::LinearScore {
                output,
                inputs,
                coefficients,
            } => {
                let (eta, tau) = self.child_message(*output);
                let c = coefficients[slot - 1];
                let rest = self.moments[output.0].0 - c * self.moments[inputs[slot - 1].0].0;
                (c * (eta - tau * rest), tau * c * c)
            }
            FactorKind::Sum { output, inputs } => {
                let (eta, tau) = self.child_message(*output);
                let rest = self.moments[output.0].0 - self.moments[inputs[slot - 1].0].0;
                (eta - tau * rest, tau)
            }
            FactorKind::ScaledSum { output, scales, inputs } => {
                let (eta, tau) = self.child_message(*output);
                let k = (slot - 1) % scales.len();
                let (ms, mx) = (self.moments[scales[k].0].0, self.moments[inputs[k].0].0);
                let rest = self.moments[output.0].0 - ms * mx;
                let other = if slot <= scales.len() { inputs[k] } else { scales[k] };
                let m = self.moments[other.0].0;
                (m * (eta - tau * rest), tau * self.second_moment(other))
            }
            FactorKind::Softmax { target, weight, .. } => {
                let g = self.bounds[edge.factor.0][0].messages(target.probabilities(), *weight)[slot];
                (g.mean_times_precision, g.precision)
            }
            FactorKind::Gate { selector, cases } => {
                let var = kind.neighbors()[slot];
                let r = self.discrete_q(*selector);
                let mut acc = (0.0, 0.0);
                for (k, case) in cases.iter().enumerate() {
                    if let FactorKind::Softmax { scores, target, weight } = case {
                        if let Some(pos) = scores.iter().position(|s| *s == var) {
                            let g = self.bounds[edge.factor.0][k].messages(target.probabilities(), *weight)[pos];
                            acc.0 += r[k] * g.mean_times_precision;
                            acc.1 += r[k] * g.precision;
                        }
                    }
                }
                acc
            }
            _ => unreachable!("no gaussian message from {}", kind.name()),
        }
    }

    /// Sum of the messages into a derived variable from its consumers.
    fn child_message(&self, var: VarId) -> (f64, f64) {
        let producer = self.producer[var.0];
        self.adjacency[var.0]
            .iter()
            .filter(|e| Some(e.factor) != producer)
            .map(|e| self.gaussian_message(*e))
            .fold((0.0, 0.0), |a, m| (a.0 + m.0, a.1 + m.1))
    }

    fn update(&mut self, var: VarId) {
        let edges = &self.adjacency[var.0];
        match self.graph.variable(var).kind {
            VarKind::Gaussian => {
                let (eta, tau) = edges
                    .iter()
                    .map(|e| self.gaussian_message(*e))
                    .fold((0.0, 0.0), |a, m| (a.0 + m.0, a.1 + m.1));
                if tau > 0.0 && tau.is_finite() && eta.is_finite() {
                    self.q[var.0] = Distribution::Gaussian(Gaussian1D::from_natural(eta, tau));
                    self.refresh(var);
                    self.propagate(var);
                }
            }
            VarKind::Gamma => {
                let mut acc = Gamma::uniform();
                for e in edges {
                    acc = acc.multiply(&self.gamma_message(*e));
                }
                if acc.is_proper() {
                    self.q[var.0] = Distribution::Gamma(acc);
                }
            }
            VarKind::Dirichlet(k) => {
                let mut acc = Dirichlet::uniform_message(k);
                for e in edges {
                    match self.graph.factor(e.factor) {
                        FactorKind::DirichletPrior { prior, .. } => acc = acc.multiply(prior),
                        FactorKind::Categorical { selector, .. } => {
                            let r = self.discrete_q(*selector);
                            for (a, p) in acc.pseudo_counts.iter_mut().zip(r) {
                                *a += p;
                            }
                        }
                        _ => {}
                    }
                }
                if acc.is_proper() {
                    self.q[var.0] = Distribution::Dirichlet(acc);
                }
            }
            VarKind::Discrete(k) => {
                let mut logw = vec![0.0; k];
                for e in edges {
                    for (l, x) in logw.iter_mut().zip(self.discrete_log_message(*e)) {
                        *l += x;
                    }
                }
                self.q[var.0] = Distribution::Discrete(Discrete::from_log_weights(&logw));
            }
        }
    }

    fn gamma_message(&self, edge: Edge) -> Gamma {
        match self.graph.factor(edge.factor) {
            FactorKind::GammaPrior { prior, .. } => *prior,
            FactorKind::GaussianRandomPrecision { var, mean, precisions } => {
                let (m, v) = self.moments[var.0];
                let sq = (m - mean) * (m - mean) + v;
                let others: f64 = precisions
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j + 1 != edge.slot)
                    .map(|(_, p)| self.gamma_q(*p).mean())
                    .product();
                Gamma {
                    shape: 1.5,
                    rate: 0.5 * sq * others,
                }
            }
            FactorKind::GammaRandomRate { var, shape, rate } => {
                if edge.slot == 0 {
                    Gamma {
                        shape: *shape,
                        rate: self.gamma_q(*rate).mean(),
                    }
                } else {
                    Gamma {
                        shape: shape + 1.0,
                        rate: self.gamma_q(*var).mean(),
                    }
                }
            }
            other => unreachable!("no gamma message from {}", other.name()),
        }
    }

    fn discrete_log_message(&self, edge: Edge) -> Vec<f64> {
        match self.graph.factor(edge.factor) {
            FactorKind::DiscretePrior { prior, .. } => prior.probabilities().iter().map(|p| p.ln()).collect(),
            FactorKind::Categorical { probabilities, .. } => self.dirichlet_q(*probabilities).mean_log(),
            FactorKind::Gate { cases, .. } => (0..cases.len())
                .map(|k| self.case_expected_log(edge.factor, k, &cases[k]))
                .collect(),
            other => unreachable!("no discrete message from {}", other.name()),
        }
    }

    fn case_expected_log(&self, factor: FactorId, k: usize, case: &FactorKind) -> f64 {
        match case {
            FactorKind::Softmax { scores, target, weight } => {
                let (means, vars) = self.score_moments(scores);
                self.bounds[factor.0][k].expected_log_lik(target.probabilities(), *weight, &means, &vars)
            }
            other => unreachable!("VMP gates only hold softmax cases, got {}", other.name()),
        }
    }

    fn tighten_bounds(&mut self) {
        for f in 0..self.graph.factors().len() {
            match self.graph.factor(FactorId(f)) {
                FactorKind::Softmax { scores, .. } => {
                    let (means, vars) = self.score_moments(scores);
                    self.bounds[f][0].tighten(&means, &vars);
                }
                FactorKind::Gate { cases, .. } => {
                    for (k, case) in cases.iter().enumerate() {
                        if let FactorKind::Softmax { scores, .. } = case {
                            let (means, vars) = self.score_moments(scores);
                            self.bounds[f][k].tighten(&means, &vars);
                        }
                    }
                }
                _ => {}
            }
        }
    }

    fn expected_log_factor(&self, factor: FactorId) -> f64 {
        match self.graph.factor(factor) {
            FactorKind::GaussianPrior { var, prior } => {
                let (m, v) = self.moments[var.0];
                let mu = prior.mean();
                0.5 * (prior.precision.ln() - LN_2PI) - 0.5 * prior.precision * ((m - mu) * (m - mu) + v)
            }
            FactorKind::GaussianRandomPrecision { var, mean, precisions } => {
                let (m, v) = self.moments[var.0];
                let (mut p, mut lnp) = (1.0, 0.0);
                for g in precisions.iter().map(|x| self.gamma_q(*x)) {
                    p *= g.mean();
                    lnp += g.mean_log();
                }
                0.5 * (lnp - LN_2PI) - 0.5 * p * ((m - mean) * (m - mean) + v)
            }
            FactorKind::GammaPrior { var, prior } => {
                let q = self.gamma_q(*var);
                prior.expected_ln_pdf(q.mean(), q.mean_log())
            }
            FactorKind::GammaRandomRate { var, shape, rate } => {
                let (x, b) = (self.gamma_q(*var), self.gamma_q(*rate));
                shape * b.mean_log() - ln_gamma(*shape) + (shape - 1.0) * x.mean_log() - b.mean() * x.mean()
            }
            FactorKind::DirichletPrior { var, prior } => prior.expected_ln_pdf(&self.dirichlet_q(*var).mean_log()),
            FactorKind::DiscretePrior { var, prior } => self
                .discrete_q(*var)
                .iter()
                .zip(prior.probabilities())
                .map(|(q, p)| if *q > 0.0 { q * p.ln() } else { 0.0 })
                .sum(),
            FactorKind::Categorical {
                selector,
                probabilities,
            } => self
                .discrete_q(*selector)
                .iter()
                .zip(self.dirichlet_q(*probabilities).mean_log())
                .map(|(q, l)| q * l)
                .sum(),
            FactorKind::GaussianNoise {
                input,
                output,
                precision,
            } => {
                let ((mx, vx), (my, vy)) = (self.moments[input.0], self.moments[output.0]);
                0.5 * (precision.ln() - LN_2PI) - 0.5 * precision * ((my - mx) * (my - mx) + vx + vy)
            }
            FactorKind::LinearScore { .. } | FactorKind::Sum { .. } | FactorKind::ScaledSum { .. } => 0.0,
            FactorKind::Softmax { scores, target, weight } => {
                let (means, vars) = self.score_moments(scores);
                self.bounds[factor.0][0].expected_log_lik(target.probabilities(), *weight, &means, &vars)
            }
            FactorKind::Gate { selector, cases } => {
                let r = self.discrete_q(*selector);
                cases
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| r[*k] > 0.0)
                    .map(|(k, c)| r[k] * self.case_expected_log(factor, k, c))
                    .sum()
            }
            FactorKind::ArgMax { .. } => unreachable!("rejected by check_engine"),
        }
    }

    fn elbo(&self) -> f64 {
        let mut total: f64 = (0..self.graph.factors().len())
            .map(|f| self.expected_log_factor(FactorId(f)))
            .sum();
        for v in 0..self.q.len() {
            let var = VarId(v);
            if !self.is_free(var) || self.adjacency[v].is_empty() {
                continue;
            }
            total += match &self.q[v] {
                Distribution::Gaussian(g) => g.entropy(),
                Distribution::Gamma(g) => g.entropy(),
                Distribution::Dirichlet(d) => d.entropy(),
                Distribution::Discrete(d) => d.entropy(),
            };
        }
        total
    }

    fn marginal(&self, var: VarId) -> Distribution {
        if self.graph.variable(var).kind == VarKind::Gaussian && self.graph.observation(var).is_none() {
            let (m, v) = self.moments[var.0];
            if v > 0.0 {
                return Distribution::Gaussian(Gaussian1D::from_moments(m, v));
            }
        }
        match self.graph.observation(var) {
            Some(_) if self.graph.variable(var).kind == VarKind::Gaussian => {
                Distribution::Gaussian(Gaussian1D::uniform())
            }
            _ => self.q[var.0].clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(g: &FactorGraph) -> VmpResult {
        let opts = VmpOptions {
            max_iters: 500,
            tol: 1e-12,
            fail_on_elbo_decrease: true,
        };
        run_vmp(g, &g.default_schedule(), &opts).unwrap()
    }

    #[test]
    fn conjugate_mean_is_exact() {
        let mut g = FactorGraph::new();
        let mu = g.add_variable("mu", VarKind::Gaussian);
        g.add_factor(FactorKind::GaussianPrior {
            var: mu,
            prior: Gaussian1D::from_mean_precision(0.0, 1.0),
        })
        .unwrap();
        let xs = [0.5, 1.5, -0.2, 2.0, 1.1];
        for (i, x) in xs.iter().enumerate() {
            let y = g.add_variable(format!("y{i}"), VarKind::Gaussian);
            g.observe(y, *x).unwrap();
            g.add_factor(FactorKind::GaussianNoise {
                input: mu,
                output: y,
                precision: 2.0,
            })
            .unwrap();
        }
        let r = run(&g);
        let post = r.gaussian(mu);
        let precision = 1.0 + 2.0 * xs.len() as f64;
        let mean = 2.0 * xs.iter().sum::<f64>() / precision;
        assert!((post.precision - precision).abs() < 1e-8);
        assert!((post.mean() - mean).abs() < 1e-8);
    }

    #[test]
    fn priors_only_elbo_is_zero() {
        let mut g = FactorGraph::new();
        let a = g.add_variable("a", VarKind::Gaussian);
        let b = g.add_variable("b", VarKind::Gamma);
        let c = g.add_variable("c", VarKind::Dirichlet(3));
        g.add_factor(FactorKind::GaussianPrior {
            var: a,
            prior: Gaussian1D::from_mean_precision(1.0, 3.0),
        })
        .unwrap();
        g.add_factor(FactorKind::GammaPrior {
            var: b,
            prior: Gamma::new(2.0, 3.0).unwrap(),
        })
        .unwrap();
        g.add_factor(FactorKind::DirichletPrior {
            var: c,
            prior: Dirichlet::new(vec![1.0, 2.0, 3.0]).unwrap(),
        })
        .unwrap();
        let r = run(&g);
        assert!(r.elbo().abs() < 1e-10, "{}", r.elbo());
    }

    /// Four separable points, one weight per class, class 2 pinned at zero.
    fn softmax_graph() -> (FactorGraph, Vec<(f64, usize)>) {
        let data = vec![(2.0, 0), (1.5, 0), (-1.0, 1), (-2.5, 1)];
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
            for (input, output) in [(s, t0), (zero, t1)] {
                g.add_factor(FactorKind::GaussianNoise {
                    input,
                    output,
                    precision: 1.0,
                })
                .unwrap();
            }
            g.add_factor(FactorKind::Softmax {
                scores: vec![t0, t1],
                target: Discrete::point_mass(2, *y),
                weight: 1.0,
            })
            .unwrap();
        }
        (g, data)
    }

    #[test]
    fn softmax_classifier_separates_points() {
        let (g, data) = softmax_graph();
        let r = run(&g);
        let w = r.gaussian(VarId(0)).mean();
        assert!(w > 0.0);
        for (x, y) in data {
            let p0 = 1.0 / (1.0 + (-w * x).exp());
            let p = if y == 0 { p0 } else { 1.0 - p0 };
            assert!(p > 0.5, "x={x} p={p}");
        }
    }

    #[test]
    fn elbo_never_decreases() {
        let (g, _) = softmax_graph();
        let r = run(&g);
        for pair in r.elbo_trace.windows(2) {
            assert!(pair[1] >= pair[0] - 1e-8 * (1.0 + pair[0].abs()), "{pair:?}");
        }
        assert!(r.converged);
    }

    #[test]
    fn gate_selector_learns_the_better_case() {
        // two cases over the same scores; only case 0 agrees with the data
        let mut g = FactorGraph::new();
        let z = g.add_variable("z", VarKind::Discrete(2));
        let a = g.add_variable("a", VarKind::Gaussian);
        let b = g.add_variable("b", VarKind::Gaussian);
        for v in [a, b] {
            g.add_factor(FactorKind::GaussianPrior {
                var: v,
                prior: Gaussian1D::from_mean_precision(0.0, 1.0),
            })
            .unwrap();
        }
        g.add_factor(FactorKind::DiscretePrior {
            var: z,
            prior: Discrete::uniform(2),
        })
        .unwrap();
        for _ in 0..5 {
            g.add_factor(FactorKind::Softmax {
                scores: vec![a, b],
                target: Discrete::point_mass(2, 0),
                weight: 1.0,
            })
            .unwrap();
        }
        let case = |y| FactorKind::Softmax {
            scores: vec![a, b],
            target: Discrete::point_mass(2, y),
            weight: 1.0,
        };
        g.add_factor(FactorKind::Gate {
            selector: z,
            cases: vec![case(0), case(1)],
        })
        .unwrap();
        let r = run(&g);
        assert!(r.discrete(z).probabilities()[0] > 0.5);
    }

    #[test]
    fn argmax_is_rejected() {
        let mut g = FactorGraph::new();
        let a = g.add_variable("a", VarKind::Gaussian);
        let b = g.add_variable("b", VarKind::Gaussian);
        g.add_factor(FactorKind::ArgMax {
            scores: vec![a, b],
            class: 0,
            weight: 1.0,
        })
        .unwrap();
        assert!(run_vmp(&g, &g.default_schedule(), &VmpOptions::default()).is_err());
    }
}
