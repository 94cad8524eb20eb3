//! Factor graphs over scalar Gaussian, Gamma, Dirichlet and Discrete
//! variables, with expectation propagation ([`run_ep`]) and variational
//! message passing ([`run_vmp`]) engines.
//!
//! A graph is bipartite: factors hold ordered neighbor lists and variables
//! only know their kind. Observed Gaussian variables are substituted as
//! constants by the factors that touch them; a Discrete variable may instead
//! be clamped to a fixed distribution.

mod ep;
mod ops;
mod store;
mod vmp;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dists::{Dirichlet, Discrete, DistError, Distribution, Gamma, Gaussian1D};

pub use ep::{run_ep, EpOptions, EpResult};
pub use ops::{
    argmax_factor_ep_message, argmax_probabilities, argmax_tilted, gate_messages, gate_messages_with_output, softmax,
    softmax_factor_vmp_update, ArgmaxTilted, SoftmaxBound,
};
pub use store::MessageStore;
pub use vmp::{run_vmp, VmpOptions, VmpResult};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("factor {factor} ({kind}) is not supported by the {engine} engine")]
    UnsupportedFactorForEngine {
        factor: usize,
        kind: &'static str,
        engine: &'static str,
    },
    #[error("invalid factor: {0}")]
    InvalidFactor(String),
    #[error("schedule does not cover edge {0:?}")]
    IncompleteSchedule(Edge),
    #[error("ELBO decreased from {previous} to {current} at iteration {iteration}")]
    ElboDecreased {
        previous: f64,
        current: f64,
        iteration: usize,
    },
    #[error(transparent)]
    Dist(#[from] DistError),
}

pub type Result<T> = std::result::Result<T, GraphError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VarId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FactorId(pub usize);

/// One factor-to-variable connection: neighbor `slot` of `factor`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub factor: FactorId,
    pub slot: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarKind {
    Gaussian,
    Gamma,
    Dirichlet(usize),
    Discrete(usize),
}

impl VarKind {
    pub fn uniform(&self) -> Distribution {
        match *self {
            VarKind::Gaussian => Distribution::Gaussian(Gaussian1D::uniform()),
            VarKind::Gamma => Distribution::Gamma(Gamma::uniform()),
            VarKind::Dirichlet(k) => Distribution::Dirichlet(Dirichlet::uniform_message(k)),
            VarKind::Discrete(k) => Distribution::Discrete(Discrete::uniform(k)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    pub kind: VarKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Observation {
    /// Gaussian variable fixed at a value.
    Value(f64),
    /// Discrete variable clamped to a distribution; factors see it as a
    /// fixed mixture weight rather than a belief to update.
    Clamped(Discrete),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FactorKind {
    GaussianPrior {
        var: VarId,
        prior: Gaussian1D,
    },
    /// `var ~ N(mean, prod(precisions))` with Gamma-distributed precisions.
    GaussianRandomPrecision {
        var: VarId,
        mean: f64,
        precisions: Vec<VarId>,
    },
    GammaPrior {
        var: VarId,
        prior: Gamma,
    },
    /// `var ~ Gamma(shape, rate)` with a Gamma-distributed rate.
    GammaRandomRate {
        var: VarId,
        shape: f64,
        rate: VarId,
    },
    DirichletPrior {
        var: VarId,
        prior: Dirichlet,
    },
    DiscretePrior {
        var: VarId,
        prior: Discrete,
    },
    /// `selector ~ Categorical(probabilities)`.
    Categorical {
        selector: VarId,
        probabilities: VarId,
    },
    /// `output = sum_d coefficients[d] * inputs[d]`.
    LinearScore {
        output: VarId,
        inputs: Vec<VarId>,
        coefficients: Vec<f64>,
    },
    /// `output = input + noise`, noise of fixed precision.
    GaussianNoise {
        input: VarId,
        output: VarId,
        precision: f64,
    },
    Sum {
        output: VarId,
        inputs: Vec<VarId>,
    },
    /// `output = sum_k scales[k] * inputs[k]`.
    ScaledSum {
        output: VarId,
        scales: Vec<VarId>,
        inputs: Vec<VarId>,
    },
    /// Observation that `scores[class]` is the largest score. `weight`
    /// raises the factor's messages to a fractional power (soft targets).
    ArgMax {
        scores: Vec<VarId>,
        class: usize,
        weight: f64,
    },
    Softmax {
        scores: Vec<VarId>,
        target: Discrete,
        weight: f64,
    },
    /// Selects one of `cases` (each an `ArgMax` or `Softmax` block) by the
    /// value of a Discrete `selector`.
    Gate {
        selector: VarId,
        cases: Vec<FactorKind>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    Ep,
    Vmp,
}

impl FactorKind {
    pub fn name(&self) -> &'static str {
        match self {
            FactorKind::GaussianPrior { .. } => "GaussianPrior",
            FactorKind::GaussianRandomPrecision { .. } => "GaussianRandomPrecision",
            FactorKind::GammaPrior { .. } => "GammaPrior",
            FactorKind::GammaRandomRate { .. } => "GammaRandomRate",
            FactorKind::DirichletPrior { .. } => "DirichletPrior",
            FactorKind::DiscretePrior { .. } => "DiscretePrior",
            FactorKind::Categorical { .. } => "Categorical",
            FactorKind::LinearScore { .. } => "LinearScore",
            FactorKind::GaussianNoise { .. } => "GaussianNoise",
            FactorKind::Sum { .. } => "Sum",
            FactorKind::ScaledSum { .. } => "ScaledSum",
            FactorKind::ArgMax { .. } => "ArgMax",
            FactorKind::Softmax { .. } => "Softmax",
            FactorKind::Gate { .. } => "Gate",
        }
    }

    /// Ordered neighbor list; slot `i` of the factor is `neighbors()[i]`.
    pub fn neighbors(&self) -> Vec<VarId> {
        match self {
            FactorKind::GaussianPrior { var, .. }
            | FactorKind::GammaPrior { var, .. }
            | FactorKind::DirichletPrior { var, .. }
            | FactorKind::DiscretePrior { var, .. } => vec![*var],
            FactorKind::GaussianRandomPrecision { var, precisions, .. } => {
                std::iter::once(*var).chain(precisions.iter().copied()).collect()
            }
            FactorKind::GammaRandomRate { var, rate, .. } => vec![*var, *rate],
            FactorKind::Categorical {
                selector,
                probabilities,
            } => vec![*selector, *probabilities],
            FactorKind::LinearScore { output, inputs, .. } | FactorKind::Sum { output, inputs } => {
                std::iter::once(*output).chain(inputs.iter().copied()).collect()
            }
            FactorKind::GaussianNoise { input, output, .. } => vec![*input, *output],
            FactorKind::ScaledSum { output, scales, inputs } => std::iter::once(*output)
                .chain(scales.iter().copied())
                .chain(inputs.iter().copied())
                .collect(),
            FactorKind::ArgMax { scores, .. } | FactorKind::Softmax { scores, .. } => scores.clone(),
            FactorKind::Gate { selector, cases } => {
                let mut out = vec![*selector];
                for case in cases {
                    for v in case.neighbors() {
                        if !out.contains(&v) {
                            out.push(v);
                        }
                    }
                }
                out
            }
        }
    }

    pub fn supports(&self, engine: Engine) -> bool {
        match self {
            FactorKind::ArgMax { .. } => engine == Engine::Ep,
            FactorKind::Softmax { .. } => engine == Engine::Vmp,
            FactorKind::Gate { cases, .. } => cases.iter().all(|c| c.supports(engine)),
            _ => true,
        }
    }

    /// Deterministic factors define their output as a function of inputs.
    pub fn is_deterministic(&self) -> bool {
        matches!(
            self,
            FactorKind::LinearScore { .. } | FactorKind::Sum { .. } | FactorKind::ScaledSum { .. }
        )
    }

    fn schedule_rank(&self) -> u8 {
        match self {
            FactorKind::GaussianPrior { .. }
            | FactorKind::GammaPrior { .. }
            | FactorKind::DirichletPrior { .. }
            | FactorKind::DiscretePrior { .. } => 0,
            FactorKind::ArgMax { .. }
            | FactorKind::Softmax { .. }
            | FactorKind::Gate { .. }
            | FactorKind::Categorical { .. } => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FactorGraph {
    variables: Vec<Variable>,
    factors: Vec<FactorKind>,
    observed: BTreeMap<VarId, Observation>,
    initial_messages: BTreeMap<Edge, Distribution>,
    initial_marginals: BTreeMap<VarId, Distribution>,
}

impl FactorGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_variable(&mut self, name: impl Into<String>, kind: VarKind) -> VarId {
        self.variables.push(Variable {
            name: name.into(),
            kind,
        });
        VarId(self.variables.len() - 1)
    }

    pub fn add_factor(&mut self, kind: FactorKind) -> Result<FactorId> {
        self.validate_factor(&kind)?;
        self.factors.push(kind);
        Ok(FactorId(self.factors.len() - 1))
    }

    pub fn observe(&mut self, var: VarId, value: f64) -> Result<()> {
        if self.variables[var.0].kind != VarKind::Gaussian {
            return Err(GraphError::InvalidFactor(format!(
                "only Gaussian variables take point observations ({})",
                self.variables[var.0].name
            )));
        }
        self.observed.insert(var, Observation::Value(value));
        Ok(())
    }

    pub fn clamp(&mut self, var: VarId, dist: Discrete) -> Result<()> {
        match self.variables[var.0].kind {
            VarKind::Discrete(k) if k == dist.dim() => {
                self.observed.insert(var, Observation::Clamped(dist));
                Ok(())
            }
            _ => Err(GraphError::InvalidFactor(format!(
                "cannot clamp {} to a {}-way distribution",
                self.variables[var.0].name,
                dist.dim()
            ))),
        }
    }

    /// Seeds the message on `edge` before the first EP sweep.
    pub fn set_initial_message(&mut self, edge: Edge, message: Distribution) {
        self.initial_messages.insert(edge, message);
    }

    /// Seeds the variational marginal of `var` before the first VMP sweep.
    pub fn set_initial_marginal(&mut self, var: VarId, marginal: Distribution) {
        self.initial_marginals.insert(var, marginal);
    }

    pub fn variables(&self) -> &[Variable] {
        &self.variables
    }

    pub fn variable(&self, var: VarId) -> &Variable {
        &self.variables[var.0]
    }

    pub fn factors(&self) -> &[FactorKind] {
        &self.factors
    }

    pub fn factor(&self, id: FactorId) -> &FactorKind {
        &self.factors[id.0]
    }

    pub fn observed(&self) -> &BTreeMap<VarId, Observation> {
        &self.observed
    }

    pub fn observation(&self, var: VarId) -> Option<&Observation> {
        self.observed.get(&var)
    }

    pub fn observed_value(&self, var: VarId) -> Option<f64> {
        match self.observed.get(&var) {
            Some(Observation::Value(v)) => Some(*v),
            _ => None,
        }
    }

    pub(crate) fn initial_messages(&self) -> &BTreeMap<Edge, Distribution> {
        &self.initial_messages
    }

    pub(crate) fn initial_marginals(&self) -> &BTreeMap<VarId, Distribution> {
        &self.initial_marginals
    }

    pub fn edges(&self) -> impl Iterator<Item = Edge> + '_ {
        self.factors.iter().enumerate().flat_map(|(f, kind)| {
            (0..kind.neighbors().len()).map(move |slot| Edge {
                factor: FactorId(f),
                slot,
            })
        })
    }

    /// Edges incident to each variable, indexed by variable.
    pub fn adjacency(&self) -> Vec<Vec<Edge>> {
        let mut adj = vec![Vec::new(); self.variables.len()];
        for (f, kind) in self.factors.iter().enumerate() {
            for (slot, v) in kind.neighbors().into_iter().enumerate() {
                adj[v.0].push(Edge {
                    factor: FactorId(f),
                    slot,
                });
            }
        }
        adj
    }

    pub fn check_engine(&self, engine: Engine) -> Result<()> {
        for (i, f) in self.factors.iter().enumerate() {
            if !f.supports(engine) {
                return Err(GraphError::UnsupportedFactorForEngine {
                    factor: i,
                    kind: f.name(),
                    engine: match engine {
                        Engine::Ep => "EP",
                        Engine::Vmp => "VMP",
                    },
                });
            }
        }
        Ok(())
    }

    /// Priors, then likelihood factors in insertion (data) order, then link
    /// factors; followed by the non-prior factors in reverse.
    pub fn default_schedule(&self) -> Schedule {
        let mut order: Vec<usize> = (0..self.factors.len()).collect();
        order.sort_by_key(|&f| self.factors[f].schedule_rank());
        let backward: Vec<usize> = order
            .iter()
            .rev()
            .copied()
            .filter(|&f| self.factors[f].schedule_rank() > 0)
            .collect();
        let mut edges = Vec::new();
        for f in order.into_iter().chain(backward) {
            for slot in 0..self.factors[f].neighbors().len() {
                edges.push(Edge {
                    factor: FactorId(f),
                    slot,
                });
            }
        }
        Schedule { edges }
    }

    fn validate_factor(&self, kind: &FactorKind) -> Result<()> {
        let bad = |msg: String| Err(GraphError::InvalidFactor(format!("{}: {msg}", kind.name())));
        for v in kind.neighbors() {
            if v.0 >= self.variables.len() {
                return bad(format!("unknown variable {}", v.0));
            }
        }
        let kind_of = |v: &VarId| self.variables[v.0].kind;
        let all_gaussian = |vs: &[VarId]| vs.iter().all(|v| kind_of(v) == VarKind::Gaussian);
        match kind {
            FactorKind::GaussianPrior { var, prior } => {
                if kind_of(var) != VarKind::Gaussian || !prior.is_proper() {
                    return bad("needs a Gaussian variable and a proper prior".into());
                }
            }
            FactorKind::GaussianRandomPrecision { var, precisions, .. } => {
                if kind_of(var) != VarKind::Gaussian
                    || precisions.is_empty()
                    || precisions.iter().any(|p| kind_of(p) != VarKind::Gamma)
                {
                    return bad("needs a Gaussian variable and Gamma precisions".into());
                }
            }
            FactorKind::GammaPrior { var, prior } => {
                if kind_of(var) != VarKind::Gamma || !prior.is_proper() {
                    return bad("needs a Gamma variable and a proper prior".into());
                }
            }
            FactorKind::GammaRandomRate { var, shape, rate } => {
                if kind_of(var) != VarKind::Gamma || kind_of(rate) != VarKind::Gamma || *shape <= 0.0 {
                    return bad("needs Gamma variables and positive shape".into());
                }
            }
            FactorKind::DirichletPrior { var, prior } => {
                if kind_of(var) != VarKind::Dirichlet(prior.dim()) || !prior.is_proper() {
                    return bad("dimension or kind mismatch".into());
                }
            }
            FactorKind::DiscretePrior { var, prior } => {
                if kind_of(var) != VarKind::Discrete(prior.dim()) {
                    return bad("dimension or kind mismatch".into());
                }
            }
            FactorKind::Categorical {
                selector,
                probabilities,
            } => match (kind_of(selector), kind_of(probabilities)) {
                (VarKind::Discrete(a), VarKind::Dirichlet(b)) if a == b => {}
                _ => return bad("needs Discrete selector and matching Dirichlet".into()),
            },
            FactorKind::LinearScore {
                output,
                inputs,
                coefficients,
            } => {
                if inputs.len() != coefficients.len() || !all_gaussian(inputs) {
                    return bad("inputs and coefficients must align".into());
                }
                if kind_of(output) != VarKind::Gaussian {
                    return bad("output must be Gaussian".into());
                }
            }
            FactorKind::Sum { output, inputs } => {
                if !all_gaussian(inputs) || kind_of(output) != VarKind::Gaussian {
                    return bad("needs Gaussian variables".into());
                }
            }
            FactorKind::GaussianNoise {
                input,
                output,
                precision,
            } => {
                if !all_gaussian(&[*input, *output]) || !(*precision > 0.0) {
                    return bad("needs Gaussian variables and positive precision".into());
                }
            }
            FactorKind::ScaledSum { output, scales, inputs } => {
                if scales.len() != inputs.len()
                    || !all_gaussian(scales)
                    || !all_gaussian(inputs)
                    || kind_of(output) != VarKind::Gaussian
                {
                    return bad("scales and inputs must be aligned Gaussians".into());
                }
            }
            FactorKind::ArgMax { scores, class, weight } => {
                if scores.len() < 2 || *class >= scores.len() || !all_gaussian(scores) {
                    return bad(format!("class {class} of {} scores", scores.len()));
                }
                if !(*weight > 0.0 && *weight <= 1.0) {
                    return bad(format!("weight {weight} outside (0, 1]"));
                }
            }
            FactorKind::Softmax { scores, target, weight } => {
                if scores.len() != target.dim() || !all_gaussian(scores) {
                    return bad("target dimension must equal score count".into());
                }
                if !(*weight > 0.0 && *weight <= 1.0) {
                    return bad(format!("weight {weight} outside (0, 1]"));
                }
            }
            FactorKind::Gate { selector, cases } => {
                if kind_of(selector) != VarKind::Discrete(cases.len()) {
                    return bad("selector dimension must equal case count".into());
                }
                for case in cases {
                    if !matches!(case, FactorKind::ArgMax { .. } | FactorKind::Softmax { .. }) {
                        return bad("cases must be ArgMax or Softmax blocks".into());
                    }
                    self.validate_factor(case)?;
                }
            }
        }
        Ok(())
    }
}

/// Ordered edge list; an engine updates the messages of consecutive edges of
/// the same factor together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub edges: Vec<Edge>,
}

impl Schedule {
    pub fn validate(&self, graph: &FactorGraph) -> Result<()> {
        let covered: std::collections::HashSet<Edge> = self.edges.iter().copied().collect();
        for e in graph.edges() {
            if !covered.contains(&e) {
                return Err(GraphError::IncompleteSchedule(e));
            }
        }
        Ok(())
    }

    /// Consecutive runs of edges sharing a factor.
    pub(crate) fn factor_runs(&self) -> Vec<(FactorId, Vec<usize>)> {
        let mut runs: Vec<(FactorId, Vec<usize>)> = Vec::new();
        for e in &self.edges {
            match runs.last_mut() {
                Some((f, slots)) if *f == e.factor => slots.push(e.slot),
                _ => runs.push((e.factor, vec![e.slot])),
            }
        }
        runs
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_arity_mismatch() {
        let mut g = FactorGraph::new();
        let w = g.add_variable("w", VarKind::Gaussian);
        let s = g.add_variable("s", VarKind::Gaussian);
        let err = g.add_factor(FactorKind::LinearScore {
            output: s,
            inputs: vec![w],
            coefficients: vec![1.0, 2.0],
        });
        assert!(matches!(err, Err(GraphError::InvalidFactor(_))));
        let err = g.add_factor(FactorKind::ArgMax {
            scores: vec![w, s],
            class: 2,
            weight: 1.0,
        });
        assert!(err.is_err());
    }

    #[test]
    fn gate_neighbors_are_deduplicated() {
        let mut g = FactorGraph::new();
        let z = g.add_variable("z", VarKind::Discrete(2));
        let a = g.add_variable("a", VarKind::Gaussian);
        let b = g.add_variable("b", VarKind::Gaussian);
        let case = |class| FactorKind::ArgMax {
            scores: vec![a, b],
            class,
            weight: 1.0,
        };
        let f = g
            .add_factor(FactorKind::Gate {
                selector: z,
                cases: vec![case(0), case(1)],
            })
            .unwrap();
        assert_eq!(g.factor(f).neighbors(), vec![z, a, b]);
        assert!(g.check_engine(Engine::Ep).is_ok());
        assert!(matches!(
            g.check_engine(Engine::Vmp),
            Err(GraphError::UnsupportedFactorForEngine { .. })
        ));
    }

    #[test]
    fn default_schedule_covers_every_edge() {
        let mut g = FactorGraph::new();
        let w = g.add_variable("w", VarKind::Gaussian);
        let s = g.add_variable("s", VarKind::Gaussian);
        g.add_factor(FactorKind::GaussianNoise {
            input: w,
            output: s,
            precision: 1.0,
        })
        .unwrap();
        g.add_factor(FactorKind::GaussianPrior {
            var: w,
            prior: Gaussian1D::from_mean_precision(0.0, 1.0),
        })
        .unwrap();
        let schedule = g.default_schedule();
        schedule.validate(&g).unwrap();
        // prior first, then noise forward and backward
        let runs: Vec<usize> = schedule.factor_runs().iter().map(|(f, _)| f.0).collect();
        assert_eq!(runs, vec![1, 0]);
        let partial = Schedule {
            edges: schedule.edges[..1].to_vec(),
        };
        assert!(matches!(partial.validate(&g), Err(GraphError::IncompleteSchedule(_))));
    }
}
