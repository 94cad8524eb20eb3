use crate::dists::{Dirichlet, Discrete, Distribution, Gamma, Gaussian1D};

use super::{Edge, FactorGraph, VarId};

/// Per-edge factor-to-variable messages plus the per-variable marginals they
/// multiply into. Variable-to-factor messages are the cavities
/// `marginal / message` and are computed on demand.
#[derive(Debug, Clone)]
pub struct MessageStore {
    pub(crate) to_var: Vec<Vec<Distribution>>,
    pub(crate) marginals: Vec<Distribution>,
    pub(crate) log_normalizers: Vec<f64>,
    pub(crate) adjacency: Vec<Vec<Edge>>,
}

impl MessageStore {
    pub fn new(graph: &FactorGraph) -> MessageStore {
        let to_var = graph
            .factors()
            .iter()
            .map(|f| {
                f.neighbors()
                    .iter()
                    .map(|v| graph.variable(*v).kind.uniform())
                    .collect()
            })
            .collect();
        let marginals = graph.variables().iter().map(|v| v.kind.uniform()).collect();
        let mut store = MessageStore {
            to_var,
            marginals,
            log_normalizers: vec![0.0; graph.factors().len()],
            adjacency: graph.adjacency(),
        };
        for (edge, msg) in graph.initial_messages() {
            store.to_var[edge.factor.0][edge.slot] = msg.clone();
        }
        for v in 0..graph.variables().len() {
            store.recompute_marginal(VarId(v));
        }
        store
    }

    pub fn message(&self, edge: Edge) -> &Distribution {
        &self.to_var[edge.factor.0][edge.slot]
    }

    pub fn marginal(&self, var: VarId) -> &Distribution {
        &self.marginals[var.0]
    }

    pub fn marginals(&self) -> &[Distribution] {
        &self.marginals
    }

    pub fn factor_log_normalizers(&self) -> &[f64] {
        &self.log_normalizers
    }

    /// Product of every message into `var` except the one on `skip`.
    pub fn message_to_factor(&self, var: VarId, skip: Option<Edge>) -> Distribution {
        let msgs = self.adjacency[var.0]
            .iter()
            .filter(|e| Some(**e) != skip)
            .map(|e| self.message(*e));
        product(&self.marginals[var.0], msgs)
    }

    pub(crate) fn gaussian_cavity(&self, var: VarId, edge: Edge) -> Gaussian1D {
        match (&self.marginals[var.0], self.message(edge)) {
            (Distribution::Gaussian(m), Distribution::Gaussian(msg)) => m.divide(msg),
            _ => unreachable!("gaussian cavity on non-gaussian variable"),
        }
    }

    pub(crate) fn gamma_cavity(&self, var: VarId, edge: Edge) -> Gamma {
        match (&self.marginals[var.0], self.message(edge)) {
            (Distribution::Gamma(m), Distribution::Gamma(msg)) => m.divide(msg),
            _ => unreachable!("gamma cavity on non-gamma variable"),
        }
    }

    pub(crate) fn dirichlet_cavity(&self, var: VarId, edge: Edge) -> Dirichlet {
        match (&self.marginals[var.0], self.message(edge)) {
            (Distribution::Dirichlet(m), Distribution::Dirichlet(msg)) => m.divide(msg),
            _ => unreachable!("dirichlet cavity on non-dirichlet variable"),
        }
    }

    /// Unnormalized log weights of the product of all messages into a
    /// Discrete variable other than `skip`.
    pub(crate) fn discrete_log_weights(&self, var: VarId, skip: Option<Edge>) -> Vec<f64> {
        let dim = match &self.marginals[var.0] {
            Distribution::Discrete(d) => d.dim(),
            _ => unreachable!("discrete weights on non-discrete variable"),
        };
        let mut out = vec![0.0; dim];
        for e in self.adjacency[var.0].iter().filter(|e| Some(**e) != skip) {
            if let Distribution::Discrete(m) = self.message(*e) {
                for (o, p) in out.iter_mut().zip(m.probabilities()) {
                    *o += p.ln();
                }
            }
        }
        out
    }

    /// Replaces the message on `edge` and refreshes the variable's marginal.
    pub(crate) fn set_message(&mut self, edge: Edge, var: VarId, msg: Distribution) {
        let old = std::mem::replace(&mut self.to_var[edge.factor.0][edge.slot], msg);
        match (&mut self.marginals[var.0], &old, &self.to_var[edge.factor.0][edge.slot]) {
            (Distribution::Gaussian(m), Distribution::Gaussian(o), Distribution::Gaussian(n)) => {
                *m = m.divide(o).multiply_unchecked(n);
            }
            (Distribution::Gamma(m), Distribution::Gamma(o), Distribution::Gamma(n)) => {
                *m = m.divide(o).multiply(n);
            }
            (Distribution::Dirichlet(m), Distribution::Dirichlet(o), Distribution::Dirichlet(n)) => {
                *m = m.divide(o).multiply(n);
            }
            _ => self.recompute_marginal(var),
        }
    }

    pub(crate) fn recompute_marginal(&mut self, var: VarId) {
        let msgs = self.adjacency[var.0].iter().map(|e| self.message(*e));
        self.marginals[var.0] = product(&self.marginals[var.0], msgs);
    }

    pub(crate) fn recompute_all(&mut self) {
        for v in 0..self.marginals.len() {
            self.recompute_marginal(VarId(v));
        }
    }

    /// Largest natural-parameter discrepancy between each stored marginal and
    /// the product of its incoming messages.
    pub fn consistency_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (v, marginal) in self.marginals.iter().enumerate() {
            let msgs = self.adjacency[v].iter().map(|e| self.message(*e));
            let fresh = product(marginal, msgs);
            worst = worst.max(max_abs_diff(marginal, &fresh));
        }
        worst
    }
}

/// Product of messages of the same kind as `like`.
pub(crate) fn product<'a>(like: &Distribution, msgs: impl Iterator<Item = &'a Distribution>) -> Distribution {
    match like {
        Distribution::Gaussian(_) => {
            let mut acc = Gaussian1D::uniform();
            for m in msgs {
                if let Distribution::Gaussian(g) = m {
                    acc = acc.multiply_unchecked(g);
                }
            }
            Distribution::Gaussian(acc)
        }
        Distribution::Gamma(_) => {
            let mut acc = Gamma::uniform();
            for m in msgs {
                if let Distribution::Gamma(g) = m {
                    acc = acc.multiply(g);
                }
            }
            Distribution::Gamma(acc)
        }
        Distribution::Dirichlet(d) => {
            let mut acc = Dirichlet::uniform_message(d.dim());
            for m in msgs {
                if let Distribution::Dirichlet(g) = m {
                    acc = acc.multiply(g);
                }
            }
            Distribution::Dirichlet(acc)
        }
        Distribution::Discrete(d) => {
            let mut logw = vec![0.0; d.dim()];
            for m in msgs {
                if let Distribution::Discrete(g) = m {
                    for (o, p) in logw.iter_mut().zip(g.probabilities()) {
                        *o += p.ln();
                    }
                }
            }
            Distribution::Discrete(Discrete::from_log_weights(&logw))
        }
    }
}

pub(crate) fn max_abs_diff(a: &Distribution, b: &Distribution) -> f64 {
    match (a, b) {
        (Distribution::Gaussian(x), Distribution::Gaussian(y)) => x.max_abs_diff(y),
        (Distribution::Gamma(x), Distribution::Gamma(y)) => x.max_abs_diff(y),
        (Distribution::Dirichlet(x), Distribution::Dirichlet(y)) => x.max_abs_diff(y),
        (Distribution::Discrete(x), Distribution::Discrete(y)) => x.max_abs_diff(y),
        _ => f64::INFINITY,
    }
}

/// Damped update `new^step * old^(1-step)` in natural parameters.
pub(crate) fn damp(new: Distribution, old: &Distribution, step: f64) -> Distribution {
    if step >= 1.0 {
        return new;
    }
    match (new, old) {
        (Distribution::Gaussian(n), Distribution::Gaussian(o)) => Distribution::Gaussian(n.blend(o, step)),
        (Distribution::Gamma(n), Distribution::Gamma(o)) => Distribution::Gamma(Gamma {
            shape: step * n.shape + (1.0 - step) * o.shape,
            rate: step * n.rate + (1.0 - step) * o.rate,
        }),
        (Distribution::Dirichlet(n), Distribution::Dirichlet(o)) => Distribution::Dirichlet(Dirichlet {
            pseudo_counts: n
                .pseudo_counts
                .iter()
                .zip(&o.pseudo_counts)
                .map(|(a, b)| step * a + (1.0 - step) * b)
                .collect(),
        }),
        (Distribution::Discrete(n), Distribution::Discrete(o)) => {
            let logw: Vec<f64> = n
                .probabilities()
                .iter()
                .zip(o.probabilities())
                .map(|(a, b)| step * a.ln() + (1.0 - step) * b.ln())
                .collect();
            Distribution::Discrete(Discrete::from_log_weights(&logw))
        }
        (n, _) => n,
    }
}
