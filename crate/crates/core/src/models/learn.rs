//! Batch training and assumed-density filtering.
//!
//! Parameters shared across batches (weights, source weights, switch
//! probabilities) keep, besides their posterior, the product of the
//! messages the data sent them. A new batch is then trained with the prior
//! side intact (including any Gamma hierarchy) and earlier data entering as
//! one Gaussian or Dirichlet message per parameter. With one pass this is
//! plain ADF: the previous posterior becomes the next prior. Extra passes
//! revisit each batch with the other batches' latest messages.

use serde::{Deserialize, Serialize};

use crate::data::{check_aligned, SourceBatch};
use crate::dists::{Dirichlet, Distribution, Gamma, Gaussian1D};
use crate::graph::{run_ep, run_vmp, Edge, Engine, EpOptions, MessageStore, VarId, VmpOptions};

use super::build::{build_for_batch, feature_scales, initial_heavy_state, ModelGraph};
use super::{ModelError, Posterior, PriorKind, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EngineOptions {
    pub max_iters: usize,
    pub tol: f64,
    /// EP damping step in `(0, 1]`; ignored by VMP.
    pub damping: f64,
    /// Sweeps over the batch sequence; 1 is online learning.
    pub passes: usize,
    /// VMP: fail if the ELBO ever decreases.
    pub fail_on_elbo_decrease: bool,
}

impl Default for EngineOptions {
    fn default() -> Self {
        EngineOptions {
            max_iters: 100,
            tol: 1e-6,
            damping: 0.7,
            passes: 1,
            fail_on_elbo_decrease: cfg!(debug_assertions),
        }
    }
}

/// Trains from the prior over `batches` in order. Each batch is a slice of
/// per-source matrices describing the same instances.
pub fn train(spec: &super::ModelSpec, batches: &[Vec<SourceBatch>], options: &EngineOptions) -> Result<Posterior> {
    let prior = Posterior::prior(spec)?;
    fit_sequence(&prior, batches, options)
}

/// One online step: `posterior` acts as the prior for `batch`.
pub fn adf_update(posterior: &Posterior, batch: &[SourceBatch], options: &EngineOptions) -> Result<Posterior> {
    let single = EngineOptions { passes: 1, ..*options };
    fit_sequence(posterior, &[batch.to_vec()], &single)
}

/// Data messages of every shared parameter.
#[derive(Debug, Clone)]
struct DataMessages {
    weights: Vec<Vec<Vec<Gaussian1D>>>,
    betas: Vec<Gaussian1D>,
    theta: Option<Dirichlet>,
}

impl DataMessages {
    fn of(p: &Posterior) -> Self {
        DataMessages {
            weights: p.blocks.iter().map(|b| b.data.clone()).collect(),
            betas: p.source_weight_data.clone(),
            theta: p.switch_data.clone(),
        }
    }

    fn uniform_like(&self) -> Self {
        DataMessages {
            weights: self
                .weights
                .iter()
                .map(|b| b.iter().map(|r| vec![Gaussian1D::uniform(); r.len()]).collect())
                .collect(),
            betas: vec![Gaussian1D::uniform(); self.betas.len()],
            theta: self.theta.as_ref().map(|t| Dirichlet::uniform_message(t.dim())),
        }
    }

    fn combine(&self, other: &Self, divide: bool) -> Self {
        let g = |a: &Gaussian1D, b: &Gaussian1D| if divide { a.divide(b) } else { a.multiply_unchecked(b) };
        DataMessages {
            weights: self
                .weights
                .iter()
                .zip(&other.weights)
                .map(|(x, y)| {
                    x.iter()
                        .zip(y)
                        .map(|(r, s)| r.iter().zip(s).map(|(a, b)| g(a, b)).collect())
                        .collect()
                })
                .collect(),
            betas: self.betas.iter().zip(&other.betas).map(|(a, b)| g(a, b)).collect(),
            theta: match (&self.theta, &other.theta) {
                (Some(a), Some(b)) => Some(if divide { a.divide(b) } else { a.multiply(b) }),
                _ => None,
            },
        }
    }

    fn install(&self, p: &mut Posterior) {
        for (block, w) in p.blocks.iter_mut().zip(&self.weights) {
            block.data = w.clone();
        }
        p.source_weight_data = self.betas.clone();
        p.switch_data = self.theta.clone();
    }
}

fn fit_sequence(start: &Posterior, batches: &[Vec<SourceBatch>], options: &EngineOptions) -> Result<Posterior> {
    start.validate()?;
    let batches: Vec<&Vec<SourceBatch>> = batches
        .iter()
        .filter(|b| b.first().is_some_and(|s| !s.is_empty()))
        .collect();
    for b in &batches {
        check_batch(start, b)?;
    }
    if batches.is_empty() {
        return Ok(start.clone());
    }
    let base = DataMessages::of(start);
    let mut per_batch = vec![base.uniform_like(); batches.len()];
    let mut current = start.clone();
    let mut evidence = vec![0.0; batches.len()];
    let mut converged = true;
    let mut iterations = 0;
    for _ in 0..options.passes.max(1) {
        for (k, batch) in batches.iter().enumerate() {
            let mut others = base.clone();
            for (j, m) in per_batch.iter().enumerate() {
                if j != k {
                    others = others.combine(m, false);
                }
            }
            let mut working = current.clone();
            others.install(&mut working);
            ensure_heavy_state(&mut working, batch);
            let step = fit_batch(&working, batch, options)?;
            per_batch[k] = DataMessages::of(&step.posterior).combine(&others, true);
            evidence[k] = step.log_evidence;
            converged &= step.converged;
            iterations += step.iterations;
            current = step.posterior;
        }
    }
    let mut total = base;
    for m in &per_batch {
        total = total.combine(m, false);
    }
    total.install(&mut current);
    let meta = &mut current.metadata;
    meta.instances_seen = start.metadata.instances_seen + batches.iter().map(|b| b[0].len()).sum::<usize>();
    meta.batches_seen = start.metadata.batches_seen + batches.len();
    meta.log_evidence = start.metadata.log_evidence + evidence.iter().sum::<f64>();
    meta.converged = converged;
    meta.iterations = iterations;
    current.validate()?;
    Ok(current)
}

fn check_batch(p: &Posterior, batch: &[SourceBatch]) -> Result<()> {
    let dims = &p.spec.source_dims;
    if batch.len() != dims.len() {
        return Err(ModelError::DimensionMismatch(format!(
            "model has {} sources, batch has {}",
            dims.len(),
            batch.len()
        )));
    }
    check_aligned(batch)?;
    for (s, (src, d)) in batch.iter().zip(dims).enumerate() {
        if src.width() != *d {
            return Err(ModelError::DimensionMismatch(format!(
                "source {s} has {} features, model expects {d}",
                src.width()
            )));
        }
    }
    let targets = batch
        .iter()
        .find_map(|s| s.targets.as_ref())
        .ok_or(ModelError::MissingTargets)?;
    if let Some(bad) = targets.iter().find(|t| t.dim() != p.spec.classes) {
        return Err(ModelError::DimensionMismatch(format!(
            "target has {} classes, model expects {}",
            bad.dim(),
            p.spec.classes
        )));
    }
    if let Some(locs) = batch.iter().find_map(|s| s.location_targets.as_ref()) {
        if p.spec.locations > 1 && locs.iter().any(|t| t.dim() != p.spec.locations) {
            return Err(ModelError::DimensionMismatch("location target dimension".into()));
        }
    }
    Ok(())
}

/// Fixes each heavy-tailed block's feature scales from the first batch it
/// sees.
fn ensure_heavy_state(p: &mut Posterior, batch: &[SourceBatch]) {
    if p.spec.prior != PriorKind::HeavyTailed {
        return;
    }
    let layout = p.spec.block_layout();
    for (block, (_, d, sources)) in p.blocks.iter_mut().zip(layout) {
        if block.heavy.is_none() {
            block.heavy = Some(initial_heavy_state(&p.spec, feature_scales(batch, &sources, d)));
        }
    }
}

struct Step {
    posterior: Posterior,
    log_evidence: f64,
    converged: bool,
    iterations: usize,
}

struct Fit {
    marginals: Vec<Distribution>,
    log_evidence: f64,
    converged: bool,
    iterations: usize,
    store: Option<MessageStore>,
}

fn infer(mg: &ModelGraph, options: &EngineOptions) -> Result<Fit> {
    let schedule = mg.graph.default_schedule();
    Ok(match mg.engine {
        Engine::Ep => {
            let r = run_ep(
                &mg.graph,
                &schedule,
                &EpOptions {
                    max_iters: options.max_iters,
                    tol: options.tol,
                    damping: options.damping,
                },
            )?;
            Fit {
                marginals: r.marginals,
                log_evidence: r.log_evidence,
                converged: r.converged,
                iterations: r.iterations,
                store: Some(r.store),
            }
        }
        Engine::Vmp => {
            let r = run_vmp(
                &mg.graph,
                &schedule,
                &VmpOptions {
                    max_iters: options.max_iters,
                    tol: options.tol,
                    fail_on_elbo_decrease: options.fail_on_elbo_decrease,
                },
            )?;
            Fit {
                log_evidence: r.elbo(),
                marginals: r.marginals,
                converged: r.converged,
                iterations: r.iterations,
                store: None,
            }
        }
    })
}

fn gaussian(fit: &Fit, v: VarId) -> Gaussian1D {
    match &fit.marginals[v.0] {
        Distribution::Gaussian(g) => *g,
        _ => unreachable!(),
    }
}

fn gamma(fit: &Fit, v: VarId) -> Gamma {
    match &fit.marginals[v.0] {
        Distribution::Gamma(g) => *g,
        _ => unreachable!(),
    }
}

fn fit_batch(working: &Posterior, batch: &[SourceBatch], options: &EngineOptions) -> Result<Step> {
    let mg = build_for_batch(working, batch, true)?;
    let fit = infer(&mg, options)?;
    let mut log_evidence = fit.log_evidence;
    if working.spec.prior == PriorKind::HeavyTailed {
        // the hierarchy alone is not normalized under the approximation
        let prior_only = build_for_batch(working, batch, false)?;
        log_evidence -= infer(&prior_only, options)?.log_evidence;
    }

    let spec = &working.spec;
    let h = &spec.hyper;
    let base = Gaussian1D::from_mean_precision(0.0, h.weight_precision);
    let mut next = working.clone();
    for (block, handles) in next.blocks.iter_mut().zip(&mg.blocks) {
        for c in 0..block.classes - 1 {
            for d in 0..block.features {
                let w = handles.weights[c][d];
                let marginal = gaussian(&fit, w);
                let prior_side = match (&fit.store, handles.shared) {
                    (_, None) => base,
                    (Some(store), Some(_)) => match store.message(Edge {
                        factor: handles.prior_factors[c][d],
                        slot: 0,
                    }) {
                        Distribution::Gaussian(g) => *g,
                        _ => unreachable!(),
                    },
                    (None, Some(a)) => {
                        let p = gamma(&fit, a).mean() * gamma(&fit, handles.precisions[d]).mean();
                        Gaussian1D::from_mean_precision(0.0, p)
                    }
                };
                if marginal.is_proper() {
                    block.weights[c][d] = marginal;
                    block.data[c][d] = marginal.divide(&prior_side);
                }
            }
        }
        if let (Some(state), Some(a)) = (block.heavy.as_mut(), handles.shared) {
            state.shared = gamma(&fit, a);
            state.precisions = handles.precisions.iter().map(|v| gamma(&fit, *v)).collect();
            state.rates = handles.rates.iter().map(|v| gamma(&fit, *v)).collect();
        }
    }
    let beta_base = Gaussian1D::from_mean_precision(h.beta_mean, h.beta_precision);
    for (s, v) in mg.source_weights.iter().enumerate() {
        let marginal = gaussian(&fit, *v);
        next.source_weights[s] = marginal;
        next.source_weight_data[s] = marginal.divide(&beta_base);
    }
    if let Some(theta) = mg.switch {
        if let Distribution::Dirichlet(d) = &fit.marginals[theta.0] {
            next.switch = Some(d.clone());
            next.switch_data = Some(d.divide(&Dirichlet::symmetric(d.dim(), h.switch_concentration)));
        }
    }
    next.metadata.engine = mg.engine;
    Ok(Step {
        posterior: next,
        log_evidence,
        converged: fit.converged,
        iterations: fit.iterations,
    })
}
