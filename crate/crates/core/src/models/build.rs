//! Compiles a model spec plus a batch of instances into a factor graph.
//!
//! Every block of weights `w[c][d]` gets one noisy score per class and
//! instance: `s = sum_d x_d w[c][d]`, `t = s + N(0, 1/noise_precision)`.
//! The last class is pinned at zero, so its noisy score is pure noise.
//!
//! Heavy-tailed blocks use the hierarchy
//! `a ~ Gamma(shared_shape, shared_rate)`,
//! `b_d ~ Gamma(rate_shape, rate_rate * mean(x_d^2))`,
//! `tau_d ~ Gamma(precision_shape, b_d)` and `w[c][d] ~ N(0, 1/(a tau_d))`.
//! Scaling `b_d`'s prior by the feature's second moment makes the model
//! equivariant to rescaling that feature.

use crate::data::SourceBatch;
use crate::dists::{Dirichlet, Discrete, Distribution, Gamma, Gaussian1D};
use crate::graph::{Edge, Engine, FactorGraph, FactorId, FactorKind, VarId, VarKind};

use super::{target_terms, Architecture, HeavyTailState, ModelError, ModelSpec, Posterior, PriorKind, Result};

/// Variable and factor handles of one weight block.
#[derive(Debug, Clone)]
pub struct BlockHandles {
    pub classes: usize,
    pub features: usize,
    /// Weight variables of every class; the last row is observed at zero.
    pub weights: Vec<Vec<VarId>>,
    /// Factor on the prior side of each free weight: the Gaussian prior, or
    /// the random-precision factor of the heavy-tailed hierarchy.
    pub prior_factors: Vec<Vec<FactorId>>,
    pub shared: Option<VarId>,
    pub precisions: Vec<VarId>,
    pub rates: Vec<VarId>,
    /// Sources whose features this block reads, concatenated in order.
    pub sources: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct ModelGraph {
    pub graph: FactorGraph,
    pub engine: Engine,
    pub blocks: Vec<BlockHandles>,
    /// Weighted fusion: per-source multipliers.
    pub source_weights: Vec<VarId>,
    /// Switching fusion: source probabilities.
    pub switch: Option<VarId>,
    /// Per-instance gate selectors (switch or location), if any.
    pub selectors: Vec<VarId>,
    pub instances: usize,
}

/// The untrained model with no data attached.
pub fn build(spec: &ModelSpec) -> Result<ModelGraph> {
    let prior = Posterior::prior(spec)?;
    build_for_batch(&prior, &[], true)
}

/// Graph for one batch, with `posterior` supplying the prior side. When
/// `with_data` is false only the parameter part is built, which is what the
/// batch evidence is measured against.
pub fn build_for_batch(posterior: &Posterior, batch: &[SourceBatch], with_data: bool) -> Result<ModelGraph> {
    let spec = &posterior.spec;
    let mut b = Builder {
        g: FactorGraph::new(),
        spec,
        engine: spec.engine(),
    };
    let zero = b.g.add_variable("zero", VarKind::Gaussian);
    b.g.observe(zero, 0.0)?;

    let layout = spec.block_layout();
    let mut blocks = Vec::with_capacity(layout.len());
    for (i, (_, _, sources)) in layout.iter().enumerate() {
        blocks.push(b.weight_block(i, &posterior.blocks[i], sources.clone())?);
    }

    let h = &spec.hyper;
    let beta_base = Gaussian1D::from_mean_precision(h.beta_mean, h.beta_precision);
    let source_weights: Vec<VarId> = posterior
        .source_weight_data
        .iter()
        .enumerate()
        .map(|(s, data)| b.gaussian_with_prior(format!("beta[{s}]"), beta_base.multiply_unchecked(data)))
        .collect::<Result<_>>()?;
    let switch = match &posterior.switch_data {
        Some(data) => {
            let v = b.g.add_variable("theta", VarKind::Dirichlet(data.dim()));
            b.g.add_factor(FactorKind::DirichletPrior {
                var: v,
                prior: Dirichlet::symmetric(data.dim(), h.switch_concentration).multiply(data),
            })?;
            Some(v)
        }
        None => None,
    };

    let mut mg = ModelGraph {
        graph: FactorGraph::new(),
        engine: b.engine,
        blocks,
        source_weights,
        switch,
        selectors: Vec::new(),
        instances: 0,
    };
    if with_data && !batch.is_empty() {
        mg.instances = batch[0].len();
        let targets = batch
            .iter()
            .find_map(|s| s.targets.as_ref())
            .ok_or(ModelError::MissingTargets)?;
        let locations = batch.iter().find_map(|s| s.location_targets.as_ref());
        for n in 0..mg.instances {
            let loc = locations.map(|l| &l[n]);
            b.instance(&mut mg, batch, n, zero, &targets[n], loc)?;
        }
        b.perturb_source_weights(&mg);
    }
    mg.graph = b.g;
    Ok(mg)
}

/// Per-feature `mean(x_d^2)` over a block's concatenated sources; features
/// that are identically zero get scale 1.
pub(crate) fn feature_scales(batch: &[SourceBatch], sources: &[usize], features: usize) -> Vec<f64> {
    let mut sums = vec![0.0; features];
    let n = batch.first().map_or(0, SourceBatch::len);
    for i in 0..n {
        for (d, x) in row(batch, sources, i).iter().enumerate() {
            sums[d] += x * x;
        }
    }
    sums.into_iter()
        .map(|s| if n == 0 || s == 0.0 { 1.0 } else { s / n as f64 })
        .collect()
}

/// Concatenated feature row of instance `n` over `sources`.
pub(crate) fn row(batch: &[SourceBatch], sources: &[usize], n: usize) -> Vec<f64> {
    sources
        .iter()
        .flat_map(|s| batch[*s].features[n].iter().copied())
        .collect()
}

pub(crate) fn initial_heavy_state(spec: &ModelSpec, scales: Vec<f64>) -> HeavyTailState {
    let h = &spec.hyper;
    HeavyTailState {
        shared: Gamma {
            shape: h.shared_shape,
            rate: h.shared_rate,
        },
        precisions: vec![
            Gamma {
                shape: h.precision_shape,
                rate: 1.0,
            };
            scales.len()
        ],
        rates: scales
            .iter()
            .map(|s| Gamma {
                shape: h.rate_shape,
                rate: h.rate_rate * s,
            })
            .collect(),
        scales,
    }
}

struct Builder<'s> {
    g: FactorGraph,
    spec: &'s ModelSpec,
    engine: Engine,
}

impl Builder<'_> {
    fn gaussian_with_prior(&mut self, name: String, prior: Gaussian1D) -> Result<VarId> {
        let v = self.g.add_variable(name, VarKind::Gaussian);
        self.g.add_factor(FactorKind::GaussianPrior { var: v, prior })?;
        Ok(v)
    }

    fn gamma_with_prior(&mut self, name: String, prior: Gamma) -> Result<VarId> {
        let v = self.g.add_variable(name, VarKind::Gamma);
        self.g.add_factor(FactorKind::GammaPrior { var: v, prior })?;
        Ok(v)
    }

    fn weight_block(&mut self, index: usize, post: &super::WeightBlock, sources: Vec<usize>) -> Result<BlockHandles> {
        let (classes, features) = (post.classes, post.features);
        let h = &self.spec.hyper;
        let mut handles = BlockHandles {
            classes,
            features,
            weights: Vec::with_capacity(classes),
            prior_factors: Vec::with_capacity(classes - 1),
            shared: None,
            precisions: Vec::new(),
            rates: Vec::new(),
            sources,
        };
        let heavy = match (self.spec.prior, &post.heavy) {
            (PriorKind::HeavyTailed, Some(state)) => Some(state.scales.clone()),
            (PriorKind::HeavyTailed, None) => Some(vec![1.0; features]),
            (PriorKind::Gaussian, _) => None,
        };
        if let Some(scales) = &heavy {
            let shared = self.gamma_with_prior(
                format!("a[{index}]"),
                Gamma {
                    shape: h.shared_shape,
                    rate: h.shared_rate,
                },
            )?;
            handles.shared = Some(shared);
            for (d, scale) in scales.iter().enumerate() {
                let rate = self.gamma_with_prior(
                    format!("b[{index}][{d}]"),
                    Gamma {
                        shape: h.rate_shape,
                        rate: h.rate_rate * scale,
                    },
                )?;
                let precision = self.g.add_variable(format!("tau[{index}][{d}]"), VarKind::Gamma);
                self.g.add_factor(FactorKind::GammaRandomRate {
                    var: precision,
                    shape: h.precision_shape,
                    rate,
                })?;
                handles.rates.push(rate);
                handles.precisions.push(precision);
            }
        }
        let base = Gaussian1D::from_mean_precision(0.0, h.weight_precision);
        for c in 0..classes {
            let mut row = Vec::with_capacity(features);
            let mut factors = Vec::with_capacity(features);
            for d in 0..features {
                let w = self.g.add_variable(format!("w[{index}][{c}][{d}]"), VarKind::Gaussian);
                row.push(w);
                if c + 1 == classes {
                    self.g.observe(w, 0.0)?;
                    continue;
                }
                let data = post.data[c][d];
                match heavy {
                    None => {
                        factors.push(self.g.add_factor(FactorKind::GaussianPrior {
                            var: w,
                            prior: base.multiply_unchecked(&data),
                        })?);
                    }
                    Some(_) => {
                        factors.push(self.g.add_factor(FactorKind::GaussianRandomPrecision {
                            var: w,
                            mean: 0.0,
                            precisions: vec![handles.shared.unwrap(), handles.precisions[d]],
                        })?);
                        // earlier batches enter as a Gaussian likelihood
                        if data.precision > 0.0 {
                            self.g.add_factor(FactorKind::GaussianPrior { var: w, prior: data })?;
                        }
                    }
                }
            }
            handles.weights.push(row);
            if c + 1 < classes {
                handles.prior_factors.push(factors);
            }
        }
        Ok(handles)
    }

    /// Noise-free scores of one block for feature row `x`. The pinned class
    /// and all-zero rows reuse the observed `zero`.
    fn clean_scores(&mut self, block: &BlockHandles, x: &[f64], zero: VarId, tag: &str) -> Result<Vec<VarId>> {
        let mut out = Vec::with_capacity(block.classes);
        for c in 0..block.classes {
            let mut clean = zero;
            if c + 1 < block.classes {
                let used: Vec<usize> = (0..x.len()).filter(|d| x[*d] != 0.0).collect();
                if !used.is_empty() {
                    clean = self.g.add_variable(format!("s{tag}[{c}]"), VarKind::Gaussian);
                    self.g.add_factor(FactorKind::LinearScore {
                        output: clean,
                        inputs: used.iter().map(|d| block.weights[c][*d]).collect(),
                        coefficients: used.iter().map(|d| x[*d]).collect(),
                    })?;
                }
            }
            out.push(clean);
        }
        Ok(out)
    }

    fn add_noise(&mut self, clean: &[VarId], tag: &str) -> Result<Vec<VarId>> {
        let precision = self.spec.hyper.noise_precision;
        clean
            .iter()
            .enumerate()
            .map(|(c, input)| {
                let noisy = self.g.add_variable(format!("t{tag}[{c}]"), VarKind::Gaussian);
                self.g.add_factor(FactorKind::GaussianNoise {
                    input: *input,
                    output: noisy,
                    precision,
                })?;
                Ok(noisy)
            })
            .collect()
    }

    /// Noisy scores of one block for feature row `x`.
    fn scores(&mut self, block: &BlockHandles, x: &[f64], zero: VarId, tag: &str) -> Result<Vec<VarId>> {
        let clean = self.clean_scores(block, x, zero, tag)?;
        self.add_noise(&clean, tag)
    }

    /// Link factors tying `scores` to a (possibly soft) target.
    fn link(&mut self, scores: &[VarId], target: &Discrete) -> Result<()> {
        for case in self.link_cases(scores, target) {
            self.g.add_factor(case)?;
        }
        Ok(())
    }

    /// Engine-appropriate link blocks: one weighted arg-max per class with
    /// positive target mass under EP, one softmax under VMP.
    fn link_cases(&self, scores: &[VarId], target: &Discrete) -> Vec<FactorKind> {
        match self.engine {
            Engine::Ep => target_terms(target)
                .into_iter()
                .map(|(class, weight)| FactorKind::ArgMax {
                    scores: scores.to_vec(),
                    class,
                    weight,
                })
                .collect(),
            Engine::Vmp => vec![FactorKind::Softmax {
                scores: scores.to_vec(),
                target: target.clone(),
                weight: 1.0,
            }],
        }
    }

    /// Gates over `score_sets` (one per selector value), one gate per link
    /// block so soft targets keep their weights.
    fn gated_link(&mut self, selector: VarId, score_sets: &[Vec<VarId>], target: &Discrete) -> Result<()> {
        let per_case: Vec<Vec<FactorKind>> = score_sets.iter().map(|s| self.link_cases(s, target)).collect();
        for j in 0..per_case[0].len() {
            self.g.add_factor(FactorKind::Gate {
                selector,
                cases: per_case.iter().map(|c| c[j].clone()).collect(),
            })?;
        }
        Ok(())
    }

    fn instance(
        &mut self,
        mg: &mut ModelGraph,
        batch: &[SourceBatch],
        n: usize,
        zero: VarId,
        target: &Discrete,
        location: Option<&Discrete>,
    ) -> Result<()> {
        let block_scores = |b: &mut Self, i: usize, tag: String| {
            let x = row(batch, &mg.blocks[i].sources, n);
            b.scores(&mg.blocks[i], &x, zero, &tag)
        };
        match self.spec.architecture {
            Architecture::SingleBpm | Architecture::ConcatBpm => {
                let t = block_scores(self, 0, format!("[{n}]"))?;
                self.link(&t, target)
            }
            Architecture::FusedAdditive => {
                let per_source: Vec<Vec<VarId>> = (0..mg.blocks.len())
                    .map(|s| block_scores(self, s, format!("[{n}][{s}]")))
                    .collect::<Result<_>>()?;
                let mut fused = Vec::with_capacity(self.spec.classes);
                for c in 0..self.spec.classes {
                    let f = self.g.add_variable(format!("f[{n}][{c}]"), VarKind::Gaussian);
                    let inputs = per_source.iter().map(|t| t[c]).collect();
                    self.g.add_factor(FactorKind::Sum { output: f, inputs })?;
                    fused.push(f);
                }
                self.link(&fused, target)
            }
            Architecture::FusedWeighted => {
                // noise enters once after weighting; per-source noise would
                // leave the joint scale of all source weights unidentified
                let per_source: Vec<Vec<VarId>> = (0..mg.blocks.len())
                    .map(|s| {
                        let x = row(batch, &mg.blocks[s].sources, n);
                        let block = mg.blocks[s].clone();
                        self.clean_scores(&block, &x, zero, &format!("[{n}][{s}]"))
                    })
                    .collect::<Result<_>>()?;
                let mut fused = Vec::with_capacity(self.spec.classes);
                for c in 0..self.spec.classes {
                    let inputs: Vec<VarId> = per_source.iter().map(|t| t[c]).collect();
                    if inputs.iter().all(|v| *v == zero) {
                        fused.push(zero);
                        continue;
                    }
                    let f = self.g.add_variable(format!("f[{n}][{c}]"), VarKind::Gaussian);
                    self.g.add_factor(FactorKind::ScaledSum {
                        output: f,
                        scales: mg.source_weights.clone(),
                        inputs,
                    })?;
                    fused.push(f);
                }
                let noisy = self.add_noise(&fused, &format!("[{n}]"))?;
                self.link(&noisy, target)
            }
            Architecture::FusedSwitching => {
                let per_source: Vec<Vec<VarId>> = (0..mg.blocks.len())
                    .map(|s| block_scores(self, s, format!("[{n}][{s}]")))
                    .collect::<Result<_>>()?;
                let z = self
                    .g
                    .add_variable(format!("z[{n}]"), VarKind::Discrete(per_source.len()));
                self.g.add_factor(FactorKind::Categorical {
                    selector: z,
                    probabilities: mg.switch.expect("switching model has theta"),
                })?;
                mg.selectors.push(z);
                self.gated_link(z, &per_source, target)
            }
            Architecture::Stacked if self.spec.locations == 1 => {
                let t = block_scores(self, 0, format!("[{n}]"))?;
                self.link(&t, target)
            }
            Architecture::Stacked => {
                let l_count = self.spec.locations;
                let loc_scores = block_scores(self, 0, format!("[{n}]L"))?;
                let act_scores: Vec<Vec<VarId>> = (0..l_count)
                    .map(|l| block_scores(self, 1 + l, format!("[{n}]A{l}")))
                    .collect::<Result<_>>()?;
                let y = self.g.add_variable(format!("loc[{n}]"), VarKind::Discrete(l_count));
                mg.selectors.push(y);
                match location {
                    Some(obs) => {
                        self.g.clamp(y, obs.clone())?;
                        self.link(&loc_scores, obs)?;
                    }
                    None => {
                        self.g.add_factor(FactorKind::DiscretePrior {
                            var: y,
                            prior: Discrete::uniform(l_count),
                        })?;
                        let gate_cases = (0..l_count)
                            .map(|l| match self.engine {
                                Engine::Ep => FactorKind::ArgMax {
                                    scores: loc_scores.clone(),
                                    class: l,
                                    weight: 1.0,
                                },
                                Engine::Vmp => FactorKind::Softmax {
                                    scores: loc_scores.clone(),
                                    target: Discrete::point_mass(l_count, l),
                                    weight: 1.0,
                                },
                            })
                            .collect();
                        self.g.add_factor(FactorKind::Gate {
                            selector: y,
                            cases: gate_cases,
                        })?;
                    }
                }
                self.gated_link(y, &act_scores, target)
            }
        }
    }

    /// Starts each source weight slightly apart so the weighted model does
    /// not sit on its symmetric point.
    fn perturb_source_weights(&mut self, mg: &ModelGraph) {
        let h = self.spec.hyper;
        let start = |k: usize| {
            Gaussian1D::from_mean_precision(h.beta_mean * (1.0 + h.beta_perturbation * k as f64), h.beta_precision)
        };
        match self.engine {
            Engine::Vmp => {
                for (k, v) in mg.source_weights.iter().enumerate() {
                    self.g.set_initial_marginal(*v, Distribution::Gaussian(start(k)));
                }
            }
            Engine::Ep => {
                let sums: Vec<FactorId> = self
                    .g
                    .factors()
                    .iter()
                    .enumerate()
                    .filter(|(_, f)| matches!(f, FactorKind::ScaledSum { .. }))
                    .map(|(i, _)| FactorId(i))
                    .collect();
                // one seeded message per source is enough to break the tie
                if let Some(first) = sums.first() {
                    for k in 0..mg.source_weights.len() {
                        self.g.set_initial_message(
                            Edge {
                                factor: *first,
                                slot: 1 + k,
                            },
                            Distribution::Gaussian(start(k)),
                        );
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelSpec;

    fn free_weights(mg: &ModelGraph) -> usize {
        mg.blocks
            .iter()
            .flat_map(|b| b.weights.iter().flatten())
            .filter(|v| mg.graph.observation(**v).is_none())
            .count()
    }

    #[test]
    fn single_bpm_pins_the_last_class() {
        let mg = build(&ModelSpec::single(2, 3)).unwrap();
        let all: usize = mg.blocks.iter().map(|b| b.weights.iter().flatten().count()).sum();
        assert_eq!(all, 6);
        assert_eq!(free_weights(&mg), 3);
    }

    #[test]
    fn switching_has_one_selector_per_instance() {
        let spec = ModelSpec::new(Architecture::FusedSwitching, 2, vec![1, 1, 1]);
        let prior = Posterior::prior(&spec).unwrap();
        let rows = vec![vec![1.0], vec![-1.0], vec![0.5], vec![2.0]];
        let batch: Vec<SourceBatch> = (0..3)
            .map(|s| SourceBatch::from_rows(format!("s{s}"), rows.clone()).with_labels(&[0, 1, 0, 1], 2))
            .collect();
        let mg = build_for_batch(&prior, &batch, true).unwrap();
        assert_eq!(mg.selectors.len(), 4);
        let theta = mg.switch.unwrap();
        assert_eq!(mg.graph.variable(theta).kind, VarKind::Dirichlet(3));
    }

    #[test]
    fn stacked_has_one_location_and_l_activity_blocks() {
        let spec = ModelSpec::stacked(9, 20, vec![2, 3], vec![0], vec![1]);
        let prior = Posterior::prior(&spec).unwrap();
        assert_eq!(prior.blocks.len(), 10);
        let loc = vec![Discrete::point_mass(9, 4); 2];
        let batch = vec![
            SourceBatch::from_rows("loc", vec![vec![1.0, 0.0]; 2]).with_location_targets(loc),
            SourceBatch::from_rows("act", vec![vec![0.5, 1.0, -1.0]; 2]).with_labels(&[3, 7], 20),
        ];
        let mg = build_for_batch(&prior, &batch, true).unwrap();
        assert_eq!(mg.blocks[0].classes, 9);
        assert!(mg.blocks[1..].iter().all(|b| b.classes == 20));
        let gates = mg
            .graph
            .factors()
            .iter()
            .filter(|f| matches!(f, FactorKind::Gate { .. }))
            .count();
        assert_eq!(gates, 2);
    }

    #[test]
    fn heavy_tailed_block_has_gamma_hierarchy() {
        let spec = ModelSpec::single(3, 2).with_prior(PriorKind::HeavyTailed);
        let mg = build(&spec).unwrap();
        let b = &mg.blocks[0];
        assert!(b.shared.is_some());
        assert_eq!(b.precisions.len(), 2);
        assert_eq!(b.rates.len(), 2);
        for f in b.prior_factors.iter().flatten() {
            assert!(matches!(
                mg.graph.factor(*f),
                FactorKind::GaussianRandomPrecision { .. }
            ));
        }
    }
}
