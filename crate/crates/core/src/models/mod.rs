//! The classifier family: Bayes point machines, their fused and stacked
//! variants, and the train / predict / online-update lifecycle.

mod build;
mod learn;
mod predict;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::BatchError;
use crate::dists::{Dirichlet, Discrete, Gamma, Gaussian1D};
use crate::graph::{Engine, GraphError};

pub use build::{build, build_for_batch, BlockHandles, ModelGraph};
pub use learn::{adf_update, train, EngineOptions};
pub use predict::{
    block_scores, link_probabilities, predict, source_relevance, stacked_activity, Prediction, SourceRelevance,
};

pub const POSTERIOR_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("operation needs a fusion architecture, got {0}")]
    WrongArchitecture(Architecture),
    #[error("training batch has no targets")]
    MissingTargets,
    #[error("unsupported posterior format version {0}")]
    FormatVersion(u32),
    #[error("posterior violates an invariant: {0}")]
    InvalidPosterior(String),
    #[error(transparent)]
    Batch(#[from] BatchError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    SingleBpm,
    ConcatBpm,
    FusedAdditive,
    FusedWeighted,
    FusedSwitching,
    Stacked,
}

impl Architecture {
    pub const ALL: [Architecture; 6] = [
        Architecture::SingleBpm,
        Architecture::ConcatBpm,
        Architecture::FusedAdditive,
        Architecture::FusedWeighted,
        Architecture::FusedSwitching,
        Architecture::Stacked,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Architecture::SingleBpm => "single_bpm",
            Architecture::ConcatBpm => "concat_bpm",
            Architecture::FusedAdditive => "fused_additive",
            Architecture::FusedWeighted => "fused_weighted",
            Architecture::FusedSwitching => "fused_switching",
            Architecture::Stacked => "stacked",
        }
    }

    pub fn is_fusion(&self) -> bool {
        matches!(
            self,
            Architecture::FusedAdditive | Architecture::FusedWeighted | Architecture::FusedSwitching
        )
    }
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Architecture {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        Architecture::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| ModelError::InvalidSpec(format!("unknown architecture `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    Argmax,
    Softmax,
}

impl Link {
    /// Argmax factors only have EP updates and softmax factors only VMP.
    pub fn engine(&self) -> Engine {
        match self {
            Link::Argmax => Engine::Ep,
            Link::Softmax => Engine::Vmp,
        }
    }
}

impl std::str::FromStr for Link {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "argmax" => Ok(Link::Argmax),
            "softmax" => Ok(Link::Softmax),
            _ => Err(ModelError::InvalidSpec(format!("unknown link `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorKind {
    Gaussian,
    HeavyTailed,
}

impl std::str::FromStr for PriorKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(PriorKind::Gaussian),
            "heavy_tailed" => Ok(PriorKind::HeavyTailed),
            _ => Err(ModelError::InvalidSpec(format!("unknown prior `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    /// Precision of the Gaussian weight prior `N(0, 1/weight_precision)`.
    pub weight_precision: f64,
    /// Precision of the additive score noise.
    pub noise_precision: f64,
    /// Shared precision `a ~ Gamma(shared_shape, shared_rate)`.
    pub shared_shape: f64,
    pub shared_rate: f64,
    /// Per-feature precision `tau_d ~ Gamma(precision_shape, b_d)`.
    pub precision_shape: f64,
    /// `b_d ~ Gamma(rate_shape, rate_rate * mean(x_d^2))`.
    pub rate_shape: f64,
    pub rate_rate: f64,
    /// Source weights `beta_s ~ N(beta_mean, 1/beta_precision)`.
    pub beta_mean: f64,
    pub beta_precision: f64,
    /// Relative per-source offset of the initial `beta` messages.
    pub beta_perturbation: f64,
    /// Symmetric Dirichlet pseudo-count for the switch probabilities.
    pub switch_concentration: f64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Hyperparameters {
            weight_precision: 1.0,
            noise_precision: 1.0,
            shared_shape: 2.0,
            shared_rate: 2.0,
            precision_shape: 1.0,
            rate_shape: 2.0,
            rate_rate: 2.0,
            beta_mean: 1.0,
            beta_precision: 1.0,
            beta_perturbation: 0.01,
            switch_concentration: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub architecture: Architecture,
    pub link: Link,
    pub prior: PriorKind,
    /// Number of classes; the activity count for the stacked model.
    pub classes: usize,
    /// Feature count of each source, in batch order.
    pub source_dims: Vec<usize>,
    /// Stacked only: number of locations.
    #[serde(default)]
    pub locations: usize,
    /// Stacked only: sources feeding the location classifier.
    #[serde(default)]
    pub location_sources: Vec<usize>,
    /// Stacked only: sources feeding the activity classifiers.
    #[serde(default)]
    pub activity_sources: Vec<usize>,
    pub hyper: Hyperparameters,
}

impl ModelSpec {
    pub fn new(architecture: Architecture, classes: usize, source_dims: Vec<usize>) -> Self {
        let all: Vec<usize> = (0..source_dims.len()).collect();
        ModelSpec {
            architecture,
            link: Link::Argmax,
            prior: PriorKind::Gaussian,
            classes,
            source_dims,
            locations: 0,
            location_sources: all.clone(),
            activity_sources: all,
            hyper: Hyperparameters::default(),
        }
    }

    pub fn single(classes: usize, features: usize) -> Self {
        ModelSpec::new(Architecture::SingleBpm, classes, vec![features])
    }

    pub fn stacked(
        locations: usize,
        activities: usize,
        source_dims: Vec<usize>,
        location_sources: Vec<usize>,
        activity_sources: Vec<usize>,
    ) -> Self {
        ModelSpec {
            locations,
            location_sources,
            activity_sources,
            ..ModelSpec::new(Architecture::Stacked, activities, source_dims)
        }
    }

    pub fn with_link(mut self, link: Link) -> Self {
        self.link = link;
        self
    }

    pub fn with_prior(mut self, prior: PriorKind) -> Self {
        self.prior = prior;
        self
    }

    pub fn engine(&self) -> Engine {
        self.link.engine()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ModelError::InvalidSpec(m.to_string()));
        if self.classes < 2 {
            return bad("at least two classes are needed");
        }
        if self.source_dims.is_empty() || self.source_dims.contains(&0) {
            return bad("every source needs at least one feature");
        }
        let s = self.source_dims.len();
        match self.architecture {
            Architecture::SingleBpm if s != 1 => bad("single_bpm takes exactly one source"),
            a if a.is_fusion() && s < 2 => bad("fusion architectures need at least two sources"),
            Architecture::Stacked => {
                if self.locations == 0 {
                    return bad("stacked needs at least one location");
                }
                for list in [&self.location_sources, &self.activity_sources] {
                    if list.is_empty() || list.iter().any(|i| *i >= s) {
                        return bad("stacked source lists must name existing sources");
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }?;
        let h = &self.hyper;
        let positive = [
            h.weight_precision,
            h.noise_precision,
            h.shared_shape,
            h.shared_rate,
            h.precision_shape,
            h.rate_shape,
            h.rate_rate,
            h.beta_precision,
            h.switch_concentration,
        ];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return bad("hyperparameters must be positive and finite");
        }
        Ok(())
    }

    /// `(classes, features, sources)` of each weight block, in storage order.
    pub(crate) fn block_layout(&self) -> Vec<(usize, usize, Vec<usize>)> {
        let dims = |sources: &[usize]| sources.iter().map(|s| self.source_dims[*s]).sum();
        let all: Vec<usize> = (0..self.source_dims.len()).collect();
        match self.architecture {
            Architecture::SingleBpm | Architecture::ConcatBpm => {
                vec![(self.classes, dims(&all), all)]
            }
            Architecture::FusedAdditive | Architecture::FusedWeighted | Architecture::FusedSwitching => all
                .iter()
                .map(|s| (self.classes, self.source_dims[*s], vec![*s]))
                .collect(),
            Architecture::Stacked => {
                let act = (
                    self.classes,
                    dims(&self.activity_sources),
                    self.activity_sources.clone(),
                );
                if self.locations == 1 {
                    return vec![act];
                }
                let loc = (
                    self.locations,
                    dims(&self.location_sources),
                    self.location_sources.clone(),
                );
                std::iter::once(loc)
                    .chain(std::iter::repeat_n(act, self.locations))
                    .collect()
            }
        }
    }
}

/// Gamma hierarchy over one block's weight precisions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeavyTailState {
    /// Precision shared by all features.
    pub shared: Gamma,
    /// Per-feature precisions.
    pub precisions: Vec<Gamma>,
    /// Per-feature rates of those precisions.
    pub rates: Vec<Gamma>,
    /// Per-feature `mean(x_d^2)` of the first training batch.
    pub scales: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightBlock {
    pub classes: usize,
    pub features: usize,
    /// Weight posteriors of the free classes `0..classes-1`; the last class
    /// is pinned at zero and not stored.
    pub weights: Vec<Vec<Gaussian1D>>,
    /// Product of all data messages received by each free weight, used to
    /// keep learning from later batches.
    pub data: Vec<Vec<Gaussian1D>>,
    pub heavy: Option<HeavyTailState>,
}

impl WeightBlock {
    fn prior(classes: usize, features: usize, precision: f64) -> Self {
        let row = vec![Gaussian1D::from_mean_precision(0.0, precision); features];
        WeightBlock {
            classes,
            features,
            weights: vec![row; classes - 1],
            data: vec![vec![Gaussian1D::uniform(); features]; classes - 1],
            heavy: None,
        }
    }

    /// `(mean, variance)` of weight `(c, d)`; the pinned class is exactly 0.
    pub fn moments(&self, class: usize, feature: usize) -> (f64, f64) {
        if class + 1 == self.classes {
            return (0.0, 0.0);
        }
        let g = self.weights[class][feature];
        (g.mean(), g.variance())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub instances_seen: usize,
    pub batches_seen: usize,
    /// Sum of per-batch log evidences (each conditioned on earlier batches).
    pub log_evidence: f64,
    pub engine: Engine,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Posterior {
    pub format_version: u32,
    pub spec: ModelSpec,
    pub blocks: Vec<WeightBlock>,
    /// Weighted fusion: per-source score multipliers.
    #[serde(default)]
    pub source_weights: Vec<Gaussian1D>,
    #[serde(default)]
    pub source_weight_data: Vec<Gaussian1D>,
    /// Switching fusion: source selection probabilities.
    #[serde(default)]
    pub switch: Option<Dirichlet>,
    #[serde(default)]
    pub switch_data: Option<Dirichlet>,
    pub metadata: TrainingMetadata,
}

impl Posterior {
    /// The untrained model.
    pub fn prior(spec: &ModelSpec) -> Result<Posterior> {
        spec.validate()?;
        let h = &spec.hyper;
        let blocks = spec
            .block_layout()
            .into_iter()
            .map(|(c, d, _)| WeightBlock::prior(c, d, h.weight_precision))
            .collect();
        let s = spec.source_dims.len();
        let weighted = spec.architecture == Architecture::FusedWeighted;
        let switching = spec.architecture == Architecture::FusedSwitching;
        Ok(Posterior {
            format_version: POSTERIOR_FORMAT_VERSION,
            spec: spec.clone(),
            blocks,
            source_weights: if weighted {
                vec![Gaussian1D::from_mean_precision(h.beta_mean, h.beta_precision); s]
            } else {
                Vec::new()
            },
            source_weight_data: if weighted {
                vec![Gaussian1D::uniform(); s]
            } else {
                Vec::new()
            },
            switch: switching.then(|| Dirichlet::symmetric(s, h.switch_concentration)),
            switch_data: switching.then(|| Dirichlet::uniform_message(s)),
            metadata: TrainingMetadata {
                instances_seen: 0,
                batches_seen: 0,
                log_evidence: 0.0,
                engine: spec.engine(),
                converged: true,
                iterations: 0,
            },
        })
    }

    /// Checks the stored invariants: pinned last class, proper distributions.
    pub fn validate(&self) -> Result<()> {
        if self.format_version != POSTERIOR_FORMAT_VERSION {
            return Err(ModelError::FormatVersion(self.format_version));
        }
        self.spec.validate()?;
        let bad = |m: String| Err(ModelError::InvalidPosterior(m));
        let layout = self.spec.block_layout();
        if layout.len() != self.blocks.len() {
            return bad(format!(
                "expected {} weight blocks, found {}",
                layout.len(),
                self.blocks.len()
            ));
        }
        for (b, (block, (c, d, _))) in self.blocks.iter().zip(&layout).enumerate() {
            if block.classes != *c || block.features != *d {
                return bad(format!("block {b} has shape {}x{}", block.classes, block.features));
            }
            if block.weights.len() != c - 1 || block.weights.iter().any(|r| r.len() != *d) {
                return bad(format!("block {b} must store exactly {} free classes", c - 1));
            }
            if block.weights.iter().flatten().any(|g| !g.is_proper()) {
                return bad(format!("block {b} has an improper weight posterior"));
            }
        }
        if self.source_weights.iter().any(|g| !g.is_proper()) {
            return bad("improper source weight".into());
        }
        if let Some(theta) = &self.switch {
            if !theta.is_proper() {
                return bad("improper switch posterior".into());
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Posterior> {
        let p: Posterior = serde_json::from_str(text)?;
        p.validate()?;
        Ok(p)
    }

    /// Stacked only: the location classifier block, absent when `L = 1`.
    pub fn location_block(&self) -> Option<&WeightBlock> {
        (self.spec.architecture == Architecture::Stacked && self.spec.locations > 1).then(|| &self.blocks[0])
    }

    /// Stacked only: the activity classifier used at location `l`.
    pub fn activity_block(&self, location: usize) -> &WeightBlock {
        if self.spec.locations > 1 {
            &self.blocks[1 + location]
        } else {
            &self.blocks[0]
        }
    }
}

/// Target distributions of one instance, as `(class, weight)` pairs with
/// positive weight.
pub(crate) fn target_terms(target: &Discrete) -> Vec<(usize, f64)> {
    target
        .probabilities()
        .iter()
        .enumerate()
        .filter(|(_, p)| **p > 0.0)
        .map(|(c, p)| (c, *p))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prior_posterior_round_trips_through_json() {
        let spec = ModelSpec::new(Architecture::FusedWeighted, 3, vec![2, 4]);
        let p = Posterior::prior(&spec).unwrap();
        let text = p.to_json().unwrap();
        let back = Posterior::from_json(&text).unwrap();
        assert_eq!(p, back);
        assert_eq!(back.to_json().unwrap(), text);
    }

    #[test]
    fn spec_validation() {
        assert!(ModelSpec::single(1, 3).validate().is_err());
        assert!(ModelSpec::new(Architecture::SingleBpm, 2, vec![2, 2])
            .validate()
            .is_err());
        assert!(ModelSpec::new(Architecture::FusedAdditive, 2, vec![2])
            .validate()
            .is_err());
        assert!(ModelSpec::stacked(3, 4, vec![2, 3], vec![0], vec![5])
            .validate()
            .is_err());
        assert!(ModelSpec::stacked(3, 4, vec![2, 3], vec![0], vec![1])
            .validate()
            .is_ok());
    }

    #[test]
    fn pinned_class_is_not_stored() {
        let p = Posterior::prior(&ModelSpec::single(4, 3)).unwrap();
        assert_eq!(p.blocks[0].weights.len(), 3);
        assert_eq!(p.blocks[0].moments(3, 1), (0.0, 0.0));
        let mut broken = p.clone();
        broken.blocks[0]
            .weights
            .push(vec![Gaussian1D::from_mean_precision(0.0, 1.0); 3]);
        assert!(broken.validate().is_err());
    }

    #[test]
    fn names_parse() {
        for a in Architecture::ALL {
            assert_eq!(a.name().parse::<Architecture>().unwrap(), a);
        }
        assert!("bogus".parse::<Architecture>().is_err());
    }
}
