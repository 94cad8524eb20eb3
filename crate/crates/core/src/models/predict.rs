use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{check_aligned, SourceBatch};
use crate::dists::{Discrete, Gaussian1D};
use crate::graph::{argmax_probabilities, softmax};

use super::build::row;
use super::{Architecture, Link, ModelError, Posterior, Result, WeightBlock};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub class_probabilities: Discrete,
    /// Fusion models: how much each source is trusted for this instance.
    pub source_responsibilities: Option<Vec<f64>>,
    /// Stacked models with more than one location.
    pub location_probabilities: Option<Discrete>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SourceRelevance {
    /// `(mean, variance)` of each source weight.
    Weighted(Vec<(f64, f64)>),
    /// Posterior mean of the switch probabilities.
    Switching(Vec<f64>),
    /// The additive model has no relevance parameters; every source gets
    /// `1/S`.
    Unweighted(Vec<f64>),
}

impl SourceRelevance {
    /// One comparable number per source.
    pub fn scores(&self) -> Vec<f64> {
        match self {
            SourceRelevance::Weighted(b) => b.iter().map(|(m, _)| m.abs()).collect(),
            SourceRelevance::Switching(p) | SourceRelevance::Unweighted(p) => p.clone(),
        }
    }
}

pub fn source_relevance(posterior: &Posterior) -> Result<SourceRelevance> {
    match posterior.spec.architecture {
        Architecture::FusedWeighted => Ok(SourceRelevance::Weighted(
            posterior
                .source_weights
                .iter()
                .map(|g| (g.mean(), g.variance()))
                .collect(),
        )),
        Architecture::FusedSwitching => Ok(SourceRelevance::Switching(
            posterior.switch.as_ref().expect("switching posterior has theta").mean(),
        )),
        Architecture::FusedAdditive => {
            let s = posterior.spec.source_dims.len();
            Ok(SourceRelevance::Unweighted(vec![1.0 / s as f64; s]))
        }
        other => Err(ModelError::WrongArchitecture(other)),
    }
}

/// Predictive distributions for every instance of `batch`.
pub fn predict(posterior: &Posterior, batch: &[SourceBatch]) -> Result<Vec<Prediction>> {
    let dims = &posterior.spec.source_dims;
    if batch.len() != dims.len() || batch.iter().zip(dims).any(|(b, d)| b.width() != *d) {
        return Err(ModelError::DimensionMismatch(format!(
            "model expects sources of widths {dims:?}"
        )));
    }
    check_aligned(batch)?;
    let n = batch.first().map_or(0, SourceBatch::len);
    (0..n)
        .into_par_iter()
        .map(|i| predict_one(posterior, batch, i))
        .collect()
}

fn predict_one(p: &Posterior, batch: &[SourceBatch], n: usize) -> Result<Prediction> {
    let spec = &p.spec;
    let link = spec.link;
    let noise = 1.0 / spec.hyper.noise_precision;
    let layout = spec.block_layout();
    let scores_of = |b: usize| block_scores(&p.blocks[b], &row(batch, &layout[b].2, n), noise);
    let plain = |class_probabilities| Prediction {
        class_probabilities,
        source_responsibilities: None,
        location_probabilities: None,
    };
    Ok(match spec.architecture {
        Architecture::SingleBpm | Architecture::ConcatBpm => plain(link_probabilities(link, &scores_of(0))?),
        Architecture::Stacked if spec.locations == 1 => plain(link_probabilities(link, &scores_of(0))?),
        Architecture::FusedAdditive | Architecture::FusedWeighted => {
            let weighted = spec.architecture == Architecture::FusedWeighted;
            // the weighted model adds its noise once, after the weighted sum
            let source_noise = if weighted { 0.0 } else { noise };
            let per_source: Vec<Vec<(f64, f64)>> = (0..layout.len())
                .map(|b| block_scores(&p.blocks[b], &row(batch, &layout[b].2, n), source_noise))
                .collect();
            let betas: Vec<(f64, f64)> = if weighted {
                p.source_weights.iter().map(|g| (g.mean(), g.variance())).collect()
            } else {
                vec![(1.0, 0.0); per_source.len()]
            };
            let fused_noise = if weighted { noise } else { 0.0 };
            let fused: Vec<(f64, f64)> = (0..spec.classes)
                .map(|c| {
                    per_source
                        .iter()
                        .zip(&betas)
                        .fold((0.0, fused_noise), |(m, v), (t, (mb, vb))| {
                            let (mt, vt) = t[c];
                            let mean = mb * mt;
                            (m + mean, v + (mb * mb + vb) * (mt * mt + vt) - mean * mean)
                        })
                })
                .collect();
            let relevance = source_relevance(p)?.scores();
            let total: f64 = relevance.iter().sum();
            Prediction {
                class_probabilities: link_probabilities(link, &fused)?,
                source_responsibilities: Some(relevance.iter().map(|r| r / total).collect()),
                location_probabilities: None,
            }
        }
        Architecture::FusedSwitching => {
            let theta = p.switch.as_ref().expect("switching posterior has theta").mean();
            let mut mix = vec![0.0; spec.classes];
            for (s, weight) in theta.iter().enumerate() {
                let probs = link_probabilities(link, &scores_of(s))?;
                for (m, q) in mix.iter_mut().zip(probs.probabilities()) {
                    *m += weight * q;
                }
            }
            Prediction {
                class_probabilities: Discrete::from_weights(&mix),
                source_responsibilities: Some(theta),
                location_probabilities: None,
            }
        }
        Architecture::Stacked => {
            let location = link_probabilities(link, &scores_of(0))?;
            let x = row(batch, &spec.activity_sources, n);
            Prediction {
                class_probabilities: stacked_activity(p, &x, &location)?,
                source_responsibilities: None,
                location_probabilities: Some(location),
            }
        }
    })
}

/// `p(activity) = sum_l p(location = l) p(activity | l)` for one activity
/// feature row.
pub fn stacked_activity(p: &Posterior, activity_row: &[f64], location: &Discrete) -> Result<Discrete> {
    let noise = 1.0 / p.spec.hyper.noise_precision;
    let mut mix = vec![0.0; p.spec.classes];
    for (l, weight) in location.probabilities().iter().enumerate() {
        if *weight == 0.0 {
            continue;
        }
        let probs = link_probabilities(p.spec.link, &block_scores(p.activity_block(l), activity_row, noise))?;
        for (m, q) in mix.iter_mut().zip(probs.probabilities()) {
            *m += weight * q;
        }
    }
    // a point-mass location must reproduce that block's output exactly
    let total: f64 = mix.iter().sum();
    Ok(if total == 1.0 {
        Discrete::new(mix).unwrap_or_else(|_| Discrete::uniform(p.spec.classes))
    } else {
        Discrete::from_weights(&mix)
    })
}

/// `(mean, variance)` of each class's noisy score under the factorized
/// weight posterior.
pub fn block_scores(block: &WeightBlock, x: &[f64], noise_variance: f64) -> Vec<(f64, f64)> {
    (0..block.classes)
        .map(|c| {
            x.iter().enumerate().fold((0.0, noise_variance), |(m, v), (d, xd)| {
                let (wm, wv) = block.moments(c, d);
                (m + xd * wm, v + xd * xd * wv)
            })
        })
        .collect()
}

/// Class probabilities from independent Gaussian scores. The arg-max link
/// gives the probability that each score is largest; the softmax link uses
/// the moderated softmax `softmax(m / sqrt(1 + pi v / 8))`.
pub fn link_probabilities(link: Link, scores: &[(f64, f64)]) -> Result<Discrete> {
    match link {
        Link::Argmax => {
            // only score differences matter; anchor on class 0
            let anchor = scores[0].0;
            let g: Vec<Gaussian1D> = scores
                .iter()
                .map(|(m, v)| Gaussian1D::from_moments(m - anchor, *v))
                .collect();
            Ok(argmax_probabilities(&g).map_err(crate::graph::GraphError::from)?)
        }
        Link::Softmax => {
            let z: Vec<f64> = scores
                .iter()
                .map(|(m, v)| m / (1.0 + std::f64::consts::PI * v / 8.0).sqrt())
                .collect();
            Ok(Discrete::from_weights(&softmax(&z)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelSpec;
    use crate::special::normal_cdf;

    #[test]
    fn zero_weights_give_uniform_predictions() {
        let mut p = Posterior::prior(&ModelSpec::single(4, 2)).unwrap();
        for w in p.blocks[0].weights.iter_mut().flatten() {
            *w = Gaussian1D::from_mean_precision(0.0, 1e300);
        }
        let batch = vec![SourceBatch::from_rows("s", vec![vec![1.0, -2.0]])];
        let pred = predict(&p, &batch).unwrap();
        for q in pred[0].class_probabilities.probabilities() {
            assert!((q - 0.25).abs() < 1e-12, "{q}");
        }
    }

    #[test]
    fn confident_score_gap_gives_probit() {
        let probs = link_probabilities(Link::Argmax, &[(10.0, 1.0), (0.0, 1.0)]).unwrap();
        let expected = normal_cdf(10.0 / 2f64.sqrt());
        assert!((probs.probabilities()[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn shifting_every_score_is_bit_identical() {
        let scores = [(0.5, 1.25), (-1.75, 1.5), (2.0, 1.0)];
        let base = link_probabilities(Link::Argmax, &scores).unwrap();
        for k in [1.0, -3.5, 64.0] {
            let shifted: Vec<(f64, f64)> = scores.iter().map(|(m, v)| (m + k, *v)).collect();
            assert_eq!(link_probabilities(Link::Argmax, &shifted).unwrap(), base);
        }
    }

    #[test]
    fn degenerate_location_reproduces_its_block() {
        let spec = ModelSpec::stacked(3, 4, vec![2, 2], vec![0], vec![1]);
        let mut p = Posterior::prior(&spec).unwrap();
        for (l, block) in p.blocks.iter_mut().enumerate() {
            for (c, row) in block.weights.iter_mut().enumerate() {
                for (d, w) in row.iter_mut().enumerate() {
                    *w = Gaussian1D::from_mean_precision((l + c) as f64 * 0.3 - d as f64, 2.0);
                }
            }
        }
        let x = [0.7, -1.2];
        let loc = Discrete::point_mass(3, 0);
        let mixed = stacked_activity(&p, &x, &loc).unwrap();
        let direct = link_probabilities(Link::Argmax, &block_scores(p.activity_block(0), &x, 1.0)).unwrap();
        assert_eq!(mixed, direct);
    }

    #[test]
    fn relevance_by_architecture() {
        let add = Posterior::prior(&ModelSpec::new(Architecture::FusedAdditive, 2, vec![1, 1, 1])).unwrap();
        assert_eq!(
            source_relevance(&add).unwrap(),
            SourceRelevance::Unweighted(vec![1.0 / 3.0; 3])
        );
        let w = Posterior::prior(&ModelSpec::new(Architecture::FusedWeighted, 2, vec![1, 1])).unwrap();
        assert_eq!(
            source_relevance(&w).unwrap(),
            SourceRelevance::Weighted(vec![(1.0, 1.0); 2])
        );
        let single = Posterior::prior(&ModelSpec::single(2, 1)).unwrap();
        assert!(matches!(
            source_relevance(&single),
            Err(ModelError::WrongArchitecture(_))
        ));
    }
}
