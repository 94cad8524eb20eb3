//! Weighted Brier score, Bayes factors and cross-validation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::SourceBatch;
use crate::dists::{Discrete, DISCRETE_SUM_TOL};
use crate::features::{FeatureError, FeaturePipeline, PipelineConfig};
use crate::graph::Engine;
use crate::models::{predict, train, EngineOptions, ModelError, ModelSpec, Posterior};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("{what} {index} does not sum to 1")]
    UnnormalizedInput { what: &'static str, index: usize },
    #[error("cannot compare {0:?} evidence with {1:?} evidence")]
    EngineMismatch(Engine, Engine),
    #[error("{folds} folds need at least {folds} instances, got {instances}")]
    TooFewInstances { instances: usize, folds: usize },
    #[error("instance {0} has no target")]
    MissingTargets(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// A log evidence together with the estimator that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub log_evidence: f64,
    pub engine: Engine,
}

impl Evidence {
    pub fn of(posterior: &Posterior) -> Evidence {
        Evidence {
            log_evidence: posterior.metadata.log_evidence,
            engine: posterior.metadata.engine,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub brier: f64,
    /// `sum_n w_c (p_nc - y_nc)^2`, so `brier = sum_c per_class_brier[c] / N`.
    pub per_class_brier: Vec<f64>,
    pub class_weights: Vec<f64>,
    pub instances: usize,
    pub classes: usize,
    pub evidence: Option<Evidence>,
}

impl EvalReport {
    pub fn with_evidence(mut self, evidence: Evidence) -> Self {
        self.evidence = Some(evidence);
        self
    }

    /// Aligned plain-text rendering.
    pub fn table(&self, class_names: &[String]) -> String {
        let name = |c: usize| class_names.get(c).cloned().unwrap_or_else(|| format!("class_{c}"));
        let width = (0..self.classes).map(|c| name(c).len()).max().unwrap_or(0).max(12);
        let mut out = format!("{:<width$}  {:>10}  {:>12}\n", "class", "weight", "brier/N");
        for c in 0..self.classes {
            out += &format!(
                "{:<width$}  {:>10.4}  {:>12.6}\n",
                name(c),
                self.class_weights[c],
                self.per_class_brier[c] / self.instances as f64
            );
        }
        out += &format!("{:<width$}  {:>10}  {:>12.6}\n", "total", "", self.brier);
        out += &format!("{:<width$}  {:>10}  {:>12}\n", "instances", "", self.instances);
        if let Some(e) = self.evidence {
            let tag = match e.engine {
                Engine::Ep => "log evidence (ep)",
                Engine::Vmp => "elbo (vmp)",
            };
            out += &format!("{:<width$}  {:>10}  {:>12.4}\n", tag, "", e.log_evidence);
        }
        out
    }
}

fn check_normalized(rows: &[&[f64]], what: &'static str) -> Result<()> {
    for (index, r) in rows.iter().enumerate() {
        let sum: f64 = r.iter().sum();
        if (sum - 1.0).abs() > DISCRETE_SUM_TOL || r.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(EvalError::UnnormalizedInput { what, index });
        }
    }
    Ok(())
}

/// `(1/N) sum_n sum_c w_c (p_nc - y_nc)^2`.
pub fn weighted_brier(predictions: &[Discrete], targets: &[Discrete], weights: &[f64]) -> Result<EvalReport> {
    let p: Vec<&[f64]> = predictions.iter().map(Discrete::probabilities).collect();
    let y: Vec<&[f64]> = targets.iter().map(Discrete::probabilities).collect();
    weighted_brier_rows(&p, &y, weights)
}

/// [`weighted_brier`] on raw probability rows.
pub fn weighted_brier_rows(predictions: &[&[f64]], targets: &[&[f64]], weights: &[f64]) -> Result<EvalReport> {
    let n = predictions.len();
    if n == 0 || targets.len() != n {
        return Err(EvalError::DimensionMismatch(format!(
            "{n} predictions for {} targets",
            targets.len()
        )));
    }
    let c = weights.len();
    if predictions.iter().chain(targets).any(|r| r.len() != c) {
        return Err(EvalError::DimensionMismatch(format!("every row needs {c} classes")));
    }
    check_normalized(predictions, "prediction")?;
    check_normalized(targets, "target")?;
    let mut per_class = vec![0.0; c];
    for (p, y) in predictions.iter().zip(targets) {
        for k in 0..c {
            let d = p[k] - y[k];
            per_class[k] += weights[k] * d * d;
        }
    }
    Ok(EvalReport {
        brier: per_class.iter().sum::<f64>() / n as f64,
        per_class_brier: per_class,
        class_weights: weights.to_vec(),
        instances: n,
        classes: c,
        evidence: None,
    })
}

/// Log posterior odds of model 1 over model 2.
pub fn bayes_factor(model_1: Evidence, model_2: Evidence, log_prior_odds: f64) -> Result<f64> {
    if model_1.engine != model_2.engine {
        return Err(EvalError::EngineMismatch(model_1.engine, model_2.engine));
    }
    Ok(log_prior_odds + model_1.log_evidence - model_2.log_evidence)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValidation {
    pub folds: Vec<EvalReport>,
    pub mean_brier: f64,
    /// Population standard deviation over folds.
    pub std_brier: f64,
}

impl CrossValidation {
    pub fn table(&self) -> String {
        let mut out = format!("{:>6}  {:>10}  {:>12}\n", "fold", "instances", "brier");
        for (k, f) in self.folds.iter().enumerate() {
            out += &format!("{:>6}  {:>10}  {:>12.6}\n", k, f.instances, f.brier);
        }
        out += &format!("{:>6}  {:>10}  {:>12.6}\n", "mean", "", self.mean_brier);
        out += &format!("{:>6}  {:>10}  {:>12.6}\n", "std", "", self.std_brier);
        out
    }
}

/// Contiguous index ranges of `k` folds over `n` instances.
pub fn fold_ranges(n: usize, k: usize) -> Result<Vec<std::ops::Range<usize>>> {
    if k < 2 || n < k {
        return Err(EvalError::TooFewInstances { instances: n, folds: k });
    }
    Ok((0..k).map(|i| i * n / k..(i + 1) * n / k).collect())
}

/// K-fold cross-validation over time-contiguous folds. When `pipeline` is
/// given it is fitted on each training split alone, and the model's source
/// widths follow its output.
pub fn cross_validate(
    spec: &ModelSpec,
    data: &[SourceBatch],
    folds: usize,
    pipeline: Option<PipelineConfig>,
    options: &EngineOptions,
    weights: &[f64],
) -> Result<CrossValidation> {
    let n = data.first().map_or(0, SourceBatch::len);
    let ranges = fold_ranges(n, folds)?;
    let reports = ranges
        .into_par_iter()
        .map(|test| {
            let train_idx: Vec<usize> = (0..n).filter(|i| !test.contains(i)).collect();
            let train_raw: Vec<SourceBatch> = data.iter().map(|s| s.select(&train_idx)).collect();
            let test_raw: Vec<SourceBatch> = data.iter().map(|s| s.slice(test.clone())).collect();
            let (train_set, test_set, dims) = match pipeline {
                Some(config) => {
                    let p = FeaturePipeline::fit(config, &train_raw)?;
                    (p.transform(&train_raw)?, p.transform(&test_raw)?, p.output_dims())
                }
                None => {
                    let dims = data.iter().map(SourceBatch::width).collect();
                    (train_raw, test_raw, dims)
                }
            };
            let fold_spec = ModelSpec {
                source_dims: dims,
                ..spec.clone()
            };
            let posterior = train(&fold_spec, &[train_set], options)?;
            let preds: Vec<Discrete> = predict(&posterior, &test_set)?
                .into_iter()
                .map(|p| p.class_probabilities)
                .collect();
            let targets = test_set[0]
                .targets
                .clone()
                .ok_or(EvalError::MissingTargets(test.start))?;
            Ok(weighted_brier(&preds, &targets, weights)?.with_evidence(Evidence::of(&posterior)))
        })
        .collect::<Result<Vec<_>>>()?;
    let k = reports.len() as f64;
    let mean = reports.iter().map(|r| r.brier).sum::<f64>() / k;
    let var = reports.iter().map(|r| (r.brier - mean) * (r.brier - mean)).sum::<f64>() / k;
    Ok(CrossValidation {
        folds: reports,
        mean_brier: mean,
        std_brier: var.sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SynthConfig};
    use proptest::prelude::*;

    fn ev(x: f64) -> Evidence {
        Evidence {
            log_evidence: x,
            engine: Engine::Ep,
        }
    }

    #[test]
    fn brier_examples() {
        let y = vec![Discrete::point_mass(4, 2)];
        let uniform = weighted_brier(&[Discrete::uniform(4)], &y, &[1.0; 4]).unwrap();
        // (1 - 1/4)^2 + 3 (1/4)^2 = 3/4
        assert_eq!(uniform.brier, 0.75);
        assert_eq!(weighted_brier(&y, &y, &[1.0; 4]).unwrap().brier, 0.0);
        let two = weighted_brier(
            &[Discrete::point_mass(4, 2), Discrete::uniform(4)],
            &[Discrete::point_mass(4, 2), Discrete::point_mass(4, 0)],
            &[1.0; 4],
        )
        .unwrap();
        assert_eq!(two.brier, 0.375);
        assert_eq!(two.per_class_brier.iter().sum::<f64>() / 2.0, two.brier);
    }

    #[test]
    fn brier_rejects_bad_input() {
        let y = [Discrete::point_mass(2, 0)];
        assert!(matches!(
            weighted_brier(&[Discrete::uniform(3)], &y, &[1.0; 2]),
            Err(EvalError::DimensionMismatch(_))
        ));
        assert!(matches!(
            weighted_brier(&[], &[], &[1.0; 2]),
            Err(EvalError::DimensionMismatch(_))
        ));
        let bad: Discrete = serde_json::from_str(r#"{"probabilities":[0.5,0.6]}"#).unwrap();
        assert!(matches!(
            weighted_brier(&[bad], &y, &[1.0; 2]),
            Err(EvalError::UnnormalizedInput {
                what: "prediction",
                index: 0
            })
        ));
    }

    #[test]
    fn bayes_factor_examples() {
        assert_eq!(bayes_factor(ev(-3.0), ev(-3.0), 0.0).unwrap(), 0.0);
        let ln10 = std::f64::consts::LN_10;
        assert!((bayes_factor(ev(-1.0 + ln10), ev(-1.0), 0.0).unwrap() - ln10).abs() < 1e-15);
        assert_eq!(bayes_factor(ev(-2.0), ev(-2.0), 3f64.ln()).unwrap(), 3f64.ln());
        let vmp = Evidence {
            log_evidence: -2.0,
            engine: Engine::Vmp,
        };
        assert!(matches!(
            bayes_factor(ev(-2.0), vmp, 0.0),
            Err(EvalError::EngineMismatch(..))
        ));
    }

    #[test]
    fn folds_are_contiguous_and_fixed() {
        assert_eq!(fold_ranges(10, 10).unwrap().len(), 10);
        assert_eq!(fold_ranges(7, 3).unwrap(), vec![0..2, 2..4, 4..7]);
        assert!(matches!(fold_ranges(3, 4), Err(EvalError::TooFewInstances { .. })));
        assert!(matches!(fold_ranges(3, 1), Err(EvalError::TooFewInstances { .. })));
    }

    #[test]
    fn leave_one_out_gives_one_report_per_instance() {
        let data = generate_synthetic(1, &SynthConfig::new(10, vec![2], 2)).unwrap();
        let spec = ModelSpec::single(2, 2);
        let cv = cross_validate(
            &spec,
            &data.sources,
            10,
            Some(PipelineConfig::default()),
            &EngineOptions::default(),
            &[1.0; 2],
        )
        .unwrap();
        assert_eq!(cv.folds.len(), 10);
        assert!(cv.folds.iter().all(|f| f.instances == 1));
        let again = cross_validate(
            &spec,
            &data.sources,
            10,
            Some(PipelineConfig::default()),
            &EngineOptions::default(),
            &[1.0; 2],
        )
        .unwrap();
        assert_eq!(cv, again);
    }

    fn rows(n: usize, c: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
        prop::collection::vec(prop::collection::vec(0.01f64..1.0, c), n).prop_map(|rs| {
            rs.into_iter()
                .map(|r| {
                    let s: f64 = r.iter().sum();
                    r.iter().map(|x| x / s).collect()
                })
                .collect()
        })
    }

    fn view(v: &[Vec<f64>]) -> Vec<&[f64]> {
        v.iter().map(Vec::as_slice).collect()
    }

    proptest! {
        #[test]
        fn brier_properties(p in rows(5, 3), y in rows(5, 3), w in prop::collection::vec(0.1f64..3.0, 3), k in -4i32..4) {
            let base = weighted_brier_rows(&view(&p), &view(&y), &w).unwrap();
            prop_assert!(base.brier >= 0.0);
            prop_assert!(base.brier <= 2.0 * w.iter().cloned().fold(0.0, f64::max) + 1e-12);

            // powers of two scale exactly
            let alpha = 2f64.powi(k);
            let scaled: Vec<f64> = w.iter().map(|x| x * alpha).collect();
            prop_assert_eq!(weighted_brier_rows(&view(&p), &view(&y), &scaled).unwrap().brier, alpha * base.brier);

            // the same class permutation everywhere leaves the score alone
            let perm = [2usize, 0, 1];
            let permute = |v: &Vec<Vec<f64>>| v.iter().map(|r| perm.iter().map(|i| r[*i]).collect()).collect::<Vec<Vec<f64>>>();
            let wp: Vec<f64> = perm.iter().map(|i| w[*i]).collect();
            let moved = weighted_brier_rows(&view(&permute(&p)), &view(&permute(&y)), &wp).unwrap();
            prop_assert!((moved.brier - base.brier).abs() < 1e-12);

            // the marginal-frequency predictor is never better than a perfect one
            let marginal: Vec<f64> = (0..3).map(|c| y.iter().map(|r| r[c]).sum::<f64>() / 5.0).collect();
            let constant = vec![marginal; 5];
            let worst = weighted_brier_rows(&view(&constant), &view(&y), &w).unwrap();
            let best = weighted_brier_rows(&view(&y), &view(&y), &w).unwrap();
            prop_assert!(worst.brier >= best.brier);
        }

        #[test]
        fn bayes_factor_is_antisymmetric(a in -1e3f64..0.0, b in -1e3f64..0.0) {
            prop_assert_eq!(bayes_factor(ev(a), ev(b), 0.0).unwrap(), -bayes_factor(ev(b), ev(a), 0.0).unwrap());
        }
    }
}
