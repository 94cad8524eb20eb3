//! Synthetic data with known ground truth.
//!
//! Features are standard normal. Labels are the arg-max of linear scores
//! plus unit Gaussian noise, so the generated data follow the classifier's
//! own assumptions. Sources outside `informative` never enter a score.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::SourceBatch;
use crate::dists::Discrete;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
}

/// How labels depend on the sources.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthMode {
    /// Scores of all informative sources are summed.
    Additive,
    /// Each instance draws one informative source and uses its score alone.
    Switching,
    /// Sources in `location_sources` decide a location; the activity is the
    /// arg-max of activity scores plus `ln coupling[location]`.
    Stacked {
        locations: usize,
        location_sources: Vec<usize>,
        coupling: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub instances: usize,
    /// Feature count per source.
    pub source_dims: Vec<usize>,
    /// Number of classes (activities in stacked mode).
    pub classes: usize,
    /// Sources whose features drive the label.
    pub informative: Vec<usize>,
    pub mode: SynthMode,
    /// Append a constant 1 feature to every source.
    pub bias: bool,
    /// Standard deviation of the true weights.
    pub weight_scale: f64,
}

impl SynthConfig {
    pub fn new(instances: usize, source_dims: Vec<usize>, classes: usize) -> Self {
        let informative = (0..source_dims.len()).collect();
        SynthConfig {
            instances,
            source_dims,
            classes,
            informative,
            mode: SynthMode::Additive,
            bias: false,
            weight_scale: 1.0,
        }
    }

    pub fn with_informative(mut self, informative: Vec<usize>) -> Self {
        self.informative = informative;
        self
    }

    pub fn with_mode(mut self, mode: SynthMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_bias(mut self) -> Self {
        self.bias = true;
        self
    }

    pub fn with_weight_scale(mut self, scale: f64) -> Self {
        self.weight_scale = scale;
        self
    }

    /// Stacked data where every location strongly favours two activities.
    /// Source 0 carries location, source 1 activity.
    pub fn stacked(instances: usize, locations: usize, activities: usize, dims: [usize; 2]) -> Self {
        let coupling = (0..locations)
            .map(|l| {
                (0..activities)
                    .map(|a| {
                        if a == l % activities || a == (l + 1) % activities {
                            1.0
                        } else {
                            0.02
                        }
                    })
                    .collect()
            })
            .collect();
        SynthConfig::new(instances, dims.to_vec(), activities)
            .with_informative(vec![1])
            .with_mode(SynthMode::Stacked {
                locations,
                location_sources: vec![0],
                coupling,
            })
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidConfig(m.into()));
        let s = self.source_dims.len();
        if self.classes < 2 {
            return bad("need at least two classes");
        }
        if s == 0 || self.source_dims.contains(&0) {
            return bad("every source needs at least one feature");
        }
        if self.informative.iter().any(|i| *i >= s) {
            return bad("informative source index out of range");
        }
        if !(self.weight_scale > 0.0 && self.weight_scale.is_finite()) {
            return bad("weight scale must be positive");
        }
        match &self.mode {
            SynthMode::Switching if self.informative.is_empty() => bad("switching needs an informative source"),
            SynthMode::Stacked {
                locations,
                location_sources,
                coupling,
            } => {
                if *locations < 1 {
                    return bad("need at least one location");
                }
                if location_sources.is_empty() || location_sources.iter().any(|i| *i >= s) {
                    return bad("location sources out of range");
                }
                let shape_ok = coupling.len() == *locations && coupling.iter().all(|r| r.len() == self.classes);
                if !shape_ok || coupling.iter().flatten().any(|p| !(*p >= 0.0) || !p.is_finite()) {
                    return bad("coupling must be a nonnegative locations x classes table");
                }
                if coupling.iter().any(|r| r.iter().all(|p| *p == 0.0)) {
                    return bad("every location needs a possible activity");
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// The parameters that generated a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub config: SynthConfig,
    pub seed: u64,
    /// `weights[s][c][d]` for every source, zero for uninformative ones.
    pub weights: Vec<Vec<Vec<f64>>>,
    /// Location weights `[s][l][d]` (stacked only).
    pub location_weights: Option<Vec<Vec<Vec<f64>>>>,
    /// Probability of each source being the active one (switching only).
    pub switch_probabilities: Option<Vec<f64>>,
    pub labels: Vec<usize>,
    pub locations: Option<Vec<usize>>,
    /// Switching only: which source produced each label.
    pub active_sources: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub sources: Vec<SourceBatch>,
    pub truth: GroundTruth,
}

pub fn generate_synthetic(seed: u64, config: &SynthConfig) -> Result<SyntheticData, SynthError> {
    config.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let n = config.instances;
    let c = config.classes;
    let extra = usize::from(config.bias);
    let widths: Vec<usize> = config.source_dims.iter().map(|d| d + extra).collect();

    let gaussian = |rng: &mut ChaCha20Rng| -> f64 { StandardNormal.sample(rng) };
    let draw_weights = |rng: &mut ChaCha20Rng, rows: usize, active: &dyn Fn(usize) -> bool| -> Vec<Vec<Vec<f64>>> {
        widths
            .iter()
            .enumerate()
            .map(|(s, w)| {
                (0..rows)
                    .map(|_| {
                        (0..*w)
                            .map(|_| {
                                let v: f64 = StandardNormal.sample(rng);
                                if active(s) {
                                    config.weight_scale * v
                                } else {
                                    0.0
                                }
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect()
    };
    let informative = |s: usize| config.informative.contains(&s);
    let weights = draw_weights(&mut rng, c, &informative);

    let (location_weights, locations_count, location_sources) = match &config.mode {
        SynthMode::Stacked {
            locations,
            location_sources,
            ..
        } => {
            let in_loc = |s: usize| location_sources.contains(&s);
            (
                Some(draw_weights(&mut rng, *locations, &in_loc)),
                *locations,
                location_sources.clone(),
            )
        }
        _ => (None, 0, Vec::new()),
    };
    let switch_probabilities = matches!(config.mode, SynthMode::Switching).then(|| {
        let k = config.informative.len();
        vec![1.0 / k as f64; k]
    });

    let features: Vec<Vec<Vec<f64>>> = (0..n)
        .map(|_| {
            widths
                .iter()
                .map(|w| {
                    (0..*w)
                        .map(|d| {
                            if config.bias && d + 1 == *w {
                                1.0
                            } else {
                                gaussian(&mut rng)
                            }
                        })
                        .collect()
                })
                .collect()
        })
        .collect();

    let score = |ws: &[Vec<Vec<f64>>], sources: &mut dyn Iterator<Item = usize>, x: &[Vec<f64>], k: usize| -> f64 {
        sources
            .map(|s| ws[s][k].iter().zip(&x[s]).map(|(a, b)| a * b).sum::<f64>())
            .sum()
    };
    let mut labels = Vec::with_capacity(n);
    let mut locations = Vec::with_capacity(n);
    let mut active_sources = Vec::with_capacity(n);
    for x in &features {
        let offsets: Vec<f64> = match &config.mode {
            SynthMode::Stacked { coupling, .. } => {
                let loc_scores: Vec<f64> = (0..locations_count)
                    .map(|l| {
                        let lw = location_weights.as_ref().expect("stacked has location weights");
                        score(lw, &mut location_sources.iter().copied(), x, l) + gaussian(&mut rng)
                    })
                    .collect();
                let loc = argmax(&loc_scores);
                locations.push(loc);
                coupling[loc].iter().map(|p| p.ln()).collect()
            }
            _ => vec![0.0; c],
        };
        let active: Vec<usize> = match config.mode {
            SynthMode::Switching => {
                let pick = config.informative[rng.random_range(0..config.informative.len())];
                active_sources.push(pick);
                vec![pick]
            }
            _ => config.informative.clone(),
        };
        let scores: Vec<f64> = (0..c)
            .map(|k| score(&weights, &mut active.iter().copied(), x, k) + gaussian(&mut rng) + offsets[k])
            .collect();
        labels.push(argmax(&scores));
    }

    let is_stacked = locations_count > 0;
    let sources = (0..widths.len())
        .map(|s| {
            let mut names: Vec<String> = (0..config.source_dims[s]).map(|d| format!("s{s}_x{d}")).collect();
            if config.bias {
                names.push(format!("s{s}_bias"));
            }
            let rows = features.iter().map(|x| x[s].clone()).collect();
            let batch = SourceBatch::new(format!("source{s}"), names, rows).with_labels(&labels, c);
            if is_stacked {
                let locs = locations
                    .iter()
                    .map(|l| Discrete::point_mass(locations_count, *l))
                    .collect();
                batch.with_location_targets(locs)
            } else {
                batch
            }
        })
        .collect();

    Ok(SyntheticData {
        sources,
        truth: GroundTruth {
            config: config.clone(),
            seed,
            weights,
            location_weights,
            switch_probabilities,
            labels,
            locations: is_stacked.then_some(locations),
            active_sources: matches!(config.mode, SynthMode::Switching).then_some(active_sources),
        },
    })
}

/// Lowest index wins ties.
fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold(0, |best, (i, x)| if *x > v[best] { i } else { best })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_data() {
        let cfg = SynthConfig::new(30, vec![2, 3], 3);
        assert_eq!(
            generate_synthetic(9, &cfg).unwrap(),
            generate_synthetic(9, &cfg).unwrap()
        );
        assert_ne!(
            generate_synthetic(9, &cfg).unwrap(),
            generate_synthetic(10, &cfg).unwrap()
        );
    }

    #[test]
    fn identity_coupling_copies_the_location() {
        let mut cfg = SynthConfig::stacked(200, 2, 2, [2, 2]);
        if let SynthMode::Stacked { coupling, .. } = &mut cfg.mode {
            *coupling = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        }
        let data = generate_synthetic(3, &cfg).unwrap();
        assert_eq!(data.truth.locations.as_ref().unwrap(), &data.truth.labels);
    }

    #[test]
    fn uninformative_sources_have_zero_weights() {
        let cfg = SynthConfig::new(5, vec![2, 2, 2], 3).with_informative(vec![1]);
        let data = generate_synthetic(1, &cfg).unwrap();
        assert!(data.truth.weights[0].iter().flatten().all(|w| *w == 0.0));
        assert!(data.truth.weights[1].iter().flatten().any(|w| *w != 0.0));
    }

    #[test]
    fn prior_predictive_labels_are_balanced() {
        // one instance per seed gives independent draws from a symmetric model
        let (c, seeds) = (3usize, 3000u64);
        let mut counts = vec![0usize; c];
        let cfg = SynthConfig::new(1, vec![3], c);
        for seed in 0..seeds {
            counts[generate_synthetic(seed, &cfg).unwrap().truth.labels[0]] += 1;
        }
        let p = 1.0 / c as f64;
        let sd = (seeds as f64 * p * (1.0 - p)).sqrt();
        for k in counts {
            assert!((k as f64 - seeds as f64 * p).abs() < 5.0 * sd, "{k}");
        }
    }

    #[test]
    fn bias_column_is_constant() {
        let data = generate_synthetic(2, &SynthConfig::new(4, vec![2], 2).with_bias()).unwrap();
        assert!(data.sources[0].features.iter().all(|r| r[2] == 1.0));
        assert_eq!(data.sources[0].feature_names[2], "s0_bias");
    }

    #[test]
    fn bad_configs_are_rejected() {
        assert!(generate_synthetic(0, &SynthConfig::new(3, vec![2], 1)).is_err());
        assert!(generate_synthetic(0, &SynthConfig::new(3, vec![2], 2).with_informative(vec![4])).is_err());
        let mut st = SynthConfig::stacked(3, 2, 3, [1, 1]);
        if let SynthMode::Stacked { coupling, .. } = &mut st.mode {
            coupling.pop();
        }
        assert!(generate_synthetic(0, &st).is_err());
    }
}
