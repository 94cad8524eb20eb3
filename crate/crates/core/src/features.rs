//! Preprocessing that turns per-source windows into design matrices.
//!
//! Stages always run in the order context window, standardize, poly2, bias.
//! Statistics are fitted once on training data and never touched again.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{BatchError, SourceBatch};

pub const PIPELINE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("column {0} has no rows to fit")]
    EmptyColumn(usize),
    #[error("pipeline was fitted on {expected} sources, got {got}")]
    SourceCount { expected: usize, got: usize },
    #[error("source `{source_name}` has {got} raw features, pipeline expects {expected}")]
    Width {
        source_name: String,
        expected: usize,
        got: usize,
    },
    #[error("unsupported pipeline format version {0}")]
    FormatVersion(u32),
    #[error(transparent)]
    Batch(#[from] BatchError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, FeatureError>;

/// Per-column mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    /// Columns with zero spread; they transform to 0.
    pub zero_variance: Vec<bool>,
}

impl Standardizer {
    pub fn transform_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(d, x)| {
                if self.zero_variance[d] {
                    0.0
                } else {
                    (x - self.means[d]) / self.stds[d]
                }
            })
            .collect()
    }
}

/// Fits column statistics on `rows` (`N x D`).
pub fn fit_standardizer(rows: &[Vec<f64>], width: usize) -> Result<Standardizer> {
    if rows.is_empty() {
        return Err(FeatureError::EmptyColumn(0));
    }
    let n = rows.len() as f64;
    let mut means = vec![0.0; width];
    for r in rows {
        for (m, x) in means.iter_mut().zip(r) {
            *m += x;
        }
    }
    means.iter_mut().for_each(|m| *m /= n);
    let mut stds = vec![0.0; width];
    for r in rows {
        for ((s, x), m) in stds.iter_mut().zip(r).zip(&means) {
            *s += (x - m) * (x - m);
        }
    }
    stds.iter_mut().for_each(|s| *s = (*s / n).sqrt());
    let zero_variance = stds.iter().map(|s| *s == 0.0).collect();
    Ok(Standardizer {
        means,
        stds,
        zero_variance,
    })
}

/// The row followed by `x_i x_j` for `i <= j` in lexicographic order.
pub fn poly2(row: &[f64]) -> Vec<f64> {
    let d = row.len();
    let mut out = Vec::with_capacity(d + d * (d + 1) / 2);
    out.extend_from_slice(row);
    for i in 0..d {
        for j in i..d {
            out.push(row[i] * row[j]);
        }
    }
    out
}

fn poly2_names(names: &[String]) -> Vec<String> {
    let mut out = names.to_vec();
    for i in 0..names.len() {
        for j in i..names.len() {
            out.push(if i == j {
                format!("{}^2", names[i])
            } else {
                format!("{}*{}", names[i], names[j])
            });
        }
    }
    out
}

/// Concatenates rows `t-r ..= t+r`, repeating the first or last row past
/// the ends.
pub fn context_window(rows: &[Vec<f64>], radius: usize) -> Vec<Vec<f64>> {
    let n = rows.len() as isize;
    let r = radius as isize;
    (0..n)
        .map(|t| {
            (t - r..=t + r)
                .flat_map(|k| rows[k.clamp(0, n - 1) as usize].iter().copied())
                .collect()
        })
        .collect()
}

fn context_names(names: &[String], radius: usize) -> Vec<String> {
    if radius == 0 {
        return names.to_vec();
    }
    let r = radius as isize;
    (-r..=r)
        .flat_map(|k| names.iter().map(move |n| format!("{n}@{k:+}")))
        .collect()
}

pub fn add_bias(row: &[f64]) -> Vec<f64> {
    let mut out = row.to_vec();
    out.push(1.0);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Neighbouring time points on each side folded into every row.
    pub context_radius: usize,
    pub standardize: bool,
    pub poly2: bool,
    pub bias: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            context_radius: 1,
            standardize: true,
            poly2: false,
            bias: true,
        }
    }
}

/// Fitted state for one source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceStages {
    pub source: String,
    pub input_names: Vec<String>,
    pub standardizer: Option<Standardizer>,
    pub output_names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturePipeline {
    pub format_version: u32,
    pub config: PipelineConfig,
    /// Standard deviations use `1/N`.
    pub population_std: bool,
    pub sources: Vec<SourceStages>,
}

impl FeaturePipeline {
    pub fn fit(config: PipelineConfig, training: &[SourceBatch]) -> Result<FeaturePipeline> {
        let sources = training
            .iter()
            .map(|b| {
                b.validate()?;
                let windowed = context_window(&b.features, config.context_radius);
                let mut names = context_names(&b.feature_names, config.context_radius);
                let standardizer = if config.standardize {
                    Some(fit_standardizer(&windowed, names.len())?)
                } else {
                    None
                };
                if config.poly2 {
                    names = poly2_names(&names);
                }
                if config.bias {
                    names.push(format!("{}_bias", b.source));
                }
                Ok(SourceStages {
                    source: b.source.clone(),
                    input_names: b.feature_names.clone(),
                    standardizer,
                    output_names: names,
                })
            })
            .collect::<Result<_>>()?;
        Ok(FeaturePipeline {
            format_version: PIPELINE_FORMAT_VERSION,
            config,
            population_std: true,
            sources,
        })
    }

    /// Output widths, one per source.
    pub fn output_dims(&self) -> Vec<usize> {
        self.sources.iter().map(|s| s.output_names.len()).collect()
    }

    /// Applies the fitted stages; targets and timestamps pass through.
    pub fn transform(&self, batch: &[SourceBatch]) -> Result<Vec<SourceBatch>> {
        if batch.len() != self.sources.len() {
            return Err(FeatureError::SourceCount {
                expected: self.sources.len(),
                got: batch.len(),
            });
        }
        batch
            .iter()
            .zip(&self.sources)
            .map(|(b, stages)| {
                if b.width() != stages.input_names.len() && !b.is_empty() {
                    return Err(FeatureError::Width {
                        source_name: b.source.clone(),
                        expected: stages.input_names.len(),
                        got: b.width(),
                    });
                }
                let rows = context_window(&b.features, self.config.context_radius)
                    .into_iter()
                    .map(|r| {
                        let mut r = match &stages.standardizer {
                            Some(s) => s.transform_row(&r),
                            None => r,
                        };
                        if self.config.poly2 {
                            r = poly2(&r);
                        }
                        if self.config.bias {
                            r = add_bias(&r);
                        }
                        r
                    })
                    .collect();
                Ok(SourceBatch {
                    feature_names: stages.output_names.clone(),
                    features: rows,
                    ..b.clone()
                })
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<FeaturePipeline> {
        let p: FeaturePipeline = serde_json::from_str(text)?;
        if p.format_version != PIPELINE_FORMAT_VERSION {
            return Err(FeatureError::FormatVersion(p.format_version));
        }
        Ok(p)
    }
}
