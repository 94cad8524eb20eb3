use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dists::Discrete;

#[derive(Debug, Error, PartialEq)]
pub enum BatchError {
    #[error("source `{source_name}` has {got} rows, expected {expected}")]
    RowCount {
        source_name: String,
        expected: usize,
        got: usize,
    },
    #[error("source `{source_name}` row {row} has {got} features, expected {expected}")]
    RowWidth {
        source_name: String,
        row: usize,
        expected: usize,
        got: usize,
    },
    #[error("sources disagree on timestamps")]
    TimestampMismatch,
}

/// One source's design matrix for `N` instances, with optional targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceBatch {
    pub source: String,
    pub feature_names: Vec<String>,
    /// `N` rows of `D` features.
    pub features: Vec<Vec<f64>>,
    pub timestamps: Vec<f64>,
    /// Class (activity) targets, one distribution per instance.
    pub targets: Option<Vec<Discrete>>,
    /// Location targets, used by the stacked model.
    pub location_targets: Option<Vec<Discrete>>,
}

impl SourceBatch {
    pub fn new(source: impl Into<String>, feature_names: Vec<String>, features: Vec<Vec<f64>>) -> Self {
        let timestamps = (0..features.len()).map(|t| t as f64).collect();
        SourceBatch {
            source: source.into(),
            feature_names,
            features,
            timestamps,
            targets: None,
            location_targets: None,
        }
    }

    /// Unnamed features `x0, x1, ...`.
    pub fn from_rows(source: impl Into<String>, features: Vec<Vec<f64>>) -> Self {
        let width = features.first().map_or(0, Vec::len);
        let names = (0..width).map(|d| format!("x{d}")).collect();
        SourceBatch::new(source, names, features)
    }

    pub fn with_targets(mut self, targets: Vec<Discrete>) -> Self {
        self.targets = Some(targets);
        self
    }

    pub fn with_labels(self, labels: &[usize], classes: usize) -> Self {
        let targets = labels.iter().map(|y| Discrete::point_mass(classes, *y)).collect();
        self.with_targets(targets)
    }

    pub fn with_location_targets(mut self, targets: Vec<Discrete>) -> Self {
        self.location_targets = Some(targets);
        self
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn width(&self) -> usize {
        self.feature_names.len()
    }

    /// Rows `range` of this batch, targets included.
    pub fn slice(&self, range: std::ops::Range<usize>) -> SourceBatch {
        SourceBatch {
            source: self.source.clone(),
            feature_names: self.feature_names.clone(),
            features: self.features[range.clone()].to_vec(),
            timestamps: self.timestamps[range.clone()].to_vec(),
            targets: self.targets.as_ref().map(|t| t[range.clone()].to_vec()),
            location_targets: self.location_targets.as_ref().map(|t| t[range].to_vec()),
        }
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> SourceBatch {
        let pick = |v: &Vec<Discrete>| indices.iter().map(|i| v[*i].clone()).collect();
        SourceBatch {
            source: self.source.clone(),
            feature_names: self.feature_names.clone(),
            features: indices.iter().map(|i| self.features[*i].clone()).collect(),
            timestamps: indices.iter().map(|i| self.timestamps[*i]).collect(),
            targets: self.targets.as_ref().map(pick),
            location_targets: self.location_targets.as_ref().map(pick),
        }
    }

    pub fn validate(&self) -> Result<(), BatchError> {
        if self.timestamps.len() != self.features.len() {
            return Err(BatchError::RowCount {
                source_name: self.source.clone(),
                expected: self.features.len(),
                got: self.timestamps.len(),
            });
        }
        for (row, x) in self.features.iter().enumerate() {
            if x.len() != self.width() {
                return Err(BatchError::RowWidth {
                    source_name: self.source.clone(),
                    row,
                    expected: self.width(),
                    got: x.len(),
                });
            }
        }
        for t in [&self.targets, &self.location_targets].into_iter().flatten() {
            if t.len() != self.len() {
                return Err(BatchError::RowCount {
                    source_name: self.source.clone(),
                    expected: self.len(),
                    got: t.len(),
                });
            }
        }
        Ok(())
    }
}

/// Checks that every source describes the same instances.
pub fn check_aligned(sources: &[SourceBatch]) -> Result<(), BatchError> {
    let Some(first) = sources.first() else { return Ok(()) };
    for s in sources {
        s.validate()?;
        if s.len() != first.len() {
            return Err(BatchError::RowCount {
                source_name: s.source.clone(),
                expected: first.len(),
                got: s.len(),
            });
        }
        if s.timestamps != first.timestamps {
            return Err(BatchError::TimestampMismatch);
        }
    }
    Ok(())
}
