//! Ready-made design matrices on disk.
//!
//! `dataset.json` names the sources and classes; each source lives in
//! `features_<source>.csv` (`t,<feature names>`), targets in `targets.csv`
//! (`t,<class names>`) and optional location targets in `locations.csv`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::sphere::LoadError;
use super::SourceBatch;
use crate::dists::Discrete;

pub const MANIFEST: &str = "dataset.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub sources: Vec<String>,
    pub class_names: Vec<String>,
    #[serde(default)]
    pub location_names: Vec<String>,
}

impl Manifest {
    pub fn generic(sources: &[SourceBatch], classes: usize, locations: usize) -> Manifest {
        Manifest {
            sources: sources.iter().map(|s| s.source.clone()).collect(),
            class_names: (0..classes).map(|c| format!("class_{c}")).collect(),
            location_names: (0..locations).map(|l| format!("loc_{l}")).collect(),
        }
    }
}

pub fn is_matrix_dataset(dir: &Path) -> bool {
    dir.join(MANIFEST).is_file()
}

fn io_error(path: &Path) -> impl Fn(std::io::Error) -> LoadError + '_ {
    move |source| LoadError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_error(path: &Path) -> impl Fn(csv::Error) -> LoadError + '_ {
    move |e| LoadError::MalformedCsv {
        file: path.to_path_buf(),
        line: e.position().map_or(0, |p| p.line()),
        message: e.to_string(),
    }
}

fn write_table(path: &Path, header: &[String], timestamps: &[f64], rows: &[&[f64]]) -> Result<(), LoadError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error(path))?;
    let mut head = vec!["t".to_string()];
    head.extend_from_slice(header);
    w.write_record(&head).map_err(csv_error(path))?;
    for (t, r) in timestamps.iter().zip(rows) {
        let record: Vec<String> = std::iter::once(t).chain(r.iter()).map(f64::to_string).collect();
        w.write_record(&record).map_err(csv_error(path))?;
    }
    w.flush().map_err(io_error(path))
}

/// Header names and `(t, row)` pairs of one table.
fn read_table(path: &Path) -> Result<(Vec<String>, Vec<f64>, Vec<Vec<f64>>), LoadError> {
    if !path.is_file() {
        return Err(LoadError::MissingFile(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path).map_err(csv_error(path))?;
    let header: Vec<String> = r
        .headers()
        .map_err(csv_error(path))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.first().map(String::as_str) != Some("t") {
        return Err(LoadError::MalformedCsv {
            file: path.to_path_buf(),
            line: 1,
            message: "first column must be `t`".into(),
        });
    }
    let mut times = Vec::new();
    let mut rows = Vec::new();
    for record in r.records() {
        let record = record.map_err(csv_error(path))?;
        let line = record.position().map_or(0, |p| p.line());
        let values: Vec<f64> = record
            .iter()
            .map(|f| f.parse::<f64>().ok().filter(|x| x.is_finite()))
            .collect::<Option<_>>()
            .ok_or_else(|| LoadError::MalformedCsv {
                file: path.to_path_buf(),
                line,
                message: "non-numeric field".into(),
            })?;
        if times.last().is_some_and(|prev| values[0] < *prev) {
            return Err(LoadError::NonMonotonicTimestamps {
                file: path.to_path_buf(),
                line,
            });
        }
        times.push(values[0]);
        rows.push(values[1..].to_vec());
    }
    Ok((header[1..].to_vec(), times, rows))
}

fn distributions(path: &Path, rows: Vec<Vec<f64>>) -> Result<Vec<Discrete>, LoadError> {
    rows.into_iter()
        .enumerate()
        .map(|(i, r)| {
            Discrete::new(r).map_err(|e| LoadError::MalformedCsv {
                file: path.to_path_buf(),
                line: i as u64 + 2,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Writes aligned `sources`; targets come from the first source.
pub fn write_matrix_dataset(dir: &Path, manifest: &Manifest, sources: &[SourceBatch]) -> Result<(), LoadError> {
    fs::create_dir_all(dir).map_err(io_error(dir))?;
    let path = dir.join(MANIFEST);
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(io_error(&path))?;
    for s in sources {
        let rows: Vec<&[f64]> = s.features.iter().map(Vec::as_slice).collect();
        write_table(
            &dir.join(format!("features_{}.csv", s.source)),
            &s.feature_names,
            &s.timestamps,
            &rows,
        )?;
    }
    if let Some(first) = sources.first() {
        let probs = |d: &Option<Vec<Discrete>>| -> Option<Vec<Vec<f64>>> {
            d.as_ref()
                .map(|v| v.iter().map(|q| q.probabilities().to_vec()).collect())
        };
        if let Some(t) = probs(&first.targets) {
            let rows: Vec<&[f64]> = t.iter().map(Vec::as_slice).collect();
            write_table(
                &dir.join("targets.csv"),
                &manifest.class_names,
                &first.timestamps,
                &rows,
            )?;
        }
        if let Some(l) = probs(&first.location_targets) {
            let rows: Vec<&[f64]> = l.iter().map(Vec::as_slice).collect();
            write_table(
                &dir.join("locations.csv"),
                &manifest.location_names,
                &first.timestamps,
                &rows,
            )?;
        }
    }
    Ok(())
}

pub fn read_matrix_dataset(dir: &Path) -> Result<(Manifest, Vec<SourceBatch>), LoadError> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(io_error(&path))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| LoadError::MalformedCsv {
        file: path.clone(),
        line: e.line() as u64,
        message: e.to_string(),
    })?;
    let optional = |name: &str| -> Result<Option<Vec<Discrete>>, LoadError> {
        let p: PathBuf = dir.join(name);
        if !p.is_file() {
            return Ok(None);
        }
        let (_, _, rows) = read_table(&p)?;
        distributions(&p, rows).map(Some)
    };
    let targets = optional("targets.csv")?;
    let locations = optional("locations.csv")?;
    let sources = manifest
        .sources
        .iter()
        .map(|name| {
            let (names, times, rows) = read_table(&dir.join(format!("features_{name}.csv")))?;
            let mut b = SourceBatch::new(name.clone(), names, rows);
            b.timestamps = times;
            b.targets = targets.clone();
            b.location_targets = locations.clone();
            Ok(b)
        })
        .collect::<Result<Vec<_>, LoadError>>()?;
    Ok((manifest, sources))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SynthConfig};

    #[test]
    fn round_trips_bit_exactly() {
        let data = generate_synthetic(4, &SynthConfig::stacked(12, 3, 4, [2, 3])).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = Manifest::generic(&data.sources, 4, 3);
        write_matrix_dataset(dir.path(), &manifest, &data.sources).unwrap();
        assert!(is_matrix_dataset(dir.path()));
        let (m, back) = read_matrix_dataset(dir.path()).unwrap();
        assert_eq!(m, manifest);
        assert_eq!(back, data.sources);
    }

    #[test]
    fn unlabeled_sets_have_no_targets() {
        let b = SourceBatch::from_rows("a", vec![vec![0.5], vec![-1.0]]);
        let dir = tempfile::tempdir().unwrap();
        write_matrix_dataset(
            dir.path(),
            &Manifest::generic(std::slice::from_ref(&b), 2, 0),
            std::slice::from_ref(&b),
        )
        .unwrap();
        let (_, back) = read_matrix_dataset(dir.path()).unwrap();
        assert_eq!(back[0], b);
    }
}
