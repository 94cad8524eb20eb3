//! SPHERE-like raw sensor files.
//!
//! A dataset directory holds `pir.csv`, `accel.csv`, `rssi.csv`, one
//! `video_<room>.csv` per camera and one `annotations_<k>.csv` per
//! annotator. Timestamps are seconds; annotations are averaged per second.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::SourceBatch;
use crate::dists::Discrete;

pub const ROOMS: [&str; 9] = [
    "bathroom",
    "bedroom1",
    "bedroom2",
    "hallway",
    "kitchen",
    "living_room",
    "stairs",
    "study",
    "toilet",
];

pub const ACTIVITIES: [&str; 20] = [
    "ascent_stairs",
    "descent_stairs",
    "jump",
    "walk_with_load",
    "walk",
    "bending",
    "kneeling",
    "lying",
    "sitting",
    "squatting",
    "standing",
    "stand_to_bend",
    "kneel_to_stand",
    "lie_to_sit",
    "sit_to_lie",
    "sit_to_stand",
    "stand_to_kneel",
    "stand_to_sit",
    "bend_to_stand",
    "turn",
];

/// Access point columns of `rssi.csv`, in file order.
pub const ACCESS_POINTS: [&str; 4] = ["Kitchen_AP", "Lounge_AP", "Upstairs_AP", "Study_AP"];

/// Rooms with a camera, in feature order.
pub const CAMERAS: [&str; 3] = ["living_room", "hallway", "kitchen"];

pub const SOURCES: [&str; 4] = ["pir", "rssi", "accel", "video"];

const VIDEO_HEADER: [&str; 16] = [
    "t",
    "centre_2d_x",
    "centre_2d_y",
    "bb_2d_br_x",
    "bb_2d_br_y",
    "bb_2d_tl_x",
    "bb_2d_tl_y",
    "centre_3d_x",
    "centre_3d_y",
    "centre_3d_z",
    "bb_3d_brb_x",
    "bb_3d_brb_y",
    "bb_3d_brb_z",
    "bb_3d_flt_x",
    "bb_3d_flt_y",
    "bb_3d_flt_z",
];

/// Signal level assumed for an access point that has never been heard.
const RSSI_FLOOR: f64 = -100.0;

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("{file}:{line}: malformed csv: {message}")]
    MalformedCsv { file: PathBuf, line: u64, message: String },
    #[error("{file}:{line}: unknown room `{name}`")]
    UnknownRoom { file: PathBuf, line: u64, name: String },
    #[error("{file}:{line}: unknown activity `{name}`")]
    UnknownActivity { file: PathBuf, line: u64, name: String },
    #[error("{file}:{line}: timestamps go backwards")]
    NonMonotonicTimestamps { file: PathBuf, line: u64 },
    #[error("{0}: required file is missing")]
    MissingFile(PathBuf),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, LoadError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PirEvent {
    pub start: f64,
    pub end: f64,
    /// Index into [`ROOMS`].
    pub room: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccelSample {
    pub t: f64,
    pub xyz: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RssiSample {
    pub t: f64,
    /// dBm per access point; lost packets are `None`.
    pub readings: [Option<f64>; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoBox {
    pub t: f64,
    /// Index into [`ROOMS`].
    pub camera: usize,
    pub centre_2d: [f64; 2],
    /// Bottom-right then top-left corner.
    pub bb_2d: [f64; 4],
    pub centre_3d: [f64; 3],
    /// Back-right-bottom then front-left-top corner.
    pub bb_3d: [f64; 6],
}

/// One raw record of any modality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SensorRecord {
    Pir(PirEvent),
    Accel(AccelSample),
    Rssi(RssiSample),
    Video(VideoBox),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Location,
    Activity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub start: f64,
    pub end: f64,
    pub tier: Tier,
    /// Index into [`ROOMS`] or [`ACTIVITIES`] depending on the tier.
    pub label: usize,
}

/// Per-second targets averaged over annotators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelTrack {
    /// Second covered by the first entry.
    pub start: i64,
    pub location: Vec<Option<Discrete>>,
    pub activity: Vec<Option<Discrete>>,
    pub annotator_count: usize,
}

impl LabelTrack {
    /// Second `t` belongs to an annotator's interval when its midpoint does;
    /// a later interval of the same annotator wins overlaps.
    pub fn from_annotations(annotators: &[Vec<Annotation>]) -> LabelTrack {
        let all = annotators.iter().flatten();
        let first = all.clone().map(|a| a.start).fold(f64::INFINITY, f64::min);
        let last = all.map(|a| a.end).fold(f64::NEG_INFINITY, f64::max);
        if !first.is_finite() {
            return LabelTrack {
                start: 0,
                location: Vec::new(),
                activity: Vec::new(),
                annotator_count: annotators.len(),
            };
        }
        let start = first.floor() as i64;
        let len = (last.ceil() as i64 - start).max(0) as usize;
        let tier = |tier: Tier, classes: usize| -> Vec<Option<Discrete>> {
            let mut counts = vec![vec![0.0; classes]; len];
            let mut voters = vec![0usize; len];
            for notes in annotators {
                let mut vote: Vec<Option<usize>> = vec![None; len];
                for a in notes.iter().filter(|a| a.tier == tier) {
                    for (i, v) in vote.iter_mut().enumerate() {
                        let mid = (start + i as i64) as f64 + 0.5;
                        if a.start <= mid && mid < a.end {
                            *v = Some(a.label);
                        }
                    }
                }
                for (i, v) in vote.iter().enumerate() {
                    if let Some(label) = v {
                        counts[i][*label] += 1.0;
                        voters[i] += 1;
                    }
                }
            }
            counts
                .into_iter()
                .zip(voters)
                .map(|(c, k)| (k > 0).then(|| Discrete::from_weights(&c)))
                .collect()
        };
        LabelTrack {
            start,
            location: tier(Tier::Location, ROOMS.len()),
            activity: tier(Tier::Activity, ACTIVITIES.len()),
            annotator_count: annotators.len(),
        }
    }

    pub fn len(&self) -> usize {
        self.activity.len()
    }

    pub fn is_empty(&self) -> bool {
        self.activity.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawDataset {
    pub pir: Vec<PirEvent>,
    pub accel: Vec<AccelSample>,
    pub rssi: Vec<RssiSample>,
    pub video: Vec<VideoBox>,
    /// One list per annotator file, in file-name order.
    pub annotations: Vec<Vec<Annotation>>,
}

impl RawDataset {
    pub fn labels(&self) -> LabelTrack {
        LabelTrack::from_annotations(&self.annotations)
    }

    /// Accelerometer samples per second, estimated from the timestamps.
    pub fn accel_rate(&self) -> Option<f64> {
        let (first, last) = (self.accel.first()?, self.accel.last()?);
        let span = last.t - first.t;
        (self.accel.len() > 1 && span > 0.0).then(|| (self.accel.len() - 1) as f64 / span)
    }

    pub fn records(&self) -> impl Iterator<Item = SensorRecord> + '_ {
        let pir = self.pir.iter().cloned().map(SensorRecord::Pir);
        let accel = self.accel.iter().cloned().map(SensorRecord::Accel);
        let rssi = self.rssi.iter().cloned().map(SensorRecord::Rssi);
        let video = self.video.iter().cloned().map(SensorRecord::Video);
        pir.chain(accel).chain(rssi).chain(video)
    }
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> LoadError + '_ {
    move |source| LoadError::Io {
        path: path.to_path_buf(),
        source,
    }
}

struct Table {
    path: PathBuf,
    rows: Vec<(u64, csv::StringRecord)>,
}

impl Table {
    fn read(path: &Path, header: &[&str]) -> Result<Table> {
        if !path.exists() {
            return Err(LoadError::MissingFile(path.to_path_buf()));
        }
        let malformed = |line: u64, message: String| LoadError::MalformedCsv {
            file: path.to_path_buf(),
            line,
            message,
        };
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(false)
            .from_path(path)
            .map_err(|e| malformed(1, e.to_string()))?;
        let got = reader.headers().map_err(|e| malformed(1, e.to_string()))?;
        if got.iter().ne(header.iter().copied()) {
            return Err(malformed(1, format!("expected header `{}`", header.join(","))));
        }
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line());
                malformed(line, e.to_string())
            })?;
            let line = record.position().map_or(0, |p| p.line());
            rows.push((line, record));
        }
        Ok(Table {
            path: path.to_path_buf(),
            rows,
        })
    }

    fn malformed(&self, line: u64, message: impl Into<String>) -> LoadError {
        LoadError::MalformedCsv {
            file: self.path.clone(),
            line,
            message: message.into(),
        }
    }

    fn number(&self, line: u64, record: &csv::StringRecord, i: usize) -> Result<f64> {
        let field = &record[i];
        field
            .parse::<f64>()
            .ok()
            .filter(|x| x.is_finite())
            .ok_or_else(|| self.malformed(line, format!("field {} `{field}` is not a number", i + 1)))
    }

    fn optional(&self, line: u64, record: &csv::StringRecord, i: usize) -> Result<Option<f64>> {
        if record[i].is_empty() {
            Ok(None)
        } else {
            self.number(line, record, i).map(Some)
        }
    }

    fn monotonic(&self, times: &[(u64, f64)]) -> Result<()> {
        for w in times.windows(2) {
            if w[1].1 < w[0].1 {
                return Err(LoadError::NonMonotonicTimestamps {
                    file: self.path.clone(),
                    line: w[1].0,
                });
            }
        }
        Ok(())
    }
}

fn room_index(name: &str) -> Option<usize> {
    ROOMS.iter().position(|r| *r == name)
}

fn activity_index(name: &str) -> Option<usize> {
    ACTIVITIES.iter().position(|a| *a == name)
}

/// Files matching `prefix*.csv`, sorted by name.
fn files_with_prefix(dir: &Path, prefix: &str) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with(prefix) && n.ends_with(".csv"))
        })
        .collect();
    out.sort();
    Ok(out)
}

pub fn load_dataset(dir: &Path) -> Result<RawDataset> {
    let pir = load_pir(&dir.join("pir.csv"))?;
    let accel = load_accel(&dir.join("accel.csv"))?;
    let rssi = load_rssi(&dir.join("rssi.csv"))?;
    let mut video = Vec::new();
    for path in files_with_prefix(dir, "video_")? {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let name = &stem["video_".len()..];
        let camera = room_index(name).ok_or_else(|| LoadError::UnknownRoom {
            file: path.clone(),
            line: 0,
            name: name.to_string(),
        })?;
        video.extend(load_video(&path, camera)?);
    }
    video.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.camera.cmp(&b.camera)));
    let annotation_files = files_with_prefix(dir, "annotations_")?;
    if annotation_files.is_empty() {
        return Err(LoadError::MissingFile(dir.join("annotations_0.csv")));
    }
    let annotations = annotation_files
        .iter()
        .map(|p| load_annotations(p))
        .collect::<Result<_>>()?;
    Ok(RawDataset {
        pir,
        accel,
        rssi,
        video,
        annotations,
    })
}

fn load_pir(path: &Path) -> Result<Vec<PirEvent>> {
    let table = Table::read(path, &["start", "end", "name"])?;
    let mut out = Vec::with_capacity(table.rows.len());
    let mut times = Vec::with_capacity(table.rows.len());
    for (line, r) in &table.rows {
        let start = table.number(*line, r, 0)?;
        let end = table.number(*line, r, 1)?;
        if end < start {
            return Err(table.malformed(*line, "event ends before it starts"));
        }
        let room = room_index(&r[2]).ok_or_else(|| LoadError::UnknownRoom {
            file: table.path.clone(),
            line: *line,
            name: r[2].to_string(),
        })?;
        times.push((*line, start));
        out.push(PirEvent { start, end, room });
    }
    table.monotonic(&times)?;
    Ok(out)
}

fn load_accel(path: &Path) -> Result<Vec<AccelSample>> {
    let table = Table::read(path, &["t", "x", "y", "z"])?;
    let mut out = Vec::with_capacity(table.rows.len());
    let mut times = Vec::with_capacity(table.rows.len());
    for (line, r) in &table.rows {
        let t = table.number(*line, r, 0)?;
        let xyz = [
            table.number(*line, r, 1)?,
            table.number(*line, r, 2)?,
            table.number(*line, r, 3)?,
        ];
        times.push((*line, t));
        out.push(AccelSample { t, xyz });
    }
    table.monotonic(&times)?;
    Ok(out)
}

fn load_rssi(path: &Path) -> Result<Vec<RssiSample>> {
    let mut header = vec!["t"];
    header.extend(ACCESS_POINTS);
    let table = Table::read(path, &header)?;
    let mut out = Vec::with_capacity(table.rows.len());
    let mut times = Vec::with_capacity(table.rows.len());
    for (line, r) in &table.rows {
        let t = table.number(*line, r, 0)?;
        let mut readings = [None; 4];
        for (k, slot) in readings.iter_mut().enumerate() {
            *slot = table.optional(*line, r, k + 1)?;
        }
        times.push((*line, t));
        out.push(RssiSample { t, readings });
    }
    table.monotonic(&times)?;
    Ok(out)
}

fn load_video(path: &Path, camera: usize) -> Result<Vec<VideoBox>> {
    let table = Table::read(path, &VIDEO_HEADER)?;
    let mut out = Vec::with_capacity(table.rows.len());
    let mut times = Vec::with_capacity(table.rows.len());
    for (line, r) in &table.rows {
        let v: Vec<f64> = (0..VIDEO_HEADER.len())
            .map(|i| table.number(*line, r, i))
            .collect::<Result<_>>()?;
        let b = VideoBox {
            t: v[0],
            camera,
            centre_2d: [v[1], v[2]],
            bb_2d: [v[3], v[4], v[5], v[6]],
            centre_3d: [v[7], v[8], v[9]],
            bb_3d: [v[10], v[11], v[12], v[13], v[14], v[15]],
        };
        let in_frame = |x: f64, y: f64| (0.0..=640.0).contains(&x) && (0.0..=480.0).contains(&y);
        let corners = [
            (b.centre_2d[0], b.centre_2d[1]),
            (b.bb_2d[0], b.bb_2d[1]),
            (b.bb_2d[2], b.bb_2d[3]),
        ];
        if !corners.iter().all(|(x, y)| in_frame(*x, *y)) {
            return Err(table.malformed(*line, "2d coordinates outside the 640x480 frame"));
        }
        times.push((*line, b.t));
        out.push(b);
    }
    table.monotonic(&times)?;
    Ok(out)
}

fn load_annotations(path: &Path) -> Result<Vec<Annotation>> {
    let table = Table::read(path, &["start", "end", "tier", "label"])?;
    let mut out = Vec::with_capacity(table.rows.len());
    for (line, r) in &table.rows {
        let start = table.number(*line, r, 0)?;
        let end = table.number(*line, r, 1)?;
        if end < start {
            return Err(table.malformed(*line, "annotation ends before it starts"));
        }
        let (tier, label) = match &r[2] {
            "location" => (
                Tier::Location,
                room_index(&r[3]).ok_or_else(|| LoadError::UnknownRoom {
                    file: table.path.clone(),
                    line: *line,
                    name: r[3].to_string(),
                })?,
            ),
            "activity" => (
                Tier::Activity,
                activity_index(&r[3]).ok_or_else(|| LoadError::UnknownActivity {
                    file: table.path.clone(),
                    line: *line,
                    name: r[3].to_string(),
                })?,
            ),
            other => return Err(table.malformed(*line, format!("unknown tier `{other}`"))),
        };
        out.push(Annotation {
            start,
            end,
            tier,
            label,
        });
    }
    Ok(out)
}

fn write_csv(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| LoadError::Io {
        path: path.to_path_buf(),
        source: e.into(),
    })?;
    let err = |e: csv::Error| LoadError::Io {
        path: path.to_path_buf(),
        source: e.into(),
    };
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(&r).map_err(err)?;
    }
    w.flush().map_err(io(path))
}

/// Writes `data` in the layout [`load_dataset`] reads. Numbers use the
/// shortest decimal that parses back to the same value.
pub fn write_dataset(dir: &Path, data: &RawDataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(io(dir))?;
    let f = |x: &f64| x.to_string();
    write_csv(
        &dir.join("pir.csv"),
        &["start", "end", "name"],
        data.pir
            .iter()
            .map(|e| vec![f(&e.start), f(&e.end), ROOMS[e.room].to_string()]),
    )?;
    write_csv(
        &dir.join("accel.csv"),
        &["t", "x", "y", "z"],
        data.accel
            .iter()
            .map(|a| std::iter::once(f(&a.t)).chain(a.xyz.iter().map(f)).collect()),
    )?;
    let mut header = vec!["t"];
    header.extend(ACCESS_POINTS);
    write_csv(
        &dir.join("rssi.csv"),
        &header,
        data.rssi.iter().map(|r| {
            std::iter::once(f(&r.t))
                .chain(r.readings.iter().map(|x| x.as_ref().map(f).unwrap_or_default()))
                .collect()
        }),
    )?;
    let mut cameras: BTreeMap<usize, Vec<&VideoBox>> = BTreeMap::new();
    for b in &data.video {
        cameras.entry(b.camera).or_default().push(b);
    }
    for (camera, boxes) in cameras {
        write_csv(
            &dir.join(format!("video_{}.csv", ROOMS[camera])),
            &VIDEO_HEADER,
            boxes.into_iter().map(|b| {
                std::iter::once(&b.t)
                    .chain(&b.centre_2d)
                    .chain(&b.bb_2d)
                    .chain(&b.centre_3d)
                    .chain(&b.bb_3d)
                    .map(f)
                    .collect()
            }),
        )?;
    }
    for (k, notes) in data.annotations.iter().enumerate() {
        write_csv(
            &dir.join(format!("annotations_{k}.csv")),
            &["start", "end", "tier", "label"],
            notes.iter().map(|a| {
                let (tier, label) = match a.tier {
                    Tier::Location => ("location", ROOMS[a.label]),
                    Tier::Activity => ("activity", ACTIVITIES[a.label]),
                };
                vec![f(&a.start), f(&a.end), tier.to_string(), label.to_string()]
            }),
        )?;
    }
    Ok(())
}

/// Feature names of one raw source.
pub fn raw_feature_names(source: &str) -> Vec<String> {
    match source {
        "pir" => ROOMS.iter().map(|r| format!("pir_{r}")).collect(),
        "rssi" => ACCESS_POINTS
            .iter()
            .map(|a| format!("rssi_{a}_mean"))
            .chain(ACCESS_POINTS.iter().map(|a| format!("rssi_{a}_missing")))
            .collect(),
        "accel" => ["x", "y", "z"]
            .iter()
            .flat_map(|axis| ["mean", "std", "min", "max"].map(|s| format!("accel_{axis}_{s}")))
            .chain(std::iter::once("accel_missing".to_string()))
            .collect(),
        "video" => CAMERAS
            .iter()
            .flat_map(|c| ["present", "centre_3d_x", "centre_3d_y", "centre_3d_z"].map(|s| format!("video_{c}_{s}")))
            .collect(),
        _ => Vec::new(),
    }
}

/// Index range of samples with `lo <= t < hi` in a time-sorted slice.
fn window<T>(items: &[T], t: impl Fn(&T) -> f64, lo: f64, hi: f64) -> std::ops::Range<usize> {
    items.partition_point(|x| t(x) < lo)..items.partition_point(|x| t(x) < hi)
}

/// Per-second raw features of the requested `sources` for every second
/// with an activity label. Targets are the averaged annotations; location
/// targets are attached when every kept second has one.
pub fn raw_batches(data: &RawDataset, sources: &[&str]) -> Vec<SourceBatch> {
    let labels = data.labels();
    let kept: Vec<usize> = (0..labels.len()).filter(|i| labels.activity[*i].is_some()).collect();
    let seconds: Vec<f64> = kept.iter().map(|i| (labels.start + *i as i64) as f64).collect();
    let activity: Vec<Discrete> = kept
        .iter()
        .map(|i| labels.activity[*i].clone().expect("kept"))
        .collect();
    let location: Option<Vec<Discrete>> = kept.iter().map(|i| labels.location[*i].clone()).collect();

    sources
        .iter()
        .map(|source| {
            let rows = match *source {
                "pir" => pir_rows(data, &seconds),
                "rssi" => rssi_rows(data, &seconds),
                "accel" => accel_rows(data, &seconds),
                _ => video_rows(data, &seconds),
            };
            let mut batch = SourceBatch::new(*source, raw_feature_names(source), rows).with_targets(activity.clone());
            batch.timestamps = seconds.clone();
            if let Some(l) = &location {
                batch = batch.with_location_targets(l.clone());
            }
            batch
        })
        .collect()
}

fn pir_rows(data: &RawDataset, seconds: &[f64]) -> Vec<Vec<f64>> {
    // merge overlapping events per room so activation never exceeds 1
    let mut merged: Vec<Vec<(f64, f64)>> = vec![Vec::new(); ROOMS.len()];
    for e in &data.pir {
        let spans = &mut merged[e.room];
        match spans.last_mut() {
            Some(last) if e.start <= last.1 => last.1 = last.1.max(e.end),
            _ => spans.push((e.start, e.end)),
        }
    }
    seconds
        .iter()
        .map(|t| {
            merged
                .iter()
                .map(|spans| {
                    spans
                        .iter()
                        .map(|(s, e)| (e.min(t + 1.0) - s.max(*t)).max(0.0))
                        .sum::<f64>()
                        .min(1.0)
                })
                .collect()
        })
        .collect()
}

fn rssi_rows(data: &RawDataset, seconds: &[f64]) -> Vec<Vec<f64>> {
    seconds
        .iter()
        .map(|t| {
            let range = window(&data.rssi, |r| r.t, *t, t + 1.0);
            let inside = &data.rssi[range.clone()];
            let before = &data.rssi[..range.start];
            let mut means = [0.0; 4];
            let mut missing = [1.0; 4];
            for k in 0..4 {
                let heard: Vec<f64> = inside.iter().filter_map(|r| r.readings[k]).collect();
                if !inside.is_empty() {
                    missing[k] = 1.0 - heard.len() as f64 / inside.len() as f64;
                }
                means[k] = if heard.is_empty() {
                    before.iter().rev().find_map(|r| r.readings[k]).unwrap_or(RSSI_FLOOR)
                } else {
                    heard.iter().sum::<f64>() / heard.len() as f64
                };
            }
            means.iter().chain(&missing).copied().collect()
        })
        .collect()
}

fn accel_rows(data: &RawDataset, seconds: &[f64]) -> Vec<Vec<f64>> {
    let rate = data.accel_rate();
    let mut previous = vec![0.0; 12];
    seconds
        .iter()
        .map(|t| {
            let inside = &data.accel[window(&data.accel, |a| a.t, *t, t + 1.0)];
            let missing = match rate {
                Some(r) => (1.0 - inside.len() as f64 / r).clamp(0.0, 1.0),
                None => f64::from(u8::from(inside.is_empty())),
            };
            if !inside.is_empty() {
                let n = inside.len() as f64;
                previous = (0..3)
                    .flat_map(|axis| {
                        let v: Vec<f64> = inside.iter().map(|a| a.xyz[axis]).collect();
                        let mean = v.iter().sum::<f64>() / n;
                        let std = (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt();
                        let min = v.iter().copied().fold(f64::INFINITY, f64::min);
                        let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                        [mean, std, min, max]
                    })
                    .collect();
            }
            let mut row = previous.clone();
            row.push(missing);
            row
        })
        .collect()
}

fn video_rows(data: &RawDataset, seconds: &[f64]) -> Vec<Vec<f64>> {
    seconds
        .iter()
        .map(|t| {
            let inside = &data.video[window(&data.video, |b| b.t, *t, t + 1.0)];
            CAMERAS
                .iter()
                .flat_map(|cam| {
                    let camera = room_index(cam).expect("camera rooms are rooms");
                    let seen: Vec<&VideoBox> = inside.iter().filter(|b| b.camera == camera).collect();
                    if seen.is_empty() {
                        return [0.0; 4];
                    }
                    let n = seen.len() as f64;
                    let mean = |k: usize| seen.iter().map(|b| b.centre_3d[k]).sum::<f64>() / n;
                    [1.0, mean(0), mean(1), mean(2)]
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) {
        fs::write(dir.join(name), body).unwrap();
    }

    fn tiny(dir: &Path) {
        write(dir, "pir.csv", "start,end,name\n0,2,kitchen\n2.5,3,hallway\n");
        write(
            dir,
            "accel.csv",
            "t,x,y,z\n0,0,0,1\n0.5,0,0,1\n1,0.2,0,0.9\n1.5,0.4,0,0.8\n2.5,0,0,1\n",
        );
        write(
            dir,
            "rssi.csv",
            "t,Kitchen_AP,Lounge_AP,Upstairs_AP,Study_AP\n0.2,-60,,,\n1.2,,-70,,\n2.2,,,,\n",
        );
        write(
            dir,
            "video_kitchen.csv",
            &format!(
                "{}\n0.5,320,240,400,300,200,100,10,20,3000,1,2,3,4,5,6\n",
                VIDEO_HEADER.join(",")
            ),
        );
        write(
            dir,
            "annotations_0.csv",
            "start,end,tier,label\n0,2,location,kitchen\n2,3,location,hallway\n0,3,activity,walk\n",
        );
        write(
            dir,
            "annotations_1.csv",
            "start,end,tier,label\n0,1,location,kitchen\n1,3,location,living_room\n0,3,activity,walk\n",
        );
    }

    #[test]
    fn loads_and_averages_annotators() {
        let dir = tempfile::tempdir().unwrap();
        tiny(dir.path());
        let data = load_dataset(dir.path()).unwrap();
        let labels = data.labels();
        assert_eq!(labels.annotator_count, 2);
        let kitchen = room_index("kitchen").unwrap();
        let living = room_index("living_room").unwrap();
        let hall = room_index("hallway").unwrap();
        // unanimous
        assert_eq!(labels.location[0].as_ref().unwrap().probabilities()[kitchen], 1.0);
        // disagreement splits evenly
        let p = labels.location[2].as_ref().unwrap().probabilities();
        assert_eq!((p[hall], p[living]), (0.5, 0.5));
        for d in labels.location.iter().chain(&labels.activity).flatten() {
            let sum: f64 = d.probabilities().iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!(d.probabilities().iter().all(|q| (q * 2.0).fract() == 0.0));
        }
    }

    #[test]
    fn partial_rssi_rows_are_accepted() {
        let dir = tempfile::tempdir().unwrap();
        tiny(dir.path());
        let data = load_dataset(dir.path()).unwrap();
        assert_eq!(data.rssi[1].readings, [None, Some(-70.0), None, None]);
    }

    #[test]
    fn window_features() {
        let dir = tempfile::tempdir().unwrap();
        tiny(dir.path());
        let data = load_dataset(dir.path()).unwrap();
        let b = raw_batches(&data, &SOURCES);
        assert_eq!(b.iter().map(SourceBatch::width).collect::<Vec<_>>(), vec![9, 8, 13, 12]);
        let kitchen = room_index("kitchen").unwrap();
        assert_eq!(b[0].features[0][kitchen], 1.0);
        assert_eq!(b[0].features[0].iter().sum::<f64>(), 1.0);
        // constant (0, 0, 1) window
        assert_eq!(
            &b[2].features[0][..12],
            &[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0]
        );
        // lost packets: last observation carried forward, missing fraction 1
        assert_eq!(b[1].features[2][0], -60.0);
        assert_eq!(b[1].features[2][4], 1.0);
        // no video detections in the second window
        assert!(b[3].features[1].iter().all(|x| *x == 0.0));
        let k = CAMERAS.iter().position(|c| *c == "kitchen").unwrap();
        assert_eq!(&b[3].features[0][4 * k..4 * k + 4], &[1.0, 10.0, 20.0, 3000.0]);
        assert!(b[0].location_targets.is_some());
        assert_eq!(b[0].timestamps, vec![0.0, 1.0, 2.0]);
    }

    #[test]
    fn write_then_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        tiny(dir.path());
        let data = load_dataset(dir.path()).unwrap();
        let out = tempfile::tempdir().unwrap();
        write_dataset(out.path(), &data).unwrap();
        assert_eq!(load_dataset(out.path()).unwrap(), data);
    }

    #[test]
    fn errors_carry_file_and_line() {
        let dir = tempfile::tempdir().unwrap();
        tiny(dir.path());
        write(dir.path(), "pir.csv", "start,end,name\n0,1,kitchen\n1,2,garage\n");
        let e = load_dataset(dir.path()).unwrap_err();
        assert!(
            matches!(&e, LoadError::UnknownRoom { line: 3, name, .. } if name == "garage"),
            "{e}"
        );
        assert!(e.to_string().contains("pir.csv:3"));

        tiny(dir.path());
        write(dir.path(), "accel.csv", "t,x,y,z\n1,0,0,1\n0.5,0,0,1\n");
        assert!(matches!(
            load_dataset(dir.path()),
            Err(LoadError::NonMonotonicTimestamps { line: 3, .. })
        ));

        tiny(dir.path());
        write(dir.path(), "accel.csv", "t,x,y,z\n1,0,zero,1\n");
        assert!(matches!(
            load_dataset(dir.path()),
            Err(LoadError::MalformedCsv { line: 2, .. })
        ));

        tiny(dir.path());
        fs::remove_file(dir.path().join("rssi.csv")).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(LoadError::MissingFile(_))));
    }

    #[test]
    fn sampling_rate_comes_from_timestamps() {
        let dir = tempfile::tempdir().unwrap();
        tiny(dir.path());
        let data = load_dataset(dir.path()).unwrap();
        assert_eq!(data.accel_rate(), Some(4.0 / 2.5));
    }
}
