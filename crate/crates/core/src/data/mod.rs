//! Sensor records, label tracks and per-source design matrices.

mod batch;
mod matrix;
mod sphere;
mod synth;

pub use batch::{check_aligned, BatchError, SourceBatch};
pub use matrix::{is_matrix_dataset, read_matrix_dataset, write_matrix_dataset, Manifest};
pub use sphere::{
    load_dataset, raw_batches, raw_feature_names, write_dataset, AccelSample, Annotation, LabelTrack, LoadError,
    PirEvent, RawDataset, RssiSample, SensorRecord, Tier, VideoBox, ACCESS_POINTS, ACTIVITIES, CAMERAS, ROOMS, SOURCES,
};
pub use synth::{generate_synthetic, GroundTruth, SynthConfig, SynthError, SynthMode, SyntheticData};
