//! Raw recordings to labelled, framed samples; leave-one-subject-out splits.

mod cache;
mod config;
mod ingest;
mod splits;

pub use cache::{write_ingest_report, Dataset, CONFIG_FILE, FRAMES_FILE, MANIFEST_FILE, REPORT_FILE};
pub use config::{ChannelSpec, DatasetConfig, LabelMap, SubjectFile, WindowConfig};
pub use ingest::{
    ingest_subject, load_recording, make_windows, map_labels, parse_recording, IngestReport,
    LabeledRecording, LabeledWindow, Recording,
};
pub use splits::{
    fold_seed, loso_splits, subsample_indices, subsample_labeled, LosoSplit, SubsampleSize,
};
