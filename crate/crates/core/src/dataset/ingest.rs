use std::io::BufRead;
use std::path::Path;
use std::sync::Arc;

use crate::dataset::config::{DatasetConfig, LabelMap};
use crate::error::{Error, Result};
use crate::frames::{window_to_sample_with, FrameGeometry, ModalitySnapshot, Sample};

/// Parsed rows of one subject file.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub subject_id: String,
    pub timestamps: Vec<f64>,
    pub activity_ids: Vec<i64>,
    pub snapshots: Vec<ModalitySnapshot>,
    /// Non-empty lines read.
    pub rows_in: usize,
    /// Lines dropped for a non-finite value in a mapped channel.
    pub rows_dropped: usize,
}

impl Recording {
    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }
}

pub fn load_recording(path: &Path, config: &DatasetConfig, subject_id: &str) -> Result<Recording> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_recording(std::io::BufReader::new(file), config, subject_id)
        .map_err(|e| match e {
            Error::Data(m) => Error::Data(format!("{}: {m}", path.display())),
            other => other,
        })
}

/// Parses whitespace-separated decimal lines.
pub fn parse_recording<R: BufRead>(input: R, config: &DatasetConfig, subject_id: &str) -> Result<Recording> {
    let labels: Arc<[String]> = config.row_labels();
    let needed = config.max_column() + 1;
    let mut rec = Recording {
        subject_id: subject_id.to_string(),
        timestamps: Vec::new(),
        activity_ids: Vec::new(),
        snapshots: Vec::new(),
        rows_in: 0,
        rows_dropped: 0,
    };
    for (line_no, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::io(format!("<{subject_id}>"), e))?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        rec.rows_in += 1;
        if tokens.len() < needed {
            return Err(Error::Data(format!(
                "line {}: {} columns, config reads column {}",
                line_no + 1,
                tokens.len(),
                needed - 1
            )));
        }
        let number = |col: usize| -> Result<f64> {
            tokens[col].parse::<f64>().map_err(|_| {
                Error::Data(format!(
                    "line {}: column {col} is not numeric: {:?}",
                    line_no + 1,
                    tokens[col]
                ))
            })
        };
        let mut rows = Vec::with_capacity(config.channels.len());
        let mut finite = true;
        for ch in &config.channels {
            let mut v = [0.0; 3];
            for (axis, &col) in ch.columns.iter().enumerate() {
                v[axis] = number(col)?;
                finite &= v[axis].is_finite();
            }
            rows.push(v);
        }
        let activity = number(config.activity_column)?;
        if !activity.is_finite() || activity.fract() != 0.0 {
            return Err(Error::Data(format!(
                "line {}: activity id {activity} is not an integer",
                line_no + 1
            )));
        }
        let timestamp = match config.timestamp_column {
            Some(col) => number(col)?,
            None => rec.rows_in as f64 / config.sampling_rate_hz,
        };
        if !finite {
            rec.rows_dropped += 1;
            continue;
        }
        rec.timestamps.push(timestamp);
        rec.activity_ids.push(activity as i64);
        rec.snapshots.push(ModalitySnapshot {
            rows,
            row_labels: labels.clone(),
        });
    }
    Ok(rec)
}

/// A recording after raw ids were mapped to classes.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledRecording {
    pub subject_id: String,
    pub snapshots: Vec<ModalitySnapshot>,
    pub labels: Vec<usize>,
    /// Increments after every run of discarded rows, so windows never bridge one.
    pub segments: Vec<usize>,
    pub rows_in: usize,
    pub rows_dropped: usize,
    pub rows_discarded: usize,
}

impl LabeledRecording {
    pub fn rows_used(&self) -> usize {
        self.snapshots.len()
    }
}

pub fn map_labels(recording: Recording, labels: &LabelMap) -> Result<LabeledRecording> {
    let mut out = LabeledRecording {
        subject_id: recording.subject_id,
        snapshots: Vec::with_capacity(recording.snapshots.len()),
        labels: Vec::with_capacity(recording.snapshots.len()),
        segments: Vec::with_capacity(recording.snapshots.len()),
        rows_in: recording.rows_in,
        rows_dropped: recording.rows_dropped,
        rows_discarded: 0,
    };
    let mut segment = 0;
    let mut in_gap = false;
    for (snap, raw) in recording.snapshots.into_iter().zip(recording.activity_ids) {
        match labels.map_id(raw)? {
            Some(class) => {
                if in_gap {
                    segment += 1;
                    in_gap = false;
                }
                out.snapshots.push(snap);
                out.labels.push(class);
                out.segments.push(segment);
            }
            None => {
                out.rows_discarded += 1;
                in_gap = true;
            }
        }
    }
    Ok(out)
}

/// A single-label run of consecutive snapshots.
#[derive(Debug, Clone, Copy)]
pub struct LabeledWindow<'a> {
    pub snapshots: &'a [ModalitySnapshot],
    pub label: usize,
    pub subject_id: &'a str,
}

/// Sliding windows starting at `0, stride, 2·stride, …`; windows that cross a
/// label change or a discarded stretch are skipped.
pub fn make_windows(
    recording: &LabeledRecording,
    window_len: usize,
    stride: usize,
    frames: usize,
) -> Result<Vec<LabeledWindow<'_>>> {
    if window_len < frames || frames == 0 || stride == 0 {
        return Err(Error::Config(format!(
            "window {window_len} / stride {stride} / {frames} frames is not a valid windowing"
        )));
    }
    let n = recording.rows_used();
    let mut windows = Vec::new();
    let mut start = 0;
    while start + window_len <= n {
        let end = start + window_len;
        let label = recording.labels[start];
        let segment = recording.segments[start];
        let uniform = recording.labels[start..end].iter().all(|&l| l == label)
            && recording.segments[end - 1] == segment;
        if uniform {
            windows.push(LabeledWindow {
                snapshots: &recording.snapshots[start..end],
                label,
                subject_id: &recording.subject_id,
            });
        }
        start += stride;
    }
    Ok(windows)
}

/// Per-subject ingestion summary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IngestReport {
    pub subject_id: String,
    pub rows_in: usize,
    pub rows_used: usize,
    pub rows_dropped: usize,
    pub rows_discarded: usize,
    pub windows: usize,
}

/// Loads, labels, windows and frames one subject file.
pub fn ingest_subject(
    config: &DatasetConfig,
    geometry: &FrameGeometry,
    subject_id: &str,
    path: &Path,
) -> Result<(Vec<Sample>, IngestReport)> {
    let recording = load_recording(path, config, subject_id)?;
    let labeled = map_labels(recording, &config.labels)?;
    let (len, stride) = config.windowing.lengths(config.sampling_rate_hz)?;
    let frames = config.windowing.frames;
    let windows = make_windows(&labeled, len, stride, frames)?;
    let samples = windows
        .iter()
        .map(|w| window_to_sample_with(geometry, w.snapshots, frames, w.label, w.subject_id))
        .collect::<Result<Vec<_>>>()?;
    let report = IngestReport {
        subject_id: subject_id.to_string(),
        rows_in: labeled.rows_in,
        rows_used: labeled.rows_used(),
        rows_dropped: labeled.rows_dropped,
        rows_discarded: labeled.rows_discarded,
        windows: samples.len(),
    };
    Ok((samples, report))
}
