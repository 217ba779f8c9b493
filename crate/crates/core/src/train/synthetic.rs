//! Salient-quadrant benchmark: Gaussian-noise frames carrying one bright
//! patch whose quadrant encodes the class.

use std::collections::BTreeMap;
use std::path::PathBuf;

use crate::dataset::{ChannelSpec, Dataset, DatasetConfig, LabelMap, SubjectFile, WindowConfig};
use crate::error::{Error, Result};
use crate::frames::{ActivityFrame, FrameLayout, Sample};
use crate::glimpse::Location;
use crate::kernel::{Rng, Tensor};
use crate::train::config::TrainConfig;

/// Nine tri-axis rows give 37 × 9 activity frames.
pub const SYNTHETIC_ROWS: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SalientQuadrantSpec {
    pub samples: usize,
    pub frames: usize,
    pub subjects: usize,
    pub noise_std: f64,
    pub amplitude: f64,
    /// `(rows, cols)` of the bright patch.
    pub patch: (usize, usize),
}

impl Default for SalientQuadrantSpec {
    fn default() -> Self {
        SalientQuadrantSpec {
            samples: 50,
            frames: 1,
            subjects: 1,
            noise_std: 1.0,
            amplitude: 2.0,
            patch: (4, 2),
        }
    }
}

/// A model small enough to train on the benchmark in seconds: four copies
/// of four glimpses through a two-scale 4 × 2 retina, hidden width 32.
pub fn benchmark_config(epochs: usize, reinforce: bool) -> TrainConfig {
    let mut cfg = TrainConfig {
        epochs,
        batch_size: 10,
        patience: 0,
        validation_fraction: 0.0,
        reinforce_enabled: reinforce,
        ..TrainConfig::default()
    };
    let m = &mut cfg.model;
    m.copies = 4;
    m.glimpses = 4;
    m.glimpse_window = Some([4, 2]);
    m.scales = 2;
    m.conv_channels = [4, 4];
    m.attention_hidden = 32;
    m.frame_hidden = 32;
    m.glimpse_dim = 32;
    m.branch_dim = 32;
    cfg
}

/// Quadrant of each class as `(top, left)`: class 0 sits top-left, class 1 bottom-right.
fn quadrant(label: usize) -> (bool, bool) {
    if label == 0 { (true, true) } else { (false, false) }
}

/// Row and column ranges of the class's quadrant on an `h × w` frame.
pub fn quadrant_bounds(label: usize, h: usize, w: usize) -> ((usize, usize), (usize, usize)) {
    let (top, left) = quadrant(label);
    let rows = if top { (0, h / 2) } else { (h / 2, h) };
    let cols = if left { (0, w / 2) } else { (w / 2, w) };
    (rows, cols)
}

/// Whether `l` maps to a pixel inside the quadrant of `label`.
pub fn in_salient_quadrant(label: usize, l: Location, h: usize, w: usize) -> bool {
    let ((r0, r1), (c0, c1)) = quadrant_bounds(label, h, w);
    let (r, c) = l.to_pixel(h, w);
    (r0..r1).contains(&r) && (c0..c1).contains(&c)
}

fn synthetic_config(spec: &SalientQuadrantSpec) -> DatasetConfig {
    DatasetConfig {
        name: "salient_quadrant".into(),
        sampling_rate_hz: 1.0,
        data_dir: None,
        timestamp_column: None,
        activity_column: 0,
        channels: (0..SYNTHETIC_ROWS)
            .map(|i| ChannelSpec {
                label: format!("row{i}"),
                group: Some(format!("g{i}")),
                columns: vec![i],
            })
            .collect(),
        labels: LabelMap {
            class_names: vec!["top_left".into(), "bottom_right".into()],
            map: BTreeMap::from([("0".into(), 0), ("1".into(), 1)]),
            discard: Vec::new(),
        },
        subjects: (0..spec.subjects)
            .map(|i| SubjectFile {
                id: format!("s{i}"),
                file: PathBuf::from(format!("s{i}.txt")),
            })
            .collect(),
        windowing: WindowConfig {
            frames: spec.frames,
            layout: FrameLayout::Activity,
            ..WindowConfig::default()
        },
    }
}

/// Balanced classes (alternating); consecutive class pairs go to subjects
/// round-robin, so every subject holds both classes.
pub fn salient_quadrant_dataset(spec: &SalientQuadrantSpec, seed: u64) -> Result<Dataset> {
    if spec.samples == 0 || spec.frames == 0 || spec.subjects == 0 {
        return Err(Error::Argument("synthetic benchmark needs samples, frames and subjects".into()));
    }
    let config = synthetic_config(spec);
    let geometry = config.geometry()?;
    let (h, w) = (geometry.height(), geometry.width());
    let (ph, pw) = spec.patch;
    if ph > h / 2 || pw > w / 2 {
        return Err(Error::Argument(format!("patch {ph}x{pw} does not fit a quadrant of {h}x{w}")));
    }
    let mut rng = Rng::new(seed);
    let mut samples = Vec::with_capacity(spec.samples);
    for i in 0..spec.samples {
        let label = i % 2;
        let ((r0, r1), (c0, c1)) = quadrant_bounds(label, h, w);
        let frames = (0..spec.frames)
            .map(|f| {
                let mut data: Vec<f64> = (0..h * w).map(|_| spec.noise_std * rng.normal()).collect();
                let top = r0 + rng.below(r1 - r0 - ph + 1);
                let left = c0 + rng.below(c1 - c0 - pw + 1);
                for r in top..top + ph {
                    for c in left..left + pw {
                        data[r * w + c] += spec.amplitude;
                    }
                }
                Ok(ActivityFrame {
                    matrix: Tensor::new([h, w], data)?,
                    frame_index: f,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        samples.push(Sample {
            frames,
            label,
            subject_id: format!("s{}", (i / 2) % spec.subjects),
        });
    }
    Dataset::new(config, samples)
}
