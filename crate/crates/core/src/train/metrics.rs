use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::FrameGeometry;
use crate::glimpse::RetinaConfig;
use crate::model::{ModelConfig, SampleTrace};

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub class_names: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(class_names: &[String]) -> Self {
        let c = class_names.len();
        ConfusionMatrix {
            class_names: class_names.to_vec(),
            counts: vec![vec![0; c]; c],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.counts[truth][predicted] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.num_classes()).map(|i| self.counts[i][i]).sum()
    }

    /// `trace / total`; 0 for an empty matrix.
    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            n => self.correct() as f64 / n as f64,
        }
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.class_names != self.class_names {
            return Err(Error::Dimension("confusion matrices over different classes".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("true\\predicted");
        for name in &self.class_names {
            write!(s, ",{name}").unwrap();
        }
        s.push('\n');
        for (name, row) in self.class_names.iter().zip(&self.counts) {
            s.push_str(name);
            for v in row {
                write!(s, ",{v}").unwrap();
            }
            s.push('\n');
        }
        s
    }
}

/// Visit counts of glimpse centres over the frame grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlimpseHeatmap {
    pub height: usize,
    pub width: usize,
    /// Row-major `height × width`.
    pub counts: Vec<u64>,
    pub window: RetinaConfig,
    pub samples: usize,
    pub copies: usize,
    pub glimpses: usize,
    pub frames: usize,
}

impl GlimpseHeatmap {
    pub fn new(cfg: &ModelConfig) -> Self {
        GlimpseHeatmap {
            height: cfg.frame_height,
            width: cfg.frame_width,
            counts: vec![0; cfg.frame_height * cfg.frame_width],
            window: cfg.glimpse.retina,
            samples: 0,
            copies: cfg.copies,
            glimpses: cfg.glimpses,
            frames: cfg.frames,
        }
    }

    /// Adds every location attended by every copy of `trace`.
    pub fn record(&mut self, trace: &SampleTrace) {
        self.samples += 1;
        for copy in &trace.copies {
            for rec in &copy.locations {
                let (r, c) = rec.location.to_pixel(self.height, self.width);
                self.counts[r * self.width + c] += 1;
            }
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// `samples · M · T · F`.
    pub fn expected_total(&self) -> u64 {
        (self.samples * self.copies * self.glimpses * self.frames) as u64
    }

    pub fn row_totals(&self) -> Vec<u64> {
        self.counts.chunks(self.width).map(|r| r.iter().sum()).collect()
    }

    pub fn merge(&mut self, other: &GlimpseHeatmap) -> Result<()> {
        if (other.height, other.width, other.copies, other.glimpses, other.frames)
            != (self.height, self.width, self.copies, self.glimpses, self.frames)
        {
            return Err(Error::Dimension("heatmaps of different shapes".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.samples += other.samples;
        Ok(())
    }

    /// The count matrix, one frame row per line.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for row in self.counts.chunks(self.width) {
            let cells: Vec<String> = row.iter().map(u64::to_string).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalityShare {
    pub modality: String,
    pub visits: u64,
    pub percent: f64,
}

/// The modality group shown on every frame row.
pub fn frame_row_groups(geometry: &FrameGeometry, source_groups: &[String]) -> Vec<String> {
    (0..geometry.height())
        .map(|p| source_groups[geometry.source_row(p)].clone())
        .collect()
}

/// Attributes each visit to the modality of the row holding the glimpse
/// centre. Modalities are listed in order of first appearance.
pub fn export_modality_involvement(
    heatmap: &GlimpseHeatmap,
    row_groups: &[String],
) -> Result<Vec<ModalityShare>> {
    if row_groups.len() != heatmap.height {
        return Err(Error::Dimension(format!(
            "{} row groups for a heatmap of {} rows",
            row_groups.len(),
            heatmap.height
        )));
    }
    let total = heatmap.total();
    if total == 0 {
        return Err(Error::State("heatmap has no visits".into()));
    }
    let mut shares: Vec<ModalityShare> = Vec::new();
    for (group, visits) in row_groups.iter().zip(heatmap.row_totals()) {
        match shares.iter_mut().find(|s| &s.modality == group) {
            Some(s) => s.visits += visits,
            None => shares.push(ModalityShare {
                modality: group.clone(),
                visits,
                percent: 0.0,
            }),
        }
    }
    for s in &mut shares {
        s.percent = 100.0 * s.visits as f64 / total as f64;
    }
    Ok(shares)
}

pub fn involvement_csv(shares: &[ModalityShare]) -> String {
    let mut s = String::from("modality,visits,percent\n");
    for m in shares {
        writeln!(s, "{},{},{:.4}", m.modality, m.visits, m.percent).unwrap();
    }
    s
}

/// Wall-clock seconds per forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LatencyStats {
    pub samples: usize,
    pub mean_s: f64,
    /// Nearest-rank 95th percentile.
    pub p95_s: f64,
}

impl LatencyStats {
    pub fn from_seconds(mut secs: Vec<f64>) -> Self {
        if secs.is_empty() {
            return LatencyStats::default();
        }
        secs.sort_by(f64::total_cmp);
        let n = secs.len();
        let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
        LatencyStats {
            samples: n,
            mean_s: secs.iter().sum::<f64>() / n as f64,
            p95_s: secs[rank - 1],
        }
    }
}
