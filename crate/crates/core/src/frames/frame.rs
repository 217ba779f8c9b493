use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::permutation::{build_permutation, PermutationSequence};
use crate::kernel::Tensor;

/// Every frame row is a 9-wide expansion of one tri-axis vector.
pub const FRAME_WIDTH: usize = 9;

const ODD_TEMPLATE: [usize; 9] = [0, 1, 2, 0, 1, 2, 0, 1, 2];
const EVEN_TEMPLATE: [usize; 9] = [0, 1, 2, 1, 2, 0, 2, 0, 1];

/// Stacked tri-axis readings at one instant, one row per (body location, modality).
#[derive(Debug, Clone, PartialEq)]
pub struct ModalitySnapshot {
    pub rows: Vec<[f64; 3]>,
    pub row_labels: Arc<[String]>,
}

impl ModalitySnapshot {
    pub fn new(rows: Vec<[f64; 3]>, row_labels: Arc<[String]>) -> Result<Self> {
        if rows.len() != row_labels.len() {
            return Err(Error::Dimension(format!(
                "{} rows but {} row labels",
                rows.len(),
                row_labels.len()
            )));
        }
        Ok(ModalitySnapshot { rows, row_labels })
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    fn mean_of(snapshots: &[ModalitySnapshot]) -> ModalitySnapshot {
        let n_rows = snapshots[0].n_rows();
        let mut rows = vec![[0.0; 3]; n_rows];
        for s in snapshots {
            for (acc, r) in rows.iter_mut().zip(&s.rows) {
                for a in 0..3 {
                    acc[a] += r[a];
                }
            }
        }
        let n = snapshots.len() as f64;
        for r in &mut rows {
            for v in r.iter_mut() {
                *v /= n;
            }
        }
        ModalitySnapshot {
            rows,
            row_labels: snapshots[0].row_labels.clone(),
        }
    }
}

/// Expands one tri-axis row by its 1-based sequence number:
/// odd rows repeat `x y z`, even rows rotate to `x y z y z x z x y`.
pub fn expand_row(row: [f64; 3], sequence_number: usize) -> [f64; FRAME_WIDTH] {
    let template = if sequence_number % 2 == 1 {
        &ODD_TEMPLATE
    } else {
        &EVEN_TEMPLATE
    };
    template.map(|axis| row[axis])
}

/// How stacked rows are arranged into a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameLayout {
    /// Pair-adjacency permutation plus odd/even axis expansion.
    #[default]
    Activity,
    /// Rows in input order, each tiled `x y z x y z x y z`; the ablation baseline.
    Stacked,
}

/// Row arrangement shared by every frame built from one sensor layout.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameGeometry {
    layout: FrameLayout,
    row_labels: Arc<[String]>,
    permutation: Option<PermutationSequence>,
    /// 0-based input row feeding each frame row.
    sources: Vec<usize>,
}

impl FrameGeometry {
    pub fn new(layout: FrameLayout, row_labels: Arc<[String]>) -> Result<Self> {
        let n = row_labels.len();
        let (permutation, sources) = match layout {
            FrameLayout::Activity => {
                let p = build_permutation(n)?;
                let sources = p.as_slice().iter().map(|&r| r - 1).collect();
                (Some(p), sources)
            }
            FrameLayout::Stacked => {
                if n == 0 {
                    return Err(Error::Argument("stacked frame needs at least one row".into()));
                }
                (None, (0..n).collect())
            }
        };
        Ok(FrameGeometry {
            layout,
            row_labels,
            permutation,
            sources,
        })
    }

    pub fn layout(&self) -> FrameLayout {
        self.layout
    }

    pub fn row_labels(&self) -> &Arc<[String]> {
        &self.row_labels
    }

    pub fn n_rows(&self) -> usize {
        self.row_labels.len()
    }

    pub fn permutation(&self) -> Option<&PermutationSequence> {
        self.permutation.as_ref()
    }

    pub fn height(&self) -> usize {
        self.sources.len()
    }

    pub fn width(&self) -> usize {
        FRAME_WIDTH
    }

    /// 0-based input row shown on frame row `p`.
    pub fn source_row(&self, p: usize) -> usize {
        self.sources[p]
    }

    /// Axis (0 = x, 1 = y, 2 = z) shown in cell `(p, c)`.
    pub fn cell_axis(&self, p: usize, c: usize) -> usize {
        match self.layout {
            FrameLayout::Activity if p % 2 == 1 => EVEN_TEMPLATE[c],
            _ => ODD_TEMPLATE[c],
        }
    }

    pub fn render(&self, snapshot: &ModalitySnapshot, frame_index: usize) -> Result<ActivityFrame> {
        if snapshot.n_rows() != self.n_rows() {
            return Err(Error::Dimension(format!(
                "snapshot has {} rows, frame layout expects {}",
                snapshot.n_rows(),
                self.n_rows()
            )));
        }
        let mut data = Vec::with_capacity(self.height() * FRAME_WIDTH);
        for (p, &src) in self.sources.iter().enumerate() {
            let row = snapshot.rows[src];
            match self.layout {
                FrameLayout::Activity => data.extend_from_slice(&expand_row(row, p + 1)),
                FrameLayout::Stacked => data.extend(ODD_TEMPLATE.iter().map(|&a| row[a])),
            }
        }
        Ok(ActivityFrame {
            matrix: Tensor::new(vec![self.height(), FRAME_WIDTH], data)?,
            frame_index,
        })
    }
}

/// 2-D frame of height `C(N_r, 2) + 1` (activity layout) and width 9.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivityFrame {
    pub matrix: Tensor,
    pub frame_index: usize,
}

impl ActivityFrame {
    pub fn height(&self) -> usize {
        self.matrix.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.matrix.shape()[1]
    }

    pub fn row(&self, p: usize) -> &[f64] {
        let w = self.width();
        &self.matrix.data()[p * w..(p + 1) * w]
    }
}

/// F time-ordered frames with one class label.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub frames: Vec<ActivityFrame>,
    pub label: usize,
    pub subject_id: String,
}

impl Sample {
    pub fn frame_shape(&self) -> (usize, usize) {
        self.frames
            .first()
            .map(|f| (f.height(), f.width()))
            .unwrap_or((0, 0))
    }
}

/// Builds the activity frame of one snapshot.
pub fn build_frame(snapshot: &ModalitySnapshot) -> Result<ActivityFrame> {
    FrameGeometry::new(FrameLayout::Activity, snapshot.row_labels.clone())?.render(snapshot, 0)
}

/// Splits `window` into `frames` contiguous segments (the remainder joins the
/// last one), averages each segment and renders it as one activity frame.
pub fn window_to_sample(
    window: &[ModalitySnapshot],
    frames: usize,
    label: usize,
    subject_id: &str,
) -> Result<Sample> {
    let labels = window
        .first()
        .map(|s| s.row_labels.clone())
        .ok_or_else(|| Error::Data("empty window".into()))?;
    let geometry = FrameGeometry::new(FrameLayout::Activity, labels)?;
    window_to_sample_with(&geometry, window, frames, label, subject_id)
}

pub fn window_to_sample_with(
    geometry: &FrameGeometry,
    window: &[ModalitySnapshot],
    frames: usize,
    label: usize,
    subject_id: &str,
) -> Result<Sample> {
    if frames == 0 {
        return Err(Error::Config("frame count must be positive".into()));
    }
    if window.len() < frames {
        return Err(Error::Data(format!(
            "window of {} snapshots is shorter than {frames} frames",
            window.len()
        )));
    }
    let seg = window.len() / frames;
    let frames = (0..frames)
        .map(|f| {
            let end = if f + 1 == frames { window.len() } else { (f + 1) * seg };
            let mean = ModalitySnapshot::mean_of(&window[f * seg..end]);
            geometry.render(&mean, f)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Sample {
        frames,
        label,
        subject_id: subject_id.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::Rng;
    use proptest::prelude::*;

    fn labels(n: usize) -> Arc<[String]> {
        (0..n).map(|i| format!("row{i}")).collect::<Vec<_>>().into()
    }

    fn snapshot(rows: Vec<[f64; 3]>) -> ModalitySnapshot {
        let n = rows.len();
        ModalitySnapshot::new(rows, labels(n)).unwrap()
    }

    #[test]
    fn expansion_templates() {
        assert_eq!(expand_row([1., 2., 3.], 1), [1., 2., 3., 1., 2., 3., 1., 2., 3.]);
        assert_eq!(expand_row([1., 2., 3.], 2), [1., 2., 3., 2., 3., 1., 3., 1., 2.]);
        assert_eq!(expand_row([0.; 3], 7), [0.; 9]);
    }

    #[test]
    fn adjacent_rows_align_every_axis_pair() {
        let g = FrameGeometry::new(FrameLayout::Activity, labels(9)).unwrap();
        for p in 0..g.height() - 1 {
            let mut pairs: Vec<(usize, usize)> =
                (0..9).map(|c| (g.cell_axis(p, c), g.cell_axis(p + 1, c))).collect();
            pairs.sort();
            pairs.dedup();
            assert_eq!(pairs.len(), 9, "rows {p}/{}", p + 1);
        }
    }

    #[test]
    fn nine_row_frame_shape() {
        let rows = (0..9).map(|r| [r as f64, 0.5, -1.0]).collect();
        let frame = build_frame(&snapshot(rows)).unwrap();
        assert_eq!(frame.matrix.shape(), &[37, 9]);
    }

    #[test]
    fn three_row_frame_order() {
        let (a, b, c) = ([1., 2., 3.], [4., 5., 6.], [7., 8., 9.]);
        let frame = build_frame(&snapshot(vec![a, b, c])).unwrap();
        assert_eq!(frame.height(), 4);
        assert_eq!(frame.row(0), &expand_row(a, 1));
        assert_eq!(frame.row(1), &expand_row(b, 2));
        assert_eq!(frame.row(2), &expand_row(c, 3));
        assert_eq!(frame.row(3), &expand_row(a, 4));
    }

    #[test]
    fn identical_rows_expand_same_vector() {
        let v = [0.3, -0.7, 1.1];
        let frame = build_frame(&snapshot(vec![v; 5])).unwrap();
        for p in 0..frame.height() {
            assert_eq!(frame.row(p), &expand_row(v, p + 1));
        }
    }

    #[test]
    fn even_rows_rejected() {
        assert!(build_frame(&snapshot(vec![[0.0; 3]; 4])).is_err());
    }

    #[test]
    fn stacked_layout_keeps_input_order() {
        let rows: Vec<[f64; 3]> = (0..4).map(|r| [r as f64, 10.0 + r as f64, 20.0]).collect();
        let g = FrameGeometry::new(FrameLayout::Stacked, labels(4)).unwrap();
        let frame = g.render(&snapshot(rows.clone()), 0).unwrap();
        assert_eq!(frame.matrix.shape(), &[4, 9]);
        for (p, r) in rows.iter().enumerate() {
            assert_eq!(frame.row(p), &expand_row(*r, 1));
        }
    }

    #[test]
    fn cell_axis_matches_rendering() {
        let mut rng = Rng::new(4);
        let rows: Vec<[f64; 3]> = (0..7)
            .map(|_| [rng.normal(), rng.normal(), rng.normal()])
            .collect();
        for layout in [FrameLayout::Activity, FrameLayout::Stacked] {
            let g = FrameGeometry::new(layout, labels(7)).unwrap();
            let frame = g.render(&snapshot(rows.clone()), 0).unwrap();
            for p in 0..g.height() {
                for c in 0..9 {
                    assert_eq!(frame.row(p)[c], rows[g.source_row(p)][g.cell_axis(p, c)]);
                }
            }
        }
    }

    #[test]
    fn window_segments_are_means() {
        let mut rng = Rng::new(9);
        let window: Vec<ModalitySnapshot> = (0..10)
            .map(|_| snapshot((0..3).map(|_| [rng.normal(), rng.normal(), rng.normal()]).collect()))
            .collect();
        let sample = window_to_sample(&window, 5, 1, "s1").unwrap();
        assert_eq!(sample.frames.len(), 5);
        for (f, frame) in sample.frames.iter().enumerate() {
            assert_eq!(frame.frame_index, f);
            let (a, b) = (&window[2 * f], &window[2 * f + 1]);
            let mean: Vec<[f64; 3]> = (0..3)
                .map(|r| [0, 1, 2].map(|k| (a.rows[r][k] + b.rows[r][k]) / 2.0))
                .collect();
            let expected = build_frame(&snapshot(mean)).unwrap();
            for (x, y) in frame.matrix.data().iter().zip(expected.matrix.data()) {
                assert!((x - y).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn remainder_joins_last_segment() {
        let window: Vec<ModalitySnapshot> =
            (0..7).map(|t| snapshot(vec![[t as f64; 3]; 3])).collect();
        let sample = window_to_sample(&window, 3, 0, "s").unwrap();
        // segments [0,1], [2,3], [4,5,6]
        assert_eq!(sample.frames[0].row(0)[0], 0.5);
        assert_eq!(sample.frames[1].row(0)[0], 2.5);
        assert_eq!(sample.frames[2].row(0)[0], 5.0);
    }

    #[test]
    fn identical_window_gives_identical_frames() {
        let s = snapshot(vec![[1.0, -2.0, 0.25]; 5]);
        let sample = window_to_sample(&vec![s.clone(); 4], 4, 2, "x").unwrap();
        let first = build_frame(&s).unwrap().matrix;
        for f in &sample.frames {
            assert_eq!(f.matrix, first);
        }
    }

    #[test]
    fn short_window_is_an_ingestion_error() {
        let s = snapshot(vec![[0.0; 3]; 3]);
        let err = window_to_sample(&[s.clone(), s], 5, 0, "x").unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }

    proptest! {
        #[test]
        fn expansion_is_template_exact(x in -1e6f64..1e6, y in -1e6f64..1e6, z in -1e6f64..1e6, seq in 1usize..200) {
            let e = expand_row([x, y, z], seq);
            let want = if seq % 2 == 1 { [x, y, z, x, y, z, x, y, z] } else { [x, y, z, y, z, x, z, x, y] };
            prop_assert_eq!(e, want);
        }

        #[test]
        fn frame_is_relabeling_equivariant(seed in 0u64..1000, half in 1usize..6) {
            let n = 2 * half + 1;
            let mut rng = Rng::new(seed);
            let rows: Vec<[f64; 3]> = (0..n).map(|_| [rng.normal(), rng.normal(), rng.normal()]).collect();
            let mut relabel: Vec<usize> = (0..n).collect();
            rng.shuffle(&mut relabel);
            let moved: Vec<[f64; 3]> = relabel.iter().map(|&r| rows[r]).collect();
            let frame = build_frame(&snapshot(moved)).unwrap();
            let perm = build_permutation(n).unwrap();
            for (p, &src) in perm.as_slice().iter().enumerate() {
                prop_assert_eq!(frame.row(p), &expand_row(rows[relabel[src - 1]], p + 1)[..]);
            }
        }

        #[test]
        fn window_to_sample_is_deterministic(seed in 0u64..500, len in 5usize..30) {
            let mut rng = Rng::new(seed);
            let window: Vec<ModalitySnapshot> = (0..len)
                .map(|_| snapshot((0..5).map(|_| [rng.normal(), rng.normal(), rng.normal()]).collect()))
                .collect();
            let a = window_to_sample(&window, 5, 0, "s").unwrap();
            let b = window_to_sample(&window, 5, 0, "s").unwrap();
            for (fa, fb) in a.frames.iter().zip(&b.frames) {
                for (x, y) in fa.matrix.data().iter().zip(fb.matrix.data()) {
                    prop_assert_eq!(x.to_bits(), y.to_bits());
                }
            }
        }
    }
}
