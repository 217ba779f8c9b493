use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::frame::{ActivityFrame, FrameGeometry};

/// Channels whose spread falls below this are only centred.
const MIN_STD: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisStats {
    pub mean: f64,
    pub std: f64,
}

/// Per row-label, per-axis moments estimated on a training split.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ChannelStats {
    pub channels: BTreeMap<String, [AxisStats; 3]>,
}

impl ChannelStats {
    /// Population mean and standard deviation of every (row label, axis)
    /// channel over `frames`, reading each channel once per frame.
    pub fn fit<'a>(
        geometry: &FrameGeometry,
        frames: impl IntoIterator<Item = &'a ActivityFrame>,
    ) -> Result<Self> {
        let cells = first_cells(geometry);
        let mut values: Vec<[Vec<f64>; 3]> = vec![Default::default(); geometry.n_rows()];
        for frame in frames {
            check_shape(geometry, frame)?;
            let data = frame.matrix.data();
            for (row, axes) in cells.iter().enumerate() {
                for (axis, &idx) in axes.iter().enumerate() {
                    values[row][axis].push(data[idx]);
                }
            }
        }
        if values.first().is_none_or(|v| v[0].is_empty()) {
            return Err(Error::Data("cannot fit normalisation on zero frames".into()));
        }
        let mut channels = BTreeMap::new();
        for (label, axes) in geometry.row_labels().iter().zip(values) {
            let stats = axes.map(|v| {
                let n = v.len() as f64;
                let mean = v.iter().sum::<f64>() / n;
                let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
                AxisStats {
                    mean,
                    std: var.sqrt(),
                }
            });
            channels.insert(label.clone(), stats);
        }
        Ok(ChannelStats { channels })
    }
}

/// Standardises every cell by the statistics of the channel it displays.
pub fn normalize<'a>(
    geometry: &FrameGeometry,
    frames: impl IntoIterator<Item = &'a mut ActivityFrame>,
    stats: &ChannelStats,
) -> Result<()> {
    let per_row: Vec<&[AxisStats; 3]> = geometry
        .row_labels()
        .iter()
        .map(|label| {
            stats.channels.get(label).ok_or_else(|| {
                Error::Config(format!("normalisation statistics lack row label {label:?}"))
            })
        })
        .collect::<Result<_>>()?;
    for frame in frames {
        check_shape(geometry, frame)?;
        let w = frame.width();
        let data = frame.matrix.data_mut();
        for p in 0..geometry.height() {
            let axes = per_row[geometry.source_row(p)];
            for c in 0..w {
                let s = axes[geometry.cell_axis(p, c)];
                let v = &mut data[p * w + c];
                *v -= s.mean;
                if s.std >= MIN_STD {
                    *v /= s.std;
                }
            }
        }
    }
    Ok(())
}

fn first_cells(geometry: &FrameGeometry) -> Vec<[usize; 3]> {
    let mut cells = vec![[usize::MAX; 3]; geometry.n_rows()];
    for p in 0..geometry.height() {
        for c in 0..geometry.width() {
            let slot = &mut cells[geometry.source_row(p)][geometry.cell_axis(p, c)];
            if *slot == usize::MAX {
                *slot = p * geometry.width() + c;
            }
        }
    }
    cells
}

fn check_shape(geometry: &FrameGeometry, frame: &ActivityFrame) -> Result<()> {
    if frame.height() != geometry.height() || frame.width() != geometry.width() {
        return Err(Error::Dimension(format!(
            "frame {}x{} does not match layout {}x{}",
            frame.height(),
            frame.width(),
            geometry.height(),
            geometry.width()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::frames::frame::{FrameLayout, ModalitySnapshot};
    use crate::kernel::Rng;

    fn geometry(n: usize) -> FrameGeometry {
        let labels: Arc<[String]> = (0..n).map(|i| format!("r{i}")).collect::<Vec<_>>().into();
        FrameGeometry::new(FrameLayout::Activity, labels).unwrap()
    }

    fn random_frames(g: &FrameGeometry, n: usize, rng: &mut Rng, constant_row: bool) -> Vec<ActivityFrame> {
        (0..n)
            .map(|i| {
                let rows = (0..g.n_rows())
                    .map(|r| {
                        if constant_row && r == 0 {
                            [4.0, 4.0, 4.0]
                        } else {
                            [3.0 * rng.normal() + 1.0, rng.normal() - 5.0, 0.1 * rng.normal()]
                        }
                    })
                    .collect();
                let snap = ModalitySnapshot::new(rows, g.row_labels().clone()).unwrap();
                g.render(&snap, i).unwrap()
            })
            .collect()
    }

    fn channel_moments(g: &FrameGeometry, frames: &[ActivityFrame]) -> Vec<(f64, f64)> {
        // recompute moments cell by cell, counting every duplicate
        let mut out = Vec::new();
        for row in 0..g.n_rows() {
            for axis in 0..3 {
                let mut v = Vec::new();
                for f in frames {
                    for p in 0..g.height() {
                        for c in 0..9 {
                            if g.source_row(p) == row && g.cell_axis(p, c) == axis {
                                v.push(f.row(p)[c]);
                            }
                        }
                    }
                }
                let n = v.len() as f64;
                let m = v.iter().sum::<f64>() / n;
                let s = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt();
                out.push((m, s));
            }
        }
        out
    }

    #[test]
    fn training_split_is_standardised() {
        let g = geometry(5);
        let mut rng = Rng::new(1);
        let mut frames = random_frames(&g, 200, &mut rng, true);
        let stats = ChannelStats::fit(&g, &frames).unwrap();
        normalize(&g, &mut frames, &stats).unwrap();
        let moments = channel_moments(&g, &frames);
        for (k, (m, s)) in moments.iter().enumerate() {
            assert!(m.abs() < 1e-10, "channel {k}: mean {m}");
            if k >= 3 {
                assert!((s - 1.0).abs() < 1e-10, "channel {k}: std {s}");
            }
        }
        // the constant row is only centred
        for k in 0..3 {
            assert_eq!(moments[k], (0.0, 0.0));
        }
    }

    #[test]
    fn held_out_split_is_not_forced() {
        let g = geometry(3);
        let mut rng = Rng::new(2);
        let train = random_frames(&g, 100, &mut rng, false);
        let stats = ChannelStats::fit(&g, &train).unwrap();
        let mut test: Vec<ActivityFrame> = random_frames(&g, 30, &mut rng, false);
        for f in &mut test {
            f.matrix.data_mut().iter_mut().for_each(|v| *v += 2.0);
        }
        normalize(&g, &mut test, &stats).unwrap();
        let moments = channel_moments(&g, &test);
        assert!(moments.iter().any(|(m, _)| m.abs() > 0.1));
    }

    #[test]
    fn missing_label_is_config_error() {
        let g = geometry(3);
        let mut rng = Rng::new(3);
        let mut frames = random_frames(&g, 3, &mut rng, false);
        let mut stats = ChannelStats::fit(&g, &frames).unwrap();
        stats.channels.remove("r1");
        let err = normalize(&g, &mut frames, &stats).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}
