use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::Tensor;

/// Normalised position on a frame; `(-1, -1)` is the top-left cell and
/// `(1, 1)` the bottom-right one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub row: f64,
    pub col: f64,
}

impl Location {
    pub fn new(row: f64, col: f64) -> Result<Self> {
        let l = Location { row, col };
        l.check()?;
        Ok(l)
    }

    pub fn check(&self) -> Result<()> {
        if self.row.is_finite() && self.col.is_finite() {
            Ok(())
        } else {
            Err(Error::Numeric(format!("non-finite location ({}, {})", self.row, self.col)))
        }
    }

    pub fn clamped(self) -> Self {
        Location {
            row: self.row.clamp(-1.0, 1.0),
            col: self.col.clamp(-1.0, 1.0),
        }
    }

    pub fn to_array(self) -> [f64; 2] {
        [self.row, self.col]
    }

    /// Nearest cell of a `height × width` grid: `round((v + 1) / 2 · (dim − 1))`.
    pub fn to_pixel(self, height: usize, width: usize) -> (usize, usize) {
        let map = |v: f64, dim: usize| {
            let p = ((v.clamp(-1.0, 1.0) + 1.0) / 2.0 * (dim as f64 - 1.0)).round();
            p.max(0.0) as usize
        };
        (map(self.row, height), map(self.col, width))
    }
}

/// Multi-resolution crop geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetinaConfig {
    /// Base window rows.
    pub height: usize,
    /// Base window columns.
    pub width: usize,
    pub scales: usize,
    pub scale_factor: usize,
}

impl RetinaConfig {
    /// 64×16 on 79×9 frames, otherwise the largest 4:1 window inside the frame.
    pub fn default_for(frame_height: usize, frame_width: usize) -> Self {
        let (height, width) = if (frame_height, frame_width) == (79, 9) {
            (64, 16)
        } else {
            let k = (frame_height / 4).min(frame_width).max(1);
            (4 * k, k)
        };
        RetinaConfig {
            height,
            width,
            scales: 3,
            scale_factor: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.scales == 0 || self.scale_factor == 0 {
            return Err(Error::Config(format!("degenerate retina {self:?}")));
        }
        Ok(())
    }

    /// Values in one flattened patch, `S · height · width`.
    pub fn patch_len(&self) -> usize {
        self.scales * self.height * self.width
    }

    fn block(&self, s: usize) -> usize {
        self.scale_factor.pow(s as u32)
    }

    /// Top-left frame cell covered by scale `s` when centred on `center`.
    fn origin(&self, s: usize, center: (usize, usize)) -> (isize, isize) {
        let b = self.block(s);
        (
            center.0 as isize - (self.height * b / 2) as isize,
            center.1 as isize - (self.width * b / 2) as isize,
        )
    }
}

/// `S` stacked patches, highest resolution first, each `height × width`.
#[derive(Debug, Clone, PartialEq)]
pub struct RetinaPatch {
    /// `[S, height, width]`
    pub data: Tensor,
    /// Frame cell the crop is centred on.
    pub center: (usize, usize),
}

/// Scale `s` crops a `(height·k^s) × (width·k^s)` window centred on `l`,
/// reads zeros outside the frame and average-pools `k^s × k^s` blocks back
/// to `height × width`.
pub fn extract_retina(frame: &Tensor, l: Location, cfg: &RetinaConfig) -> Result<RetinaPatch> {
    l.check()?;
    let (fh, fw) = frame_dims(frame)?;
    let center = l.to_pixel(fh, fw);
    // integral image with a zero border row and column
    let mut integral = vec![0.0; (fh + 1) * (fw + 1)];
    let data = frame.data();
    for r in 0..fh {
        let mut run = 0.0;
        for c in 0..fw {
            run += data[r * fw + c];
            integral[(r + 1) * (fw + 1) + c + 1] = integral[r * (fw + 1) + c + 1] + run;
        }
    }
    let rect = |r0: usize, r1: usize, c0: usize, c1: usize| {
        let at = |r: usize, c: usize| integral[r * (fw + 1) + c];
        at(r1, c1) - at(r0, c1) - at(r1, c0) + at(r0, c0)
    };
    let clip = |v: isize, dim: usize| v.clamp(0, dim as isize) as usize;
    let mut out = Vec::with_capacity(cfg.patch_len());
    for s in 0..cfg.scales {
        let b = cfg.block(s) as isize;
        let area = (b * b) as f64;
        let (top, left) = cfg.origin(s, center);
        for i in 0..cfg.height as isize {
            let (r0, r1) = (clip(top + i * b, fh), clip(top + (i + 1) * b, fh));
            for j in 0..cfg.width as isize {
                let (c0, c1) = (clip(left + j * b, fw), clip(left + (j + 1) * b, fw));
                out.push(if r0 < r1 && c0 < c1 { rect(r0, r1, c0, c1) / area } else { 0.0 });
            }
        }
    }
    Ok(RetinaPatch {
        data: Tensor::new([cfg.scales, cfg.height, cfg.width], out)?,
        center,
    })
}

/// Gradient of [`extract_retina`] w.r.t. the frame; the crop is linear in
/// the frame so only the centre cell is needed.
pub fn retina_backward(
    grad_patch: &[f64],
    center: (usize, usize),
    frame_shape: (usize, usize),
    cfg: &RetinaConfig,
) -> Result<Tensor> {
    if grad_patch.len() != cfg.patch_len() {
        return Err(Error::Dimension(format!(
            "retina gradient has {} values, patch holds {}",
            grad_patch.len(),
            cfg.patch_len()
        )));
    }
    let (fh, fw) = frame_shape;
    let mut grad = Tensor::zeros(&[fh, fw]);
    let g = grad.data_mut();
    let plane = cfg.height * cfg.width;
    for s in 0..cfg.scales {
        let b = cfg.block(s) as isize;
        let area = (b * b) as f64;
        let (top, left) = cfg.origin(s, center);
        let gp = &grad_patch[s * plane..(s + 1) * plane];
        for r in 0..fh {
            let i = (r as isize - top).div_euclid(b);
            if !(0..cfg.height as isize).contains(&i) {
                continue;
            }
            for c in 0..fw {
                let j = (c as isize - left).div_euclid(b);
                if (0..cfg.width as isize).contains(&j) {
                    g[r * fw + c] += gp[i as usize * cfg.width + j as usize] / area;
                }
            }
        }
    }
    Ok(grad)
}

fn frame_dims(frame: &Tensor) -> Result<(usize, usize)> {
    match *frame.shape() {
        [h, w] if h > 0 && w > 0 => Ok((h, w)),
        ref s => Err(Error::Dimension(format!("retina needs a 2-D frame, got {s:?}"))),
    }
}
