//! Plain-text frame dump: a header line `N_r F height width`, then every
//! frame's rows as space-separated decimals, samples back to back.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::frames::frame::{ActivityFrame, Sample};
use crate::kernel::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameDumpHeader {
    pub n_rows: usize,
    pub frames_per_sample: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameDump {
    pub header: FrameDumpHeader,
    /// One entry per sample, each holding `frames_per_sample` frames.
    pub samples: Vec<Vec<ActivityFrame>>,
}

pub fn write_frame_dump<W: Write>(out: &mut W, header: FrameDumpHeader, samples: &[Sample]) -> Result<()> {
    let io = |e| Error::io("<frame dump>", e);
    writeln!(
        out,
        "{} {} {} {}",
        header.n_rows, header.frames_per_sample, header.height, header.width
    )
    .map_err(io)?;
    for s in samples {
        if s.frames.len() != header.frames_per_sample || s.frame_shape() != (header.height, header.width) {
            return Err(Error::Dimension(format!(
                "sample of subject {} has {} frames of {:?}, header says {} of {}x{}",
                s.subject_id,
                s.frames.len(),
                s.frame_shape(),
                header.frames_per_sample,
                header.height,
                header.width
            )));
        }
        for f in &s.frames {
            for p in 0..f.height() {
                let line: Vec<String> = f.row(p).iter().map(|v| v.to_string()).collect();
                writeln!(out, "{}", line.join(" ")).map_err(io)?;
            }
        }
    }
    Ok(())
}

pub fn read_frame_dump<R: BufRead>(input: R) -> Result<FrameDump> {
    let mut lines = input.lines();
    let head = lines
        .next()
        .ok_or_else(|| Error::Data("empty frame dump".into()))?
        .map_err(|e| Error::io("<frame dump>", e))?;
    let nums: Vec<usize> = head
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| Error::Data(format!("bad frame dump header {head:?}"))))
        .collect::<Result<_>>()?;
    let [n_rows, frames_per_sample, height, width] = nums[..] else {
        return Err(Error::Data(format!("frame dump header needs 4 fields: {head:?}")));
    };
    if frames_per_sample == 0 || height == 0 || width == 0 {
        return Err(Error::Data(format!("degenerate frame dump header {head:?}")));
    }
    let header = FrameDumpHeader {
        n_rows,
        frames_per_sample,
        height,
        width,
    };
    let mut samples = Vec::new();
    let mut current = Vec::new();
    let mut rows = Vec::with_capacity(height * width);
    for (n, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io("<frame dump>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let before = rows.len();
        for tok in line.split_whitespace() {
            rows.push(tok.parse::<f64>().map_err(|_| {
                Error::Data(format!("frame dump line {}: bad value {tok:?}", n + 2))
            })?);
        }
        if rows.len() - before != width {
            return Err(Error::Data(format!(
                "frame dump line {}: expected {width} values",
                n + 2
            )));
        }
        if rows.len() == height * width {
            let data = std::mem::replace(&mut rows, Vec::with_capacity(height * width));
            current.push(ActivityFrame {
                matrix: Tensor::new(vec![height, width], data)?,
                frame_index: current.len(),
            });
            if current.len() == frames_per_sample {
                samples.push(std::mem::take(&mut current));
            }
        }
    }
    if !rows.is_empty() || !current.is_empty() {
        return Err(Error::Data("frame dump ends inside a sample".into()));
    }
    Ok(FrameDump { header, samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::Rng;

    #[test]
    fn round_trip_is_exact() {
        let mut rng = Rng::new(6);
        let samples: Vec<Sample> = (0..3)
            .map(|s| Sample {
                frames: (0..2)
                    .map(|f| ActivityFrame {
                        matrix: Tensor::new(vec![4, 9], (0..36).map(|_| rng.normal() * 1e3).collect()).unwrap(),
                        frame_index: f,
                    })
                    .collect(),
                label: s,
                subject_id: "a".into(),
            })
            .collect();
        let header = FrameDumpHeader {
            n_rows: 3,
            frames_per_sample: 2,
            height: 4,
            width: 9,
        };
        let mut buf = Vec::new();
        write_frame_dump(&mut buf, header, &samples).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("3 2 4 9\n"));
        let dump = read_frame_dump(&buf[..]).unwrap();
        assert_eq!(dump.header, header);
        assert_eq!(dump.samples.len(), 3);
        for (a, b) in dump.samples.iter().zip(&samples) {
            assert_eq!(a, &b.frames);
        }
    }

    #[test]
    fn truncated_dump_is_rejected() {
        let text = "3 1 2 9\n1 2 3 4 5 6 7 8 9\n";
        assert!(read_frame_dump(text.as_bytes()).is_err());
        let text = "3 1 1 9\n1 2 3\n";
        assert!(read_frame_dump(text.as_bytes()).is_err());
    }
}
