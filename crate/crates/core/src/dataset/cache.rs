use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::dataset::config::DatasetConfig;
use crate::dataset::ingest::{ingest_subject, IngestReport};
use crate::error::{Error, Result};
use crate::frames::{read_frame_dump, write_frame_dump, FrameDumpHeader, FrameGeometry, Sample};

pub const CONFIG_FILE: &str = "dataset.toml";
pub const FRAMES_FILE: &str = "frames.txt";
pub const MANIFEST_FILE: &str = "manifest.csv";
pub const REPORT_FILE: &str = "ingest_report.csv";

/// Framed samples together with the geometry that produced them.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub geometry: FrameGeometry,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(config: DatasetConfig, samples: Vec<Sample>) -> Result<Self> {
        config.validate()?;
        let geometry = config.geometry()?;
        let n_classes = config.labels.num_classes();
        for s in &samples {
            if s.frames.len() != config.windowing.frames
                || s.frame_shape() != (geometry.height(), geometry.width())
            {
                return Err(Error::Dimension(format!(
                    "sample of subject {} has {} frames of {:?}, expected {} of {}x{}",
                    s.subject_id,
                    s.frames.len(),
                    s.frame_shape(),
                    config.windowing.frames,
                    geometry.height(),
                    geometry.width()
                )));
            }
            if s.label >= n_classes {
                return Err(Error::Data(format!("label {} out of {n_classes} classes", s.label)));
            }
        }
        Ok(Dataset {
            config,
            geometry,
            samples,
        })
    }

    /// Reads every subject file listed in `config`, in parallel.
    pub fn ingest(config: &DatasetConfig) -> Result<(Self, Vec<IngestReport>)> {
        config.validate()?;
        let geometry = config.geometry()?;
        let per_subject = config
            .subjects
            .par_iter()
            .map(|s| ingest_subject(config, &geometry, &s.id, &config.subject_path(s)))
            .collect::<Result<Vec<_>>>()?;
        let mut samples = Vec::new();
        let mut reports = Vec::new();
        for (s, r) in per_subject {
            samples.extend(s);
            reports.push(r);
        }
        Ok((Dataset::new(config.clone(), samples)?, reports))
    }

    pub fn class_names(&self) -> &[String] {
        &self.config.labels.class_names
    }

    pub fn num_classes(&self) -> usize {
        self.config.labels.num_classes()
    }

    pub fn frames_per_sample(&self) -> usize {
        self.config.windowing.frames
    }

    pub fn frame_shape(&self) -> (usize, usize) {
        (self.geometry.height(), self.geometry.width())
    }

    /// Modality group of every source row.
    pub fn row_groups(&self) -> Vec<String> {
        self.config.row_groups()
    }

    /// Distinct subject ids, sorted.
    pub fn subjects(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.samples.iter().map(|s| s.subject_id.clone()).collect();
        ids.sort();
        ids.dedup();
        ids
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.num_classes()];
        for s in &self.samples {
            h[s.label] += 1;
        }
        h
    }

    /// Writes `dataset.toml`, `frames.txt` and `manifest.csv` under `dir`.
    pub fn write_cache(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(CONFIG_FILE);
        fs::write(&path, self.config.to_toml()).map_err(|e| Error::io(&path, e))?;

        let path = dir.join(FRAMES_FILE);
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut out = BufWriter::new(file);
        let (height, width) = self.frame_shape();
        let header = FrameDumpHeader {
            n_rows: self.geometry.n_rows(),
            frames_per_sample: self.frames_per_sample(),
            height,
            width,
        };
        write_frame_dump(&mut out, header, &self.samples)?;
        out.flush().map_err(|e| Error::io(&path, e))?;

        let path = dir.join(MANIFEST_FILE);
        let mut manifest = String::from("subject,label,frame_count\n");
        for s in &self.samples {
            manifest.push_str(&format!("{},{},{}\n", s.subject_id, s.label, s.frames.len()));
        }
        fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
    }

    pub fn read_cache(dir: &Path) -> Result<Self> {
        let path = dir.join(CONFIG_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let config = DatasetConfig::from_toml(&text)?;

        let path = dir.join(FRAMES_FILE);
        let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
        let dump = read_frame_dump(BufReader::new(file))?;

        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut lines = text.lines();
        if lines.next() != Some("subject,label,frame_count") {
            return Err(Error::Data(format!("{}: unexpected header", path.display())));
        }
        let entries: Vec<&str> = lines.filter(|l| !l.trim().is_empty()).collect();
        if entries.len() != dump.samples.len() {
            return Err(Error::Data(format!(
                "manifest lists {} samples, frame dump holds {}",
                entries.len(),
                dump.samples.len()
            )));
        }
        let mut samples = Vec::with_capacity(entries.len());
        for (line, frames) in entries.into_iter().zip(dump.samples) {
            let bad = || Error::Data(format!("{}: malformed line {line:?}", path.display()));
            let mut fields = line.rsplitn(3, ',');
            let count: usize = fields.next().and_then(|f| f.parse().ok()).ok_or_else(bad)?;
            let label: usize = fields.next().and_then(|f| f.parse().ok()).ok_or_else(bad)?;
            let subject = fields.next().ok_or_else(bad)?;
            if count != frames.len() {
                return Err(bad());
            }
            samples.push(Sample {
                frames,
                label,
                subject_id: subject.to_string(),
            });
        }
        Dataset::new(config, samples)
    }
}

pub fn write_ingest_report(path: &Path, reports: &[IngestReport]) -> Result<()> {
    let mut text = String::from("subject,rows_in,rows_used,rows_dropped,rows_discarded,windows\n");
    for r in reports {
        text.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.subject_id, r.rows_in, r.rows_used, r.rows_dropped, r.rows_discarded, r.windows
        ));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
