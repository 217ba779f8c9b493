use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::{FrameGeometry, FrameLayout};

/// Declarative description of one dataset's raw text files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub name: String,
    pub sampling_rate_hz: f64,
    /// Directory the subject files are resolved against; defaults to the
    /// directory holding the config file.
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
    /// 0-based column of the timestamp; absent means "row index / rate".
    #[serde(default)]
    pub timestamp_column: Option<usize>,
    /// 0-based column of the raw activity id.
    pub activity_column: usize,
    /// Tri-axis rows of the stacked input, in stacking order.
    pub channels: Vec<ChannelSpec>,
    pub labels: LabelMap,
    pub subjects: Vec<SubjectFile>,
    #[serde(default)]
    pub windowing: WindowConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    pub label: String,
    /// Modality group used when reporting where the model looks; defaults to `label`.
    #[serde(default)]
    pub group: Option<String>,
    /// One to three 0-based columns; missing trailing axes read as zero.
    pub columns: Vec<usize>,
}

impl ChannelSpec {
    pub fn group(&self) -> &str {
        self.group.as_deref().unwrap_or(&self.label)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubjectFile {
    pub id: String,
    pub file: PathBuf,
}

/// Raw activity id to class index, with an explicit discard list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelMap {
    pub class_names: Vec<String>,
    /// Keys are raw ids written as strings (TOML keys are strings).
    pub map: BTreeMap<String, usize>,
    #[serde(default)]
    pub discard: Vec<i64>,
}

impl LabelMap {
    /// `Ok(None)` for discarded ids; an id that is neither mapped nor
    /// discarded is an error.
    pub fn map_id(&self, raw: i64) -> Result<Option<usize>> {
        if self.discard.contains(&raw) {
            return Ok(None);
        }
        self.map
            .get(&raw.to_string())
            .copied()
            .map(Some)
            .ok_or_else(|| Error::Data(format!("activity id {raw} is not in the label map")))
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    fn validate(&self) -> Result<()> {
        if self.class_names.len() < 2 {
            return Err(Error::Config("label map needs at least two classes".into()));
        }
        for (raw, &class) in &self.map {
            let id: i64 = raw
                .parse()
                .map_err(|_| Error::Config(format!("label map key {raw:?} is not an integer id")))?;
            if class >= self.class_names.len() {
                return Err(Error::Config(format!(
                    "activity id {raw} maps to class {class}, only {} classes",
                    self.class_names.len()
                )));
            }
            if self.discard.contains(&id) {
                return Err(Error::Config(format!("activity id {raw} is both mapped and discarded")));
            }
        }
        Ok(())
    }
}

/// Sliding-window and frame settings used at ingestion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowConfig {
    pub window_seconds: f64,
    /// Fraction of a window shared with the next one, in `[0, 1)`.
    pub overlap: f64,
    /// Frames per sample.
    pub frames: usize,
    pub layout: FrameLayout,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            window_seconds: 2.0,
            overlap: 0.5,
            frames: 5,
            layout: FrameLayout::Activity,
        }
    }
}

impl WindowConfig {
    /// `(window_len, stride)` in rows at `rate_hz`.
    pub fn lengths(&self, rate_hz: f64) -> Result<(usize, usize)> {
        if !(0.0..1.0).contains(&self.overlap) || self.window_seconds <= 0.0 {
            return Err(Error::Config(format!(
                "window {}s with overlap {} is invalid",
                self.window_seconds, self.overlap
            )));
        }
        let len = (self.window_seconds * rate_hz).round() as usize;
        let stride = ((1.0 - self.overlap) * len as f64).round().max(1.0) as usize;
        if len < self.frames || self.frames == 0 {
            return Err(Error::Config(format!(
                "window of {len} rows cannot hold {} frames",
                self.frames
            )));
        }
        Ok((len, stride))
    }
}

impl DatasetConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: DatasetConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("dataset config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file; a relative or missing `data_dir` resolves against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = DatasetConfig::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.data_dir = Some(match cfg.data_dir.take() {
            Some(d) if d.is_absolute() => d,
            Some(d) => base.join(d),
            None => base.to_path_buf(),
        });
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("dataset config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sampling_rate_hz > 0.0) {
            return Err(Error::Config("sampling rate must be positive".into()));
        }
        let n = self.channels.len();
        if self.windowing.layout == FrameLayout::Activity && (n < 3 || n % 2 == 0) {
            return Err(Error::Config(format!(
                "{} maps {n} tri-axis rows; activity frames need an odd count >= 3 \
                 so every pair of rows can be made adjacent",
                self.name
            )));
        }
        for c in &self.channels {
            if c.columns.is_empty() || c.columns.len() > 3 {
                return Err(Error::Config(format!(
                    "channel {} maps {} columns, expected 1 to 3",
                    c.label,
                    c.columns.len()
                )));
            }
        }
        let mut labels: Vec<&str> = self.channels.iter().map(|c| c.label.as_str()).collect();
        labels.sort();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("channel labels must be unique".into()));
        }
        self.labels.validate()?;
        self.windowing.lengths(self.sampling_rate_hz)?;
        Ok(())
    }

    pub fn row_labels(&self) -> Arc<[String]> {
        self.channels.iter().map(|c| c.label.clone()).collect::<Vec<_>>().into()
    }

    pub fn row_groups(&self) -> Vec<String> {
        self.channels.iter().map(|c| c.group().to_string()).collect()
    }

    pub fn geometry(&self) -> Result<FrameGeometry> {
        FrameGeometry::new(self.windowing.layout, self.row_labels())
    }

    pub fn subject_path(&self, subject: &SubjectFile) -> PathBuf {
        match &self.data_dir {
            Some(d) if !subject.file.is_absolute() => d.join(&subject.file),
            _ => subject.file.clone(),
        }
    }

    /// Highest column index read from a line.
    pub fn max_column(&self) -> usize {
        self.channels
            .iter()
            .flat_map(|c| c.columns.iter().copied())
            .chain(self.timestamp_column)
            .chain(std::iter::once(self.activity_column))
            .max()
            .unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        name = "tiny"
        sampling_rate_hz = 10.0
        activity_column = 0
        subjects = [{ id = "a", file = "a.txt" }]

        [[channels]]
        label = "acc"
        columns = [1, 2, 3]
        [[channels]]
        label = "gyro"
        columns = [4, 5, 6]
        [[channels]]
        label = "ecg"
        columns = [7, 8]

        [labels]
        class_names = ["rest", "move"]
        discard = [0]
        map = { "1" = 0, "2" = 1 }

        [windowing]
        window_seconds = 1.0
        frames = 2
    "#;

    #[test]
    fn parses_minimal_config() {
        let cfg = DatasetConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.channels.len(), 3);
        assert_eq!(cfg.windowing.overlap, 0.5);
        assert_eq!(cfg.windowing.lengths(10.0).unwrap(), (10, 5));
        assert_eq!(cfg.labels.map_id(2).unwrap(), Some(1));
        assert_eq!(cfg.labels.map_id(0).unwrap(), None);
        assert!(cfg.labels.map_id(7).is_err());
        assert_eq!(cfg.max_column(), 8);
        let back = DatasetConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn even_channel_count_rejected() {
        let text = MINIMAL.replace(
            "[[channels]]\n        label = \"ecg\"\n        columns = [7, 8]\n",
            "",
        );
        let err = DatasetConfig::from_toml(&text).unwrap_err();
        assert!(matches!(err, Error::Config(ref m) if m.contains("odd")), "{err}");
    }

    #[test]
    fn class_out_of_range_rejected() {
        let text = MINIMAL.replace("\"2\" = 1", "\"2\" = 5");
        assert!(DatasetConfig::from_toml(&text).is_err());
    }
}
