//! Dataset manifests: one frame per line, `<dafm-path>,<count>[,<roi-path>]`.
//!
//! Header lines start with `#`. Two are recognised: `#split=<T>` (the first
//! `T` frames train, the rest test) and `#roi=<path>` (a scene ROI applied to
//! every frame without its own). Relative paths resolve against the
//! manifest's directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::error::{PipelineError, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrameEntry {
    pub map: PathBuf,
    pub count: u32,
    pub roi: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub entries: Vec<FrameEntry>,
    pub split: Option<usize>,
    pub scene_roi: Option<PathBuf>,
    /// Directory relative paths are resolved against.
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn new(entries: Vec<FrameEntry>) -> Self {
        Self {
            entries,
            split: None,
            scene_roi: None,
            base_dir: PathBuf::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Sets the train/test boundary, enforcing `1 ≤ T < N_f`.
    pub fn with_split(mut self, split: usize) -> Result<Self> {
        check_split(split, self.entries.len())?;
        self.split = Some(split);
        Ok(self)
    }

    /// Validated split boundary.
    pub fn split(&self) -> Result<usize> {
        let split = self
            .split
            .ok_or_else(|| PipelineError::Manifest("no train/test split set".into()))?;
        check_split(split, self.entries.len())?;
        Ok(split)
    }

    pub fn train_indices(&self) -> Result<std::ops::Range<usize>> {
        Ok(0..self.split()?)
    }

    pub fn test_indices(&self) -> Result<std::ops::Range<usize>> {
        let split = self.split()?;
        if split >= self.entries.len() {
            return Err(PipelineError::EmptyTestSplit);
        }
        Ok(split..self.entries.len())
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn map_path(&self, index: usize) -> PathBuf {
        self.resolve(&self.entries[index].map)
    }

    /// ROI for a frame: its own column, else the scene ROI.
    pub fn roi_path(&self, index: usize) -> Option<PathBuf> {
        self.entries[index]
            .roi
            .as_deref()
            .or(self.scene_roi.as_deref())
            .map(|p| self.resolve(p))
    }

    pub fn counts(&self) -> impl Iterator<Item = u32> + '_ {
        self.entries.iter().map(|e| e.count)
    }

    pub fn parse_text(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut manifest = DatasetManifest::new(Vec::new());
        manifest.base_dir = base_dir.into();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let err = |msg: String| PipelineError::Manifest(format!("line {}: {msg}", lineno + 1));
            if line.is_empty() {
                continue;
            }
            if let Some(header) = line.strip_prefix('#') {
                if let Some(v) = header.strip_prefix("split=") {
                    manifest.split = Some(
                        v.trim()
                            .parse()
                            .map_err(|_| err(format!("bad split {v:?}")))?,
                    );
                } else if let Some(v) = header.strip_prefix("roi=") {
                    manifest.scene_roi = Some(PathBuf::from(v.trim()));
                }
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if !(2..=3).contains(&fields.len()) || fields[0].is_empty() {
                return Err(err(format!(
                    "expected <dafm-path>,<count>[,<roi-path>], got {line:?}"
                )));
            }
            let count = fields[1].parse().map_err(|_| {
                err(format!(
                    "count {:?} is not a non-negative integer",
                    fields[1]
                ))
            })?;
            manifest.entries.push(FrameEntry {
                map: PathBuf::from(fields[0]),
                count,
                roi: fields.get(2).filter(|s| !s.is_empty()).map(PathBuf::from),
            });
        }
        Ok(manifest)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# lafcount manifest v1\n");
        if let Some(split) = self.split {
            let _ = writeln!(out, "#split={split}");
        }
        if let Some(roi) = &self.scene_roi {
            let _ = writeln!(out, "#roi={}", roi.display());
        }
        for e in &self.entries {
            let _ = write!(out, "{},{}", e.map.display(), e.count);
            if let Some(roi) = &e.roi {
                let _ = write!(out, ",{}", roi.display());
            }
            out.push('\n');
        }
        out
    }

    /// Loads a manifest and checks that every referenced file exists.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Manifest(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let manifest = Self::parse_text(&text, base)?;
        for i in 0..manifest.len() {
            let map = manifest.map_path(i);
            if !map.is_file() {
                return Err(PipelineError::Manifest(format!(
                    "missing frame {}",
                    map.display()
                )));
            }
            if let Some(roi) = manifest.roi_path(i) {
                if !roi.is_file() {
                    return Err(PipelineError::Manifest(format!(
                        "missing ROI {}",
                        roi.display()
                    )));
                }
            }
        }
        Ok(manifest)
    }

    pub fn store(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

fn check_split(split: usize, frames: usize) -> Result<()> {
    if split == 0 || split >= frames {
        return Err(PipelineError::InvalidSplit { split, frames });
    }
    Ok(())
}
