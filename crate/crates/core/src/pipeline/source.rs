use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Mutex;

use super::error::Result;
use super::manifest::DatasetManifest;
use crate::attribute_map::{apply_roi, load_map, AttributeMap, RoiMask};

/// Supplies ROI-applied frames by manifest index.
pub trait FrameSource: Sync {
    fn frame_count(&self) -> usize;
    fn load(&self, index: usize) -> Result<AttributeMap>;
}

/// Reads frames from disk as described by a manifest, caching ROI masks.
pub struct ManifestSource<'a> {
    manifest: &'a DatasetManifest,
    masks: Mutex<HashMap<PathBuf, RoiMask>>,
}

impl<'a> ManifestSource<'a> {
    pub fn new(manifest: &'a DatasetManifest) -> Self {
        Self {
            manifest,
            masks: Mutex::new(HashMap::new()),
        }
    }

    fn mask(&self, path: PathBuf) -> Result<RoiMask> {
        if let Some(mask) = self.masks.lock().unwrap().get(&path) {
            return Ok(mask.clone());
        }
        let mask = RoiMask::load(&path)?;
        self.masks.lock().unwrap().insert(path, mask.clone());
        Ok(mask)
    }
}

impl FrameSource for ManifestSource<'_> {
    fn frame_count(&self) -> usize {
        self.manifest.len()
    }

    fn load(&self, index: usize) -> Result<AttributeMap> {
        let map = load_map(self.manifest.map_path(index))?;
        match self.manifest.roi_path(index) {
            Some(path) => Ok(apply_roi(&map, &self.mask(path)?)?),
            None => Ok(map),
        }
    }
}

/// In-memory frames, mainly for tests and generated data.
pub struct MemorySource(pub Vec<AttributeMap>);

impl FrameSource for MemorySource {
    fn frame_count(&self) -> usize {
        self.0.len()
    }

    fn load(&self, index: usize) -> Result<AttributeMap> {
        Ok(self.0[index].clone())
    }
}

/// Wraps a source and records every index requested from it.
pub struct RecordingSource<S> {
    inner: S,
    accessed: Mutex<Vec<usize>>,
}

impl<S: FrameSource> RecordingSource<S> {
    pub fn new(inner: S) -> Self {
        Self {
            inner,
            accessed: Mutex::new(Vec::new()),
        }
    }

    /// Indices requested so far, sorted.
    pub fn accessed(&self) -> Vec<usize> {
        let mut v = self.accessed.lock().unwrap().clone();
        v.sort_unstable();
        v
    }

    pub fn clear(&self) {
        self.accessed.lock().unwrap().clear();
    }
}

impl<S: FrameSource> FrameSource for RecordingSource<S> {
    fn frame_count(&self) -> usize {
        self.inner.frame_count()
    }

    fn load(&self, index: usize) -> Result<AttributeMap> {
        self.accessed.lock().unwrap().push(index);
        self.inner.load(index)
    }
}
