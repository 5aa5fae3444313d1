//! Synthetic datasets with known counts.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::error::{PipelineError, Result};
use super::manifest::{DatasetManifest, FrameEntry};
use crate::attribute_map::{synth_scene, SceneSpec, PERSON_CHANNEL};

pub const MANIFEST_NAME: &str = "manifest.csv";

#[derive(Clone, Debug, PartialEq)]
pub struct SynthDatasetSpec {
    /// Scene parameters shared by all frames; `count` and `seed` are
    /// overridden per frame.
    pub template: SceneSpec,
    pub frames: usize,
    /// Inclusive count range.
    pub counts: (u32, u32),
    /// Inclusive range of the per-frame background person probability
    /// (diffuse false-positive mass). The template's other background
    /// channels are scaled to keep each pixel on the simplex.
    pub clutter: (f64, f64),
    pub seed: u64,
    pub split: usize,
}

impl SynthDatasetSpec {
    /// Frame shape used for desk-scale experiments: 4 channels (person,
    /// road, vegetation, other), 80×80 pixels.
    pub fn desk(frames: usize, counts: (u32, u32), split: usize, seed: u64) -> Self {
        Self {
            template: SceneSpec {
                height: 80,
                width: 80,
                channels: 4,
                count: 0,
                blob_radius: 2.0,
                background: vec![0.0, 0.5, 0.3, 0.2],
                noise: 0.05,
                seed: 0,
            },
            frames,
            counts,
            clutter: (0.0, 0.15),
            seed,
            split,
        }
    }
}

/// One generated frame's parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FramePlan {
    pub count: u32,
    pub seed: u64,
    pub clutter: f64,
}

impl FramePlan {
    pub fn scene(&self, template: &SceneSpec) -> SceneSpec {
        let person = template.background[PERSON_CHANNEL];
        let rest = 1.0 - person;
        let background = template
            .background
            .iter()
            .enumerate()
            .map(|(c, &b)| {
                if c == PERSON_CHANNEL {
                    self.clutter
                } else if rest > 0.0 {
                    b / rest * (1.0 - self.clutter)
                } else {
                    (1.0 - self.clutter) / (template.channels - 1) as f64
                }
            })
            .collect();
        SceneSpec {
            count: self.count as usize,
            seed: self.seed,
            background,
            ..template.clone()
        }
    }
}

/// Per-frame parameters; pure function of the spec.
pub fn frame_plan(spec: &SynthDatasetSpec) -> Result<Vec<FramePlan>> {
    let (lo, hi) = spec.counts;
    if lo > hi {
        return Err(PipelineError::Config(format!(
            "empty count range {lo}-{hi}"
        )));
    }
    let (c_lo, c_hi) = spec.clutter;
    if !(0.0 <= c_lo && c_lo <= c_hi && c_hi < 1.0) {
        return Err(PipelineError::Config(format!(
            "clutter range {c_lo}-{c_hi} not within [0, 1)"
        )));
    }
    if spec.template.channels < 2 && c_hi > 0.0 {
        return Err(PipelineError::Config(
            "clutter needs at least two channels".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    Ok((0..spec.frames)
        .map(|_| {
            let count = rng.gen_range(lo..=hi);
            let seed = rng.gen();
            let u: f64 = rng.gen();
            FramePlan {
                count,
                seed,
                clutter: c_lo + u * (c_hi - c_lo),
            }
        })
        .collect())
}

/// Generates frames in memory, returning maps and counts.
pub fn synth_frames(
    spec: &SynthDatasetSpec,
) -> Result<(Vec<crate::attribute_map::AttributeMap>, Vec<u32>)> {
    use rayon::prelude::*;
    let plan = frame_plan(spec)?;
    let maps = plan
        .par_iter()
        .map(|frame| Ok(synth_scene(&frame.scene(&spec.template))?.0))
        .collect::<Result<Vec<_>>>()?;
    Ok((maps, plan.into_iter().map(|f| f.count).collect()))
}

/// Writes `frame_NNNNN.dafm` files and `manifest.csv` into `out_dir`.
///
/// Frames are written before the split is checked, so a rejected split still
/// leaves valid frame files behind.
pub fn synth_dataset(
    spec: &SynthDatasetSpec,
    out_dir: impl AsRef<Path>,
) -> Result<DatasetManifest> {
    let out_dir = out_dir.as_ref();
    spec.template.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let (maps, counts) = synth_frames(spec)?;
    let mut entries = Vec::with_capacity(maps.len());
    for (i, (map, count)) in maps.iter().zip(counts).enumerate() {
        let name = PathBuf::from(format!("frame_{i:05}.dafm"));
        map.store(out_dir.join(&name))?;
        entries.push(FrameEntry {
            map: name,
            count,
            roi: None,
        });
    }
    let mut manifest = DatasetManifest::new(entries);
    manifest.base_dir = out_dir.to_path_buf();
    let manifest = manifest.with_split(spec.split)?;
    manifest.store(out_dir.join(MANIFEST_NAME))?;
    Ok(manifest)
}
