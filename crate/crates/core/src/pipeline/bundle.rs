//! Fitted models and their on-disk form.
//!
//! A bundle directory holds a `meta` text record plus one little-endian
//! `f32` file per array. Arrays are rounded to `f32` at fit time, so a loaded
//! bundle predicts bit-identically to the one that was saved.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::config::{Mode, PipelineConfig};
use super::error::{PipelineError, Result};
use crate::attribute_map::AttributeMap;
use crate::codebook::{Codebook, WhiteningTransform};
use crate::encoder::{
    assign_hard, encode, normalize_encoding, weights_lsac, Encoding, ProjectedSet,
};
use crate::laf::{extract_laf, holistic_feature, spp_feature, DescriptorSet};
use crate::regression::{KernelRidgeModel, Prediction, RegressionModel};

pub const BUNDLE_FORMAT: &str = "lafcount-bundle";
pub const BUNDLE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum Regressor {
    Ridge(RegressionModel),
    KernelRidge(KernelRidgeModel),
}

impl Regressor {
    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        Ok(match self {
            Regressor::Ridge(m) => m.predict(x)?,
            Regressor::KernelRidge(m) => m.predict(x)?,
        })
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Regressor::Ridge(m) => m.weights.len(),
            Regressor::KernelRidge(m) => m.support.first().map_or(0, Vec::len),
        }
    }
}

/// Whitening and codebook fitted for the LAF modes.
#[derive(Clone, Debug, PartialEq)]
pub struct Quantizer {
    pub whitening: WhiteningTransform,
    pub codebook: Codebook,
    /// Resolved LSAC smoothing factor; unused by hard VLAD.
    pub beta: f64,
}

impl Quantizer {
    pub fn project(&self, set: &DescriptorSet) -> Result<ProjectedSet> {
        let d = self.whitening.output_dim;
        let mut data = vec![0.0; set.len() * d];
        for (x, out) in set.iter().zip(data.chunks_exact_mut(d)) {
            self.whitening.project_into(x, out)?;
        }
        Ok(ProjectedSet::with_active(
            d,
            data,
            set.active_flags().to_vec(),
        )?)
    }

    /// Normalized VLAD / W-VLAD encoding of one frame's descriptors.
    pub fn encode(&self, config: &PipelineConfig, set: &DescriptorSet) -> Result<Encoding> {
        let projected = self.project(set)?;
        let weights = match config.mode {
            Mode::Wvlad => weights_lsac(&projected, &self.codebook, config.knn, self.beta)?,
            _ => assign_hard(&projected, &self.codebook)?,
        };
        let raw = encode(&projected, &self.codebook, &weights)?;
        let mut enc = normalize_encoding(raw, config.norm);
        enc.digest = Some(config.digest());
        Ok(enc)
    }
}

/// Everything needed to predict counts on new frames.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    pub config: PipelineConfig,
    /// Attribute channels the model was trained on.
    pub channels: usize,
    pub quantizer: Option<Quantizer>,
    /// Resolved ridge parameter.
    pub lambda: f64,
    pub regressor: Regressor,
}

/// Computes the regression input for one frame. `quantizer` must be present
/// for the LAF modes.
pub fn frame_feature(
    config: &PipelineConfig,
    quantizer: Option<&Quantizer>,
    map: &AttributeMap,
) -> Result<Encoding> {
    match config.mode {
        Mode::Hf => Ok(Encoding::normalized(holistic_feature(map)?)),
        Mode::Sppf => Ok(Encoding::normalized(spp_feature(map, config.pyramid)?)),
        Mode::Lfv | Mode::Wvlad => {
            let q = quantizer.ok_or_else(|| {
                PipelineError::InconsistentDims(format!(
                    "mode {} needs a whitening transform and codebook",
                    config.mode
                ))
            })?;
            let set = extract_laf(map, &config.grid_spec())?;
            q.encode(config, &set)
        }
    }
}

impl ModelBundle {
    pub fn feature_dim(&self) -> usize {
        match (&self.quantizer, self.config.mode) {
            (Some(q), Mode::Lfv | Mode::Wvlad) => q.codebook.k() * q.whitening.output_dim,
            (_, Mode::Sppf) => self.config.pyramid.len() * self.channels,
            _ => self.channels,
        }
    }

    /// Checks that whitening, codebook and regressor dimensions chain.
    pub fn check_consistency(&self) -> Result<()> {
        if let Some(q) = &self.quantizer {
            let d = self.config.pyramid.len() * self.channels;
            if q.whitening.input_dim != d {
                return Err(PipelineError::InconsistentDims(format!(
                    "whitening input {} but descriptors have {d}",
                    q.whitening.input_dim
                )));
            }
            if q.codebook.dim != q.whitening.output_dim {
                return Err(PipelineError::InconsistentDims(format!(
                    "codebook dimension {} but whitening outputs {}",
                    q.codebook.dim, q.whitening.output_dim
                )));
            }
        } else if self.config.mode.uses_codebook() {
            return Err(PipelineError::InconsistentDims(format!(
                "mode {} without a codebook",
                self.config.mode
            )));
        }
        if self.regressor.input_dim() != self.feature_dim() {
            return Err(PipelineError::InconsistentDims(format!(
                "regressor takes {} inputs, features have {}",
                self.regressor.input_dim(),
                self.feature_dim()
            )));
        }
        Ok(())
    }

    pub fn feature(&self, map: &AttributeMap) -> Result<Encoding> {
        if map.channels() != self.channels {
            return Err(PipelineError::DimensionMismatch(format!(
                "map has {} channels, model expects {}",
                map.channels(),
                self.channels
            )));
        }
        frame_feature(&self.config, self.quantizer.as_ref(), map)
    }

    pub fn predict(&self, map: &AttributeMap) -> Result<Prediction> {
        let feature = self.feature(map)?;
        self.regressor.predict(&feature.values)
    }

    fn meta_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "format={BUNDLE_FORMAT}");
        let _ = writeln!(out, "version={BUNDLE_VERSION}");
        let _ = writeln!(out, "digest={}", self.config.digest());
        for line in self.config.to_text().lines() {
            let _ = writeln!(out, "config.{line}");
        }
        let _ = writeln!(out, "channels={}", self.channels);
        let _ = writeln!(out, "feature_dim={}", self.feature_dim());
        if let Some(q) = &self.quantizer {
            let w = &q.whitening;
            let _ = writeln!(out, "whitening.input_dim={}", w.input_dim);
            let _ = writeln!(out, "whitening.output_dim={}", w.output_dim);
            let _ = writeln!(out, "whitening.epsilon={}", w.epsilon);
            let _ = writeln!(out, "whitening.explained={}", w.explained);
            let _ = writeln!(out, "codebook.k={}", q.codebook.k());
            let _ = writeln!(out, "codebook.seed={}", q.codebook.seed);
            let _ = writeln!(out, "codebook.objective={}", q.codebook.objective);
            let _ = writeln!(out, "beta={}", q.beta);
        }
        let _ = writeln!(out, "lambda={}", self.lambda);
        match &self.regressor {
            Regressor::Ridge(m) => {
                let _ = writeln!(out, "regressor=ridge");
                let _ = writeln!(out, "regressor.intercept={}", m.intercept);
            }
            Regressor::KernelRidge(m) => {
                let _ = writeln!(out, "regressor=kernel-ridge");
                let _ = writeln!(out, "regressor.intercept={}", m.intercept);
                let _ = writeln!(out, "regressor.gamma={}", m.gamma);
                let _ = writeln!(out, "regressor.support={}", m.support.len());
            }
        }
        out
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("meta"), self.meta_text())?;
        if let Some(q) = &self.quantizer {
            write_f32(&dir.join("whitening_mean.f32"), &q.whitening.mean)?;
            write_f32(
                &dir.join("whitening_projection.f32"),
                &q.whitening.projection,
            )?;
            write_f32(
                &dir.join("whitening_eigenvalues.f32"),
                &q.whitening.eigenvalues,
            )?;
            write_f32(&dir.join("codebook_centroids.f32"), &q.codebook.centroids)?;
        }
        match &self.regressor {
            Regressor::Ridge(m) => write_f32(&dir.join("regressor_weights.f32"), &m.weights)?,
            Regressor::KernelRidge(m) => {
                let flat: Vec<f64> = m.support.iter().flatten().copied().collect();
                write_f32(&dir.join("regressor_support.f32"), &flat)?;
                write_f32(&dir.join("regressor_dual.f32"), &m.dual)?;
            }
        }
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let text = std::fs::read_to_string(dir.join("meta"))
            .map_err(|e| PipelineError::Bundle(format!("{}: {e}", dir.join("meta").display())))?;
        let meta: BTreeMap<&str, &str> = text.lines().filter_map(|l| l.split_once('=')).collect();
        let get = |key: &str| {
            meta.get(key)
                .copied()
                .ok_or_else(|| PipelineError::Bundle(format!("meta is missing {key}")))
        };
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| PipelineError::Bundle(format!("bad value {v:?} for {key}")))
        }
        if get("format")? != BUNDLE_FORMAT {
            return Err(PipelineError::Bundle("not a model bundle".into()));
        }
        let version: u32 = num("version", get("version")?)?;
        if version != BUNDLE_VERSION {
            return Err(PipelineError::Bundle(format!(
                "unsupported bundle version {version}"
            )));
        }
        let config_text: String = text
            .lines()
            .filter_map(|l| l.strip_prefix("config."))
            .map(|l| format!("{l}\n"))
            .collect();
        let config = PipelineConfig::parse_text(&config_text, PipelineConfig::default())?;
        if config.digest() != get("digest")? {
            return Err(PipelineError::Bundle("config digest does not match".into()));
        }
        let channels: usize = num("channels", get("channels")?)?;
        let lambda: f64 = num("lambda", get("lambda")?)?;

        let quantizer = if config.mode.uses_codebook() {
            let input_dim: usize = num("whitening.input_dim", get("whitening.input_dim")?)?;
            let output_dim: usize = num("whitening.output_dim", get("whitening.output_dim")?)?;
            let k: usize = num("codebook.k", get("codebook.k")?)?;
            let whitening = WhiteningTransform {
                input_dim,
                output_dim,
                mean: read_f32(&dir.join("whitening_mean.f32"), input_dim)?,
                projection: read_f32(
                    &dir.join("whitening_projection.f32"),
                    input_dim * output_dim,
                )?,
                eigenvalues: read_f32(&dir.join("whitening_eigenvalues.f32"), output_dim)?,
                epsilon: num("whitening.epsilon", get("whitening.epsilon")?)?,
                explained: num("whitening.explained", get("whitening.explained")?)?,
            };
            let mut codebook = Codebook::from_centroids(
                output_dim,
                read_f32(&dir.join("codebook_centroids.f32"), k * output_dim)?,
            )?;
            codebook.seed = num("codebook.seed", get("codebook.seed")?)?;
            codebook.objective = num("codebook.objective", get("codebook.objective")?)?;
            Some(Quantizer {
                whitening,
                codebook,
                beta: num("beta", get("beta")?)?,
            })
        } else {
            None
        };

        let feature_dim: usize = num("feature_dim", get("feature_dim")?)?;
        let intercept: f64 = num("regressor.intercept", get("regressor.intercept")?)?;
        let regressor = match get("regressor")? {
            "ridge" => Regressor::Ridge(RegressionModel {
                weights: read_f32(&dir.join("regressor_weights.f32"), feature_dim)?,
                intercept,
                lambda,
            }),
            "kernel-ridge" => {
                let n: usize = num("regressor.support", get("regressor.support")?)?;
                let flat = read_f32(&dir.join("regressor_support.f32"), n * feature_dim)?;
                Regressor::KernelRidge(KernelRidgeModel {
                    support: flat
                        .chunks_exact(feature_dim.max(1))
                        .map(<[f64]>::to_vec)
                        .collect(),
                    dual: read_f32(&dir.join("regressor_dual.f32"), n)?,
                    intercept,
                    gamma: num("regressor.gamma", get("regressor.gamma")?)?,
                    lambda,
                })
            }
            other => {
                return Err(PipelineError::Bundle(format!(
                    "unknown regressor {other:?}"
                )))
            }
        };
        let bundle = ModelBundle {
            config,
            channels,
            quantizer,
            lambda,
            regressor,
        };
        bundle.check_consistency()?;
        Ok(bundle)
    }
}

fn write_f32(path: &Path, values: &[f64]) -> Result<()> {
    let bytes: Vec<u8> = values
        .iter()
        .flat_map(|&v| (v as f32).to_le_bytes())
        .collect();
    std::fs::write(path, bytes)?;
    Ok(())
}

fn read_f32(path: &Path, expected: usize) -> Result<Vec<f64>> {
    let bytes = std::fs::read(path)
        .map_err(|e| PipelineError::Bundle(format!("{}: {e}", path.display())))?;
    if bytes.len() != expected * 4 {
        return Err(PipelineError::Bundle(format!(
            "{} holds {} bytes, expected {}",
            path.display(),
            bytes.len(),
            expected * 4
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect())
}
