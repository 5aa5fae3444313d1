//! Pipeline configuration as flat `key=value` text.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use super::error::{PipelineError, Result};
use crate::codebook::PcaTarget;
use crate::encoder::NormScheme;
use crate::laf::{Grid, GridSpec};

/// Which frame representation feeds the regressor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Holistic mean-pooled feature.
    Hf,
    /// Whole-frame spatial pyramid.
    Sppf,
    /// LAF + hard VLAD.
    Lfv,
    /// LAF + LSAC-weighted VLAD.
    Wvlad,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Hf, Mode::Sppf, Mode::Lfv, Mode::Wvlad];

    pub fn uses_codebook(self) -> bool {
        matches!(self, Mode::Lfv | Mode::Wvlad)
    }

    /// Row label used in comparison tables.
    pub fn label(self) -> &'static str {
        match self {
            Mode::Hf => "HF",
            Mode::Sppf => "SPPF",
            Mode::Lfv => "LFV",
            Mode::Wvlad => "W-VLAD",
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Hf => "hf",
            Mode::Sppf => "sppf",
            Mode::Lfv => "lfv",
            Mode::Wvlad => "wvlad",
        })
    }
}

impl FromStr for Mode {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hf" => Ok(Mode::Hf),
            "sppf" => Ok(Mode::Sppf),
            "lfv" => Ok(Mode::Lfv),
            "wvlad" => Ok(Mode::Wvlad),
            other => Err(PipelineError::Config(format!("unknown mode {other:?}"))),
        }
    }
}

/// A parameter that is either fixed or resolved from training data.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Auto {
    Auto,
    Value(f64),
}

impl std::fmt::Display for Auto {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Auto::Auto => f.write_str("auto"),
            Auto::Value(v) => write!(f, "{v}"),
        }
    }
}

impl FromStr for Auto {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(Auto::Auto);
        }
        let v: f64 = s
            .parse()
            .map_err(|_| PipelineError::Config(format!("expected a number or auto, got {s:?}")))?;
        if !(v >= 0.0) || !v.is_finite() {
            return Err(PipelineError::Config(format!(
                "{s} must be finite and non-negative"
            )));
        }
        Ok(Auto::Value(v))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RegressorKind {
    Ridge,
    /// RBF kernel ridge with bandwidth `gamma`.
    KernelRidge {
        gamma: Auto,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub grid: Grid,
    pub pyramid: Grid,
    pub codebook_size: usize,
    pub knn: usize,
    pub beta: Auto,
    pub pca: PcaTarget,
    pub lambda: Auto,
    pub mode: Mode,
    pub norm: NormScheme,
    pub seed: u64,
    pub regressor: RegressorKind,
    pub kmeans_iters: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self::mall()
    }
}

impl PipelineConfig {
    /// Mall / UCSD settings: 20×20 cells, 2×2 pyramid, K = 100, κ = 10.
    pub fn mall() -> Self {
        Self {
            grid: Grid::new(20, 20),
            pyramid: Grid::new(2, 2),
            codebook_size: 100,
            knn: 10,
            beta: Auto::Auto,
            pca: PcaTarget::default(),
            lambda: Auto::Auto,
            mode: Mode::Wvlad,
            norm: NormScheme::IntraGlobal,
            seed: 0,
            regressor: RegressorKind::Ridge,
            kmeans_iters: 100,
        }
    }

    pub fn ucsd() -> Self {
        Self::mall()
    }

    /// Caltech settings: as Mall with K = 80.
    pub fn caltech() -> Self {
        Self {
            codebook_size: 80,
            ..Self::mall()
        }
    }

    pub fn grid_spec(&self) -> GridSpec {
        GridSpec::new(self.grid, self.pyramid)
    }

    pub fn with_mode(&self, mode: Mode) -> Self {
        Self {
            mode,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.codebook_size == 0 || self.knn == 0 || self.kmeans_iters == 0 {
            return Err(PipelineError::Config(
                "codebook_size, knn and kmeans_iters must be >= 1".into(),
            ));
        }
        if self.knn > self.codebook_size {
            return Err(PipelineError::Config(format!(
                "knn {} exceeds codebook_size {}",
                self.knn, self.codebook_size
            )));
        }
        if self.grid.is_empty() || self.pyramid.is_empty() {
            return Err(PipelineError::Config(
                "grid and pyramid must be at least 1x1".into(),
            ));
        }
        Ok(())
    }

    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| PipelineError::Config(format!("bad value {value:?} for {what}"));
        let value = value.trim();
        match key.trim() {
            "grid" => self.grid = value.parse().map_err(|_| bad("grid"))?,
            "pyramid" => self.pyramid = value.parse().map_err(|_| bad("pyramid"))?,
            "codebook_size" => {
                self.codebook_size = value.parse().map_err(|_| bad("codebook_size"))?
            }
            "knn" => self.knn = value.parse().map_err(|_| bad("knn"))?,
            "beta" => self.beta = value.parse()?,
            "pca" => self.pca = value.parse().map_err(|_| bad("pca"))?,
            "lambda" => self.lambda = value.parse()?,
            "mode" => self.mode = value.parse()?,
            "norm" => self.norm = value.parse().map_err(|_| bad("norm"))?,
            "seed" => self.seed = value.parse().map_err(|_| bad("seed"))?,
            "kmeans_iters" => self.kmeans_iters = value.parse().map_err(|_| bad("kmeans_iters"))?,
            "regressor" => {
                self.regressor = match value {
                    "ridge" => RegressorKind::Ridge,
                    "kernel-ridge" => RegressorKind::KernelRidge {
                        gamma: match self.regressor {
                            RegressorKind::KernelRidge { gamma } => gamma,
                            RegressorKind::Ridge => Auto::Auto,
                        },
                    },
                    _ => return Err(bad("regressor")),
                }
            }
            "kernel_gamma" => {
                let gamma = value.parse()?;
                self.regressor = RegressorKind::KernelRidge { gamma };
            }
            other => {
                return Err(PipelineError::Config(format!(
                    "unknown config key {other:?}"
                )))
            }
        }
        Ok(())
    }

    /// Parses flat `key=value` text; blank lines and `#` comments are skipped.
    pub fn parse_text(text: &str, base: PipelineConfig) -> Result<Self> {
        let mut config = base;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                PipelineError::Config(format!("line {}: expected key=value", lineno + 1))
            })?;
            config.set(key, value)?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse_text(&std::fs::read_to_string(path)?, Self::default())
    }

    /// Canonical text form: one `key=value` per line in fixed order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "grid={}", self.grid);
        let _ = writeln!(out, "pyramid={}", self.pyramid);
        let _ = writeln!(out, "codebook_size={}", self.codebook_size);
        let _ = writeln!(out, "knn={}", self.knn);
        let _ = writeln!(out, "beta={}", self.beta);
        let _ = writeln!(out, "pca={}", self.pca);
        let _ = writeln!(out, "lambda={}", self.lambda);
        let _ = writeln!(out, "mode={}", self.mode);
        let _ = writeln!(out, "norm={}", self.norm);
        let _ = writeln!(out, "seed={}", self.seed);
        let _ = writeln!(out, "kmeans_iters={}", self.kmeans_iters);
        match self.regressor {
            RegressorKind::Ridge => {
                let _ = writeln!(out, "regressor=ridge");
            }
            RegressorKind::KernelRidge { gamma } => {
                let _ = writeln!(out, "regressor=kernel-ridge");
                let _ = writeln!(out, "kernel_gamma={gamma}");
            }
        }
        out
    }

    /// SHA-256 of the canonical text, hex encoded.
    pub fn digest(&self) -> String {
        Sha256::digest(self.to_text().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
