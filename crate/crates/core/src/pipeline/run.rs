//! Training, evaluation and the baseline comparison.

use std::fmt;
use std::fmt::Write as _;
use std::ops::Range;

use rayon::prelude::*;

use super::bundle::{frame_feature, ModelBundle, Quantizer, Regressor};
use super::config::{Auto, Mode, PipelineConfig, RegressorKind};
use super::error::{PipelineError, Result};
use super::manifest::DatasetManifest;
use super::source::{FrameSource, ManifestSource};
use crate::codebook::{fit_codebook, fit_whitening, round_f32, KMeansParams, Regularizer};
use crate::encoder::{mean_knn_sq_dist, similarity, Encoding};
use crate::laf::{extract_laf, DescriptorSet};
use crate::regression::{fit_kernel_ridge, fit_regressor, score, MetricsReport, Prediction};

/// Candidate ridge parameters for automatic selection.
pub const LAMBDA_GRID: [f64; 10] = [1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0, 1000.0];
/// Used when there are too few training frames to cross-validate.
pub const DEFAULT_LAMBDA: f64 = 1e-3;
const CV_FOLDS: usize = 5;

fn load_all<T: Send>(
    source: &dyn FrameSource,
    indices: Range<usize>,
    f: impl Fn(&crate::attribute_map::AttributeMap) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    indices
        .into_par_iter()
        .map(|i| {
            source
                .load(i)
                .and_then(|map| f(&map))
                .map_err(|e| e.at_frame(i))
        })
        .collect()
}

/// The channel count shared by all frames, or the first frame that differs.
fn common_channels(channels: &[usize], first_index: usize) -> Result<usize> {
    let first = channels[0];
    match channels.iter().position(|&c| c != first) {
        Some(i) => Err(PipelineError::DimensionMismatch(format!(
            "frame has {} channels, first training frame has {first}",
            channels[i]
        ))
        .at_frame(first_index + i)),
        None => Ok(first),
    }
}

fn fit_quantizer(config: &PipelineConfig, sets: &[DescriptorSet]) -> Result<Quantizer> {
    let dim = sets[0].dim();
    let pooled: Vec<f64> = sets
        .iter()
        .flat_map(|s| s.active().flatten().copied())
        .collect();
    let mut whitening = fit_whitening(&pooled, dim, config.pca, Regularizer::Auto)?;
    whitening.round_to_f32();
    let out_dim = whitening.output_dim;
    let mut projected = vec![0.0; pooled.len() / dim * out_dim];
    for (x, out) in pooled
        .chunks_exact(dim)
        .zip(projected.chunks_exact_mut(out_dim))
    {
        whitening.project_into(x, out)?;
    }
    let params = KMeansParams {
        k: config.codebook_size,
        seed: config.seed,
        max_iters: config.kmeans_iters,
        tol: 1e-6,
    };
    let (mut codebook, _) = fit_codebook(&projected, out_dim, &params)?;
    codebook.round_to_f32();
    let beta = match config.beta {
        Auto::Value(b) => b,
        Auto::Auto => {
            let mean = mean_knn_sq_dist(projected.chunks_exact(out_dim), &codebook, config.knn);
            if mean > 0.0 {
                1.0 / mean
            } else {
                1.0
            }
        }
    };
    Ok(Quantizer {
        whitening,
        codebook,
        beta,
    })
}

/// Mean squared held-out error of `fit` over contiguous folds.
fn cv_error<M>(
    rows: &[Vec<f64>],
    targets: &[f64],
    fit: impl Fn(&[Vec<f64>], &[f64]) -> Result<M>,
    predict: impl Fn(&M, &[f64]) -> Result<Prediction>,
) -> Result<f64> {
    let n = rows.len();
    let mut sse = 0.0;
    for fold in 0..CV_FOLDS {
        let held = fold * n / CV_FOLDS..(fold + 1) * n / CV_FOLDS;
        let (train_x, train_y): (Vec<Vec<f64>>, Vec<f64>) = (0..n)
            .filter(|i| !held.contains(i))
            .map(|i| (rows[i].clone(), targets[i]))
            .unzip();
        let model = fit(&train_x, &train_y)?;
        for i in held {
            let r = targets[i] - predict(&model, &rows[i])?.raw;
            sse += r * r;
        }
    }
    Ok(sse / n as f64)
}

fn select_lambda<M>(
    rows: &[Vec<f64>],
    targets: &[f64],
    fit: impl Fn(&[Vec<f64>], &[f64], f64) -> Result<M>,
    predict: impl Fn(&M, &[f64]) -> Result<Prediction>,
) -> Result<f64> {
    if rows.len() < 2 * CV_FOLDS {
        return Ok(DEFAULT_LAMBDA);
    }
    let mut best = (f64::INFINITY, DEFAULT_LAMBDA);
    for &lambda in &LAMBDA_GRID {
        let err = match cv_error(rows, targets, |x, y| fit(x, y, lambda), &predict) {
            Ok(e) => e,
            Err(PipelineError::Regression(_)) => continue,
            Err(e) => return Err(e),
        };
        if err < best.0 {
            best = (err, lambda);
        }
    }
    Ok(best.1)
}

fn mean_pairwise_sq_dist(rows: &[Vec<f64>]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            sum += crate::codebook::sq_dist(&rows[i], &rows[j]);
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn fit_final_regressor(
    config: &PipelineConfig,
    rows: &[Vec<f64>],
    targets: &[f64],
) -> Result<(Regressor, f64)> {
    match config.regressor {
        RegressorKind::Ridge => {
            let lambda = match config.lambda {
                Auto::Value(l) => l,
                Auto::Auto => select_lambda(
                    rows,
                    targets,
                    |x, y, l| Ok(fit_regressor(x, y, l)?),
                    |m, x| Ok(m.predict(x)?),
                )?,
            };
            let mut model = fit_regressor(rows, targets, lambda)?;
            round_f32(&mut model.weights);
            Ok((Regressor::Ridge(model), lambda))
        }
        RegressorKind::KernelRidge { gamma } => {
            let gamma = match gamma {
                Auto::Value(g) => g,
                Auto::Auto => {
                    let mean = mean_pairwise_sq_dist(rows);
                    if mean > 0.0 {
                        1.0 / mean
                    } else {
                        1.0
                    }
                }
            };
            let lambda = match config.lambda {
                Auto::Value(l) => l,
                Auto::Auto => select_lambda(
                    rows,
                    targets,
                    |x, y, l| Ok(fit_kernel_ridge(x, y, l, gamma)?),
                    |m, x| Ok(m.predict(x)?),
                )?,
            };
            let mut model = fit_kernel_ridge(rows, targets, lambda, gamma)?;
            model.support.iter_mut().for_each(|s| round_f32(s));
            round_f32(&mut model.dual);
            Ok((Regressor::KernelRidge(model), lambda))
        }
    }
}

/// Fits a bundle on frames `train` of `source`, whose ground truth is `counts`.
///
/// Only indices inside `train` are ever requested from `source`.
pub fn train_on(
    source: &dyn FrameSource,
    counts: &[u32],
    train: Range<usize>,
    config: &PipelineConfig,
) -> Result<ModelBundle> {
    config.validate()?;
    if train.len() < 2 || train.end > counts.len() {
        return Err(PipelineError::InvalidSplit {
            split: train.len(),
            frames: counts.len(),
        });
    }
    let (quantizer, channels, features) = if config.mode.uses_codebook() {
        let spec = config.grid_spec();
        let sets = load_all(source, train.clone(), |map| {
            Ok((map.channels(), extract_laf(map, &spec)?))
        })?;
        let (channels, sets): (Vec<usize>, Vec<DescriptorSet>) = sets.into_iter().unzip();
        let channels = common_channels(&channels, train.start)?;
        let quantizer = fit_quantizer(config, &sets)?;
        let features: Vec<Encoding> = sets
            .par_iter()
            .map(|set| quantizer.encode(config, set))
            .collect::<Result<_>>()?;
        (Some(quantizer), channels, features)
    } else {
        let features = load_all(source, train.clone(), |map| {
            Ok((map.channels(), frame_feature(config, None, map)?))
        })?;
        let (channels, features): (Vec<usize>, Vec<Encoding>) = features.into_iter().unzip();
        (None, common_channels(&channels, train.start)?, features)
    };

    let rows: Vec<Vec<f64>> = features.into_iter().map(|e| e.values).collect();
    let targets: Vec<f64> = counts[train].iter().map(|&c| c as f64).collect();
    let (regressor, lambda) = fit_final_regressor(config, &rows, &targets)?;
    let bundle = ModelBundle {
        config: config.clone(),
        channels,
        quantizer,
        lambda,
        regressor,
    };
    bundle.check_consistency()?;
    Ok(bundle)
}

/// Trains on the manifest's training split.
pub fn train(manifest: &DatasetManifest, config: &PipelineConfig) -> Result<ModelBundle> {
    let counts: Vec<u32> = manifest.counts().collect();
    train_on(
        &ManifestSource::new(manifest),
        &counts,
        manifest.train_indices()?,
        config,
    )
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FramePrediction {
    pub index: usize,
    pub truth: u32,
    pub prediction: Prediction,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub predictions: Vec<FramePrediction>,
}

impl Evaluation {
    /// Per-frame log as `index,truth,raw,rounded` CSV.
    pub fn csv(&self) -> String {
        let mut out = String::from("index,truth,raw,rounded\n");
        for p in &self.predictions {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                p.index, p.truth, p.prediction.raw, p.prediction.rounded
            );
        }
        out
    }
}

/// Scores `bundle` on the frames in `indices`.
pub fn evaluate_on(
    source: &dyn FrameSource,
    counts: &[u32],
    indices: Range<usize>,
    bundle: &ModelBundle,
) -> Result<Evaluation> {
    if indices.is_empty() {
        return Err(PipelineError::EmptyTestSplit);
    }
    let raw = load_all(source, indices.clone(), |map| bundle.predict(map))?;
    let predictions: Vec<FramePrediction> = indices
        .zip(raw)
        .map(|(index, prediction)| FramePrediction {
            index,
            truth: counts[index],
            prediction,
        })
        .collect();
    let truth: Vec<f64> = predictions.iter().map(|p| p.truth as f64).collect();
    let predicted: Vec<f64> = predictions.iter().map(|p| p.prediction.raw).collect();
    Ok(Evaluation {
        report: score(&truth, &predicted)?,
        predictions,
    })
}

/// Scores `bundle` on the manifest's test split.
pub fn evaluate(manifest: &DatasetManifest, bundle: &ModelBundle) -> Result<Evaluation> {
    let counts: Vec<u32> = manifest.counts().collect();
    evaluate_on(
        &ManifestSource::new(manifest),
        &counts,
        manifest.test_indices()?,
        bundle,
    )
}

#[derive(Clone, Debug)]
pub struct BaselineRow {
    pub mode: Mode,
    pub report: MetricsReport,
    pub lambda: f64,
    pub beta: Option<f64>,
}

/// Linear similarities between the representations of three frames.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimilarityTriple {
    pub ab: f64,
    pub bc: f64,
}

impl SimilarityTriple {
    /// Gap between the same-count and different-count similarities.
    pub fn gap(&self) -> f64 {
        (self.ab - self.bc).abs()
    }
}

#[derive(Clone, Debug)]
pub struct Comparison {
    pub rows: Vec<BaselineRow>,
    pub frames: [usize; 3],
    pub frame_counts: [u32; 3],
    pub similarities: Vec<(Mode, SimilarityTriple)>,
}

impl Comparison {
    pub fn row(&self, mode: Mode) -> Option<&BaselineRow> {
        self.rows.iter().find(|r| r.mode == mode)
    }

    /// Method / MAE / MSE table.
    pub fn metrics_table(&self) -> String {
        let mut out = format!("{:<8} {:>8} {:>8}\n", "Method", "MAE", "MSE");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<8} {:>8.2} {:>8.2}",
                r.mode.label(),
                r.report.mae,
                r.report.mse
            );
        }
        out
    }

    /// S(a,b), S(b,c) and their gap, one column per method.
    pub fn similarity_table(&self) -> String {
        let mut out = format!("{:<14}", "");
        for (mode, _) in &self.similarities {
            let _ = write!(out, " {:>8}", mode.label());
        }
        out.push('\n');
        type Cell = fn(&SimilarityTriple) -> f64;
        let lines: [(&str, Cell); 3] = [
            ("S(a,b)", |s| s.ab),
            ("S(b,c)", |s| s.bc),
            ("S(a,b)-S(b,c)", SimilarityTriple::gap),
        ];
        for (label, cell) in lines {
            let _ = write!(out, "{label:<14}");
            for (_, s) in &self.similarities {
                let _ = write!(out, " {:>8.4}", cell(s));
            }
            out.push('\n');
        }
        out
    }
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.metrics_table())?;
        writeln!(
            f,
            "\nframes a={} ({}), b={} ({}), c={} ({})",
            self.frames[0],
            self.frame_counts[0],
            self.frames[1],
            self.frame_counts[1],
            self.frames[2],
            self.frame_counts[2]
        )?;
        f.write_str(&self.similarity_table())
    }
}

/// Picks `b, c` as the first pair of test frames with equal counts and `a`
/// as the test frame whose count is farthest from theirs.
pub fn pick_similarity_frames(counts: &[u32], test: Range<usize>) -> Result<[usize; 3]> {
    if test.len() < 3 {
        return Err(PipelineError::Manifest(
            "need three test frames for the similarity study".into(),
        ));
    }
    let idx: Vec<usize> = test.collect();
    let pair = idx.iter().enumerate().find_map(|(n, &b)| {
        idx[n + 1..]
            .iter()
            .find(|&&c| counts[c] == counts[b])
            .map(|&c| (b, c))
    });
    let (b, c) = pair.unwrap_or((idx[1], idx[2]));
    let a = idx
        .iter()
        .copied()
        .filter(|&i| i != b && i != c)
        .max_by_key(|&i| (counts[i].abs_diff(counts[b]), std::cmp::Reverse(i)))
        .expect("at least three test frames");
    Ok([a, b, c])
}

/// Runs train + evaluate for all four representations with the same data
/// and seed, plus the three-frame similarity study.
pub fn compare_on(
    source: &dyn FrameSource,
    counts: &[u32],
    split: usize,
    base: &PipelineConfig,
    frames: Option<[usize; 3]>,
) -> Result<Comparison> {
    let test = split..counts.len();
    let frames = match frames {
        Some(f) => {
            if let Some(&bad) = f.iter().find(|&&i| i >= counts.len()) {
                return Err(PipelineError::Config(format!(
                    "frame index {bad} out of range"
                )));
            }
            f
        }
        None => pick_similarity_frames(counts, test.clone())?,
    };
    let maps = frames
        .iter()
        .map(|&i| source.load(i).map_err(|e| e.at_frame(i)))
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::with_capacity(4);
    let mut similarities = Vec::with_capacity(4);
    for mode in Mode::ALL {
        let config = base.with_mode(mode);
        let bundle = train_on(source, counts, 0..split, &config)?;
        let eval = evaluate_on(source, counts, test.clone(), &bundle)?;
        let enc = maps
            .iter()
            .map(|m| bundle.feature(m))
            .collect::<Result<Vec<_>>>()?;
        similarities.push((
            mode,
            SimilarityTriple {
                ab: similarity(&enc[0], &enc[1])?,
                bc: similarity(&enc[1], &enc[2])?,
            },
        ));
        rows.push(BaselineRow {
            mode,
            report: eval.report,
            lambda: bundle.lambda,
            beta: bundle
                .quantizer
                .as_ref()
                .filter(|_| mode == Mode::Wvlad)
                .map(|q| q.beta),
        });
    }
    Ok(Comparison {
        rows,
        frames,
        frame_counts: frames.map(|i| counts[i]),
        similarities,
    })
}

pub fn compare_baselines(
    manifest: &DatasetManifest,
    base: &PipelineConfig,
    frames: Option<[usize; 3]>,
) -> Result<Comparison> {
    let counts: Vec<u32> = manifest.counts().collect();
    compare_on(
        &ManifestSource::new(manifest),
        &counts,
        manifest.split()?,
        base,
        frames,
    )
}
