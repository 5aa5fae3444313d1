//! PCA whitening and k-means dictionary learning.

use std::collections::HashSet;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CodebookError {
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("invalid PCA target: {0}")]
    InvalidTarget(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("too few points: {distinct} distinct points for {k} centroids")]
    TooFewPoints { distinct: usize, k: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = std::result::Result<T, CodebookError>;

/// How many principal components to keep.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PcaTarget {
    /// Smallest number of components whose eigenvalues reach this fraction of
    /// the total variance.
    Variance(f64),
    Fixed(usize),
}

impl Default for PcaTarget {
    fn default() -> Self {
        PcaTarget::Variance(0.95)
    }
}

impl std::fmt::Display for PcaTarget {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PcaTarget::Variance(v) => write!(f, "{v}"),
            PcaTarget::Fixed(d) => write!(f, "{d}d"),
        }
    }
}

impl std::str::FromStr for PcaTarget {
    type Err = CodebookError;

    /// `0.95` is a variance fraction, `8d` a fixed output dimension.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || CodebookError::InvalidTarget(format!("cannot parse {s:?}"));
        if let Some(dim) = s.strip_suffix('d') {
            return dim.parse().map(PcaTarget::Fixed).map_err(|_| bad());
        }
        s.parse().map(PcaTarget::Variance).map_err(|_| bad())
    }
}

/// Regularizer choice for whitening.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Regularizer {
    /// `1e-8 · trace(cov) / d`.
    Auto,
    Fixed(f64),
}

/// Affine map `x ↦ P (x − μ)` where the rows of `P` are principal axes scaled
/// by `1/√(λ_j + ε)`.
#[derive(Clone, Debug, PartialEq)]
pub struct WhiteningTransform {
    pub input_dim: usize,
    pub output_dim: usize,
    pub mean: Vec<f64>,
    /// Row-major `output_dim × input_dim`.
    pub projection: Vec<f64>,
    /// Kept eigenvalues, non-increasing.
    pub eigenvalues: Vec<f64>,
    pub epsilon: f64,
    /// Fraction of total variance carried by the kept components.
    pub explained: f64,
}

impl WhiteningTransform {
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.output_dim];
        self.project_into(x, &mut out)?;
        Ok(out)
    }

    pub fn project_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(CodebookError::DimensionMismatch {
                expected: self.input_dim,
                got: x.len(),
            });
        }
        for (o, row) in out
            .iter_mut()
            .zip(self.projection.chunks_exact(self.input_dim))
        {
            *o = row
                .iter()
                .zip(x.iter().zip(&self.mean))
                .map(|(p, (v, m))| p * (v - m))
                .sum();
        }
        Ok(())
    }

    /// Rounds the stored arrays to `f32` precision, matching what a persisted
    /// transform reads back.
    pub fn round_to_f32(&mut self) {
        round_f32(&mut self.mean);
        round_f32(&mut self.projection);
        round_f32(&mut self.eigenvalues);
    }
}

pub(crate) fn round_f32(values: &mut [f64]) {
    values.iter_mut().for_each(|v| *v = *v as f32 as f64);
}

fn count_distinct(points: &[f64], dim: usize, limit: usize) -> usize {
    let mut seen = HashSet::new();
    for p in points.chunks_exact(dim) {
        seen.insert(p.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        if seen.len() >= limit {
            break;
        }
    }
    seen.len()
}

/// Fits PCA + whitening on row vectors stored contiguously in `points`.
pub fn fit_whitening(
    points: &[f64],
    dim: usize,
    target: PcaTarget,
    reg: Regularizer,
) -> Result<WhiteningTransform> {
    if dim == 0 || points.len() % dim != 0 {
        return Err(CodebookError::DimensionMismatch {
            expected: dim,
            got: points.len(),
        });
    }
    match target {
        PcaTarget::Variance(f) if !(f > 0.0 && f <= 1.0) => {
            return Err(CodebookError::InvalidTarget(format!(
                "variance fraction {f} not in (0, 1]"
            )))
        }
        PcaTarget::Fixed(k) if k == 0 || k > dim => {
            return Err(CodebookError::InvalidTarget(format!(
                "output dimension {k} not in 1..={dim}"
            )))
        }
        _ => {}
    }
    let n = points.len() / dim;
    if count_distinct(points, dim, 2) < 2 {
        return Err(CodebookError::DegenerateData(
            "fewer than two distinct descriptors".into(),
        ));
    }

    let mut mean = vec![0.0; dim];
    for p in points.chunks_exact(dim) {
        mean.iter_mut().zip(p).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    // population covariance, upper triangle then mirrored
    let mut cov = DMatrix::<f64>::zeros(dim, dim);
    let mut centered = vec![0.0; dim];
    for p in points.chunks_exact(dim) {
        centered
            .iter_mut()
            .zip(p.iter().zip(&mean))
            .for_each(|(c, (v, m))| *c = v - m);
        for i in 0..dim {
            let ci = centered[i];
            for j in i..dim {
                cov[(i, j)] += ci * centered[j];
            }
        }
    }
    for i in 0..dim {
        for j in i..dim {
            let v = cov[(i, j)] / n as f64;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    let trace = cov.trace();
    if !(trace > 0.0) {
        return Err(CodebookError::DegenerateData("zero covariance".into()));
    }
    let epsilon = match reg {
        Regularizer::Auto => 1e-8 * trace / dim as f64,
        Regularizer::Fixed(e) if e > 0.0 => e,
        Regularizer::Fixed(e) => {
            return Err(CodebookError::InvalidParameter(format!(
                "regularizer {e} must be positive"
            )))
        }
    };

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let eigenvalues: Vec<f64> = order.iter().map(|&j| eig.eigenvalues[j].max(0.0)).collect();
    let total: f64 = eigenvalues.iter().sum();

    let keep = match target {
        PcaTarget::Fixed(k) => k,
        PcaTarget::Variance(f) => {
            let mut acc = 0.0;
            let mut k = dim;
            for (j, &l) in eigenvalues.iter().enumerate() {
                acc += l;
                // small slack so that f = 1 is reached despite rounding
                if acc >= f * total * (1.0 - 1e-12) {
                    k = j + 1;
                    break;
                }
            }
            k
        }
    };

    let mut projection = Vec::with_capacity(keep * dim);
    for (rank, &j) in order.iter().take(keep).enumerate() {
        let axis = eig.eigenvectors.column(j);
        let pivot = axis.iter().copied().fold(
            0.0f64,
            |best, v| if v.abs() > best.abs() { v } else { best },
        );
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        let scale = sign / (eigenvalues[rank] + epsilon).sqrt();
        projection.extend(axis.iter().map(|v| v * scale));
    }
    let kept = eigenvalues[..keep].to_vec();
    let explained = kept.iter().sum::<f64>() / total;
    Ok(WhiteningTransform {
        input_dim: dim,
        output_dim: keep,
        mean,
        projection,
        eigenvalues: kept,
        epsilon,
        explained,
    })
}

/// Squared Euclidean distance.
#[inline]
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KMeansParams {
    pub k: usize,
    pub seed: u64,
    pub max_iters: usize,
    /// Stop once no centroid moves farther than this.
    pub tol: f64,
}

impl KMeansParams {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            seed,
            max_iters: 100,
            tol: 1e-6,
        }
    }
}

/// K centroids in the whitened space.
#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    pub dim: usize,
    /// Row-major `k × dim`.
    pub centroids: Vec<f64>,
    /// Sum of squared distances to the nearest centroid on the training set.
    pub objective: f64,
    pub seed: u64,
}

impl Codebook {
    pub fn from_centroids(dim: usize, centroids: Vec<f64>) -> Result<Self> {
        if dim == 0 || centroids.is_empty() || centroids.len() % dim != 0 {
            return Err(CodebookError::DimensionMismatch {
                expected: dim,
                got: centroids.len(),
            });
        }
        Ok(Self {
            dim,
            centroids,
            objective: f64::NAN,
            seed: 0,
        })
    }

    pub fn k(&self) -> usize {
        self.centroids.len() / self.dim
    }

    pub fn centroid(&self, k: usize) -> &[f64] {
        &self.centroids[k * self.dim..(k + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.centroids.chunks_exact(self.dim)
    }

    /// Index and squared distance of the nearest centroid, lowest index on ties.
    pub fn nearest(&self, x: &[f64]) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (k, c) in self.iter().enumerate() {
            let d = sq_dist(x, c);
            if d < best.1 {
                best = (k, d);
            }
        }
        best
    }

    pub fn round_to_f32(&mut self) {
        round_f32(&mut self.centroids);
    }
}

/// Diagnostics from a k-means run.
#[derive(Clone, Debug)]
pub struct KMeansReport {
    /// Objective after each assignment step, starting with the seeding.
    pub history: Vec<f64>,
    pub assignments: Vec<usize>,
    pub iterations: usize,
}

fn assign_all(points: &[f64], codebook: &Codebook) -> (Vec<usize>, Vec<f64>) {
    points
        .par_chunks_exact(codebook.dim)
        .map(|p| codebook.nearest(p))
        .unzip()
}

fn kmeans_pp(points: &[f64], dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = points.len() / dim;
    let point = |i: usize| &points[i * dim..(i + 1) * dim];
    let first = rng.gen_range(0..n);
    let mut centroids = point(first).to_vec();
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(point(i), point(first))).collect();
    while centroids.len() < k * dim {
        let total: f64 = d2.iter().sum();
        let target = rng.gen::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = None;
        for (i, &d) in d2.iter().enumerate() {
            if d <= 0.0 {
                continue;
            }
            acc += d;
            pick = Some(i);
            if acc > target {
                break;
            }
        }
        let pick =
            pick.expect("a point with positive distance exists while distinct points remain");
        let chosen = point(pick).to_vec();
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(point(i), &chosen));
        }
        centroids.extend(chosen);
    }
    centroids
}

/// Lloyd's k-means with k-means++ seeding.
///
/// Sums are accumulated sequentially in point order, so results do not depend
/// on the rayon pool size.
pub fn fit_codebook(
    points: &[f64],
    dim: usize,
    params: &KMeansParams,
) -> Result<(Codebook, KMeansReport)> {
    if dim == 0 || points.len() % dim != 0 {
        return Err(CodebookError::DimensionMismatch {
            expected: dim,
            got: points.len(),
        });
    }
    if params.k == 0 {
        return Err(CodebookError::InvalidParameter("k must be >= 1".into()));
    }
    let distinct = count_distinct(points, dim, params.k);
    if distinct < params.k {
        return Err(CodebookError::TooFewPoints {
            distinct,
            k: params.k,
        });
    }
    let k = params.k;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut codebook = Codebook {
        dim,
        centroids: kmeans_pp(points, dim, k, &mut rng),
        objective: 0.0,
        seed: params.seed,
    };
    let (mut assignments, mut dists) = assign_all(points, &codebook);
    let mut history = vec![dists.iter().sum::<f64>()];
    let mut iterations = 0;

    for _ in 0..params.max_iters {
        iterations += 1;
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.chunks_exact(dim).zip(&assignments) {
            counts[a] += 1;
            sums[a * dim..(a + 1) * dim]
                .iter_mut()
                .zip(p)
                .for_each(|(s, v)| *s += v);
        }
        let old = codebook.centroids.clone();
        for c in 0..k {
            if counts[c] > 0 {
                let inv = counts[c] as f64;
                for (dst, s) in codebook.centroids[c * dim..(c + 1) * dim]
                    .iter_mut()
                    .zip(&sums[c * dim..])
                {
                    *dst = s / inv;
                }
            }
        }
        let empty: Vec<usize> = (0..k).filter(|&c| counts[c] == 0).collect();
        if !empty.is_empty() {
            reseed_empty(points, dim, &assignments, &mut codebook, &empty);
        }
        let shift = old
            .chunks_exact(dim)
            .zip(codebook.iter())
            .map(|(a, b)| sq_dist(a, b))
            .fold(0.0f64, f64::max)
            .sqrt();
        let (a, d) = assign_all(points, &codebook);
        assignments = a;
        dists = d;
        history.push(dists.iter().sum());
        if shift < params.tol {
            break;
        }
    }
    codebook.objective = *history.last().unwrap();
    Ok((
        codebook,
        KMeansReport {
            history,
            assignments,
            iterations,
        },
    ))
}

/// Moves each empty centroid onto the point farthest from its (updated)
/// centroid, skipping points that coincide with an existing centroid.
fn reseed_empty(
    points: &[f64],
    dim: usize,
    assignments: &[usize],
    codebook: &mut Codebook,
    empty: &[usize],
) {
    let mut ranked: Vec<(usize, f64)> = points
        .chunks_exact(dim)
        .zip(assignments)
        .enumerate()
        .map(|(i, (p, &a))| (i, sq_dist(p, codebook.centroid(a))))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut candidates = ranked.into_iter().map(|(i, _)| i);
    for &c in empty {
        for i in candidates.by_ref() {
            let p = &points[i * dim..(i + 1) * dim];
            if codebook.iter().all(|existing| existing != p) {
                codebook.centroids[c * dim..(c + 1) * dim].copy_from_slice(p);
                break;
            }
        }
    }
}
