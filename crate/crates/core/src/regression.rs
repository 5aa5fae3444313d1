//! Ridge regression from encodings to counts, and MAE/MSE scoring.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RegressionError {
    #[error("singular system: design is rank deficient and lambda is zero")]
    SingularSystem,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("length mismatch: {truth} ground-truth values, {predicted} predictions")]
    LengthMismatch { truth: usize, predicted: usize },
    #[error("nothing to score")]
    Empty,
}

pub type Result<T> = std::result::Result<T, RegressionError>;

/// Linear model `ŷ = w·x + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct RegressionModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub lambda: f64,
}

/// A count estimate, raw and rounded.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub raw: f64,
    /// Nearest integer, clamped at zero.
    pub rounded: u64,
}

impl Prediction {
    pub fn from_raw(raw: f64) -> Self {
        Self {
            raw,
            rounded: raw.round().max(0.0) as u64,
        }
    }
}

fn check_samples(rows: &[Vec<f64>], targets: &[f64]) -> Result<usize> {
    if rows.len() != targets.len() {
        return Err(RegressionError::ShapeMismatch(format!(
            "{} samples but {} targets",
            rows.len(),
            targets.len()
        )));
    }
    if rows.len() < 2 {
        return Err(RegressionError::ShapeMismatch(
            "need at least two samples".into(),
        ));
    }
    let dim = rows[0].len();
    if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
        return Err(RegressionError::ShapeMismatch(format!(
            "ragged design: rows of {dim} and {}",
            bad.len()
        )));
    }
    Ok(dim)
}

/// Minimizes `Σ (w·x + b − y)² + λ‖w‖²` with an unpenalized intercept by
/// solving the normal equations on centred data.
pub fn fit_regressor(rows: &[Vec<f64>], targets: &[f64], lambda: f64) -> Result<RegressionModel> {
    let dim = check_samples(rows, targets)?;
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(RegressionError::InvalidParameter(format!(
            "lambda {lambda}"
        )));
    }
    let n = rows.len() as f64;
    let mut x_mean = vec![0.0; dim];
    for r in rows {
        x_mean.iter_mut().zip(r).for_each(|(m, v)| *m += v);
    }
    x_mean.iter_mut().for_each(|m| *m /= n);
    let y_mean = targets.iter().sum::<f64>() / n;

    let x = DMatrix::from_fn(rows.len(), dim, |i, j| rows[i][j] - x_mean[j]);
    let y = DVector::from_iterator(rows.len(), targets.iter().map(|t| t - y_mean));
    let mut gram = x.transpose() * &x;
    for j in 0..dim {
        gram[(j, j)] += lambda;
    }
    let rhs = x.transpose() * y;
    if lambda == 0.0 && is_rank_deficient(&gram) {
        return Err(RegressionError::SingularSystem);
    }

    let solution = match gram.clone().cholesky() {
        Some(chol) => chol.solve(&rhs),
        None if lambda > 0.0 => gram
            .lu()
            .solve(&rhs)
            .ok_or(RegressionError::SingularSystem)?,
        None => return Err(RegressionError::SingularSystem),
    };
    let weights: Vec<f64> = solution.iter().copied().collect();
    let intercept = y_mean - weights.iter().zip(&x_mean).map(|(w, m)| w * m).sum::<f64>();
    Ok(RegressionModel {
        weights,
        intercept,
        lambda,
    })
}

fn is_rank_deficient(gram: &DMatrix<f64>) -> bool {
    let eig = gram.clone().symmetric_eigenvalues();
    let max = eig.iter().copied().fold(0.0f64, f64::max);
    let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
    max <= 0.0 || min <= max * 1e-12
}

impl RegressionModel {
    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        if x.len() != self.weights.len() {
            return Err(RegressionError::DimensionMismatch {
                expected: self.weights.len(),
                got: x.len(),
            });
        }
        let raw = self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.intercept;
        Ok(Prediction::from_raw(raw))
    }

    pub fn weight_norm(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum::<f64>().sqrt()
    }
}

/// RBF kernel ridge regression, `ŷ = Σ_i a_i k(x_i, x) + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelRidgeModel {
    pub support: Vec<Vec<f64>>,
    pub dual: Vec<f64>,
    pub intercept: f64,
    pub gamma: f64,
    pub lambda: f64,
}

fn rbf(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    (-gamma * crate::codebook::sq_dist(a, b)).exp()
}

/// Fits `(K + λI) a = y − ȳ` with `k(x, z) = exp(−γ‖x − z‖²)`.
pub fn fit_kernel_ridge(
    rows: &[Vec<f64>],
    targets: &[f64],
    lambda: f64,
    gamma: f64,
) -> Result<KernelRidgeModel> {
    check_samples(rows, targets)?;
    if !(lambda > 0.0) || !(gamma > 0.0) {
        return Err(RegressionError::InvalidParameter(format!(
            "kernel ridge needs lambda > 0 and gamma > 0, got {lambda}, {gamma}"
        )));
    }
    let n = rows.len();
    let y_mean = targets.iter().sum::<f64>() / n as f64;
    let mut kernel = DMatrix::from_fn(n, n, |i, j| rbf(&rows[i], &rows[j], gamma));
    for i in 0..n {
        kernel[(i, i)] += lambda;
    }
    let y = DVector::from_iterator(n, targets.iter().map(|t| t - y_mean));
    let dual = kernel
        .cholesky()
        .ok_or(RegressionError::SingularSystem)?
        .solve(&y);
    Ok(KernelRidgeModel {
        support: rows.to_vec(),
        dual: dual.iter().copied().collect(),
        intercept: y_mean,
        gamma,
        lambda,
    })
}

impl KernelRidgeModel {
    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        let dim = self.support.first().map_or(0, Vec::len);
        if x.len() != dim {
            return Err(RegressionError::DimensionMismatch {
                expected: dim,
                got: x.len(),
            });
        }
        let raw = self
            .support
            .iter()
            .zip(&self.dual)
            .map(|(s, a)| a * rbf(s, x, self.gamma))
            .sum::<f64>()
            + self.intercept;
        Ok(Prediction::from_raw(raw))
    }
}

/// MAE / MSE over a set of frames.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub mae: f64,
    pub mse: f64,
    pub frames: usize,
    /// `truth − prediction` per frame.
    pub residuals: Vec<f64>,
}

impl std::fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "mae={} mse={} n={}", self.mae, self.mse, self.frames)
    }
}

/// Mean absolute and mean squared error, both averaged over frames.
pub fn score(truth: &[f64], predicted: &[f64]) -> Result<MetricsReport> {
    if truth.len() != predicted.len() {
        return Err(RegressionError::LengthMismatch {
            truth: truth.len(),
            predicted: predicted.len(),
        });
    }
    if truth.is_empty() {
        return Err(RegressionError::Empty);
    }
    let residuals: Vec<f64> = truth.iter().zip(predicted).map(|(y, p)| y - p).collect();
    let n = residuals.len() as f64;
    Ok(MetricsReport {
        mae: residuals.iter().map(|r| r.abs()).sum::<f64>() / n,
        mse: residuals.iter().map(|r| r * r).sum::<f64>() / n,
        frames: residuals.len(),
        residuals,
    })
}
