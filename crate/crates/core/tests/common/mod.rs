//! Independent reference implementations used by the integration tests.

#![allow(dead_code)]

use lafcount_core::attribute_map::{AttributeMap, SceneSpec};
use rand::Rng;

/// Softmax over the `kappa` nearest centroids, computed without the
/// max-shift and with a full sort of distances.
pub fn lsac_weights(x: &[f64], centroids: &[Vec<f64>], kappa: usize, beta: f64) -> Vec<f64> {
    let mut d: Vec<(f64, usize)> = centroids
        .iter()
        .enumerate()
        .map(|(k, c)| (x.iter().zip(c).map(|(a, b)| (a - b).powi(2)).sum(), k))
        .collect();
    d.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let kept = &d[..kappa];
    let z: f64 = kept.iter().map(|&(dist, _)| (-beta * dist).exp()).sum();
    let mut w = vec![0.0; centroids.len()];
    for &(dist, k) in kept {
        w[k] = (-beta * dist).exp() / z;
    }
    w
}

/// `v_k = Σ_i α_ik (x_i − b_k)`, looping over centroids first.
pub fn weighted_residuals(xs: &[Vec<f64>], centroids: &[Vec<f64>], alpha: &[Vec<f64>]) -> Vec<f64> {
    let d = centroids[0].len();
    let mut out = Vec::with_capacity(centroids.len() * d);
    for (k, b) in centroids.iter().enumerate() {
        for j in 0..d {
            let mut acc = 0.0;
            for (i, x) in xs.iter().enumerate() {
                acc += alpha[i][k] * (x[j] - b[j]);
            }
            out.push(acc);
        }
    }
    out
}

/// Lowest Lloyd objective over every labelling of `points` into `k` groups.
pub fn best_partition_cost(points: &[Vec<f64>], k: usize) -> f64 {
    let n = points.len();
    let d = points[0].len();
    let total = (k as u64).pow(n as u32);
    let mut best = f64::INFINITY;
    let mut labels = vec![0usize; n];
    for code in 0..total {
        let mut c = code;
        for l in labels.iter_mut() {
            *l = (c % k as u64) as usize;
            c /= k as u64;
        }
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for j in 0..d {
                sums[l][j] += p[j];
            }
        }
        let cost: f64 = points
            .iter()
            .zip(&labels)
            .map(|(p, &l)| {
                (0..d)
                    .map(|j| (p[j] - sums[l][j] / counts[l] as f64).powi(2))
                    .sum::<f64>()
            })
            .sum();
        best = best.min(cost);
    }
    best
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
pub fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

/// Unregularized least squares with an intercept, via the uncentred normal
/// equations `[X 1]ᵀ[X 1] θ = [X 1]ᵀ y`. Returns `(weights, intercept)`.
pub fn normal_equations(rows: &[Vec<f64>], y: &[f64]) -> (Vec<f64>, f64) {
    let p = rows[0].len() + 1;
    let aug: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| r.iter().copied().chain([1.0]).collect())
        .collect();
    let mut a = vec![vec![0.0; p]; p];
    let mut b = vec![0.0; p];
    for (r, &t) in aug.iter().zip(y) {
        for i in 0..p {
            b[i] += r[i] * t;
            for j in 0..p {
                a[i][j] += r[i] * r[j];
            }
        }
    }
    let theta = gauss_solve(a, b);
    (theta[..p - 1].to_vec(), theta[p - 1])
}

/// Population covariance of row vectors.
pub fn covariance(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = rows.len() as f64;
    let d = rows[0].len();
    let mean: Vec<f64> = (0..d)
        .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n)
        .collect();
    let mut cov = vec![vec![0.0; d]; d];
    for r in rows {
        for i in 0..d {
            for j in 0..d {
                cov[i][j] += (r[i] - mean[i]) * (r[j] - mean[j]);
            }
        }
    }
    cov.iter_mut().flatten().for_each(|c| *c /= n);
    cov
}

/// Per-channel mean over a pixel rectangle, L2-normalized.
pub fn normalized_region_mean(
    map: &AttributeMap,
    rows: std::ops::Range<usize>,
    cols: std::ops::Range<usize>,
) -> Vec<f64> {
    let mut acc = vec![0.0; map.channels()];
    let mut n = 0.0;
    for r in rows {
        for c in cols.clone() {
            for (a, &v) in acc.iter_mut().zip(map.pixel(r, c)) {
                *a += v as f64;
            }
            n += 1.0;
        }
    }
    acc.iter_mut().for_each(|a| *a /= n);
    let norm = acc.iter().map(|a| a * a).sum::<f64>().sqrt();
    if norm > 0.0 {
        acc.iter_mut().for_each(|a| *a /= norm);
    }
    acc
}

/// Random simplex-valued map.
pub fn random_map(
    rng: &mut impl Rng,
    height: usize,
    width: usize,
    channels: usize,
) -> AttributeMap {
    let mut data = Vec::with_capacity(height * width * channels);
    for _ in 0..height * width {
        let raw: Vec<f32> = (0..channels).map(|_| rng.gen_range(0.01f32..1.0)).collect();
        let s: f32 = raw.iter().sum();
        data.extend(raw.iter().map(|v| v / s));
    }
    AttributeMap::new(height, width, channels, data).unwrap()
}

pub fn small_scene(count: usize, seed: u64) -> SceneSpec {
    SceneSpec {
        height: 40,
        width: 40,
        channels: 4,
        count,
        blob_radius: 1.5,
        background: vec![0.0, 0.5, 0.3, 0.2],
        noise: 0.02,
        seed,
    }
}
