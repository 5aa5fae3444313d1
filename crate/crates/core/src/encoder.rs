//! Hard VLAD and LSAC-weighted VLAD encoding.
//!
//! Residuals between whitened descriptors and their codebook centroids are
//! summed per centroid, `v_k = Σ_i α_ik (x_i − b_k)`, with `α` either a hard
//! nearest-centroid indicator or a local soft assignment restricted to the
//! `κ` nearest centroids.

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::codebook::{sq_dist, Codebook};

#[derive(Debug, Error)]
pub enum EncodeError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("kappa {kappa} not in 1..={k}")]
    InvalidKappa { kappa: usize, k: usize },
    #[error("beta {0} must be finite and non-negative")]
    InvalidBeta(f64),
    #[error("encoding is not fully normalized")]
    NotNormalized,
    #[error("malformed encoding file: {0}")]
    Malformed(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, EncodeError>;

/// Whitened descriptors of one frame. Inactive rows (all-zero cells) carry
/// no weight in the encoding.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectedSet {
    pub dim: usize,
    pub data: Vec<f64>,
    pub active: Vec<bool>,
}

impl ProjectedSet {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(EncodeError::ShapeMismatch(format!(
                "{} values do not split into rows of {dim}",
                data.len()
            )));
        }
        let active = vec![true; data.len() / dim];
        Ok(Self { dim, data, active })
    }

    pub fn with_active(dim: usize, data: Vec<f64>, active: Vec<bool>) -> Result<Self> {
        let mut set = Self::new(dim, data)?;
        if active.len() != set.active.len() {
            return Err(EncodeError::ShapeMismatch(format!(
                "{} activity flags for {} descriptors",
                active.len(),
                set.active.len()
            )));
        }
        set.active = active;
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.active.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AssignmentMode {
    Hard,
    Soft,
}

/// Row-stochastic `N × K` assignment matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct AssignmentWeights {
    pub n: usize,
    pub k: usize,
    pub alpha: Vec<f64>,
    pub mode: AssignmentMode,
    pub kappa: usize,
    pub beta: f64,
}

impl AssignmentWeights {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.alpha[i * self.k..(i + 1) * self.k]
    }
}

fn check_dims(set: &ProjectedSet, codebook: &Codebook) -> Result<()> {
    if set.dim != codebook.dim {
        return Err(EncodeError::DimensionMismatch {
            expected: codebook.dim,
            got: set.dim,
        });
    }
    Ok(())
}

/// Nearest-centroid indicator weights; ties go to the lowest index.
pub fn assign_hard(set: &ProjectedSet, codebook: &Codebook) -> Result<AssignmentWeights> {
    check_dims(set, codebook)?;
    let k = codebook.k();
    let mut alpha = vec![0.0; set.len() * k];
    for i in 0..set.len() {
        let (nearest, _) = codebook.nearest(set.row(i));
        alpha[i * k + nearest] = 1.0;
    }
    Ok(AssignmentWeights {
        n: set.len(),
        k,
        alpha,
        mode: AssignmentMode::Hard,
        kappa: 1,
        beta: f64::INFINITY,
    })
}

/// Indices and squared distances of the `kappa` nearest centroids, ordered by
/// distance then index.
pub fn nearest_k(x: &[f64], codebook: &Codebook, kappa: usize) -> Vec<(usize, f64)> {
    let mut all: Vec<(usize, f64)> = codebook.iter().map(|c| sq_dist(x, c)).enumerate().collect();
    all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    all.truncate(kappa);
    all
}

/// Local soft assignment weights:
/// `α_ik ∝ exp(−β ‖x_i − b_k‖²)` over the `κ` nearest centroids, zero elsewhere.
pub fn weights_lsac(
    set: &ProjectedSet,
    codebook: &Codebook,
    kappa: usize,
    beta: f64,
) -> Result<AssignmentWeights> {
    check_dims(set, codebook)?;
    let k = codebook.k();
    if kappa == 0 || kappa > k {
        return Err(EncodeError::InvalidKappa { kappa, k });
    }
    if !(beta >= 0.0) || !beta.is_finite() {
        return Err(EncodeError::InvalidBeta(beta));
    }
    let mut alpha = vec![0.0; set.len() * k];
    for i in 0..set.len() {
        let neighbours = nearest_k(set.row(i), codebook, kappa);
        // neighbours[0] holds the smallest distance, i.e. the largest exponent
        let d_min = neighbours[0].1;
        let exps: Vec<f64> = neighbours
            .iter()
            .map(|&(_, d)| (-beta * (d - d_min)).exp())
            .collect();
        let total: f64 = exps.iter().sum();
        let row = &mut alpha[i * k..(i + 1) * k];
        for (&(j, _), e) in neighbours.iter().zip(&exps) {
            row[j] = e / total;
        }
    }
    Ok(AssignmentWeights {
        n: set.len(),
        k,
        alpha,
        mode: AssignmentMode::Soft,
        kappa,
        beta,
    })
}

/// Mean squared distance to the `kappa` nearest centroids over all active
/// descriptors; its reciprocal is the default smoothing factor.
pub fn mean_knn_sq_dist<'a>(
    rows: impl IntoIterator<Item = &'a [f64]>,
    codebook: &Codebook,
    kappa: usize,
) -> f64 {
    let (sum, count) = rows.into_iter().fold((0.0, 0usize), |(s, c), x| {
        let n = nearest_k(x, codebook, kappa);
        (s + n.iter().map(|&(_, d)| d).sum::<f64>(), c + n.len())
    });
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormState {
    Raw,
    IntraNormalized,
    FullyNormalized,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum NormScheme {
    /// Per-centroid block L2, then global L2.
    #[default]
    IntraGlobal,
    GlobalOnly,
}

impl std::fmt::Display for NormScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NormScheme::IntraGlobal => "intra+global",
            NormScheme::GlobalOnly => "global",
        })
    }
}

impl std::str::FromStr for NormScheme {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "intra+global" | "intra" => Ok(NormScheme::IntraGlobal),
            "global" | "global-only" => Ok(NormScheme::GlobalOnly),
            other => Err(format!("unknown normalization scheme {other:?}")),
        }
    }
}

/// Concatenated residual vector `[v_1 … v_K]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoding {
    pub values: Vec<f64>,
    pub block: usize,
    pub state: NormState,
    pub digest: Option<String>,
}

impl Encoding {
    /// Wraps an already unit-norm (or zero) vector, e.g. a holistic feature.
    pub fn normalized(values: Vec<f64>) -> Self {
        let block = values.len();
        Self {
            values,
            block,
            state: NormState::FullyNormalized,
            digest: None,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `VENC | u32 version | u32 length | f32 values`.
    pub fn write_venc(&self, mut out: impl Write) -> Result<()> {
        out.write_all(b"VENC")?;
        out.write_all(&1u32.to_le_bytes())?;
        out.write_all(&(self.values.len() as u32).to_le_bytes())?;
        for &v in &self.values {
            out.write_all(&(v as f32).to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads an encoding written by [`Encoding::write_venc`]. The state is not
    /// stored; it is inferred from the norm.
    pub fn read_venc(mut input: impl Read) -> Result<Self> {
        let mut header = [0u8; 12];
        input.read_exact(&mut header)?;
        if &header[0..4] != b"VENC" {
            return Err(EncodeError::Malformed("bad magic".into()));
        }
        let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
        if version != 1 {
            return Err(EncodeError::Malformed(format!(
                "unsupported version {version}"
            )));
        }
        let len = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
        let mut payload = Vec::new();
        input.read_to_end(&mut payload)?;
        if payload.len() != len * 4 {
            return Err(EncodeError::Malformed(format!(
                "payload is {} bytes, expected {}",
                payload.len(),
                len * 4
            )));
        }
        let values: Vec<f64> = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        let mut enc = Encoding {
            block: len,
            values,
            state: NormState::Raw,
            digest: None,
        };
        let norm = enc.norm();
        if norm == 0.0 || (norm - 1.0).abs() < 1e-5 {
            enc.state = NormState::FullyNormalized;
        }
        Ok(enc)
    }
}

/// Weighted residual sums, skipping zero weights and inactive descriptors.
pub fn encode(
    set: &ProjectedSet,
    codebook: &Codebook,
    weights: &AssignmentWeights,
) -> Result<Encoding> {
    check_dims(set, codebook)?;
    let (d, k) = (set.dim, codebook.k());
    if weights.n != set.len() || weights.k != k {
        return Err(EncodeError::ShapeMismatch(format!(
            "weights are {}x{}, expected {}x{k}",
            weights.n,
            weights.k,
            set.len()
        )));
    }
    let mut values = vec![0.0; k * d];
    for i in (0..set.len()).filter(|&i| set.active[i]) {
        let x = set.row(i);
        for (j, &a) in weights.row(i).iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            let b = codebook.centroid(j);
            for ((v, xv), bv) in values[j * d..(j + 1) * d].iter_mut().zip(x).zip(b) {
                *v += a * (xv - bv);
            }
        }
    }
    Ok(Encoding {
        values,
        block: d,
        state: NormState::Raw,
        digest: None,
    })
}

fn l2_in_place(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

pub fn normalize_encoding(mut enc: Encoding, scheme: NormScheme) -> Encoding {
    if scheme == NormScheme::IntraGlobal && enc.state == NormState::Raw {
        enc.values
            .chunks_mut(enc.block.max(1))
            .for_each(l2_in_place);
        enc.state = NormState::IntraNormalized;
    }
    l2_in_place(&mut enc.values);
    enc.state = NormState::FullyNormalized;
    enc
}

/// Linear similarity of two normalized encodings.
pub fn similarity(a: &Encoding, b: &Encoding) -> Result<f64> {
    if a.len() != b.len() {
        return Err(EncodeError::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    for e in [a, b] {
        let n = e.norm();
        if e.state != NormState::FullyNormalized || !(n == 0.0 || (n - 1.0).abs() < 1e-6) {
            return Err(EncodeError::NotNormalized);
        }
    }
    Ok(a.values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| x * y)
        .sum::<f64>()
        .clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cb(centroids: &[f64], dim: usize) -> Codebook {
        Codebook::from_centroids(dim, centroids.to_vec()).unwrap()
    }

    #[test]
    fn hard_assignment_at_centroid_and_ties() {
        let book = cb(&[0.0, 0.0, 4.0, 0.0, 0.0, 4.0, 4.0, 4.0], 2);
        let set = ProjectedSet::new(2, vec![4.0, 4.0, 2.0, 0.0]).unwrap();
        let w = assign_hard(&set, &book).unwrap();
        assert_eq!(w.row(0), &[0.0, 0.0, 0.0, 1.0]);
        // equidistant from centroids 0 and 1
        assert_eq!(w.row(1), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn lsac_special_cases() {
        let book = cb(&[0.0, 3f64.ln().sqrt(), 10.0], 1);
        let set = ProjectedSet::new(1, vec![0.0]).unwrap();
        let w = weights_lsac(&set, &book, 2, 1.0).unwrap();
        assert!((w.row(0)[0] - 0.75).abs() < 1e-12);
        assert!((w.row(0)[1] - 0.25).abs() < 1e-12);
        assert_eq!(w.row(0)[2], 0.0);

        let w = weights_lsac(&set, &book, 2, 0.0).unwrap();
        assert_eq!(&w.row(0)[..2], &[0.5, 0.5]);

        let w1 = weights_lsac(&set, &book, 1, 3.0).unwrap();
        assert_eq!(w1.alpha, assign_hard(&set, &book).unwrap().alpha);
    }

    #[test]
    fn lsac_large_beta_is_stable() {
        let book = cb(&[0.0, 1.0, 2.0], 1);
        let set = ProjectedSet::new(1, vec![0.4]).unwrap();
        let w = weights_lsac(&set, &book, 3, 1e6).unwrap();
        assert!(w.alpha.iter().all(|v| v.is_finite()));
        assert_eq!(w.row(0)[0], 1.0);
    }

    #[test]
    fn lsac_parameter_errors() {
        let book = cb(&[0.0, 1.0], 1);
        let set = ProjectedSet::new(1, vec![0.4]).unwrap();
        assert!(matches!(
            weights_lsac(&set, &book, 0, 1.0),
            Err(EncodeError::InvalidKappa { .. })
        ));
        assert!(matches!(
            weights_lsac(&set, &book, 3, 1.0),
            Err(EncodeError::InvalidKappa { .. })
        ));
        assert!(matches!(
            weights_lsac(&set, &book, 1, -1.0),
            Err(EncodeError::InvalidBeta(_))
        ));
        assert!(matches!(
            weights_lsac(&set, &book, 1, f64::NAN),
            Err(EncodeError::InvalidBeta(_))
        ));
        let wrong = ProjectedSet::new(2, vec![0.0, 0.0]).unwrap();
        assert!(matches!(
            assign_hard(&wrong, &book),
            Err(EncodeError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn residual_sums() {
        let book = cb(&[0.0, 0.0, 10.0, 0.0], 2);
        let set = ProjectedSet::new(2, vec![1.0, 0.0, 1.0, 1.0]).unwrap();
        let enc = encode(&set, &book, &assign_hard(&set, &book).unwrap()).unwrap();
        assert_eq!(enc.values, vec![2.0, 1.0, 0.0, 0.0]);

        let at = ProjectedSet::new(2, vec![10.0, 0.0]).unwrap();
        let enc = encode(&at, &book, &assign_hard(&at, &book).unwrap()).unwrap();
        assert!(enc.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn inactive_rows_contribute_nothing() {
        let book = cb(&[0.0, 0.0, 10.0, 0.0], 2);
        let set =
            ProjectedSet::with_active(2, vec![1.0, 0.0, 5.0, 5.0], vec![true, false]).unwrap();
        let enc = encode(&set, &book, &assign_hard(&set, &book).unwrap()).unwrap();
        assert_eq!(enc.values, vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn shape_mismatch() {
        let book = cb(&[0.0, 1.0], 1);
        let set = ProjectedSet::new(1, vec![0.4, 0.6]).unwrap();
        let other = ProjectedSet::new(1, vec![0.4]).unwrap();
        let w = assign_hard(&other, &book).unwrap();
        assert!(matches!(
            encode(&set, &book, &w),
            Err(EncodeError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn normalization_schemes() {
        let raw = Encoding {
            values: vec![2.0, 1.0, 0.0, 0.0],
            block: 2,
            state: NormState::Raw,
            digest: None,
        };
        let g = normalize_encoding(raw.clone(), NormScheme::GlobalOnly);
        let s5 = 5f64.sqrt();
        assert_eq!(g.values, vec![2.0 / s5, 1.0 / s5, 0.0, 0.0]);
        let ig = normalize_encoding(raw.clone(), NormScheme::IntraGlobal);
        assert!((ig.values[0] - 0.8944).abs() < 1e-4 && (ig.values[1] - 0.4472).abs() < 1e-4);
        assert_eq!(ig.state, NormState::FullyNormalized);

        let mixed = Encoding {
            values: vec![3.0, 4.0, 0.0, 1.0],
            ..raw.clone()
        };
        let ig = normalize_encoding(mixed, NormScheme::IntraGlobal);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        for (a, b) in ig.values.iter().zip([0.6 * h, 0.8 * h, 0.0, h]) {
            assert!((a - b).abs() < 1e-12);
        }

        let zero = Encoding {
            values: vec![0.0; 4],
            ..raw
        };
        assert_eq!(
            normalize_encoding(zero, NormScheme::IntraGlobal).values,
            vec![0.0; 4]
        );
    }

    #[test]
    fn similarity_cases() {
        let a = Encoding::normalized(vec![1.0, 0.0]);
        let b = Encoding::normalized(vec![0.6, 0.8]);
        assert_eq!(similarity(&a, &a).unwrap(), 1.0);
        assert_eq!(
            similarity(&a, &Encoding::normalized(vec![0.0, 1.0])).unwrap(),
            0.0
        );
        assert!((similarity(&a, &b).unwrap() - 0.6).abs() < 1e-15);
        assert!(matches!(
            similarity(&a, &Encoding::normalized(vec![1.0])),
            Err(EncodeError::DimensionMismatch { .. })
        ));
        let raw = Encoding {
            values: vec![1.0, 0.0],
            block: 2,
            state: NormState::Raw,
            digest: None,
        };
        assert!(matches!(
            similarity(&a, &raw),
            Err(EncodeError::NotNormalized)
        ));
        assert!(matches!(
            similarity(&a, &Encoding::normalized(vec![2.0, 0.0])),
            Err(EncodeError::NotNormalized)
        ));
    }

    #[test]
    fn venc_round_trip() {
        let e = Encoding::normalized(vec![0.6, 0.0, -0.8]);
        let mut bytes = Vec::new();
        e.write_venc(&mut bytes).unwrap();
        assert_eq!(&bytes[..4], b"VENC");
        assert_eq!(bytes.len(), 12 + 12);
        let back = Encoding::read_venc(&bytes[..]).unwrap();
        assert_eq!(back.state, NormState::FullyNormalized);
        assert_eq!(
            back.values,
            e.values
                .iter()
                .map(|&v| v as f32 as f64)
                .collect::<Vec<_>>()
        );
    }
}
