//! Dense per-pixel attribute probability maps.
//!
//! An [`AttributeMap`] stores an `height × width × channels` tensor of class
//! probabilities, row-major and channel-last, as produced by a semantic
//! segmentation model. This module validates the per-pixel simplex, reads and
//! writes the DAFM container, applies region-of-interest masks, synthesizes
//! scenes with known person counts and renders argmax label images.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

/// Tolerance on `|sum_c prob(c) - 1|` for in-ROI pixels.
pub const SIMPLEX_EPS: f32 = 1e-3;

/// DAFM container magic.
pub const DAFM_MAGIC: &[u8; 4] = b"DAFM";
pub const DAFM_VERSION: u32 = 1;
/// Header flag: divide each pixel by its channel sum before validation.
pub const FLAG_RENORMALIZE: u32 = 1;
const DAFM_HEADER_LEN: usize = 24;

/// Channel that carries "person" probability in synthesized scenes.
pub const PERSON_CHANNEL: usize = 0;

#[derive(Debug, Error)]
pub enum MapError {
    #[error("malformed DAFM header: {0}")]
    MalformedHeader(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("pixel ({row}, {col}) violates the probability simplex (sum = {sum})")]
    SimplexViolation { row: usize, col: usize, sum: f32 },
    #[error("probability {value} at pixel ({row}, {col}) is outside [0, 1]")]
    OutOfRange { row: usize, col: usize, value: f32 },
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
    #[error("palette has {have} entries but the map has {need} channels")]
    PaletteTooSmall { have: usize, need: usize },
    #[error("malformed PGM mask: {0}")]
    MalformedMask(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, MapError>;

/// Per-pixel class probability tensor, row-major and channel-last.
#[derive(Clone, Debug, PartialEq)]
pub struct AttributeMap {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl AttributeMap {
    /// Builds a map and checks the simplex on every pixel.
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        let map = Self::new_unchecked(height, width, channels, data)?;
        map.validate(None)?;
        Ok(map)
    }

    /// Builds a map checking only the shape. Used for masked maps, where pixels
    /// outside the ROI are all-zero.
    pub fn new_unchecked(
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f32>,
    ) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(MapError::DimensionMismatch(format!(
                "zero-sized map {height}x{width}x{channels}"
            )));
        }
        let expected = height * width * channels;
        if data.len() != expected {
            return Err(MapError::DimensionMismatch(format!(
                "expected {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// Uniform map where every pixel equals `pixel`.
    pub fn constant(height: usize, width: usize, pixel: &[f32]) -> Result<Self> {
        let data = pixel
            .iter()
            .copied()
            .cycle()
            .take(height * width * pixel.len())
            .collect();
        Self::new(height, width, pixel.len(), data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[f32] {
        let start = (row * self.width + col) * self.channels;
        &self.data[start..start + self.channels]
    }

    /// Checks value range everywhere and the simplex on pixels inside `roi`
    /// (or on every pixel when no mask is given).
    pub fn validate(&self, roi: Option<&RoiMask>) -> Result<()> {
        for row in 0..self.height {
            for col in 0..self.width {
                let px = self.pixel(row, col);
                for &value in px {
                    if !(0.0..=1.0).contains(&value) {
                        return Err(MapError::OutOfRange { row, col, value });
                    }
                }
                if roi.map_or(true, |m| m.is_inside(row, col)) {
                    let sum: f32 = px.iter().sum();
                    if (sum - 1.0).abs() > SIMPLEX_EPS {
                        return Err(MapError::SimplexViolation { row, col, sum });
                    }
                }
            }
        }
        Ok(())
    }

    /// Sum of one channel over all pixels.
    pub fn channel_mass(&self, channel: usize) -> f64 {
        self.data
            .chunks_exact(self.channels)
            .map(|px| px[channel] as f64)
            .sum()
    }

    /// Returns a copy with channels reordered so that output channel `c` is
    /// input channel `perm[c]`.
    pub fn permute_channels(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.channels {
            return Err(MapError::DimensionMismatch(format!(
                "permutation of length {} for {} channels",
                perm.len(),
                self.channels
            )));
        }
        let data = self
            .data
            .chunks_exact(self.channels)
            .flat_map(|px| perm.iter().map(move |&c| px[c]))
            .collect();
        Self::new_unchecked(self.height, self.width, self.channels, data)
    }

    /// Serializes to DAFM bytes with the renormalize flag unset.
    pub fn to_dafm_bytes(&self) -> Vec<u8> {
        encode_dafm(self.height, self.width, self.channels, 0, &self.data)
    }

    pub fn store(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        out.write_all(&self.to_dafm_bytes())?;
        out.flush()?;
        Ok(())
    }

    /// Parses DAFM bytes. Masked maps (all-zero pixels) are accepted; every
    /// other pixel must lie on the simplex unless the renormalize flag is set.
    pub fn from_dafm_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < DAFM_HEADER_LEN {
            return Err(MapError::MalformedHeader(format!(
                "file is {} bytes, header needs {DAFM_HEADER_LEN}",
                bytes.len()
            )));
        }
        if &bytes[0..4] != DAFM_MAGIC {
            return Err(MapError::MalformedHeader(format!(
                "bad magic {:?}",
                String::from_utf8_lossy(&bytes[0..4])
            )));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap());
        let version = word(1);
        if version != DAFM_VERSION {
            return Err(MapError::MalformedHeader(format!(
                "unsupported version {version}"
            )));
        }
        let flags = word(2);
        let (height, width, channels) = (word(3) as usize, word(4) as usize, word(5) as usize);
        let payload = &bytes[DAFM_HEADER_LEN..];
        let expected = height
            .checked_mul(width)
            .and_then(|v| v.checked_mul(channels))
            .and_then(|v| v.checked_mul(4))
            .ok_or_else(|| MapError::DimensionMismatch("header dimensions overflow".into()))?;
        if payload.len() != expected {
            return Err(MapError::DimensionMismatch(format!(
                "payload is {} bytes, header implies {expected}",
                payload.len()
            )));
        }
        let mut data: Vec<f32> = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        if flags & FLAG_RENORMALIZE != 0 && channels > 0 {
            for px in data.chunks_exact_mut(channels) {
                let sum: f32 = px.iter().sum();
                if sum > 0.0 {
                    px.iter_mut().for_each(|v| *v /= sum);
                }
            }
        }
        let map = Self::new_unchecked(height, width, channels, data)?;
        // all-zero pixels are outside some ROI the writer applied
        let roi = RoiMask::from_fn(height, width, |r, c| {
            map.pixel(r, c).iter().any(|&v| v != 0.0)
        });
        map.validate(Some(&roi))?;
        Ok(map)
    }
}

/// Loads and validates a DAFM file.
pub fn load_map(path: impl AsRef<Path>) -> Result<AttributeMap> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    AttributeMap::from_dafm_bytes(&bytes)
}

/// Raw DAFM encoder, exposed so tests and exporters can write arbitrary flags
/// and payloads.
pub fn encode_dafm(
    height: usize,
    width: usize,
    channels: usize,
    flags: u32,
    data: &[f32],
) -> Vec<u8> {
    let mut out = Vec::with_capacity(DAFM_HEADER_LEN + data.len() * 4);
    out.extend_from_slice(DAFM_MAGIC);
    for word in [
        DAFM_VERSION,
        flags,
        height as u32,
        width as u32,
        channels as u32,
    ] {
        out.extend_from_slice(&word.to_le_bytes());
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Binary region-of-interest mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoiMask {
    height: usize,
    width: usize,
    inside: Vec<bool>,
}

impl RoiMask {
    pub fn new(height: usize, width: usize, inside: Vec<bool>) -> Result<Self> {
        if inside.len() != height * width {
            return Err(MapError::DimensionMismatch(format!(
                "mask of {height}x{width} needs {} flags, got {}",
                height * width,
                inside.len()
            )));
        }
        if !inside.iter().any(|&b| b) {
            return Err(MapError::DimensionMismatch(
                "mask has no inside pixel".into(),
            ));
        }
        Ok(Self {
            height,
            width,
            inside,
        })
    }

    /// Builds a mask without the non-empty check.
    fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let inside = (0..height * width)
            .map(|i| f(i / width, i % width))
            .collect();
        Self {
            height,
            width,
            inside,
        }
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self::from_fn(height, width, |_, _| true)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn is_inside(&self, row: usize, col: usize) -> bool {
        self.inside[row * self.width + col]
    }

    /// Reads an 8-bit binary (P5) PGM; nonzero samples are inside.
    pub fn from_pgm_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let mut fields = Vec::with_capacity(4);
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(MapError::MalformedMask("truncated header".into()));
            }
            fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        if fields[0] != "P5" {
            return Err(MapError::MalformedMask(format!(
                "expected P5, got {}",
                fields[0]
            )));
        }
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| MapError::MalformedMask(format!("bad header field {s:?}")))
        };
        let (width, height, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
        if maxval == 0 || maxval > 255 {
            return Err(MapError::MalformedMask(format!(
                "maxval {maxval} is not 8-bit"
            )));
        }
        // exactly one whitespace byte separates the header from the raster
        pos += 1;
        let raster = bytes.get(pos..).unwrap_or_default();
        if raster.len() != width * height {
            return Err(MapError::MalformedMask(format!(
                "raster is {} bytes, expected {}",
                raster.len(),
                width * height
            )));
        }
        Self::new(height, width, raster.iter().map(|&b| b != 0).collect())
    }

    pub fn to_pgm_bytes(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.inside.iter().map(|&b| if b { 255u8 } else { 0 }));
        out
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut bytes = Vec::new();
        BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
        Self::from_pgm_bytes(&bytes)
    }

    pub fn store(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_pgm_bytes())?;
        Ok(())
    }
}

/// Zeroes every channel of pixels outside the mask.
pub fn apply_roi(map: &AttributeMap, mask: &RoiMask) -> Result<AttributeMap> {
    if map.height != mask.height || map.width != mask.width {
        return Err(MapError::DimensionMismatch(format!(
            "map is {}x{}, mask is {}x{}",
            map.height, map.width, mask.height, mask.width
        )));
    }
    let mut data = map.data.clone();
    for (px, &inside) in data.chunks_exact_mut(map.channels).zip(&mask.inside) {
        if !inside {
            px.fill(0.0);
        }
    }
    AttributeMap::new_unchecked(map.height, map.width, map.channels, data)
}

/// Parameters of a synthetic crowd scene.
///
/// Each person is an isotropic Gaussian bump of person-probability with
/// standard deviation `blob_radius`, truncated at three radii. Channel
/// [`PERSON_CHANNEL`] carries person mass.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub count: usize,
    pub blob_radius: f64,
    pub background: Vec<f64>,
    pub noise: f64,
    pub seed: u64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.channels == 0 {
            return Err(MapError::InvalidSpec("zero area or no channels".into()));
        }
        if !(self.blob_radius > 0.0) || 2.0 * self.blob_radius > self.height.min(self.width) as f64
        {
            return Err(MapError::InvalidSpec(format!(
                "blob radius {} does not fit a {}x{} frame",
                self.blob_radius, self.height, self.width
            )));
        }
        if self.background.len() != self.channels {
            return Err(MapError::InvalidSpec(format!(
                "background mixture has {} entries, expected {}",
                self.background.len(),
                self.channels
            )));
        }
        if self.background.iter().any(|&b| !(0.0..=1.0).contains(&b))
            || (self.background.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(MapError::InvalidSpec(
                "background mixture is not a probability vector".into(),
            ));
        }
        if !(0.0..=0.2).contains(&self.noise) {
            return Err(MapError::InvalidSpec(format!(
                "noise level {} outside [0, 0.2]",
                self.noise
            )));
        }
        Ok(())
    }

    /// Person-channel mass of one untruncated-by-border blob centred at
    /// `(cy, cx)`, summed over the pixel grid.
    pub fn blob_footprint(&self, cy: f64, cx: f64) -> f64 {
        let mut mass = 0.0;
        for row in 0..self.height {
            for col in 0..self.width {
                mass += blob_value(row, col, cy, cx, self.blob_radius);
            }
        }
        mass
    }
}

fn blob_value(row: usize, col: usize, cy: f64, cx: f64, radius: f64) -> f64 {
    let dy = row as f64 + 0.5 - cy;
    let dx = col as f64 + 0.5 - cx;
    let d2 = dy * dy + dx * dx;
    if d2 > 9.0 * radius * radius {
        0.0
    } else {
        (-d2 / (2.0 * radius * radius)).exp()
    }
}

const PLACEMENT_ATTEMPTS: usize = 64;

/// Synthesizes a scene with `spec.count` people. Pure function of `spec`.
///
/// Blob centres keep a three-radius margin from the border where the frame
/// allows it and are rejection-sampled to stay six radii apart; crowded
/// frames fall back to overlapping blobs, whose person intensity saturates
/// at 1.
pub fn synth_scene(spec: &SceneSpec) -> Result<(AttributeMap, usize)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let r = spec.blob_radius;
    let span = |dim: usize| {
        let margin = (3.0 * r).min(dim as f64 / 2.0 - 0.5).max(0.0);
        (margin, dim as f64 - margin)
    };
    let (y_lo, y_hi) = span(spec.height);
    let (x_lo, x_hi) = span(spec.width);
    let min_sep2 = (6.0 * r) * (6.0 * r);

    let mut centers: Vec<(f64, f64)> = Vec::with_capacity(spec.count);
    for _ in 0..spec.count {
        let mut candidate = (0.0, 0.0);
        for _ in 0..PLACEMENT_ATTEMPTS {
            candidate = (
                sample_in(&mut rng, y_lo, y_hi),
                sample_in(&mut rng, x_lo, x_hi),
            );
            let clear = centers.iter().all(|&(y, x)| {
                let (dy, dx) = (y - candidate.0, x - candidate.1);
                dy * dy + dx * dx >= min_sep2
            });
            if clear {
                break;
            }
        }
        centers.push(candidate);
    }

    let mut intensity = vec![0.0f64; spec.height * spec.width];
    let reach = 3.0 * r;
    for &(cy, cx) in &centers {
        let r0 = (cy - reach).floor().max(0.0) as usize;
        let r1 = ((cy + reach).ceil() as usize).min(spec.height);
        let c0 = (cx - reach).floor().max(0.0) as usize;
        let c1 = ((cx + reach).ceil() as usize).min(spec.width);
        for row in r0..r1 {
            for col in c0..c1 {
                intensity[row * spec.width + col] += blob_value(row, col, cy, cx, r);
            }
        }
    }

    let p = spec.channels;
    let noise = if spec.noise > 0.0 {
        Some(Normal::new(0.0, spec.noise).expect("noise level validated"))
    } else {
        None
    };
    let mut data = vec![0.0f32; spec.height * spec.width * p];
    let mut px = vec![0.0f64; p];
    for (i, out) in data.chunks_exact_mut(p).enumerate() {
        let s = intensity[i].min(1.0);
        for (c, v) in px.iter_mut().enumerate() {
            *v = (1.0 - s) * spec.background[c];
        }
        px[PERSON_CHANNEL] += s;
        renormalize(&mut px);
        if let Some(dist) = &noise {
            for v in px.iter_mut() {
                *v = (*v + dist.sample(&mut rng)).clamp(0.0, 1.0);
            }
            if px.iter().sum::<f64>() <= 0.0 {
                px.copy_from_slice(&spec.background);
            }
            renormalize(&mut px);
        }
        for (o, &v) in out.iter_mut().zip(&px) {
            *o = v as f32;
        }
    }
    let map = AttributeMap::new(spec.height, spec.width, p, data)?;
    Ok((map, spec.count))
}

fn sample_in(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

fn renormalize(px: &mut [f64]) {
    let sum: f64 = px.iter().sum();
    if sum > 0.0 {
        px.iter_mut().for_each(|v| *v /= sum);
    }
}

/// Index of the largest channel, lowest index on ties.
pub fn argmax(px: &[f32]) -> usize {
    let mut best = 0;
    for (c, &v) in px.iter().enumerate().skip(1) {
        if v > px[best] {
            best = c;
        }
    }
    best
}

/// Renders the per-pixel argmax class as binary PPM bytes.
pub fn render_argmax(map: &AttributeMap, palette: &[[u8; 3]]) -> Result<Vec<u8>> {
    if palette.len() < map.channels {
        return Err(MapError::PaletteTooSmall {
            have: palette.len(),
            need: map.channels,
        });
    }
    let mut out = format!("P6\n{} {}\n255\n", map.width, map.height).into_bytes();
    for px in map.data.chunks_exact(map.channels) {
        out.extend_from_slice(&palette[argmax(px)]);
    }
    Ok(out)
}

/// Default colours for rendering: person, road, vegetation, other, then a
/// repeating tail.
pub fn default_palette(channels: usize) -> Vec<[u8; 3]> {
    const BASE: [[u8; 3]; 8] = [
        [220, 20, 60],
        [128, 64, 128],
        [107, 142, 35],
        [70, 70, 70],
        [0, 0, 142],
        [250, 170, 30],
        [70, 130, 180],
        [255, 255, 255],
    ];
    (0..channels.max(1)).map(|c| BASE[c % BASE.len()]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_hot(h: usize, w: usize, p: usize, class: usize) -> AttributeMap {
        let mut px = vec![0.0; p];
        px[class] = 1.0;
        AttributeMap::constant(h, w, &px).unwrap()
    }

    fn scene(count: usize, noise: f64, seed: u64) -> SceneSpec {
        SceneSpec {
            height: 120,
            width: 160,
            channels: 3,
            count,
            blob_radius: 2.0,
            background: vec![0.0, 0.6, 0.4],
            noise,
            seed,
        }
    }

    #[test]
    fn one_hot_file_loads() {
        let map = one_hot(4, 5, 3, 0);
        let loaded = AttributeMap::from_dafm_bytes(&map.to_dafm_bytes()).unwrap();
        assert_eq!(loaded.channels(), 3);
        assert_eq!(loaded, map);
    }

    #[test]
    fn overweight_pixels_rejected_without_flag() {
        let data = vec![0.75f32, 0.75].repeat(6);
        let bytes = encode_dafm(2, 3, 2, 0, &data);
        assert!(matches!(
            AttributeMap::from_dafm_bytes(&bytes),
            Err(MapError::SimplexViolation { .. })
        ));
        let bytes = encode_dafm(2, 3, 2, FLAG_RENORMALIZE, &data);
        let map = AttributeMap::from_dafm_bytes(&bytes).unwrap();
        assert_eq!(map.pixel(1, 2), &[0.5, 0.5]);
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = one_hot(2, 2, 2, 1).to_dafm_bytes();
        bytes[0..4].copy_from_slice(b"XXXX");
        assert!(matches!(
            AttributeMap::from_dafm_bytes(&bytes),
            Err(MapError::MalformedHeader(_))
        ));
        let mut bytes = one_hot(2, 2, 2, 1).to_dafm_bytes();
        bytes[4] = 2;
        assert!(matches!(
            AttributeMap::from_dafm_bytes(&bytes),
            Err(MapError::MalformedHeader(_))
        ));
        assert!(matches!(
            AttributeMap::from_dafm_bytes(b"DAF"),
            Err(MapError::MalformedHeader(_))
        ));
    }

    #[test]
    fn truncated_payload() {
        let mut bytes = one_hot(2, 2, 2, 1).to_dafm_bytes();
        bytes.truncate(bytes.len() - 4);
        assert!(matches!(
            AttributeMap::from_dafm_bytes(&bytes),
            Err(MapError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn header_layout_is_little_endian() {
        let bytes = one_hot(2, 3, 4, 0).to_dafm_bytes();
        assert_eq!(&bytes[0..4], b"DAFM");
        assert_eq!(&bytes[4..8], &[1, 0, 0, 0]);
        assert_eq!(&bytes[8..12], &[0, 0, 0, 0]);
        assert_eq!(&bytes[12..16], &[2, 0, 0, 0]);
        assert_eq!(&bytes[16..20], &[3, 0, 0, 0]);
        assert_eq!(&bytes[20..24], &[4, 0, 0, 0]);
        assert_eq!(&bytes[24..28], &1.0f32.to_le_bytes());
        assert_eq!(bytes.len(), 24 + 2 * 3 * 4 * 4);
    }

    #[test]
    fn roi_identity_single_pixel_and_idempotence() {
        let (map, _) = synth_scene(&scene(5, 0.05, 3)).unwrap();
        let full = RoiMask::full(map.height(), map.width());
        assert_eq!(apply_roi(&map, &full).unwrap(), map);

        let mut inside = vec![false; map.height() * map.width()];
        inside[17] = true;
        let mask = RoiMask::new(map.height(), map.width(), inside).unwrap();
        let masked = apply_roi(&map, &mask).unwrap();
        let nonzero = masked
            .data()
            .chunks_exact(map.channels())
            .filter(|px| px.iter().any(|&v| v != 0.0))
            .count();
        assert_eq!(nonzero, 1);
        assert_eq!(apply_roi(&masked, &mask).unwrap(), masked);

        // masked maps survive the DAFM round trip
        let back = AttributeMap::from_dafm_bytes(&masked.to_dafm_bytes()).unwrap();
        assert_eq!(back, masked);
    }

    #[test]
    fn roi_dimension_mismatch() {
        let map = one_hot(4, 4, 2, 0);
        let mask = RoiMask::full(4, 5);
        assert!(matches!(
            apply_roi(&map, &mask),
            Err(MapError::DimensionMismatch(_))
        ));
        assert!(RoiMask::new(2, 2, vec![false; 4]).is_err());
    }

    #[test]
    fn pgm_round_trip() {
        let inside: Vec<bool> = (0..12).map(|i| i % 3 != 0).collect();
        let mask = RoiMask::new(3, 4, inside).unwrap();
        let bytes = mask.to_pgm_bytes();
        assert_eq!(RoiMask::from_pgm_bytes(&bytes).unwrap(), mask);
        let with_comment = [
            b"P5\n# roi\n4 3\n255\n".as_slice(),
            &bytes[bytes.len() - 12..],
        ]
        .concat();
        assert_eq!(RoiMask::from_pgm_bytes(&with_comment).unwrap(), mask);
        assert!(RoiMask::from_pgm_bytes(b"P2\n1 1\n255\n\x01").is_err());
    }

    #[test]
    fn empty_scene_has_background_person_mass() {
        let (map, count) = synth_scene(&scene(0, 0.0, 1)).unwrap();
        assert_eq!(count, 0);
        assert_eq!(map.channel_mass(PERSON_CHANNEL), 0.0);

        let mut spec = scene(0, 0.0, 1);
        spec.background = vec![0.1, 0.5, 0.4];
        let (map, _) = synth_scene(&spec).unwrap();
        let expected = 0.1 * (spec.height * spec.width) as f64;
        assert!((map.channel_mass(PERSON_CHANNEL) - expected).abs() < 1e-3 * expected);
    }

    #[test]
    fn ten_blobs_match_ten_single_blob_masses() {
        let spec = scene(10, 0.0, 42);
        let (map, _) = synth_scene(&spec).unwrap();
        // oracle: numeric integration of one blob far from the border
        let single = spec.blob_footprint(60.0, 80.0);
        let mass = map.channel_mass(PERSON_CHANNEL);
        assert!(
            (mass - 10.0 * single).abs() <= 0.05 * 10.0 * single,
            "mass {mass} vs {}",
            10.0 * single
        );
    }

    #[test]
    fn synth_is_deterministic_and_valid() {
        let spec = scene(20, 0.1, 9);
        let (a, _) = synth_scene(&spec).unwrap();
        let (b, _) = synth_scene(&spec).unwrap();
        assert_eq!(a.to_dafm_bytes(), b.to_dafm_bytes());
        a.validate(None).unwrap();
        let (c, _) = synth_scene(&SceneSpec { seed: 10, ..spec }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn mass_grows_with_count() {
        let mut last = -1.0;
        for count in [0, 2, 4, 8, 12] {
            let (map, _) = synth_scene(&scene(count, 0.0, 5)).unwrap();
            let mass = map.channel_mass(PERSON_CHANNEL);
            assert!(mass > last);
            last = mass;
        }
    }

    #[test]
    fn invalid_specs() {
        let mut spec = scene(1, 0.0, 0);
        spec.width = 0;
        assert!(matches!(synth_scene(&spec), Err(MapError::InvalidSpec(_))));
        let mut spec = scene(1, 0.0, 0);
        spec.blob_radius = 100.0;
        assert!(matches!(synth_scene(&spec), Err(MapError::InvalidSpec(_))));
        let mut spec = scene(1, 0.0, 0);
        spec.background = vec![0.5, 0.2, 0.2];
        assert!(matches!(synth_scene(&spec), Err(MapError::InvalidSpec(_))));
        let mut spec = scene(1, 0.0, 0);
        spec.noise = 0.3;
        assert!(matches!(synth_scene(&spec), Err(MapError::InvalidSpec(_))));
    }

    #[test]
    fn render_constant_split_and_ties() {
        let palette = default_palette(4);
        let ppm = render_argmax(&one_hot(3, 2, 4, 2), &palette).unwrap();
        let header = b"P6\n2 3\n255\n";
        assert_eq!(&ppm[..header.len()], header);
        assert!(ppm[header.len()..].chunks(3).all(|c| c == palette[2]));

        let data: Vec<f32> = (0..16)
            .flat_map(|i| if i % 4 < 2 { [1.0, 0.0] } else { [0.0, 1.0] })
            .collect();
        let split = AttributeMap::new(4, 4, 2, data).unwrap();
        let ppm = render_argmax(&split, &palette).unwrap();
        let pixels: Vec<&[u8]> = ppm[b"P6\n4 4\n255\n".len()..].chunks(3).collect();
        for (i, px) in pixels.iter().enumerate() {
            let expected = if i % 4 < 2 { palette[0] } else { palette[1] };
            assert_eq!(*px, expected);
        }

        let uniform = AttributeMap::constant(2, 2, &[0.25; 4]).unwrap();
        let ppm = render_argmax(&uniform, &palette).unwrap();
        assert!(ppm[b"P6\n2 2\n255\n".len()..]
            .chunks(3)
            .all(|c| c == palette[0]));

        assert!(matches!(
            render_argmax(&uniform, &palette[..2]),
            Err(MapError::PaletteTooSmall { have: 2, need: 4 })
        ));
    }
}
