//! Holistic, spatial-pyramid and locality-aware descriptors.
//!
//! The frame is cut into a `rows × cols` grid of cells, each cell into a
//! pyramid grid of sub-cells. Each sub-cell is mean pooled per channel; the
//! pooled vectors of a cell are concatenated in row-major sub-cell order and
//! L2 normalized, giving one descriptor of length `M·p` per cell.
//!
//! Bin boundaries follow `floor(i·len/parts)`, so trailing bins absorb the
//! remainder and every pixel lands in exactly one sub-cell.

use std::io::{self, Read, Write};
use std::ops::Range;

use rayon::prelude::*;
use thiserror::Error;

use crate::attribute_map::AttributeMap;

#[derive(Debug, Error)]
pub enum LafError {
    #[error("grid too fine: {0}")]
    GridTooFine(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("empty map")]
    EmptyMap,
    #[error("malformed descriptor dump: {0}")]
    Malformed(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, LafError>;

/// A `rows × cols` partition.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Grid {
    pub rows: usize,
    pub cols: usize,
}

impl Grid {
    pub const UNIT: Grid = Grid { rows: 1, cols: 1 };

    pub fn new(rows: usize, cols: usize) -> Self {
        Self { rows, cols }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl std::fmt::Display for Grid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

impl std::str::FromStr for Grid {
    type Err = LafError;

    fn from_str(s: &str) -> Result<Self> {
        let (r, c) = s
            .split_once(['x', 'X', '×'])
            .ok_or_else(|| LafError::InvalidGrid(format!("expected RxC, got {s:?}")))?;
        let parse = |t: &str| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| LafError::InvalidGrid(format!("bad grid size {s:?}")))
        };
        let grid = Grid::new(parse(r)?, parse(c)?);
        if grid.rows == 0 || grid.cols == 0 {
            return Err(LafError::InvalidGrid(format!("grid {s:?} has a zero side")));
        }
        Ok(grid)
    }
}

/// Cell grid plus the per-cell pyramid grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct GridSpec {
    pub cells: Grid,
    pub pyramid: Grid,
}

impl GridSpec {
    pub fn new(cells: Grid, pyramid: Grid) -> Self {
        Self { cells, pyramid }
    }

    /// Number of cells, `N`.
    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }

    /// Sub-cells per cell, `M`.
    pub fn subcell_count(&self) -> usize {
        self.pyramid.len()
    }
}

/// Half-open bin `i` of `parts` over `[start, end)`.
fn bin(range: &Range<usize>, i: usize, parts: usize) -> Range<usize> {
    let len = range.end - range.start;
    range.start + i * len / parts..range.start + (i + 1) * len / parts
}

/// Unnormalized pooled means, kept for mass-conservation checks.
#[derive(Clone, Debug)]
pub struct PooledCells {
    pub spec: GridSpec,
    pub channels: usize,
    /// `N × M × p` sub-cell means, cell-major.
    pub means: Vec<f64>,
    /// Pixel count of each sub-cell, `N × M`.
    pub areas: Vec<usize>,
}

fn pool_subcell(map: &AttributeMap, rows: Range<usize>, cols: Range<usize>, out: &mut [f64]) {
    out.fill(0.0);
    for row in rows.clone() {
        for col in cols.clone() {
            for (acc, &v) in out.iter_mut().zip(map.pixel(row, col)) {
                *acc += v as f64;
            }
        }
    }
    let area = (rows.len() * cols.len()) as f64;
    out.iter_mut().for_each(|v| *v /= area);
}

fn check_grid(map: &AttributeMap, spec: &GridSpec) -> Result<()> {
    if spec.cells.is_empty() || spec.pyramid.is_empty() {
        return Err(LafError::InvalidGrid("grid counts must be >= 1".into()));
    }
    let rows = spec.cells.rows * spec.pyramid.rows;
    let cols = spec.cells.cols * spec.pyramid.cols;
    // nested floor partitions keep every bin non-empty iff the finest count
    // fits the pixel count on each axis
    if rows > map.height() || cols > map.width() {
        return Err(LafError::GridTooFine(format!(
            "{} cells of {} sub-cells need at least {rows}x{cols} pixels, map is {}x{}",
            spec.cells,
            spec.pyramid,
            map.height(),
            map.width()
        )));
    }
    Ok(())
}

fn pool_cell(
    map: &AttributeMap,
    spec: &GridSpec,
    cell: usize,
    means: &mut [f64],
    areas: &mut [usize],
) {
    let p = map.channels();
    let (cr, cc) = (cell / spec.cells.cols, cell % spec.cells.cols);
    let rows = bin(&(0..map.height()), cr, spec.cells.rows);
    let cols = bin(&(0..map.width()), cc, spec.cells.cols);
    for sub in 0..spec.pyramid.len() {
        let (sr, sc) = (sub / spec.pyramid.cols, sub % spec.pyramid.cols);
        let sub_rows = bin(&rows, sr, spec.pyramid.rows);
        let sub_cols = bin(&cols, sc, spec.pyramid.cols);
        areas[sub] = sub_rows.len() * sub_cols.len();
        pool_subcell(map, sub_rows, sub_cols, &mut means[sub * p..(sub + 1) * p]);
    }
}

/// Mean pools every sub-cell of every cell without normalizing.
pub fn pool_cells(map: &AttributeMap, spec: &GridSpec) -> Result<PooledCells> {
    check_grid(map, spec)?;
    let p = map.channels();
    let m = spec.subcell_count();
    let mut means = vec![0.0; spec.cell_count() * m * p];
    let mut areas = vec![0usize; spec.cell_count() * m];
    means
        .par_chunks_mut(m * p)
        .zip(areas.par_chunks_mut(m))
        .enumerate()
        .for_each(|(cell, (means, areas))| pool_cell(map, spec, cell, means, areas));
    Ok(PooledCells {
        spec: *spec,
        channels: p,
        means,
        areas,
    })
}

/// In-place L2 normalization; zero vectors stay zero. Returns the norm.
pub fn l2_normalize(v: &mut [f64]) -> f64 {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    norm
}

/// `N` descriptors of dimension `d = M·p`, stored descriptor-contiguous.
#[derive(Clone, Debug, PartialEq)]
pub struct DescriptorSet {
    dim: usize,
    data: Vec<f64>,
    /// `false` for all-zero cells (fully outside the ROI).
    active: Vec<bool>,
    spec: GridSpec,
}

impl DescriptorSet {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.active.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }

    pub fn spec(&self) -> GridSpec {
        self.spec
    }

    pub fn descriptor(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn is_active(&self, i: usize) -> bool {
        self.active[i]
    }

    pub fn active_flags(&self) -> &[bool] {
        &self.active
    }

    /// Descriptors of non-zero cells.
    pub fn active(&self) -> impl Iterator<Item = &[f64]> {
        self.iter()
            .zip(&self.active)
            .filter(|(_, &a)| a)
            .map(|(d, _)| d)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    /// Dumps as `LAFD | u32 version | u32 d | u32 N | f32 column-major`.
    pub fn write_lafd(&self, mut out: impl Write) -> Result<()> {
        out.write_all(b"LAFD")?;
        for word in [1u32, self.dim as u32, self.len() as u32] {
            out.write_all(&word.to_le_bytes())?;
        }
        for &v in &self.data {
            out.write_all(&(v as f32).to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads a dump back as raw `(d, N, values)`; the grid is not recorded.
    pub fn read_lafd(mut input: impl Read) -> Result<(usize, usize, Vec<f32>)> {
        let mut header = [0u8; 16];
        input.read_exact(&mut header)?;
        if &header[0..4] != b"LAFD" {
            return Err(LafError::Malformed("bad magic".into()));
        }
        let word = |i: usize| u32::from_le_bytes(header[4 * i..4 * i + 4].try_into().unwrap());
        if word(1) != 1 {
            return Err(LafError::Malformed(format!(
                "unsupported version {}",
                word(1)
            )));
        }
        let (dim, count) = (word(2) as usize, word(3) as usize);
        let mut payload = Vec::new();
        input.read_to_end(&mut payload)?;
        if payload.len() != dim * count * 4 {
            return Err(LafError::Malformed(format!(
                "payload is {} bytes, expected {}",
                payload.len(),
                dim * count * 4
            )));
        }
        let values = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Ok((dim, count, values))
    }
}

/// Locality-aware features of `map` under `spec`, in row-major cell order.
pub fn extract_laf(map: &AttributeMap, spec: &GridSpec) -> Result<DescriptorSet> {
    let mut pooled = pool_cells(map, spec)?;
    let dim = spec.subcell_count() * pooled.channels;
    let active = pooled
        .means
        .chunks_exact_mut(dim)
        .map(|x| l2_normalize(x) > 0.0)
        .collect();
    Ok(DescriptorSet {
        dim,
        data: pooled.means,
        active,
        spec: *spec,
    })
}

/// Whole-frame spatial pyramid feature: a single cell with pyramid `pyramid`.
pub fn spp_feature(map: &AttributeMap, pyramid: Grid) -> Result<Vec<f64>> {
    let set = extract_laf(map, &GridSpec::new(Grid::UNIT, pyramid))?;
    Ok(set.data)
}

/// Per-channel mean over the whole frame, L2 normalized.
pub fn holistic_feature(map: &AttributeMap) -> Result<Vec<f64>> {
    if map.data().is_empty() {
        return Err(LafError::EmptyMap);
    }
    spp_feature(map, Grid::UNIT)
}
