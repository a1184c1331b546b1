//! Dense anomaly maps, binary masks and scene-level scores.
//!
//! A patch covers `patch_size * H / image_height` target pixels vertically
//! (and likewise horizontally), so upsampling to the source image size puts
//! patch edges at multiples of the patch size, and any remainder rows or
//! columns past the last full patch clamp to the nearest covered cell.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::grid::{GridError, ImageGeometry, PatchEmbeddingGrid};
use crate::matcher::MatchResult;

/// Default anomaly threshold, the score of an orthogonal match.
pub const DEFAULT_THRESHOLD: f32 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum MapError {
    #[error("match result has an empty grid ({rows}x{cols})")]
    EmptyResult { rows: usize, cols: usize },
    #[error("target size {height}x{width} is smaller than the patch grid {rows}x{cols}")]
    TargetTooSmall {
        height: usize,
        width: usize,
        rows: usize,
        cols: usize,
    },
    #[error("threshold {0} outside [0, 1]")]
    ThresholdOutOfRange(f32),
    #[error("a dense map grid must have dim 1, found {dim}")]
    NotAMap { dim: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UpsampleMode {
    Nearest,
    #[default]
    Bilinear,
}

impl fmt::Display for UpsampleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UpsampleMode::Nearest => "nearest",
            UpsampleMode::Bilinear => "bilinear",
        })
    }
}

impl FromStr for UpsampleMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "nearest" => Ok(UpsampleMode::Nearest),
            "bilinear" => Ok(UpsampleMode::Bilinear),
            other => Err(format!("unknown upsample mode {other:?} (nearest|bilinear)")),
        }
    }
}

/// Dense `height x width` map of anomaly scores in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f32>,
}

impl AnomalyMap {
    pub fn new(height: usize, width: usize, values: Vec<f32>) -> Self {
        assert_eq!(values.len(), height * width);
        Self {
            height,
            width,
            values,
        }
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.values[y * self.width + x]
    }

    /// Stores the map as a one-channel grid (one patch per pixel) so it can
    /// travel in the PEG layout.
    pub fn to_grid(&self) -> Result<PatchEmbeddingGrid, GridError> {
        PatchEmbeddingGrid::new(
            self.height,
            self.width,
            1,
            self.values.clone(),
            ImageGeometry::tiled(self.height, self.width, 1),
            false,
        )
    }

    /// Inverse of [`AnomalyMap::to_grid`]. Values are clamped into [0, 1].
    pub fn from_grid(grid: &PatchEmbeddingGrid) -> Result<Self, MapError> {
        if grid.dim() != 1 {
            return Err(MapError::NotAMap { dim: grid.dim() });
        }
        let values = grid.data().iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Ok(AnomalyMap::new(grid.rows(), grid.cols(), values))
    }

    /// Nearest-neighbor resample to a new size (pixel-center aligned).
    pub fn resize_nearest(&self, height: usize, width: usize) -> AnomalyMap {
        if height == self.height && width == self.width {
            return self.clone();
        }
        let xs: Vec<usize> = (0..width)
            .map(|x| ((2 * x + 1) * self.width / (2 * width)).min(self.width - 1))
            .collect();
        let mut values = Vec::with_capacity(height * width);
        for y in 0..height {
            let sy = ((2 * y + 1) * self.height / (2 * height)).min(self.height - 1);
            let row = &self.values[sy * self.width..(sy + 1) * self.width];
            values.extend(xs.iter().map(|&sx| row[sx]));
        }
        AnomalyMap::new(height, width, values)
    }
}

/// Pixelwise `score > threshold` decision.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    pub height: usize,
    pub width: usize,
    pub mask: Vec<bool>,
    pub threshold: f32,
}

impl BinaryMask {
    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Aggregate scene severity derived from patch scores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneScore {
    pub patch_count_above: usize,
    pub fraction_above: f64,
    pub max_patch_score: f32,
}

impl fmt::Display for SceneScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "count={} fraction={:.6} max={:.6}",
            self.patch_count_above, self.fraction_above, self.max_patch_score
        )
    }
}

// One image axis. Target pixel `p` sits at patch coordinate
// `p * image / (target * patch)`.
struct Axis {
    cells: usize,
    image: usize,
    target: usize,
    patch: usize,
}

impl Axis {
    fn nearest(&self, p: usize) -> usize {
        let idx = (p as u128 * self.image as u128) / (self.target as u128 * self.patch as u128);
        (idx as usize).min(self.cells - 1)
    }

    // (lower cell, upper cell, weight of upper) for bilinear sampling with
    // patch centers at (c + 0.5) cells and edge clamping.
    fn linear(&self, p: usize) -> (usize, usize, f64) {
        let u = p as f64 * self.image as f64 / (self.target as f64 * self.patch as f64) - 0.5;
        let max = (self.cells - 1) as f64;
        let u = u.clamp(0.0, max);
        let lo = u.floor() as usize;
        let hi = (lo + 1).min(self.cells - 1);
        (lo, hi, u - lo as f64)
    }
}

fn axes(result: &MatchResult, height: usize, width: usize) -> (Axis, Axis) {
    let g = result.geometry;
    (
        Axis {
            cells: result.rows,
            image: g.height,
            target: height,
            patch: g.patch_size,
        },
        Axis {
            cells: result.cols,
            image: g.width,
            target: width,
            patch: g.patch_size,
        },
    )
}

/// Upsamples patch scores to an `height x width` dense map.
pub fn upsample(
    result: &MatchResult,
    height: usize,
    width: usize,
    mode: UpsampleMode,
) -> Result<AnomalyMap, MapError> {
    let (rows, cols) = (result.rows, result.cols);
    if rows == 0 || cols == 0 || result.anomaly.len() != rows * cols {
        return Err(MapError::EmptyResult { rows, cols });
    }
    if height < rows || width < cols {
        return Err(MapError::TargetTooSmall {
            height,
            width,
            rows,
            cols,
        });
    }
    let (ay, ax) = axes(result, height, width);
    let scores = &result.anomaly;
    let mut values = Vec::with_capacity(height * width);
    match mode {
        UpsampleMode::Nearest => {
            let xs: Vec<usize> = (0..width).map(|x| ax.nearest(x)).collect();
            for y in 0..height {
                let row = &scores[ay.nearest(y) * cols..][..cols];
                values.extend(xs.iter().map(|&c| row[c]));
            }
        }
        UpsampleMode::Bilinear => {
            let xs: Vec<(usize, usize, f64)> = (0..width).map(|x| ax.linear(x)).collect();
            for y in 0..height {
                let (r0, r1, wy) = ay.linear(y);
                let top = &scores[r0 * cols..][..cols];
                let bottom = &scores[r1 * cols..][..cols];
                values.extend(xs.iter().map(|&(c0, c1, wx)| {
                    let t = top[c0] as f64 * (1.0 - wx) + top[c1] as f64 * wx;
                    let b = bottom[c0] as f64 * (1.0 - wx) + bottom[c1] as f64 * wx;
                    let v = t * (1.0 - wy) + b * wy;
                    v.clamp(0.0, 1.0) as f32
                }));
            }
        }
    }
    Ok(AnomalyMap::new(height, width, values))
}

/// For nearest-mode upsampling, the flattened patch index owning each pixel.
pub fn pixel_to_patch(result: &MatchResult, height: usize, width: usize) -> Vec<usize> {
    let (ay, ax) = axes(result, height, width);
    let mut out = Vec::with_capacity(height * width);
    for y in 0..height {
        let r = ay.nearest(y);
        out.extend((0..width).map(|x| r * result.cols + ax.nearest(x)));
    }
    out
}

fn check_threshold(tau: f32) -> Result<(), MapError> {
    if (0.0..=1.0).contains(&tau) {
        Ok(())
    } else {
        Err(MapError::ThresholdOutOfRange(tau))
    }
}

/// Marks pixels whose score strictly exceeds `tau`.
pub fn threshold_mask(map: &AnomalyMap, tau: f32) -> Result<BinaryMask, MapError> {
    check_threshold(tau)?;
    Ok(BinaryMask {
        height: map.height,
        width: map.width,
        mask: map.values.iter().map(|&v| v > tau).collect(),
        threshold: tau,
    })
}

/// Counts patches whose score strictly exceeds `tau`.
pub fn scene_score(result: &MatchResult, tau: f32) -> Result<SceneScore, MapError> {
    check_threshold(tau)?;
    if result.anomaly.is_empty() {
        return Err(MapError::EmptyResult {
            rows: result.rows,
            cols: result.cols,
        });
    }
    let count = result.anomaly.iter().filter(|&&a| a > tau).count();
    let max = result.anomaly.iter().copied().fold(0.0f32, f32::max);
    Ok(SceneScore {
        patch_count_above: count,
        fraction_above: count as f64 / result.anomaly.len() as f64,
        max_patch_score: max,
    })
}
