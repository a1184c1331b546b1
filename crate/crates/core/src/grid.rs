//! Patch-embedding grids and the normalized reference model.

use crate::kernel::PackedRows;
use thiserror::Error;

/// Norms at or below this value are treated as degenerate encoder output.
pub const ZERO_NORM_EPS: f64 = 1e-12;

/// Tolerance used when validating the `normalized` flag.
pub const UNIT_NORM_TOL: f64 = 1e-4;

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("grid dimensions must be >= 1 (rows={rows}, cols={cols}, dim={dim})")]
    EmptyDimension { rows: usize, cols: usize, dim: usize },
    #[error("data length {actual} does not match rows*cols*dim = {expected}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("non-finite value at index {index}")]
    NonFiniteInput { index: usize },
    #[error("patch {patch} has norm {norm:e}, at or below the zero-norm tolerance")]
    ZeroNormVector { patch: usize, norm: f64 },
    #[error("patch {patch} has norm {norm}, but the grid is flagged normalized")]
    NotUnitNorm { patch: usize, norm: f64 },
    #[error("reference grid must be normalized")]
    NotNormalized,
}

/// Pixel geometry of the image a grid was extracted from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImageGeometry {
    pub height: usize,
    pub width: usize,
    pub patch_size: usize,
}

impl ImageGeometry {
    /// Geometry of an image tiled by `rows x cols` patches of `patch_size`
    /// pixels with no remainder.
    pub fn tiled(rows: usize, cols: usize, patch_size: usize) -> Self {
        Self {
            height: rows * patch_size,
            width: cols * patch_size,
            patch_size,
        }
    }

    /// Patch grid size obtained by floor division of the image dimensions.
    pub fn grid_shape(&self) -> (usize, usize) {
        (self.height / self.patch_size, self.width / self.patch_size)
    }
}

/// A `rows x cols` grid of `dim`-dimensional patch embeddings, row-major
/// (patch row, patch column, channel).
#[derive(Debug, Clone, PartialEq)]
pub struct PatchEmbeddingGrid {
    rows: usize,
    cols: usize,
    dim: usize,
    data: Vec<f32>,
    geometry: ImageGeometry,
    normalized: bool,
}

impl PatchEmbeddingGrid {
    /// Builds a grid and checks every invariant, including unit norms when
    /// `normalized` is set.
    pub fn new(
        rows: usize,
        cols: usize,
        dim: usize,
        data: Vec<f32>,
        geometry: ImageGeometry,
        normalized: bool,
    ) -> Result<Self, GridError> {
        let grid = Self {
            rows,
            cols,
            dim,
            data,
            geometry,
            normalized,
        };
        grid.validate()?;
        Ok(grid)
    }

    /// Convenience constructor for a grid whose source image is exactly
    /// tiled by `patch_size` patches.
    pub fn from_raw(
        rows: usize,
        cols: usize,
        dim: usize,
        patch_size: usize,
        data: Vec<f32>,
    ) -> Result<Self, GridError> {
        Self::new(
            rows,
            cols,
            dim,
            data,
            ImageGeometry::tiled(rows, cols, patch_size),
            false,
        )
    }

    fn validate(&self) -> Result<(), GridError> {
        let (rows, cols, dim) = (self.rows, self.cols, self.dim);
        if rows == 0 || cols == 0 || dim == 0 {
            return Err(GridError::EmptyDimension { rows, cols, dim });
        }
        let expected = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(dim))
            .ok_or_else(|| GridError::Geometry("rows*cols*dim overflows".into()))?;
        if self.data.len() != expected {
            return Err(GridError::LengthMismatch {
                expected,
                actual: self.data.len(),
            });
        }
        let g = self.geometry;
        if g.patch_size == 0 {
            return Err(GridError::Geometry("patch_size must be >= 1".into()));
        }
        if g.height < rows || g.width < cols {
            return Err(GridError::Geometry(format!(
                "image {}x{} smaller than grid {}x{}",
                g.height, g.width, rows, cols
            )));
        }
        // floor(H / p) <= rows <= ceil(H / p), same for columns
        let (floor_rows, floor_cols) = g.grid_shape();
        if rows > g.height.div_ceil(g.patch_size)
            || cols > g.width.div_ceil(g.patch_size)
            || rows < floor_rows
            || cols < floor_cols
        {
            return Err(GridError::Geometry(format!(
                "grid {}x{} at patch {} does not fit image {}x{}",
                rows, cols, g.patch_size, g.height, g.width
            )));
        }
        if let Some(index) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(GridError::NonFiniteInput { index });
        }
        if self.normalized {
            for (patch, v) in self.data.chunks_exact(dim).enumerate() {
                let norm = l2_norm(v);
                if (norm - 1.0).abs() > UNIT_NORM_TOL {
                    return Err(GridError::NotUnitNorm { patch, norm });
                }
            }
        }
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of patches, `rows * cols`.
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn geometry(&self) -> ImageGeometry {
        self.geometry
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Embedding of the patch at flattened index `index`.
    pub fn patch(&self, index: usize) -> &[f32] {
        &self.data[index * self.dim..(index + 1) * self.dim]
    }

    pub fn patches(&self) -> std::slice::ChunksExact<'_, f32> {
        self.data.chunks_exact(self.dim)
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Returns a copy with every patch vector scaled to unit Euclidean norm.
    pub fn normalize(&self) -> Result<Self, GridError> {
        normalize(self)
    }
}

pub(crate) fn l2_norm(v: &[f32]) -> f64 {
    v.iter()
        .map(|&x| {
            let x = x as f64;
            x * x
        })
        .sum::<f64>()
        .sqrt()
}

/// Scales every patch vector to unit Euclidean norm.
///
/// Norms are accumulated in f64. A patch whose norm is at or below
/// [`ZERO_NORM_EPS`] is rejected with [`GridError::ZeroNormVector`] since it
/// has no direction to compare.
pub fn normalize(grid: &PatchEmbeddingGrid) -> Result<PatchEmbeddingGrid, GridError> {
    if let Some(index) = grid.data.iter().position(|v| !v.is_finite()) {
        return Err(GridError::NonFiniteInput { index });
    }
    let mut data = Vec::with_capacity(grid.data.len());
    for (patch, v) in grid.patches().enumerate() {
        let norm = l2_norm(v);
        if norm <= ZERO_NORM_EPS {
            return Err(GridError::ZeroNormVector { patch, norm });
        }
        data.extend(v.iter().map(|&x| (x as f64 / norm) as f32));
    }
    Ok(PatchEmbeddingGrid {
        rows: grid.rows,
        cols: grid.cols,
        dim: grid.dim,
        data,
        geometry: grid.geometry,
        normalized: true,
    })
}

/// The normalized embedding set of a single reference image.
///
/// Holds a packed f64 copy of the embeddings so repeated matching against
/// the same reference does not re-convert it per frame.
#[derive(Debug, Clone)]
pub struct ReferenceModel {
    grid: PatchEmbeddingGrid,
    label: Option<String>,
    packed: PackedRows,
}

impl ReferenceModel {
    /// Wraps an already-normalized grid.
    pub fn new(grid: PatchEmbeddingGrid, label: Option<String>) -> Result<Self, GridError> {
        if !grid.is_normalized() {
            return Err(GridError::NotNormalized);
        }
        let packed = PackedRows::pack(grid.data(), grid.dim());
        Ok(Self {
            grid,
            label,
            packed,
        })
    }

    /// Normalizes a raw grid and wraps it.
    pub fn from_raw(grid: &PatchEmbeddingGrid, label: Option<String>) -> Result<Self, GridError> {
        Self::new(normalize(grid)?, label)
    }

    pub fn grid(&self) -> &PatchEmbeddingGrid {
        &self.grid
    }

    pub fn label(&self) -> Option<&str> {
        self.label.as_deref()
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub(crate) fn packed(&self) -> &PackedRows {
        &self.packed
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(rows: usize, cols: usize, dim: usize, data: Vec<f32>) -> PatchEmbeddingGrid {
        PatchEmbeddingGrid::from_raw(rows, cols, dim, 1, data).unwrap()
    }

    fn random_grid(rng: &mut ChaCha8Rng, rows: usize, cols: usize, dim: usize) -> PatchEmbeddingGrid {
        let data = (0..rows * cols * dim)
            .map(|_| rng.random_range(-2.0f32..2.0))
            .collect();
        grid(rows, cols, dim, data)
    }

    #[test]
    fn three_four_five() {
        let g = grid(1, 1, 2, vec![3.0, 4.0]).normalize().unwrap();
        assert!(g.is_normalized());
        assert!((g.data()[0] - 0.6).abs() < 1e-6);
        assert!((g.data()[1] - 0.8).abs() < 1e-6);
    }

    #[test]
    fn unit_vector_unchanged() {
        let g = grid(1, 1, 3, vec![1.0, 0.0, 0.0]).normalize().unwrap();
        assert_eq!(g.data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn matches_scalar_norm_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let raw = random_grid(&mut rng, 4, 4, 16);
        let out = raw.normalize().unwrap();
        for p in 0..16 {
            let v = raw.patch(p);
            let mut sq = 0.0f64;
            for &x in v {
                sq += (x as f64) * (x as f64);
            }
            let norm = sq.sqrt();
            for (a, &b) in out.patch(p).iter().zip(v) {
                assert!((*a as f64 - b as f64 / norm).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn zero_vector_rejected() {
        let g = grid(1, 2, 2, vec![1.0, 0.0, 0.0, 0.0]);
        assert!(matches!(
            g.normalize(),
            Err(GridError::ZeroNormVector { patch: 1, .. })
        ));
    }

    #[test]
    fn non_finite_rejected() {
        let err = PatchEmbeddingGrid::from_raw(1, 1, 2, 1, vec![1.0, f32::NAN]).unwrap_err();
        assert_eq!(err, GridError::NonFiniteInput { index: 1 });
    }

    #[test]
    fn length_mismatch_rejected() {
        let err = PatchEmbeddingGrid::from_raw(2, 2, 3, 1, vec![0.0; 10]).unwrap_err();
        assert!(matches!(err, GridError::LengthMismatch { expected: 12, actual: 10 }));
    }

    #[test]
    fn geometry_must_cover_grid() {
        let geom = ImageGeometry { height: 31, width: 64, patch_size: 16 };
        // ceil(31 / 16) = 2 rows at most
        assert!(PatchEmbeddingGrid::new(2, 4, 1, vec![1.0; 8], geom, false).is_ok());
        assert!(PatchEmbeddingGrid::new(3, 4, 1, vec![1.0; 12], geom, false).is_err());
        // floor(31 / 16) = 1 row at least, and 4 columns exactly
        assert!(PatchEmbeddingGrid::new(1, 4, 1, vec![1.0; 4], geom, false).is_ok());
        assert!(PatchEmbeddingGrid::new(2, 3, 1, vec![1.0; 6], geom, false).is_err());
        let huge = ImageGeometry { height: 1 << 30, width: 64, patch_size: 16 };
        assert!(PatchEmbeddingGrid::new(2, 4, 1, vec![1.0; 8], huge, false).is_err());
    }

    #[test]
    fn normalized_flag_is_checked() {
        let geom = ImageGeometry::tiled(1, 1, 1);
        let err = PatchEmbeddingGrid::new(1, 1, 2, vec![3.0, 4.0], geom, true).unwrap_err();
        assert!(matches!(err, GridError::NotUnitNorm { patch: 0, .. }));
    }

    #[test]
    fn reference_requires_normalized_grid() {
        let g = grid(1, 1, 2, vec![3.0, 4.0]);
        assert_eq!(ReferenceModel::new(g.clone(), None).unwrap_err(), GridError::NotNormalized);
        let r = ReferenceModel::from_raw(&g, Some("ref".into())).unwrap();
        assert_eq!(r.label(), Some("ref"));
        assert_eq!(r.len(), 1);
    }

    #[test]
    fn floor_division_grid_shape() {
        let g = ImageGeometry { height: 592, width: 960, patch_size: 16 };
        assert_eq!(g.grid_shape(), (37, 60));
        let g = ImageGeometry { height: 70, width: 64, patch_size: 16 };
        assert_eq!(g.grid_shape(), (4, 4));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn raw_grid() -> impl Strategy<Value = PatchEmbeddingGrid> {
            (1usize..5, 1usize..5, 1usize..12).prop_flat_map(|(r, c, d)| {
                prop::collection::vec(
                    prop_oneof![-10.0f32..-0.01, 0.01f32..10.0],
                    r * c * d,
                )
                .prop_map(move |data| grid(r, c, d, data))
            })
        }

        proptest! {
            #[test]
            fn idempotent(g in raw_grid()) {
                let once = g.normalize().unwrap();
                let twice = once.normalize().unwrap();
                for (a, b) in once.data().iter().zip(twice.data()) {
                    prop_assert!((a - b).abs() < 1e-6);
                }
            }

            #[test]
            fn unit_norm(g in raw_grid()) {
                let n = g.normalize().unwrap();
                for v in n.patches() {
                    let mut sq = 0.0f64;
                    for &x in v { sq += (x as f64).powi(2); }
                    prop_assert!((sq.sqrt() - 1.0).abs() < 1e-6);
                }
            }

            #[test]
            fn positive_scale_invariant(
                g in raw_grid(),
                scales in prop::collection::vec(1e-3f32..1e3, 16),
            ) {
                let dim = g.dim();
                let scaled: Vec<f32> = g
                    .patches()
                    .enumerate()
                    .flat_map(|(i, v)| {
                        let c = scales[i % scales.len()];
                        v.iter().map(move |x| x * c).collect::<Vec<_>>()
                    })
                    .collect();
                let scaled = grid(g.rows(), g.cols(), dim, scaled);
                let a = g.normalize().unwrap();
                let b = scaled.normalize().unwrap();
                for (x, y) in a.data().iter().zip(b.data()) {
                    prop_assert!((x - y).abs() < 1e-6);
                }
            }
        }
    }
}
