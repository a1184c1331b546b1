//! Nearest-neighbor patch matching against a reference model.

use thiserror::Error;

use crate::grid::{ImageGeometry, PatchEmbeddingGrid, ReferenceModel};
use crate::kernel::{self, PackedRows};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MatchError {
    #[error("embedding dim mismatch: reference {reference}, test {test}")]
    DimMismatch { reference: usize, test: usize },
    #[error("test grid is not normalized")]
    NotNormalized,
}

/// Maps a cosine similarity in [-1, 1] to an anomaly score in [0, 1].
///
/// `a = (1 - s) / 2`, clamped so rounding in `s` never leaves the range.
#[inline]
pub fn anomaly_from_similarity(similarity: f64) -> f64 {
    ((1.0 - similarity) * 0.5).clamp(0.0, 1.0)
}

/// Per-patch nearest-neighbor result for one test grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub rows: usize,
    pub cols: usize,
    /// Source image geometry copied from the test grid.
    pub geometry: ImageGeometry,
    /// Best cosine similarity per test patch, row-major.
    pub similarity: Vec<f32>,
    /// Anomaly score per test patch, row-major.
    pub anomaly: Vec<f32>,
    /// Flattened index of the matched reference patch.
    pub argmax_ref: Vec<u32>,
}

impl MatchResult {
    /// Builds a result directly from patch anomaly scores, e.g. for maps
    /// computed elsewhere. The source geometry is taken to be one pixel per
    /// patch and the similarity is back-computed from the scores.
    pub fn from_scores(rows: usize, cols: usize, anomaly: Vec<f32>) -> Self {
        assert_eq!(anomaly.len(), rows * cols, "score count must equal rows*cols");
        let similarity = anomaly.iter().map(|&a| 1.0 - 2.0 * a).collect();
        Self {
            rows,
            cols,
            geometry: ImageGeometry::tiled(rows, cols, 1),
            similarity,
            anomaly,
            argmax_ref: vec![0; rows * cols],
        }
    }

    pub fn with_geometry(mut self, geometry: ImageGeometry) -> Self {
        self.geometry = geometry;
        self
    }

    pub fn len(&self) -> usize {
        self.anomaly.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anomaly.is_empty()
    }
}

fn check(reference: &ReferenceModel, test: &PatchEmbeddingGrid) -> Result<(), MatchError> {
    if reference.dim() != test.dim() {
        return Err(MatchError::DimMismatch {
            reference: reference.dim(),
            test: test.dim(),
        });
    }
    if !test.is_normalized() {
        return Err(MatchError::NotNormalized);
    }
    Ok(())
}

fn best_matches(reference: &ReferenceModel, test: &PatchEmbeddingGrid) -> (Vec<f64>, Vec<u32>) {
    let packed = PackedRows::pack(test.data(), test.dim());
    let mut best = vec![0.0f64; test.len()];
    let mut arg = vec![0u32; test.len()];
    kernel::max_inner_product(reference.packed(), &packed, &mut best, &mut arg);
    (best, arg)
}

/// Scores every test patch by its maximum cosine similarity to any
/// reference patch. Ties resolve to the smallest reference index.
pub fn match_patches(
    reference: &ReferenceModel,
    test: &PatchEmbeddingGrid,
) -> Result<MatchResult, MatchError> {
    check(reference, test)?;
    let (best, argmax_ref) = best_matches(reference, test);
    Ok(MatchResult {
        rows: test.rows(),
        cols: test.cols(),
        geometry: test.geometry(),
        similarity: best.iter().map(|&s| s as f32).collect(),
        anomaly: best.iter().map(|&s| anomaly_from_similarity(s) as f32).collect(),
        argmax_ref,
    })
}

/// Anomaly scores only, without materializing the full [`MatchResult`].
pub fn anomaly_scores(
    reference: &ReferenceModel,
    test: &PatchEmbeddingGrid,
) -> Result<Vec<f32>, MatchError> {
    check(reference, test)?;
    let (best, _) = best_matches(reference, test);
    Ok(best.into_iter().map(|s| anomaly_from_similarity(s) as f32).collect())
}
