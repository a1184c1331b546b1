//! Renders for the per-frame outputs: PCA embedding visualization, heatmap
//! and binary mask, plus PNG encoding.

pub mod colormap;
pub mod pca;

use image::codecs::png::PngEncoder;
use image::{ExtendedColorType, ImageEncoder};
use thiserror::Error;

use crate::grid::PatchEmbeddingGrid;
use crate::mapper::{AnomalyMap, BinaryMask};

#[derive(Debug, Error)]
pub enum VizError {
    #[error("degenerate variance: all patches are identical")]
    DegenerateVariance,
    #[error("PCA needs at least {needed} patches and dims, got {patches} patches of dim {dim}")]
    TooFewPatches {
        patches: usize,
        dim: usize,
        needed: usize,
    },
    #[error("png encoding failed: {0}")]
    Encode(#[from] image::ImageError),
}

/// 8-bit RGB image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Self {
        assert_eq!(data.len(), height * width * 3);
        Self {
            height,
            width,
            data,
        }
    }

    pub fn pixel(&self, y: usize, x: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Block-replicating nearest upscale.
    pub fn resize_nearest(&self, height: usize, width: usize) -> RgbImage {
        let mut data = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            let sy = (y * self.height / height).min(self.height - 1);
            for x in 0..width {
                let sx = (x * self.width / width).min(self.width - 1);
                data.extend_from_slice(&self.pixel(sy, sx));
            }
        }
        RgbImage::new(height, width, data)
    }

    pub fn to_png(&self) -> Result<Vec<u8>, VizError> {
        encode_png(&self.data, self.width, self.height, ExtendedColorType::Rgb8)
    }
}

fn encode_png(
    data: &[u8],
    width: usize,
    height: usize,
    color: ExtendedColorType,
) -> Result<Vec<u8>, VizError> {
    let mut out = Vec::new();
    PngEncoder::new(&mut out).write_image(data, width as u32, height as u32, color)?;
    Ok(out)
}

/// Grayscale PNG of raw 8-bit values.
pub fn gray_png(data: &[u8], width: usize, height: usize) -> Result<Vec<u8>, VizError> {
    encode_png(data, width, height, ExtendedColorType::L8)
}

/// PCA embedding visualization at patch resolution (`rows x cols`).
///
/// Each patch is projected onto the top three principal components of the
/// frame's own patches; each channel is min-max scaled to [0, 255]. A
/// channel with zero spread is rendered as 0.
pub fn pca_rgb(grid: &PatchEmbeddingGrid) -> Result<RgbImage, VizError> {
    let pca = pca::grid_pca(grid)?;
    let projected: Vec<Vec<f64>> = grid.patches().map(|p| pca.project(p)).collect();
    let mut data = vec![0u8; grid.len() * 3];
    for c in 0..3 {
        let (lo, hi) = projected
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                (lo.min(p[c]), hi.max(p[c]))
            });
        let span = hi - lo;
        if span <= 0.0 {
            continue;
        }
        for (i, p) in projected.iter().enumerate() {
            data[i * 3 + c] = ((p[c] - lo) / span * 255.0).round() as u8;
        }
    }
    Ok(RgbImage::new(grid.rows(), grid.cols(), data))
}

/// PCA visualization at the source image resolution: each pixel takes the
/// color of the patch covering it, with remainder pixels past the last
/// full patch assigned to the last row or column.
pub fn pca_image(grid: &PatchEmbeddingGrid) -> Result<RgbImage, VizError> {
    let small = pca_rgb(grid)?;
    let g = grid.geometry();
    let mut data = Vec::with_capacity(g.height * g.width * 3);
    for y in 0..g.height {
        let r = (y / g.patch_size).min(grid.rows() - 1);
        for x in 0..g.width {
            let c = (x / g.patch_size).min(grid.cols() - 1);
            data.extend_from_slice(&small.pixel(r, c));
        }
    }
    Ok(RgbImage::new(g.height, g.width, data))
}

/// Applies the fixed blue-to-red lookup table.
pub fn colorize_heatmap(map: &AnomalyMap) -> RgbImage {
    let mut data = Vec::with_capacity(map.values.len() * 3);
    for &v in &map.values {
        data.extend_from_slice(&colormap::HEATMAP[colormap::index(v)]);
    }
    RgbImage::new(map.height, map.width, data)
}

/// Grayscale rendering of the map, scores scaled by 255.
pub fn map_to_gray(map: &AnomalyMap) -> Vec<u8> {
    map.values
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect()
}

pub fn mask_to_gray(mask: &BinaryMask) -> Vec<u8> {
    mask.mask.iter().map(|&m| if m { 255 } else { 0 }).collect()
}

/// Mask as an RGB image: anomalous pixels white, others black.
pub fn render_mask(mask: &BinaryMask) -> RgbImage {
    let data = mask
        .mask
        .iter()
        .flat_map(|&m| if m { [255u8; 3] } else { [0u8; 3] })
        .collect();
    RgbImage::new(mask.height, mask.width, data)
}

pub fn mask_png(mask: &BinaryMask) -> Result<Vec<u8>, VizError> {
    gray_png(&mask_to_gray(mask), mask.width, mask.height)
}

pub fn heatmap_png(map: &AnomalyMap) -> Result<Vec<u8>, VizError> {
    colorize_heatmap(map).to_png()
}

/// Decodes a mask PNG back into booleans (non-zero = anomalous).
pub fn decode_mask_png(bytes: &[u8]) -> Result<(usize, usize, Vec<bool>), VizError> {
    let img = image::load_from_memory(bytes)?.to_luma8();
    let (w, h) = img.dimensions();
    Ok((h as usize, w as usize, img.into_raw().into_iter().map(|v| v != 0).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mapper::threshold_mask;

    #[test]
    fn heatmap_ends() {
        let zero = colorize_heatmap(&AnomalyMap::new(2, 2, vec![0.0; 4]));
        assert!(zero.data.chunks(3).all(|p| p == colormap::HEATMAP[0]));
        let one = colorize_heatmap(&AnomalyMap::new(2, 2, vec![1.0; 4]));
        assert!(one.data.chunks(3).all(|p| p == colormap::HEATMAP[255]));
        assert!(colormap::index(0.75) > colormap::index(0.25));
    }

    #[test]
    fn colormap_is_blue_to_red() {
        let first = colormap::HEATMAP[0];
        let last = colormap::HEATMAP[255];
        assert!(first[2] > first[0]);
        assert!(last[0] > last[2]);
        let mut prev = 0;
        for i in 0..=1000 {
            let idx = colormap::index(i as f32 / 1000.0);
            assert!(idx >= prev);
            prev = idx;
        }
    }

    #[test]
    fn mask_renders() {
        let map = AnomalyMap::new(2, 3, vec![0.0, 0.7, 0.2, 0.9, 0.1, 0.6]);
        let none = threshold_mask(&map, 1.0).unwrap();
        assert!(render_mask(&none).data.iter().all(|&v| v == 0));
        let all = threshold_mask(&map, 0.0).unwrap();
        let some = threshold_mask(&map, 0.5).unwrap();
        assert_eq!(render_mask(&some).pixel(0, 1), [255, 255, 255]);
        let (h, w, back) = decode_mask_png(&mask_png(&some).unwrap()).unwrap();
        assert_eq!((h, w), (2, 3));
        assert_eq!(back, some.mask);
        let mut everything = all.clone();
        everything.mask.iter_mut().for_each(|m| *m = true);
        assert!(render_mask(&everything).data.iter().all(|&v| v == 255));
    }

    #[test]
    fn renders_are_deterministic() {
        let map = AnomalyMap::new(3, 3, (0..9).map(|i| i as f32 / 8.0).collect());
        assert_eq!(heatmap_png(&map).unwrap(), heatmap_png(&map).unwrap());
    }

    fn diagonal_grid() -> (PatchEmbeddingGrid, Vec<[f32; 3]>) {
        // Coordinates on axes 0..3 with variances 9 > 4 > 1 (zero mean, all
        // cross-covariances zero); the remaining dims are constant.
        let mut coords = Vec::new();
        for &a in &[-3.0f32, 3.0] {
            for &b in &[-2.0f32, 2.0] {
                for &c in &[-1.0f32, 1.0] {
                    coords.push([a, b, c]);
                }
            }
        }
        let dim = 5;
        let data = coords
            .iter()
            .flat_map(|p| [p[0], p[1], p[2], 0.25, -1.0])
            .collect();
        (
            PatchEmbeddingGrid::from_raw(2, 4, dim, 1, data).unwrap(),
            coords,
        )
    }

    #[test]
    fn pca_recovers_axis_aligned_subspace() {
        let (grid, coords) = diagonal_grid();
        let p = pca::grid_pca(&grid).unwrap();
        for (k, var) in [9.0, 4.0, 1.0].iter().enumerate() {
            assert!((p.explained_variance[k] - var).abs() < 1e-9);
            // component k is +e_k under the sign convention
            assert!((p.components[k][k] - 1.0).abs() < 1e-9);
        }
        for (i, patch) in grid.patches().enumerate() {
            let proj = p.project(patch);
            for k in 0..3 {
                assert!((proj[k] - coords[i][k] as f64).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn pca_rgb_channels_span_full_range() {
        let (grid, _) = diagonal_grid();
        let img = pca_rgb(&grid).unwrap();
        assert_eq!((img.height, img.width), (2, 4));
        for c in 0..3 {
            let vals: Vec<u8> = img.data.iter().skip(c).step_by(3).copied().collect();
            assert_eq!(*vals.iter().min().unwrap(), 0);
            assert_eq!(*vals.iter().max().unwrap(), 255);
        }
        let up = img.resize_nearest(4, 8);
        assert_eq!(up.pixel(3, 7), img.pixel(1, 3));
    }

    #[test]
    fn pca_image_covers_remainder() {
        let (grid, _) = diagonal_grid();
        let data = grid.data().to_vec();
        let geometry = crate::grid::ImageGeometry {
            height: 5,
            width: 9,
            patch_size: 2,
        };
        let grid = PatchEmbeddingGrid::new(2, 4, 5, data, geometry, false).unwrap();
        let small = pca_rgb(&grid).unwrap();
        let big = pca_image(&grid).unwrap();
        assert_eq!((big.height, big.width), (5, 9));
        assert_eq!(big.pixel(0, 0), small.pixel(0, 0));
        assert_eq!(big.pixel(3, 5), small.pixel(1, 2));
        assert_eq!(big.pixel(4, 8), small.pixel(1, 3));
    }

    #[test]
    fn pca_rgb_degenerate() {
        let grid = PatchEmbeddingGrid::from_raw(2, 2, 3, 1, vec![0.3; 12]).unwrap();
        assert!(matches!(pca_rgb(&grid), Err(VizError::DegenerateVariance)));
    }
}
