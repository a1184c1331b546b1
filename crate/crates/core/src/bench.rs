//! Synthetic throughput measurement of the per-frame pipeline.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::grid::{PatchEmbeddingGrid, ReferenceModel};
use crate::pipeline::{process_frame, FrameConfig, PipelineError, StageTimings};

#[derive(Debug, Clone, Copy)]
pub struct BenchConfig {
    pub reference_rows: usize,
    pub reference_cols: usize,
    pub frame_rows: usize,
    pub frame_cols: usize,
    pub dim: usize,
    pub patch_size: usize,
    /// Frames are processed until this much time has passed...
    pub duration: Duration,
    /// ...and at least this many frames have been processed.
    pub min_frames: usize,
    /// Distinct synthetic frames cycled through.
    pub distinct_frames: usize,
    pub seed: u64,
    pub frame: FrameConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            reference_rows: 37,
            reference_cols: 60,
            frame_rows: 37,
            frame_cols: 60,
            dim: 768,
            patch_size: 16,
            duration: Duration::from_secs(5),
            min_frames: 3,
            distinct_frames: 4,
            seed: 0,
            frame: FrameConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BenchReport {
    pub frames: usize,
    pub elapsed: Duration,
    pub fps: f64,
    /// Mean per-frame time of each stage.
    pub mean: StageTimings,
    pub reference_patches: usize,
    pub frame_patches: usize,
    pub dim: usize,
}

/// Uniform values in [-1, 1); any non-degenerate distribution exercises the
/// same amount of work.
pub fn random_grid(
    rng: &mut impl Rng,
    rows: usize,
    cols: usize,
    dim: usize,
    patch_size: usize,
) -> PatchEmbeddingGrid {
    let data = (0..rows * cols * dim)
        .map(|_| rng.random_range(-1.0f32..1.0))
        .collect();
    PatchEmbeddingGrid::from_raw(rows, cols, dim, patch_size, data)
        .expect("random grid is valid")
}

pub fn run(config: &BenchConfig) -> Result<BenchReport, PipelineError> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let reference = random_grid(
        &mut rng,
        config.reference_rows,
        config.reference_cols,
        config.dim,
        config.patch_size,
    );
    let reference = ReferenceModel::from_raw(&reference, Some("synthetic".into()))?;
    let frames: Vec<PatchEmbeddingGrid> = (0..config.distinct_frames.max(1))
        .map(|_| {
            random_grid(
                &mut rng,
                config.frame_rows,
                config.frame_cols,
                config.dim,
                config.patch_size,
            )
        })
        .collect();

    // One untimed frame to fault in buffers and thread pools.
    process_frame(&reference, &frames[0], &config.frame)?;

    let mut total = StageTimings::default();
    let mut count = 0usize;
    let start = Instant::now();
    while count < config.min_frames.max(1) || start.elapsed() < config.duration {
        let (_, t) = process_frame(&reference, &frames[count % frames.len()], &config.frame)?;
        total.add(&t);
        count += 1;
    }
    let elapsed = start.elapsed();
    let n = count as u32;
    Ok(BenchReport {
        frames: count,
        elapsed,
        fps: count as f64 / elapsed.as_secs_f64(),
        mean: StageTimings {
            normalize: total.normalize / n,
            matching: total.matching / n,
            heatmap: total.heatmap / n,
            mask: total.mask / n,
            scene: total.scene / n,
        },
        reference_patches: reference.len(),
        frame_patches: config.frame_rows * config.frame_cols,
        dim: config.dim,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_bench_runs() {
        let config = BenchConfig {
            reference_rows: 4,
            reference_cols: 5,
            frame_rows: 3,
            frame_cols: 3,
            dim: 16,
            duration: Duration::ZERO,
            min_frames: 5,
            ..BenchConfig::default()
        };
        let report = run(&config).unwrap();
        assert_eq!(report.frames, 5);
        assert_eq!(report.reference_patches, 20);
        assert!(report.fps > 0.0);
    }
}
