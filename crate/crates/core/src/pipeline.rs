//! Per-frame processing shared by the CLI, the service and the benchmark.

use std::time::{Duration, Instant};

use thiserror::Error;

use crate::grid::{GridError, PatchEmbeddingGrid, ReferenceModel};
use crate::mapper::{
    scene_score, threshold_mask, upsample, AnomalyMap, BinaryMask, MapError, SceneScore,
    UpsampleMode,
};
use crate::matcher::{match_patches, MatchError, MatchResult};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Match(#[from] MatchError),
    #[error(transparent)]
    Map(#[from] MapError),
}

/// Lower bounds of the four severity levels on `fraction_above`.
pub const SEVERITY_CUTS: [f64; 4] = [0.0, 0.01, 0.05, 0.15];

/// Discrete severity in `0..=3`: the highest level whose lower bound the
/// fraction of anomalous patches reaches.
pub fn severity(scene: &SceneScore) -> u8 {
    SEVERITY_CUTS
        .iter()
        .skip(1)
        .filter(|&&cut| scene.fraction_above >= cut)
        .count() as u8
}

#[derive(Debug, Clone, Copy)]
pub struct FrameConfig {
    pub threshold: f32,
    /// Upsampling used for the continuous heatmap. The mask always uses
    /// nearest so it reproduces patch decisions.
    pub heatmap_mode: UpsampleMode,
}

impl Default for FrameConfig {
    fn default() -> Self {
        Self {
            threshold: crate::mapper::DEFAULT_THRESHOLD,
            heatmap_mode: UpsampleMode::Bilinear,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FrameOutputs {
    pub result: MatchResult,
    pub heatmap: AnomalyMap,
    pub mask: BinaryMask,
    pub scene: SceneScore,
    pub severity: u8,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct StageTimings {
    pub normalize: Duration,
    pub matching: Duration,
    pub heatmap: Duration,
    pub mask: Duration,
    pub scene: Duration,
}

impl StageTimings {
    pub fn total(&self) -> Duration {
        self.normalize + self.matching + self.heatmap + self.mask + self.scene
    }

    pub fn add(&mut self, other: &StageTimings) {
        self.normalize += other.normalize;
        self.matching += other.matching;
        self.heatmap += other.heatmap;
        self.mask += other.mask;
        self.scene += other.scene;
    }
}

/// Normalizes a raw test grid, matches it and builds every per-frame
/// output at the grid's source image resolution.
pub fn process_frame(
    reference: &ReferenceModel,
    raw: &PatchEmbeddingGrid,
    config: &FrameConfig,
) -> Result<(FrameOutputs, StageTimings), PipelineError> {
    let mut t = StageTimings::default();
    let start = Instant::now();
    let test = raw.normalize()?;
    t.normalize = start.elapsed();

    let start = Instant::now();
    let result = match_patches(reference, &test)?;
    t.matching = start.elapsed();

    let g = test.geometry();
    let start = Instant::now();
    let heatmap = upsample(&result, g.height, g.width, config.heatmap_mode)?;
    t.heatmap = start.elapsed();

    let start = Instant::now();
    let mask_map = if config.heatmap_mode == UpsampleMode::Nearest {
        heatmap.clone()
    } else {
        upsample(&result, g.height, g.width, UpsampleMode::Nearest)?
    };
    let mask = threshold_mask(&mask_map, config.threshold)?;
    t.mask = start.elapsed();

    let start = Instant::now();
    let scene = scene_score(&result, config.threshold)?;
    t.scene = start.elapsed();

    Ok((
        FrameOutputs {
            severity: severity(&scene),
            result,
            heatmap,
            mask,
            scene,
        },
        t,
    ))
}
