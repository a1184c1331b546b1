//! Reference-based anomaly detection on patch-embedding grids.
//!
//! A reference frame's patch embeddings are L2-normalized and stored once.
//! Each test patch is scored by its cosine similarity to the nearest
//! reference patch, `a = (1 - s) / 2`, and the per-patch scores are turned
//! into a pixel heatmap, a thresholded mask and a scene-level summary.
//! Pixel-level AP, FPR at 95% TPR and AUROC are computed against labelled
//! ground-truth masks.

pub mod bench;
pub mod dataset;
pub mod grid;
mod kernel;
pub mod mapper;
pub mod matcher;
pub mod metrics;
pub mod peg;
pub mod pipeline;
pub mod service;
pub mod viz;

pub use grid::{GridError, ImageGeometry, PatchEmbeddingGrid, ReferenceModel};
pub use mapper::{AnomalyMap, BinaryMask, SceneScore, UpsampleMode};
pub use matcher::{match_patches, MatchResult};
pub use metrics::{EvalRecord, Label, MetricsReport};
pub use pipeline::{process_frame, FrameConfig};
