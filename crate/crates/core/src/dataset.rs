//! Benchmark harness: runs the pipeline over a manifest of test inputs and
//! ground-truth masks and pools every labeled pixel into one record.
//!
//! Manifest lines are `<input path>\t<gt mask path>`; blank lines and lines
//! starting with `#` are skipped, and relative paths resolve against the
//! manifest's directory. The input may be
//!
//! - an embedding grid (`*.peg`), which is normalized, matched against the
//!   reference and upsampled to its source image size;
//! - a precomputed dense map stored as a one-channel grid (`*.map.peg`);
//! - a precomputed 8-bit grayscale map (`*.png`, score = value / 255).
//!
//! The anomaly map is always resized to the mask resolution with nearest
//! sampling; the mask itself is never resampled.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::grid::ReferenceModel;
use crate::mapper::{upsample, AnomalyMap, UpsampleMode};
use crate::matcher::match_patches;
use crate::metrics::{EvalRecord, Label, MetricsError, MetricsReport};
use crate::peg;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error("manifest has no items")]
    EmptyManifest,
    #[error("all {count} items failed; first: {first}")]
    AllItemsFailed { count: usize, first: String },
    #[error("label table line {line}: {message}")]
    LabelTable { line: usize, message: String },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetItem {
    pub input: PathBuf,
    pub gt_mask: PathBuf,
}

pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<DatasetItem>, DatasetError> {
    let mut items = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let Some((input, gt)) = trimmed.split_once('\t') else {
            return Err(DatasetError::Manifest {
                line: i + 1,
                message: "expected `<input>\\t<gt mask>`".into(),
            });
        };
        let (input, gt) = (input.trim(), gt.trim());
        if input.is_empty() || gt.is_empty() {
            return Err(DatasetError::Manifest {
                line: i + 1,
                message: "empty path".into(),
            });
        }
        items.push(DatasetItem {
            input: base.join(input),
            gt_mask: base.join(gt),
        });
    }
    if items.is_empty() {
        return Err(DatasetError::EmptyManifest);
    }
    Ok(items)
}

pub fn load_manifest(path: &Path) -> Result<Vec<DatasetItem>, DatasetError> {
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_owned(),
        source,
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    parse_manifest(&text, base)
}

/// Mapping from ground-truth mask values to labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    table: HashMap<u8, Label>,
}

impl Default for LabelMap {
    fn default() -> Self {
        Self {
            table: HashMap::from([
                (0, Label::Normal),
                (1, Label::Anomaly),
                (255, Label::Ignore),
            ]),
        }
    }
}

impl LabelMap {
    pub fn get(&self, value: u8) -> Option<Label> {
        self.table.get(&value).copied()
    }

    /// Parses a remap table, one `<value>=<normal|anomaly|ignore>` (or
    /// whitespace separated) entry per line. Entries replace the defaults
    /// for their values; other defaults stay in place.
    pub fn parse(text: &str) -> Result<Self, DatasetError> {
        let mut map = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| DatasetError::LabelTable {
                line: i + 1,
                message,
            };
            let (value, label) = line
                .split_once('=')
                .or_else(|| line.split_once(char::is_whitespace))
                .ok_or_else(|| err(format!("expected `<value>=<label>`, got {line:?}")))?;
            let value: u8 = value
                .trim()
                .parse()
                .map_err(|_| err(format!("bad mask value {:?}", value.trim())))?;
            let label = match label.trim() {
                "normal" => Label::Normal,
                "anomaly" => Label::Anomaly,
                "ignore" => Label::Ignore,
                other => return Err(err(format!("unknown label {other:?}"))),
            };
            map.table.insert(value, label);
        }
        Ok(map)
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::parse(&text)
    }
}

#[derive(Debug, Clone, Default)]
pub struct EvalConfig {
    pub upsample: UpsampleMode,
    pub labels: LabelMap,
}

impl EvalConfig {
    /// Metrics default to nearest upsampling so patch decisions are kept.
    pub fn for_metrics() -> Self {
        Self {
            upsample: UpsampleMode::Nearest,
            labels: LabelMap::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ItemFailure {
    pub item: DatasetItem,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct DatasetReport {
    pub metrics: MetricsReport,
    pub failures: Vec<ItemFailure>,
}

/// Anomaly map for one manifest input at its native resolution.
pub fn load_input_map(
    path: &Path,
    reference: &ReferenceModel,
    mode: UpsampleMode,
) -> Result<AnomalyMap, String> {
    let name = path.to_string_lossy();
    if name.ends_with(".png") {
        let img = image::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let gray = img.to_luma8();
        let (w, h) = gray.dimensions();
        let values = gray.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
        return Ok(AnomalyMap::new(h as usize, w as usize, values));
    }
    let grid = peg::read_grid_file(path).map_err(|e| format!("{}: {e}", path.display()))?;
    if name.ends_with(".map.peg") {
        return AnomalyMap::from_grid(&grid).map_err(|e| format!("{}: {e}", path.display()));
    }
    let grid = grid
        .normalize()
        .map_err(|e| format!("{}: {e}", path.display()))?;
    let result = match_patches(reference, &grid).map_err(|e| format!("{}: {e}", path.display()))?;
    let g = grid.geometry();
    upsample(&result, g.height, g.width, mode).map_err(|e| format!("{}: {e}", path.display()))
}

/// Decodes a ground-truth mask into per-pixel labels.
pub fn load_gt_mask(path: &Path, labels: &LabelMap) -> Result<(usize, usize, Vec<Label>), String> {
    let img = image::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let gray = img.to_luma8();
    let (w, h) = gray.dimensions();
    let mut out = Vec::with_capacity((w * h) as usize);
    for &v in gray.as_raw() {
        out.push(labels.get(v).ok_or_else(|| {
            format!("{}: mask value {v} has no label mapping", path.display())
        })?);
    }
    Ok((h as usize, w as usize, out))
}

fn evaluate_item(
    item: &DatasetItem,
    reference: &ReferenceModel,
    config: &EvalConfig,
) -> Result<EvalRecord, String> {
    let (h, w, labels) = load_gt_mask(&item.gt_mask, &config.labels)?;
    let map = load_input_map(&item.input, reference, config.upsample)?.resize_nearest(h, w);
    EvalRecord::new(map.values, labels).map_err(|e| e.to_string())
}

/// Runs every item, pools the labeled pixels in manifest order and computes
/// AP, FPR95 and AUROC. Items that fail to load are skipped and listed.
pub fn evaluate_dataset(
    items: &[DatasetItem],
    reference: &ReferenceModel,
    config: &EvalConfig,
) -> Result<DatasetReport, DatasetError> {
    if items.is_empty() {
        return Err(DatasetError::EmptyManifest);
    }
    let results: Vec<Result<EvalRecord, String>> = items
        .par_iter()
        .map(|item| evaluate_item(item, reference, config))
        .collect();
    let mut pooled = EvalRecord::default();
    let mut failures = Vec::new();
    for (item, result) in items.iter().zip(results) {
        match result {
            Ok(mut record) => pooled.append(&mut record),
            Err(reason) => failures.push(ItemFailure {
                item: item.clone(),
                reason,
            }),
        }
    }
    if failures.len() == items.len() {
        return Err(DatasetError::AllItemsFailed {
            count: failures.len(),
            first: failures[0].reason.clone(),
        });
    }
    let mut metrics = MetricsReport::compute(&pooled)?;
    metrics.skipped = failures.len();
    Ok(DatasetReport { metrics, failures })
}
