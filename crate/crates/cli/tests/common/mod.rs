//! Shared helpers for the CLI test targets: running the binary and writing
//! synthetic grids, masks and manifests.

#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use refad::{peg, viz, ImageGeometry, PatchEmbeddingGrid};

pub fn refad() -> Command {
    Command::new(env!("CARGO_BIN_EXE_refad"))
}

pub struct Run {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

impl From<Output> for Run {
    fn from(o: Output) -> Self {
        Run {
            code: o.status.code().unwrap_or(-1),
            stdout: String::from_utf8_lossy(&o.stdout).into_owned(),
            stderr: String::from_utf8_lossy(&o.stderr).into_owned(),
        }
    }
}

pub fn run(args: &[&str]) -> Run {
    refad().args(args).output().expect("spawn refad").into()
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

pub fn grid(rows: usize, cols: usize, dim: usize, patch: usize, data: Vec<f32>) -> PatchEmbeddingGrid {
    PatchEmbeddingGrid::new(rows, cols, dim, data, ImageGeometry::tiled(rows, cols, patch), false)
        .unwrap()
}

pub fn write_grid(dir: &Path, name: &str, g: &PatchEmbeddingGrid) -> PathBuf {
    let path = dir.join(name);
    peg::write_grid_file(g, &path).unwrap();
    path
}

pub fn write_mask(dir: &Path, name: &str, height: usize, width: usize, values: &[u8]) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, viz::gray_png(values, width, height).unwrap()).unwrap();
    path
}

/// Random raw vectors whose nonzero coordinates lie in `dims`.
pub fn random_in(
    rng: &mut ChaCha8Rng,
    rows: usize,
    cols: usize,
    dim: usize,
    dims: std::ops::Range<usize>,
    patch: usize,
) -> PatchEmbeddingGrid {
    let mut data = vec![0.0f32; rows * cols * dim];
    for p in 0..rows * cols {
        for j in dims.clone() {
            data[p * dim + j] = rng.random_range(-1.0..1.0);
        }
    }
    grid(rows, cols, dim, patch, data)
}

pub struct SyntheticSpec {
    pub images: usize,
    pub rows: usize,
    pub cols: usize,
    pub dim: usize,
    /// Dimensions `0..reference_dims` hold the reference; anomalies use the rest.
    pub reference_dims: usize,
    pub patch: usize,
    /// Per-coordinate bound of the noise added to copied reference patches.
    pub perturbation: f32,
    pub seed: u64,
}

pub struct Synthetic {
    pub reference: PathBuf,
    pub manifest: PathBuf,
    pub anomalous_patches: usize,
}

/// Writes a reference grid, `images` test grids with one rectangular
/// anomalous region each, their ground-truth masks (0 normal, 1 anomaly)
/// and a manifest.
///
/// Normal test patches are copies of random reference patches plus uniform
/// noise in `[-perturbation, perturbation]`; anomalous patches live in the
/// dimensions the reference never uses, so they are orthogonal to every
/// reference patch.
pub fn synthetic_dataset(dir: &Path, spec: &SyntheticSpec) -> Synthetic {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.rows * spec.cols;
    let reference = random_in(&mut rng, spec.rows, spec.cols, spec.dim, 0..spec.reference_dims, spec.patch);
    let reference_path = write_grid(dir, "reference.peg", &reference);
    let (height, width) = (spec.rows * spec.patch, spec.cols * spec.patch);
    let mut manifest = String::from("# synthetic benchmark\n");
    let mut anomalous_patches = 0;
    for img in 0..spec.images {
        let rh = rng.random_range(2..=spec.rows.div_ceil(3).max(2));
        let rw = rng.random_range(2..=spec.cols.div_ceil(3).max(2));
        let r0 = rng.random_range(0..=spec.rows - rh);
        let c0 = rng.random_range(0..=spec.cols - rw);
        let inside = |r: usize, c: usize| r >= r0 && r < r0 + rh && c >= c0 && c < c0 + rw;
        let mut data = Vec::with_capacity(n * spec.dim);
        for r in 0..spec.rows {
            for c in 0..spec.cols {
                if inside(r, c) {
                    anomalous_patches += 1;
                    for j in 0..spec.dim {
                        data.push(if j >= spec.reference_dims {
                            rng.random_range(0.1..1.0)
                        } else {
                            0.0
                        });
                    }
                } else {
                    let src = reference.patch(rng.random_range(0..n));
                    for (j, &v) in src.iter().enumerate() {
                        data.push(if j < spec.reference_dims {
                            v + rng.random_range(-spec.perturbation..=spec.perturbation)
                        } else {
                            0.0
                        });
                    }
                }
            }
        }
        let test = grid(spec.rows, spec.cols, spec.dim, spec.patch, data);
        let name = format!("img{img:02}");
        write_grid(dir, &format!("{name}.peg"), &test);
        let mut mask = vec![0u8; height * width];
        for y in 0..height {
            for x in 0..width {
                if inside(y / spec.patch, x / spec.patch) {
                    mask[y * width + x] = 1;
                }
            }
        }
        write_mask(dir, &format!("{name}_gt.png"), height, width, &mask);
        manifest.push_str(&format!("{name}.peg\t{name}_gt.png\n"));
    }
    let manifest_path = dir.join("manifest.tsv");
    fs::write(&manifest_path, manifest).unwrap();
    Synthetic {
        reference: reference_path,
        manifest: manifest_path,
        anomalous_patches,
    }
}

/// Value of `key=` in a whitespace separated `key=value` line.
pub fn field<'a>(line: &'a str, key: &str) -> Option<&'a str> {
    line.split_whitespace()
        .find_map(|kv| kv.strip_prefix(key).and_then(|rest| rest.strip_prefix('=')))
}
