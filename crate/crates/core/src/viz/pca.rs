//! Top principal components of a frame's patch embeddings.
//!
//! Power iteration with deflation on the `d x d` covariance, followed by a
//! Rayleigh-Ritz rotation inside the recovered subspace so that nearly
//! equal leading eigenvalues still come out as proper eigenvectors.

use super::VizError;
use crate::grid::PatchEmbeddingGrid;

pub const POWER_TOL: f64 = 1e-9;
pub const POWER_MAX_ITERS: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Unit-norm components, largest explained variance first.
    pub components: Vec<Vec<f64>>,
    /// Eigenvalues of the population covariance (divided by N).
    pub explained_variance: Vec<f64>,
}

impl Pca {
    /// Projects a sample onto every component.
    pub fn project(&self, sample: &[f32]) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| {
                c.iter()
                    .zip(sample.iter().zip(&self.mean))
                    .map(|(w, (&x, m))| w * (x as f64 - m))
                    .sum()
            })
            .collect()
    }
}

fn mat_vec(m: &[f64], d: usize, v: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        *o = m[i * d..(i + 1) * d].iter().zip(v).map(|(a, b)| a * b).sum();
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Population covariance (row-major `d x d`) and mean of `n` samples.
pub fn covariance(data: &[f32], n: usize, d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut mean = vec![0.0f64; d];
    for row in data.chunks_exact(d) {
        for (m, &x) in mean.iter_mut().zip(row) {
            *m += x as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = vec![0.0f64; d * d];
    let mut centered = vec![0.0f64; d];
    for row in data.chunks_exact(d) {
        for ((c, &x), m) in centered.iter_mut().zip(row).zip(&mean) {
            *c = x as f64 - m;
        }
        for i in 0..d {
            let ci = centered[i];
            if ci == 0.0 {
                continue;
            }
            let dst = &mut cov[i * d..(i + 1) * d];
            for j in i..d {
                dst[j] += ci * centered[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov[i * d + j] / n as f64;
            cov[i * d + j] = v;
            cov[j * d + i] = v;
        }
    }
    (cov, mean)
}

// Leading eigenpair of a symmetric matrix by power iteration. Starts from
// the matrix column with the largest norm, which cannot be orthogonal to
// the dominant eigenvector unless the matrix is zero.
fn power_iteration(m: &[f64], d: usize) -> Option<(f64, Vec<f64>)> {
    let start = (0..d)
        .map(|j| {
            let col: Vec<f64> = (0..d).map(|i| m[i * d + j]).collect();
            let n = norm(&col);
            (n, col)
        })
        .max_by(|a, b| a.0.total_cmp(&b.0))?;
    let scale = m.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    if start.0 <= scale * 1e-14 || start.0 == 0.0 {
        return None;
    }
    let mut v: Vec<f64> = start.1.iter().map(|x| x / start.0).collect();
    let mut next = vec![0.0f64; d];
    for _ in 0..POWER_MAX_ITERS {
        mat_vec(m, d, &v, &mut next);
        let n = norm(&next);
        if n <= scale * 1e-14 {
            return None;
        }
        next.iter_mut().for_each(|x| *x /= n);
        let diff = next.iter().zip(&v).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        std::mem::swap(&mut v, &mut next);
        if diff < POWER_TOL {
            break;
        }
    }
    mat_vec(m, d, &v, &mut next);
    Some((dot(&v, &next), v))
}

// Eigen-decomposition of a small symmetric matrix by cyclic Jacobi
// rotations. Returns eigenvalues and column eigenvectors (row-major).
fn jacobi_eigen(mut a: Vec<f64>, k: usize) -> (Vec<f64>, Vec<f64>) {
    let mut v = vec![0.0f64; k * k];
    for i in 0..k {
        v[i * k + i] = 1.0;
    }
    for _ in 0..100 {
        let off: f64 = (0..k)
            .flat_map(|i| (0..k).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * k + j].powi(2))
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..k {
            for q in p + 1..k {
                let apq = a[p * k + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * k + q] - a[p * k + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for r in 0..k {
                    let arp = a[r * k + p];
                    let arq = a[r * k + q];
                    a[r * k + p] = c * arp - s * arq;
                    a[r * k + q] = s * arp + c * arq;
                }
                for r in 0..k {
                    let apr = a[p * k + r];
                    let aqr = a[q * k + r];
                    a[p * k + r] = c * apr - s * aqr;
                    a[q * k + r] = s * apr + c * aqr;
                }
                for r in 0..k {
                    let vrp = v[r * k + p];
                    let vrq = v[r * k + q];
                    v[r * k + p] = c * vrp - s * vrq;
                    v[r * k + q] = s * vrp + c * vrq;
                }
            }
        }
    }
    ((0..k).map(|i| a[i * k + i]).collect(), v)
}

// Flip so the largest-magnitude coordinate (first on ties) is positive.
fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

// Unit vector orthogonal to all of `basis`, taken from the standard basis.
fn orthogonal_complement(basis: &[Vec<f64>], d: usize) -> Vec<f64> {
    let mut best: Option<Vec<f64>> = None;
    let mut best_norm = 0.0;
    for e in 0..d {
        let mut v = vec![0.0f64; d];
        v[e] = 1.0;
        for b in basis {
            let p = dot(&v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
        let n = norm(&v);
        if n > best_norm + 1e-12 {
            best_norm = n;
            best = Some(v.into_iter().map(|x| x / n).collect());
        }
    }
    best.expect("d exceeds the number of basis vectors")
}

/// Top `k` principal components of the rows of `data` (`n x d`).
pub fn principal_components(data: &[f32], n: usize, d: usize, k: usize) -> Result<Pca, VizError> {
    if n < k || d < k {
        return Err(VizError::TooFewPatches { patches: n, dim: d, needed: k });
    }
    let (cov, mean) = covariance(data, n, d);
    if cov.iter().all(|&c| c == 0.0) {
        return Err(VizError::DegenerateVariance);
    }
    let mut deflated = cov.clone();
    let mut vectors: Vec<Vec<f64>> = Vec::with_capacity(k);
    for _ in 0..k {
        let v = match power_iteration(&deflated, d) {
            Some((lambda, v)) if lambda > 0.0 => {
                for i in 0..d {
                    for j in 0..d {
                        deflated[i * d + j] -= lambda * v[i] * v[j];
                    }
                }
                v
            }
            // Remaining variance is zero: any orthogonal direction will do.
            _ => orthogonal_complement(&vectors, d),
        };
        vectors.push(v);
    }
    // Re-orthonormalize (modified Gram-Schmidt) against drift from deflation.
    for i in 0..k {
        for j in 0..i {
            let p = dot(&vectors[i], &vectors[j]);
            let (head, tail) = vectors.split_at_mut(i);
            tail[0].iter_mut().zip(&head[j]).for_each(|(x, y)| *x -= p * y);
        }
        let n = norm(&vectors[i]);
        if n < 1e-12 {
            vectors[i] = orthogonal_complement(&vectors[..i], d);
        } else {
            vectors[i].iter_mut().for_each(|x| *x /= n);
        }
    }
    // Rayleigh-Ritz: diagonalize V^T C V and rotate V accordingly.
    let mut cv = vec![0.0f64; d];
    let mut small = vec![0.0f64; k * k];
    for j in 0..k {
        mat_vec(&cov, d, &vectors[j], &mut cv);
        for i in 0..k {
            small[i * k + j] = dot(&vectors[i], &cv);
        }
    }
    let (values, rot) = jacobi_eigen(small, k);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let mut components = Vec::with_capacity(k);
    let mut explained = Vec::with_capacity(k);
    for &c in &order {
        let mut v = vec![0.0f64; d];
        for (i, basis) in vectors.iter().enumerate() {
            let w = rot[i * k + c];
            v.iter_mut().zip(basis).for_each(|(x, b)| *x += w * b);
        }
        let n = norm(&v);
        v.iter_mut().for_each(|x| *x /= n);
        fix_sign(&mut v);
        explained.push(values[c].max(0.0));
        components.push(v);
    }
    Ok(Pca {
        mean,
        components,
        explained_variance: explained,
    })
}

/// Top three components of a grid's patch embeddings.
pub fn grid_pca(grid: &PatchEmbeddingGrid) -> Result<Pca, VizError> {
    principal_components(grid.data(), grid.len(), grid.dim(), 3)
}
