//! Blocked max-inner-product kernel.
//!
//! Every (test, reference) dot product is accumulated in f64 over
//! [`LANES`] interleaved partial sums which are then reduced in a fixed
//! tree. The order is the same no matter which tile shape or worker thread
//! computes the pair, so results are bit-stable across tilings and thread
//! counts. The reference is walked in cache-sized blocks; each test patch
//! keeps a running maximum with smallest-index tie-breaking.

use rayon::prelude::*;

pub(crate) const LANES: usize = 8;

/// Reference rows kept hot while all test rows of a work chunk stream past.
const REF_BLOCK: usize = 96;
/// Test rows per parallel work item.
const TEST_CHUNK: usize = 64;

/// Row-major copy of a set of vectors, each row zero-padded to a multiple
/// of [`LANES`]. Values stay f32 in memory and are widened on load.
#[derive(Debug, Clone, Default)]
pub(crate) struct PackedRows {
    data: Vec<f64>,
    rows: usize,
    dim: usize,
    stride: usize,
}

impl PackedRows {
    pub(crate) fn pack(values: &[f32], dim: usize) -> Self {
        assert!(dim > 0 && values.len().is_multiple_of(dim));
        let rows = values.len() / dim;
        let stride = dim.div_ceil(LANES) * LANES;
        let mut data = vec![0.0f64; rows * stride];
        for (dst, src) in data.chunks_exact_mut(stride).zip(values.chunks_exact(dim)) {
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = s as f64;
            }
        }
        Self {
            data,
            rows,
            dim,
            stride,
        }
    }

    pub(crate) fn rows(&self) -> usize {
        self.rows
    }

    #[inline(always)]
    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.stride..(i + 1) * self.stride]
    }
}

#[inline(always)]
fn mac<const FMA: bool>(a: f64, b: f64, acc: f64) -> f64 {
    if FMA {
        a.mul_add(b, acc)
    } else {
        a * b + acc
    }
}

#[inline(always)]
fn reduce(l: [f64; LANES]) -> f64 {
    let s = [l[0] + l[4], l[1] + l[5], l[2] + l[6], l[3] + l[7]];
    (s[0] + s[2]) + (s[1] + s[3])
}

/// Dot products of `TT` test rows against `RT` reference rows. The SIMD
/// variants compute the same thing with explicit vector registers.
#[inline(always)]
fn tile<const TT: usize, const RT: usize, const FMA: bool>(
    t: [&[f64]; TT],
    r: [&[f64]; RT],
) -> [[f64; RT]; TT] {
    let stride = t[0].len();
    let mut acc = [[[0.0f64; LANES]; RT]; TT];
    let mut k = 0;
    while k < stride {
        for j in 0..RT {
            let rj: &[f64; LANES] = r[j][k..k + LANES].try_into().unwrap();
            for i in 0..TT {
                let ti: &[f64; LANES] = t[i][k..k + LANES].try_into().unwrap();
                for l in 0..LANES {
                    acc[i][j][l] = mac::<FMA>(ti[l], rj[l], acc[i][j][l]);
                }
            }
        }
        k += LANES;
    }
    let mut out = [[0.0f64; RT]; TT];
    for i in 0..TT {
        for j in 0..RT {
            out[i][j] = reduce(acc[i][j]);
        }
    }
    out
}

#[inline(always)]
fn update(best: &mut f64, arg: &mut u32, value: f64, index: usize) {
    if value > *best {
        *best = value;
        *arg = index as u32;
    }
}

#[cfg(target_arch = "x86_64")]
mod simd {
    use super::{reduce, LANES};
    use std::arch::x86_64::*;

    // Both variants keep one accumulator lane per residue class of the
    // feature index and use fused multiply-add, matching `tile::<_, _, true>`
    // bit for bit.

    // Masked loads lower straight to vector instructions; the plain unaligned
    // load intrinsics go through a byte copy that is not optimized away when
    // debug assertions are on.
    #[target_feature(enable = "avx512f")]
    #[inline]
    unsafe fn load8_avx512(p: *const f64) -> __m512d {
        unsafe { _mm512_maskz_loadu_pd(0xff, p) }
    }

    #[target_feature(enable = "avx2")]
    #[inline]
    unsafe fn load4_avx2(p: *const f64) -> __m256d {
        unsafe { _mm256_maskload_pd(p, _mm256_set1_epi64x(-1)) }
    }

    #[target_feature(enable = "avx512f")]
    pub(super) fn tile_avx512<const TT: usize, const RT: usize>(
        t: [&[f64]; TT],
        r: [&[f64]; RT],
    ) -> [[f64; RT]; TT] {
        let stride = t[0].len();
        debug_assert!(stride.is_multiple_of(LANES));
        debug_assert!(t.iter().chain(r.iter()).all(|row| row.len() == stride));
        let mut acc = [[_mm512_setzero_pd(); RT]; TT];
        let mut k = 0;
        while k < stride {
            // SAFETY: every row holds `stride` values and k + 8 <= stride.
            unsafe {
                let mut rv = [_mm512_setzero_pd(); RT];
                for j in 0..RT {
                    rv[j] = load8_avx512(r[j].as_ptr().add(k));
                }
                for i in 0..TT {
                    let tv = load8_avx512(t[i].as_ptr().add(k));
                    for j in 0..RT {
                        acc[i][j] = _mm512_fmadd_pd(tv, rv[j], acc[i][j]);
                    }
                }
            }
            k += LANES;
        }
        let mut out = [[0.0f64; RT]; TT];
        for i in 0..TT {
            for j in 0..RT {
                let mut lanes = [0.0f64; LANES];
                // SAFETY: `lanes` holds exactly eight f64 values.
                unsafe { _mm512_storeu_pd(lanes.as_mut_ptr(), acc[i][j]) };
                out[i][j] = reduce(lanes);
            }
        }
        out
    }

    #[target_feature(enable = "avx2,fma")]
    pub(super) fn tile_avx2<const TT: usize, const RT: usize>(
        t: [&[f64]; TT],
        r: [&[f64]; RT],
    ) -> [[f64; RT]; TT] {
        let stride = t[0].len();
        debug_assert!(stride.is_multiple_of(LANES));
        debug_assert!(t.iter().chain(r.iter()).all(|row| row.len() == stride));
        let mut lo = [[_mm256_setzero_pd(); RT]; TT];
        let mut hi = [[_mm256_setzero_pd(); RT]; TT];
        let mut k = 0;
        while k < stride {
            // SAFETY: every row holds `stride` values and k + 8 <= stride.
            unsafe {
                let mut rl = [_mm256_setzero_pd(); RT];
                let mut rh = [_mm256_setzero_pd(); RT];
                for j in 0..RT {
                    rl[j] = load4_avx2(r[j].as_ptr().add(k));
                    rh[j] = load4_avx2(r[j].as_ptr().add(k + 4));
                }
                for i in 0..TT {
                    let tl = load4_avx2(t[i].as_ptr().add(k));
                    let th = load4_avx2(t[i].as_ptr().add(k + 4));
                    for j in 0..RT {
                        lo[i][j] = _mm256_fmadd_pd(tl, rl[j], lo[i][j]);
                        hi[i][j] = _mm256_fmadd_pd(th, rh[j], hi[i][j]);
                    }
                }
            }
            k += LANES;
        }
        let mut out = [[0.0f64; RT]; TT];
        for i in 0..TT {
            for j in 0..RT {
                let mut lanes = [0.0f64; LANES];
                // SAFETY: `lanes` holds exactly eight f64 values.
                unsafe {
                    _mm256_storeu_pd(lanes.as_mut_ptr(), lo[i][j]);
                    _mm256_storeu_pd(lanes.as_mut_ptr().add(4), hi[i][j]);
                }
                out[i][j] = reduce(lanes);
            }
        }
        out
    }
}

// Walks the reference in blocks of REF_BLOCK rows; inside a block, test
// rows are taken TT at a time against RT reference rows, with 1-row tails.
macro_rules! chunk_fn {
    ($(#[$attr:meta])* $name:ident, $tile:ident, $tt:expr, $rt:expr) => {
        $(#[$attr])*
        fn $name(
            reference: &PackedRows,
            test: &PackedRows,
            first_test: usize,
            best: &mut [f64],
            arg: &mut [u32],
        ) {
            const TT: usize = $tt;
            const RT: usize = $rt;
            best.fill(f64::NEG_INFINITY);
            arg.fill(0);
            let n_test = best.len();
            let n_ref = reference.rows();
            for rb in (0..n_ref).step_by(REF_BLOCK) {
                let r_end = (rb + REF_BLOCK).min(n_ref);
                let mut ti = 0;
                while ti + TT <= n_test {
                    let t: [&[f64]; TT] = std::array::from_fn(|i| test.row(first_test + ti + i));
                    let mut ri = rb;
                    while ri + RT <= r_end {
                        let r: [&[f64]; RT] = std::array::from_fn(|j| reference.row(ri + j));
                        let s = $tile::<TT, RT>(t, r);
                        for i in 0..TT {
                            for j in 0..RT {
                                update(&mut best[ti + i], &mut arg[ti + i], s[i][j], ri + j);
                            }
                        }
                        ri += RT;
                    }
                    while ri < r_end {
                        let s = $tile::<TT, 1>(t, [reference.row(ri)]);
                        for i in 0..TT {
                            update(&mut best[ti + i], &mut arg[ti + i], s[i][0], ri);
                        }
                        ri += 1;
                    }
                    ti += TT;
                }
                while ti < n_test {
                    let t = test.row(first_test + ti);
                    for ri in rb..r_end {
                        let s = $tile::<1, 1>([t], [reference.row(ri)])[0][0];
                        update(&mut best[ti], &mut arg[ti], s, ri);
                    }
                    ti += 1;
                }
            }
        }
    };
}

#[inline(always)]
fn tile_portable<const TT: usize, const RT: usize>(
    t: [&[f64]; TT],
    r: [&[f64]; RT],
) -> [[f64; RT]; TT] {
    tile::<TT, RT, false>(t, r)
}

#[cfg(target_arch = "x86_64")]
use simd::{tile_avx2, tile_avx512};

chunk_fn!(chunk_portable, tile_portable, 4, 2);
#[cfg(target_arch = "x86_64")]
chunk_fn!(#[target_feature(enable = "avx2,fma")] chunk_avx2, tile_avx2, 2, 2);
#[cfg(target_arch = "x86_64")]
chunk_fn!(#[target_feature(enable = "avx512f")] chunk_avx512, tile_avx512, 8, 3);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Isa {
    Portable,
    #[cfg(target_arch = "x86_64")]
    Avx2,
    #[cfg(target_arch = "x86_64")]
    Avx512,
}

fn detect() -> Isa {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx512f") {
            return Isa::Avx512;
        }
        if std::arch::is_x86_feature_detected!("avx2")
            && std::arch::is_x86_feature_detected!("fma")
        {
            return Isa::Avx2;
        }
    }
    Isa::Portable
}

fn run_chunk(
    isa: Isa,
    reference: &PackedRows,
    test: &PackedRows,
    first_test: usize,
    best: &mut [f64],
    arg: &mut [u32],
) {
    match isa {
        Isa::Portable => chunk_portable(reference, test, first_test, best, arg),
        // SAFETY: the features were detected at runtime in `detect`.
        #[cfg(target_arch = "x86_64")]
        Isa::Avx2 => unsafe { chunk_avx2(reference, test, first_test, best, arg) },
        #[cfg(target_arch = "x86_64")]
        Isa::Avx512 => unsafe { chunk_avx512(reference, test, first_test, best, arg) },
    }
}

/// For every test row, the maximum inner product over all reference rows
/// and the smallest reference index attaining it.
pub(crate) fn max_inner_product(
    reference: &PackedRows,
    test: &PackedRows,
    best: &mut [f64],
    arg: &mut [u32],
) {
    assert_eq!(reference.dim, test.dim);
    assert_eq!(best.len(), test.rows());
    assert_eq!(arg.len(), test.rows());
    assert!(reference.rows() > 0);
    let isa = detect();
    best.par_chunks_mut(TEST_CHUNK)
        .zip(arg.par_chunks_mut(TEST_CHUNK))
        .enumerate()
        .for_each(|(c, (b, a))| run_chunk(isa, reference, test, c * TEST_CHUNK, b, a));
}

/// Dot product with the kernel's fixed summation order, exposed for tests
/// that need to reproduce single-pair results.
#[cfg(test)]
pub(crate) fn kernel_dot(a: &PackedRows, i: usize, b: &PackedRows, j: usize) -> f64 {
    let mut best = [0.0];
    let mut arg = [0];
    let single_ref = PackedRows {
        data: b.row(j).to_vec(),
        rows: 1,
        dim: b.dim,
        stride: b.stride,
    };
    let single_test = PackedRows {
        data: a.row(i).to_vec(),
        rows: 1,
        dim: a.dim,
        stride: a.stride,
    };
    max_inner_product(&single_ref, &single_test, &mut best, &mut arg);
    best[0]
}
