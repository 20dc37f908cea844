//! Forward and backward kernels on raw row-major buffers.
//!
//! Every kernel that loops over a batch fans out per sample through
//! [`crate::par`]; cross-sample reductions are summed in sample order so
//! the result does not depend on scheduling.

use super::Scalar;
use crate::par;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub ph: usize,
    pub pw: usize,
}

impl ConvGeom {
    pub fn oh(&self) -> usize {
        self.h + 2 * self.ph + 1 - self.kh
    }

    pub fn ow(&self) -> usize {
        self.w + 2 * self.pw + 1 - self.kw
    }

    fn rows(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.oh() * self.ow()
    }

    fn in_len(&self) -> usize {
        self.cin * self.h * self.w
    }

    fn out_len(&self) -> usize {
        self.cout * self.cols()
    }

    /// Output columns `[lo, hi)` whose input column `ow + j - pw` is in bounds.
    fn valid_ow(&self, j: usize) -> (usize, usize) {
        let ow = self.ow();
        let lo = self.pw.saturating_sub(j).min(ow);
        let hi = (self.w + self.pw).saturating_sub(j).min(ow).max(lo);
        (lo, hi)
    }

    fn for_each_patch_run(&self, mut f: impl FnMut(usize, usize, usize)) {
        // f(col_offset, input_offset, len) for every contiguous run
        let (oh, ow) = (self.oh(), self.ow());
        for c in 0..self.cin {
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = (c * self.kh + i) * self.kw + j;
                    let (lo, hi) = self.valid_ow(j);
                    if lo == hi {
                        continue;
                    }
                    for y in 0..oh {
                        let ih = y + i;
                        if ih < self.ph || ih - self.ph >= self.h {
                            continue;
                        }
                        let ih = ih - self.ph;
                        let col = row * oh * ow + y * ow + lo;
                        let src = c * self.h * self.w + ih * self.w + lo + j - self.pw;
                        f(col, src, hi - lo);
                    }
                }
            }
        }
    }

    fn im2col<F: Scalar>(&self, x: &[F], cols: &mut [F]) {
        cols.fill(F::zero());
        self.for_each_patch_run(|dst, src, len| {
            cols[dst..dst + len].copy_from_slice(&x[src..src + len]);
        });
    }

    fn col2im<F: Scalar>(&self, cols: &[F], dx: &mut [F]) {
        self.for_each_patch_run(|src, dst, len| {
            for (d, &s) in dx[dst..dst + len].iter_mut().zip(&cols[src..src + len]) {
                *d += s;
            }
        });
    }
}

pub(crate) fn conv2d_forward<F: Scalar>(g: &ConvGeom, x: &[F], k: &[F]) -> Vec<F> {
    let (rows, cols_n, in_len, out_len) = (g.rows(), g.cols(), g.in_len(), g.out_len());
    let per_sample = par::map_range(g.n, |s| {
        let mut cols = vec![F::zero(); rows * cols_n];
        g.im2col(&x[s * in_len..(s + 1) * in_len], &mut cols);
        let mut out = vec![F::zero(); out_len];
        F::gemm(g.cout, rows, cols_n, k, false, &cols, false, &mut out, false);
        out
    });
    per_sample.concat()
}

pub(crate) fn conv2d_backward<F: Scalar>(
    g: &ConvGeom,
    x: &[F],
    k: &[F],
    gout: &[F],
    want_x: bool,
    want_k: bool,
) -> (Option<Vec<F>>, Option<Vec<F>>) {
    let (rows, cols_n, in_len, out_len) = (g.rows(), g.cols(), g.in_len(), g.out_len());
    let per_sample = par::map_range(g.n, |s| {
        let go = &gout[s * out_len..(s + 1) * out_len];
        let dk = want_k.then(|| {
            let mut cols = vec![F::zero(); rows * cols_n];
            g.im2col(&x[s * in_len..(s + 1) * in_len], &mut cols);
            let mut dk = vec![F::zero(); g.cout * rows];
            F::gemm(g.cout, cols_n, rows, go, false, &cols, true, &mut dk, false);
            dk
        });
        let dx = want_x.then(|| {
            let mut dcols = vec![F::zero(); rows * cols_n];
            F::gemm(rows, g.cout, cols_n, k, true, go, false, &mut dcols, false);
            let mut dx = vec![F::zero(); in_len];
            g.col2im(&dcols, &mut dx);
            dx
        });
        (dx, dk)
    });
    let mut dx_all = want_x.then(|| Vec::with_capacity(g.n * in_len));
    let mut dk_all = want_k.then(|| vec![F::zero(); g.cout * rows]);
    for (dx, dk) in per_sample {
        if let (Some(all), Some(dx)) = (dx_all.as_mut(), dx) {
            all.extend_from_slice(&dx);
        }
        if let (Some(all), Some(dk)) = (dk_all.as_mut(), dk) {
            for (a, b) in all.iter_mut().zip(dk) {
                *a += b;
            }
        }
    }
    (dx_all, dk_all)
}

/// Non-overlapping max pooling over the two trailing axes of `[planes, h, w]`.
/// Returns pooled values and the flat input index of each selected maximum
/// (first maximum in row-major scan order on ties).
pub(crate) fn max_pool2d<F: Scalar>(
    x: &[F],
    planes: usize,
    h: usize,
    w: usize,
    wh: usize,
    ww: usize,
) -> (Vec<F>, Vec<usize>) {
    let (oh, ow) = (h / wh, w / ww);
    if ww == 1 {
        return max_pool_rows(x, planes, h, w, wh);
    }
    let mut out = Vec::with_capacity(planes * oh * ow);
    let mut idx = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let base = p * h * w;
        for y in 0..oh {
            for z in 0..ow {
                let mut best = base + y * wh * w + z * ww;
                for dy in 0..wh {
                    let row = base + (y * wh + dy) * w + z * ww;
                    for i in row..row + ww {
                        if x[i] > x[best] {
                            best = i;
                        }
                    }
                }
                out.push(x[best]);
                idx.push(best);
            }
        }
    }
    (out, idx)
}

/// Pooling along rows only: each output row is the element-wise maximum
/// of `wh` consecutive input rows.
fn max_pool_rows<F: Scalar>(x: &[F], planes: usize, h: usize, w: usize, wh: usize) -> (Vec<F>, Vec<usize>) {
    let oh = h / wh;
    let mut out = vec![F::zero(); planes * oh * w];
    let mut idx = vec![0usize; planes * oh * w];
    for p in 0..planes {
        for y in 0..oh {
            let o = (p * oh + y) * w;
            let first = p * h * w + y * wh * w;
            out[o..o + w].copy_from_slice(&x[first..first + w]);
            for (k, slot) in idx[o..o + w].iter_mut().enumerate() {
                *slot = first + k;
            }
            for dy in 1..wh {
                let row = first + dy * w;
                for (k, (ov, iv)) in out[o..o + w].iter_mut().zip(&x[row..row + w]).enumerate() {
                    if *iv > *ov {
                        *ov = *iv;
                        idx[o + k] = row + k;
                    }
                }
            }
        }
    }
    (out, idx)
}

/// Adaptive window `[floor(i·len/g), ceil((i+1)·len/g))`.
pub(crate) fn adaptive_bounds(i: usize, len: usize, g: usize) -> (usize, usize) {
    let lo = i * len / g;
    let hi = ((i + 1) * len).div_ceil(g);
    (lo, hi)
}

/// Spatial pyramid max pooling of `[n, c, h, w]` into `[n, c·Σg²]`.
/// Layout: level-major, then channel, then cells row-major.
pub(crate) fn spp<F: Scalar>(
    x: &[F],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    levels: &[usize],
) -> (Vec<F>, Vec<usize>) {
    let cells: usize = levels.iter().map(|g| g * g).sum();
    let mut out = Vec::with_capacity(n * c * cells);
    let mut idx = Vec::with_capacity(n * c * cells);
    for s in 0..n {
        for &g in levels {
            for ch in 0..c {
                let base = (s * c + ch) * h * w;
                for a in 0..g {
                    let (r0, r1) = adaptive_bounds(a, h, g);
                    for b in 0..g {
                        let (c0, c1) = adaptive_bounds(b, w, g);
                        let mut best = base + r0 * w + c0;
                        for r in r0..r1 {
                            for col in c0..c1 {
                                let i = base + r * w + col;
                                if x[i] > x[best] {
                                    best = i;
                                }
                            }
                        }
                        out.push(x[best]);
                        idx.push(best);
                    }
                }
            }
        }
    }
    (out, idx)
}

/// Sum with eight interleaved accumulators so the compiler can vectorize;
/// the association order is fixed, so results are reproducible.
pub(crate) fn lane_sum<F: Scalar>(values: impl Iterator<Item = F>) -> F {
    let mut acc = [F::zero(); 8];
    for (i, v) in values.enumerate() {
        acc[i & 7] += v;
    }
    ((acc[0] + acc[4]) + (acc[2] + acc[6])) + ((acc[1] + acc[5]) + (acc[3] + acc[7]))
}

/// Per-channel mean and biased variance of `[n, c, inner]`.
pub(crate) fn channel_moments<F: Scalar>(x: &[F], n: usize, c: usize, inner: usize) -> (Vec<F>, Vec<F>) {
    let count = F::from_f64((n * inner) as f64);
    let mut mean = vec![F::zero(); c];
    let mut var = vec![F::zero(); c];
    for ch in 0..c {
        let mut acc = F::zero();
        for s in 0..n {
            let base = (s * c + ch) * inner;
            acc += lane_sum(x[base..base + inner].iter().copied());
        }
        let mu = acc / count;
        let mut sq = F::zero();
        for s in 0..n {
            let base = (s * c + ch) * inner;
            sq += lane_sum(x[base..base + inner].iter().map(|&v| (v - mu) * (v - mu)));
        }
        mean[ch] = mu;
        var[ch] = sq / count;
    }
    (mean, var)
}
