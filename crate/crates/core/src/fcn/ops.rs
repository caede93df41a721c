//! Layer kernels on single images stored channel-major (`c x h x w`).
//!
//! Convolutions use an unfold ("im2col") gather into a
//! `(c*k*k) x (ho*wo)` matrix followed by one gemm. The scatter is the exact
//! adjoint of the gather and drives both transposed convolution and the
//! input gradient of ordinary convolution.

use super::real::{gemm, Real};

/// Geometry of an unfold: output grid position `(i, j)` and kernel tap
/// `(ty, tx)` read image pixel `(i*stride + ty - offset, j*stride + tx - offset)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Unfold {
    pub channels: usize,
    pub image_h: usize,
    pub image_w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub offset: usize,
    pub grid_h: usize,
    pub grid_w: usize,
}

impl Unfold {
    pub fn rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn cols(&self) -> usize {
        self.grid_h * self.grid_w
    }

    #[inline]
    fn source(&self, grid: usize, tap: usize) -> Option<usize> {
        let y = (grid * self.stride + tap).checked_sub(self.offset)?;
        Some(y)
    }

    pub fn gather<T: Real>(&self, image: &[T], col: &mut [T]) {
        debug_assert_eq!(image.len(), self.channels * self.image_h * self.image_w);
        debug_assert_eq!(col.len(), self.rows() * self.cols());
        let k = self.kernel;
        let n = self.cols();
        for c in 0..self.channels {
            let plane = &image[c * self.image_h * self.image_w..][..self.image_h * self.image_w];
            for ty in 0..k {
                for tx in 0..k {
                    let row = &mut col[((c * k + ty) * k + tx) * n..][..n];
                    for i in 0..self.grid_h {
                        let out = &mut row[i * self.grid_w..][..self.grid_w];
                        match self.source(i, ty).filter(|&y| y < self.image_h) {
                            None => out.fill(T::ZERO),
                            Some(y) => {
                                let src = &plane[y * self.image_w..][..self.image_w];
                                for (j, o) in out.iter_mut().enumerate() {
                                    *o = match self.source(j, tx) {
                                        Some(x) if x < self.image_w => src[x],
                                        _ => T::ZERO,
                                    };
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adds the columns back into `image` (adjoint of [`Unfold::gather`]).
    pub fn scatter_add<T: Real>(&self, col: &[T], image: &mut [T]) {
        debug_assert_eq!(image.len(), self.channels * self.image_h * self.image_w);
        debug_assert_eq!(col.len(), self.rows() * self.cols());
        let k = self.kernel;
        let n = self.cols();
        for c in 0..self.channels {
            let plane = &mut image[c * self.image_h * self.image_w..][..self.image_h * self.image_w];
            for ty in 0..k {
                for tx in 0..k {
                    let row = &col[((c * k + ty) * k + tx) * n..][..n];
                    for i in 0..self.grid_h {
                        let Some(y) = self.source(i, ty).filter(|&y| y < self.image_h) else {
                            continue;
                        };
                        let dst = &mut plane[y * self.image_w..][..self.image_w];
                        for (j, &v) in row[i * self.grid_w..][..self.grid_w].iter().enumerate() {
                            if let Some(x) = self.source(j, tx).filter(|&x| x < self.image_w) {
                                dst[x] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Shape of a stride-1 "same" convolution with odd kernel `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub h: usize,
    pub w: usize,
}

impl ConvShape {
    fn unfold(&self) -> Unfold {
        Unfold {
            channels: self.cin,
            image_h: self.h,
            image_w: self.w,
            kernel: self.kernel,
            stride: 1,
            offset: self.kernel / 2,
            grid_h: self.h,
            grid_w: self.w,
        }
    }

    pub fn weight_len(&self) -> usize {
        self.cout * self.cin * self.kernel * self.kernel
    }

    /// `out = W * unfold(x) + b`; weights are `cout x (cin*k*k)`.
    pub fn forward<T: Real>(&self, weight: &[T], bias: &[T], x: &[T]) -> Vec<T> {
        let hw = self.h * self.w;
        let mut out = vec![T::ZERO; self.cout * hw];
        for (row, &b) in out.chunks_exact_mut(hw).zip(bias) {
            row.fill(b);
        }
        let kk = self.cin * self.kernel * self.kernel;
        if self.kernel == 1 {
            gemm(self.cout, kk, hw, weight, false, x, false, T::ONE, &mut out);
        } else {
            let u = self.unfold();
            let mut col = vec![T::ZERO; u.rows() * u.cols()];
            u.gather(x, &mut col);
            gemm(self.cout, kk, hw, weight, false, &col, false, T::ONE, &mut out);
        }
        out
    }

    /// Accumulates weight and bias gradients; returns the input gradient when
    /// `want_dx` is set.
    pub fn backward<T: Real>(
        &self,
        weight: &[T],
        x: &[T],
        dout: &[T],
        dweight: &mut [T],
        dbias: &mut [T],
        want_dx: bool,
    ) -> Option<Vec<T>> {
        let hw = self.h * self.w;
        let kk = self.cin * self.kernel * self.kernel;
        for (row, db) in dout.chunks_exact(hw).zip(dbias.iter_mut()) {
            *db += row.iter().copied().sum::<T>();
        }
        if self.kernel == 1 {
            gemm(self.cout, hw, kk, dout, false, x, true, T::ONE, dweight);
            return want_dx.then(|| {
                let mut dx = vec![T::ZERO; self.cin * hw];
                gemm(kk, self.cout, hw, weight, true, dout, false, T::ZERO, &mut dx);
                dx
            });
        }
        let u = self.unfold();
        let mut col = vec![T::ZERO; u.rows() * u.cols()];
        u.gather(x, &mut col);
        gemm(self.cout, hw, kk, dout, false, &col, true, T::ONE, dweight);
        want_dx.then(|| {
            gemm(kk, self.cout, hw, weight, true, dout, false, T::ZERO, &mut col);
            let mut dx = vec![T::ZERO; self.cin * hw];
            u.scatter_add(&col, &mut dx);
            dx
        })
    }
}

/// Transposed convolution upsampling `h x w` by `stride`, cropped by `crop`
/// on the top/left so the output is exactly `(h*stride) x (w*stride)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UpShape {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub crop: usize,
    pub h: usize,
    pub w: usize,
}

impl UpShape {
    fn unfold(&self) -> Unfold {
        Unfold {
            channels: self.cout,
            image_h: self.h * self.stride,
            image_w: self.w * self.stride,
            kernel: self.kernel,
            stride: self.stride,
            offset: self.crop,
            grid_h: self.h,
            grid_w: self.w,
        }
    }

    pub fn weight_len(&self) -> usize {
        self.cin * self.cout * self.kernel * self.kernel
    }

    /// Weights are `cin x (cout*k*k)`.
    pub fn forward<T: Real>(&self, weight: &[T], bias: &[T], x: &[T]) -> Vec<T> {
        let u = self.unfold();
        let hw = self.h * self.w;
        let mut col = vec![T::ZERO; u.rows() * hw];
        gemm(u.rows(), self.cin, hw, weight, true, x, false, T::ZERO, &mut col);
        let ohw = u.image_h * u.image_w;
        let mut out = vec![T::ZERO; self.cout * ohw];
        for (row, &b) in out.chunks_exact_mut(ohw).zip(bias) {
            row.fill(b);
        }
        u.scatter_add(&col, &mut out);
        out
    }

    pub fn backward<T: Real>(
        &self,
        weight: &[T],
        x: &[T],
        dout: &[T],
        dweight: &mut [T],
        dbias: &mut [T],
    ) -> Vec<T> {
        let u = self.unfold();
        let hw = self.h * self.w;
        let ohw = u.image_h * u.image_w;
        for (row, db) in dout.chunks_exact(ohw).zip(dbias.iter_mut()) {
            *db += row.iter().copied().sum::<T>();
        }
        let mut col = vec![T::ZERO; u.rows() * hw];
        u.gather(dout, &mut col);
        gemm(self.cin, hw, u.rows(), x, false, &col, true, T::ONE, dweight);
        let mut dx = vec![T::ZERO; self.cin * hw];
        gemm(self.cin, u.rows(), hw, weight, false, &col, false, T::ZERO, &mut dx);
        dx
    }
}

pub fn relu_inplace<T: Real>(x: &mut [T]) {
    for v in x {
        if *v < T::ZERO {
            *v = T::ZERO;
        }
    }
}

/// Zeroes `grad` where the post-activation value is not positive.
pub fn relu_backward<T: Real>(activation: &[T], grad: &mut [T]) {
    for (g, &a) in grad.iter_mut().zip(activation) {
        if a <= T::ZERO {
            *g = T::ZERO;
        }
    }
}

/// 2x2 max pooling with stride 2. Returns pooled values and, per output,
/// the flat index of the winning input (first maximum in scan order).
pub fn maxpool2<T: Real>(x: &[T], c: usize, h: usize, w: usize) -> (Vec<T>, Vec<u32>) {
    assert!(h % 2 == 0 && w % 2 == 0, "maxpool2 needs even dimensions");
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut idx = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = ch * h * w;
        for i in 0..oh {
            for j in 0..ow {
                let mut best = base + 2 * i * w + 2 * j;
                for cand in [best + 1, best + w, best + w + 1] {
                    if x[cand] > x[best] {
                        best = cand;
                    }
                }
                out.push(x[best]);
                idx.push(best as u32);
            }
        }
    }
    (out, idx)
}

pub fn maxpool2_backward<T: Real>(dout: &[T], idx: &[u32], input_len: usize) -> Vec<T> {
    let mut dx = vec![T::ZERO; input_len];
    for (&g, &i) in dout.iter().zip(idx) {
        dx[i as usize] += g;
    }
    dx
}

/// Per-pixel softmax over `c` channels of a `c x n` logit block; returns
/// probabilities in the same layout.
pub fn softmax<T: Real>(logits: &[T], c: usize) -> Vec<T> {
    let n = logits.len() / c;
    let mut p = vec![T::ZERO; logits.len()];
    for px in 0..n {
        let mut m = logits[px];
        for ch in 1..c {
            let v = logits[ch * n + px];
            if v > m {
                m = v;
            }
        }
        let mut sum = T::ZERO;
        for ch in 0..c {
            let e = (logits[ch * n + px] - m).exp();
            p[ch * n + px] = e;
            sum += e;
        }
        for ch in 0..c {
            p[ch * n + px] = p[ch * n + px] / sum;
        }
    }
    p
}

/// Summed cross-entropy of `labels` under softmax(`logits`) and its gradient
/// with respect to the logits, both scaled by `scale`.
pub fn softmax_cross_entropy<T: Real>(logits: &[T], c: usize, labels: &[u8], scale: T) -> (f64, Vec<T>) {
    let n = labels.len();
    assert_eq!(logits.len(), c * n, "logits/labels size mismatch");
    let mut grad = softmax(logits, c);
    let mut loss = 0.0;
    let tiny = 1e-300f64;
    for (px, &l) in labels.iter().enumerate() {
        let l = l as usize;
        assert!(l < c, "label {l} out of range for {c} classes");
        loss -= grad[l * n + px].to_f64().max(tiny).ln();
        grad[l * n + px] -= T::ONE;
    }
    for g in &mut grad {
        *g *= scale;
    }
    (loss * scale.to_f64(), grad)
}
