//! Forward/backward kernels behind the tape ops.

use std::sync::Arc;

use crate::error::{LcmError, Result};
use crate::tensor::{cst, Real, Tensor};

/// Geometry of a 2-D convolution.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub padding: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvGeom {
    pub fn new(input: &[usize; 4], weight: &[usize], stride: usize, padding: usize) -> Result<Self> {
        let [n, c_in, h, w] = *input;
        let &[c_out, wc_in, kh, kw] = weight else {
            return Err(LcmError::Shape(format!(
                "conv weight must have order 4, got {weight:?}"
            )));
        };
        if kh != kw {
            return Err(LcmError::Shape(format!("only square kernels supported, got {kh}×{kw}")));
        }
        if wc_in != c_in {
            return Err(LcmError::Shape(format!(
                "conv input has {c_in} channels but weight expects {wc_in}"
            )));
        }
        if stride == 0 {
            return Err(LcmError::Geometry("stride must be ≥ 1".into()));
        }
        let span_h = h + 2 * padding;
        let span_w = w + 2 * padding;
        if span_h < kh || span_w < kw {
            return Err(LcmError::Geometry(format!(
                "kernel {kh}×{kw} larger than padded input {span_h}×{span_w}"
            )));
        }
        Ok(ConvGeom {
            n,
            c_in,
            h,
            w,
            c_out,
            k: kh,
            stride,
            padding,
            h_out: (span_h - kh) / stride + 1,
            w_out: (span_w - kw) / stride + 1,
        })
    }

    fn patch(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn pixels(&self) -> usize {
        self.h_out * self.w_out
    }
}

fn im2col<T: Real>(g: &ConvGeom, x: &[T], col: &mut [T]) {
    let (k, s, p) = (g.k, g.stride as isize, g.padding as isize);
    let pix = g.pixels();
    for ci in 0..g.c_in {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut col[row * pix..(row + 1) * pix];
                for oy in 0..g.h_out {
                    let iy = oy as isize * s - p + ky as isize;
                    let line = &mut dst[oy * g.w_out..(oy + 1) * g.w_out];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, d) in line.iter_mut().enumerate() {
                        let ix = ox as isize * s - p + kx as isize;
                        *d = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(g: &ConvGeom, col: &[T], dx: &mut [T]) {
    let (k, s, p) = (g.k, g.stride as isize, g.padding as isize);
    let pix = g.pixels();
    for ci in 0..g.c_in {
        let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &col[row * pix..(row + 1) * pix];
                for oy in 0..g.h_out {
                    let iy = oy as isize * s - p + ky as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for ox in 0..g.w_out {
                        let ix = ox as isize * s - p + kx as isize;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        plane[iy as usize * g.w + ix as usize] += src[oy * g.w_out + ox];
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<T: Real>(
    g: &ConvGeom,
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (kk, pix) = (g.patch(), g.pixels());
    let mut col = vec![T::zero(); kk * pix];
    let mut out = vec![T::zero(); g.n * g.c_out * pix];
    let in_len = g.c_in * g.h * g.w;
    for n in 0..g.n {
        im2col(g, &x.data()[n * in_len..(n + 1) * in_len], &mut col);
        let dst = &mut out[n * g.c_out * pix..(n + 1) * g.c_out * pix];
        for (co, chunk) in dst.chunks_mut(pix).enumerate() {
            chunk.fill(bias.data()[co]);
        }
        T::gemm(
            g.c_out,
            kk,
            pix,
            T::one(),
            weight.data(),
            kk as isize,
            1,
            &col,
            pix as isize,
            1,
            T::one(),
            dst,
            pix as isize,
            1,
        );
    }
    Tensor::from_vec(&[g.n, g.c_out, g.h_out, g.w_out], out)
}

/// Returns (d input, d weight, d bias).
pub(crate) fn conv2d_backward<T: Real>(
    g: &ConvGeom,
    x: &Tensor<T>,
    weight: &Tensor<T>,
    dout: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (kk, pix) = (g.patch(), g.pixels());
    let in_len = g.c_in * g.h * g.w;
    let mut col = vec![T::zero(); kk * pix];
    let mut dcol = vec![T::zero(); kk * pix];
    let mut dx = Tensor::zeros_like(x);
    let mut dw = Tensor::zeros_like(weight);
    let mut db = vec![T::zero(); g.c_out];
    for n in 0..g.n {
        let go = &dout.data()[n * g.c_out * pix..(n + 1) * g.c_out * pix];
        for (co, chunk) in go.chunks(pix).enumerate() {
            db[co] += chunk.iter().copied().sum::<T>();
        }
        im2col(g, &x.data()[n * in_len..(n + 1) * in_len], &mut col);
        // dW += dOut · colᵀ
        T::gemm(
            g.c_out,
            pix,
            kk,
            T::one(),
            go,
            pix as isize,
            1,
            &col,
            1,
            pix as isize,
            T::one(),
            dw.data_mut(),
            kk as isize,
            1,
        );
        // dcol = Wᵀ · dOut
        T::gemm(
            kk,
            g.c_out,
            pix,
            T::one(),
            weight.data(),
            1,
            kk as isize,
            go,
            pix as isize,
            1,
            T::zero(),
            &mut dcol,
            pix as isize,
            1,
        );
        col2im(g, &dcol, &mut dx.data_mut()[n * in_len..(n + 1) * in_len]);
    }
    let db = Tensor::from_vec(&[g.c_out], db).expect("bias gradient shape");
    (dx, dw, db)
}

pub(crate) fn upsample_nearest<T: Real>(x: &Tensor<T>, scale: usize) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.nchw()?;
    let (ho, wo) = (h * scale, w * scale);
    let mut out = Vec::with_capacity(n * c * ho * wo);
    for plane in x.data().chunks(h * w) {
        for oy in 0..ho {
            let row = &plane[(oy / scale) * w..(oy / scale + 1) * w];
            for ox in 0..wo {
                out.push(row[ox / scale]);
            }
        }
    }
    Tensor::from_vec(&[n, c, ho, wo], out)
}

pub(crate) fn upsample_nearest_backward<T: Real>(
    dout: &Tensor<T>,
    in_dims: &[usize],
    scale: usize,
) -> Tensor<T> {
    let (h, w) = (in_dims[2], in_dims[3]);
    let (ho, wo) = (h * scale, w * scale);
    let mut dx = Tensor::zeros(in_dims).expect("input shape");
    for (src, dst) in dout.data().chunks(ho * wo).zip(dx.data_mut().chunks_mut(h * w)) {
        for oy in 0..ho {
            for ox in 0..wo {
                dst[(oy / scale) * w + ox / scale] += src[oy * wo + ox];
            }
        }
    }
    dx
}

/// Dense row-major matrix, used for separable 1-D resampling operators.
#[derive(Clone, Debug, PartialEq)]
pub struct Mat<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Real> Mat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn add_at(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] += v;
    }

    /// Nearest-neighbour upsampling from `from` to `to` samples: output `i`
    /// reads input `floor(i · from / to)`.
    pub fn nearest(from: usize, to: usize) -> Self {
        let mut m = Mat::zeros(to, from);
        for i in 0..to {
            m.add_at(i, (i * from) / to, T::one());
        }
        m
    }
}

/// Applies `out = R · X · Cᵀ` to every image plane.
pub(crate) fn resample_forward<T: Real>(
    x: &Tensor<T>,
    rows: &Arc<Mat<T>>,
    cols: &Arc<Mat<T>>,
) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.nchw()?;
    if rows.cols != h || cols.cols != w {
        return Err(LcmError::Shape(format!(
            "resampler expects {}×{} planes, got {h}×{w}",
            rows.cols, cols.cols
        )));
    }
    let (ho, wo) = (rows.rows, cols.rows);
    let mut tmp = vec![T::zero(); h * wo];
    let mut out = vec![T::zero(); n * c * ho * wo];
    for (src, dst) in x.data().chunks(h * w).zip(out.chunks_mut(ho * wo)) {
        // tmp = X · Cᵀ
        T::gemm(
            h, w, wo, T::one(), src, w as isize, 1, &cols.data, 1, w as isize, T::zero(), &mut tmp,
            wo as isize, 1,
        );
        // out = R · tmp
        T::gemm(
            ho, h, wo, T::one(), &rows.data, h as isize, 1, &tmp, wo as isize, 1, T::zero(), dst,
            wo as isize, 1,
        );
    }
    Tensor::from_vec(&[n, c, ho, wo], out)
}

pub(crate) fn resample_backward<T: Real>(
    dout: &Tensor<T>,
    in_dims: &[usize],
    rows: &Mat<T>,
    cols: &Mat<T>,
) -> Tensor<T> {
    let (h, w) = (in_dims[2], in_dims[3]);
    let (ho, wo) = (rows.rows, cols.rows);
    let mut tmp = vec![T::zero(); h * wo];
    let mut dx = Tensor::zeros(in_dims).expect("input shape");
    for (src, dst) in dout.data().chunks(ho * wo).zip(dx.data_mut().chunks_mut(h * w)) {
        // tmp = Rᵀ · dOut
        T::gemm(
            h, ho, wo, T::one(), &rows.data, 1, h as isize, src, wo as isize, 1, T::zero(), &mut tmp,
            wo as isize, 1,
        );
        // dX = tmp · C
        T::gemm(
            h, wo, w, T::one(), &tmp, wo as isize, 1, &cols.data, w as isize, 1, T::zero(), dst,
            w as isize, 1,
        );
    }
    dx
}

/// Per-channel statistics over batch and spatial axes: (mean, biased var).
pub(crate) fn channel_moments<T: Real>(x: &Tensor<T>) -> Result<(Vec<T>, Vec<T>)> {
    let [n, c, h, w] = x.nchw()?;
    let hw = h * w;
    let count: T = cst((n * hw) as f64);
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for b in 0..n {
        for ch in 0..c {
            let plane = &x.data()[(b * c + ch) * hw..(b * c + ch + 1) * hw];
            mean[ch] += plane.iter().copied().sum::<T>();
        }
    }
    mean.iter_mut().for_each(|m| *m = *m / count);
    for b in 0..n {
        for ch in 0..c {
            let plane = &x.data()[(b * c + ch) * hw..(b * c + ch + 1) * hw];
            var[ch] += plane.iter().map(|&v| (v - mean[ch]) * (v - mean[ch])).sum::<T>();
        }
    }
    var.iter_mut().for_each(|v| *v = *v / count);
    Ok((mean, var))
}
