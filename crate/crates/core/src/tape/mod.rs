//! Reverse-mode differentiation over a fixed set of layer primitives.
//!
//! A [`Tape`] records every primitive application in execution order, so the
//! node list is topologically sorted by construction. [`Tape::backward`]
//! walks it in reverse and returns the gradient of a scalar node with
//! respect to every node created through [`Tape::param`].

mod kernels;

use std::sync::Arc;

pub use kernels::Mat;
use kernels::ConvGeom;

use crate::error::{LcmError, Result};
use crate::tensor::{cst, Real, Tensor};

pub const NORM_EPS: f64 = 1e-5;
pub const NORM_MOMENTUM: f64 = 0.1;

/// Handle of a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Running per-channel statistics of a normalization layer.
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Real> NormStats<T> {
    pub fn new(channels: usize) -> Self {
        NormStats {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }

    /// Exponential moving update from the moments of one batch.
    pub fn update(&mut self, batch: &BatchMoments<T>, momentum: T) {
        let keep = T::one() - momentum;
        for c in 0..self.mean.len() {
            self.mean[c] = keep * self.mean[c] + momentum * batch.mean[c];
            self.var[c] = keep * self.var[c] + momentum * batch.unbiased_var[c];
        }
    }
}

/// Moments measured on one training batch by a normalization layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchMoments<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub unbiased_var: Vec<T>,
}

/// Statistics source of a normalization layer.
#[derive(Clone, Copy, Debug)]
pub enum NormMode<'a, T> {
    /// Normalize by the moments of the current batch.
    Batch,
    /// Normalize by frozen running statistics.
    Running(&'a NormStats<T>),
}

enum Op<T> {
    Constant,
    Param,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        geom: ConvGeom,
    },
    Upsample {
        input: Var,
        scale: usize,
    },
    LeakyRelu {
        input: Var,
        slope: T,
    },
    Sigmoid {
        input: Var,
    },
    ChannelNorm {
        input: Var,
        gain: Var,
        shift: Var,
        xhat: Tensor<T>,
        inv_std: Vec<T>,
        batch: bool,
    },
    ConcatChannels {
        a: Var,
        b: Var,
    },
    ConcatBatch {
        parts: Vec<Var>,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Reshape {
        input: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    MulConst {
        input: Var,
        factor: Tensor<T>,
    },
    Scale {
        input: Var,
        k: T,
    },
    Square {
        input: Var,
    },
    Abs {
        input: Var,
    },
    Sum {
        input: Var,
    },
    Resample {
        input: Var,
        rows: Arc<Mat<T>>,
        cols: Arc<Mat<T>>,
    },
    ChannelMean {
        input: Var,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Ordered record of primitive applications.
pub struct Tape<T: Real = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient for a node, `None` when the loss does not reach it or the
    /// node is not a parameter path.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for a parameter node, zeros when the loss does not depend on it.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor<T>) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros_like(like))
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = match op {
            Op::Param => true,
            Op::Constant => false,
            _ => inputs.iter().any(|i| self.nodes[i.0].requires_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Constant, &[])
    }

    /// Differentiable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Param, &[])
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let x = self.value(input);
        let w = self.value(weight);
        let b = self.value(bias);
        let geom = ConvGeom::new(&x.nchw()?, w.dims(), stride, padding)?;
        if b.dims() != [geom.c_out] {
            return Err(LcmError::Shape(format!(
                "conv bias must have shape [{}], got {}",
                geom.c_out,
                b.shape()
            )));
        }
        let out = kernels::conv2d_forward(&geom, x, w, b)?;
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            },
            &[input, weight, bias],
        ))
    }

    /// Nearest-neighbour upsampling by an integer factor.
    pub fn upsample(&mut self, input: Var, scale: usize) -> Result<Var> {
        if scale == 0 {
            return Err(LcmError::Geometry("upsample scale must be ≥ 1".into()));
        }
        let out = kernels::upsample_nearest(self.value(input), scale)?;
        Ok(self.push(out, Op::Upsample { input, scale }, &[input]))
    }

    /// Nearest upsampling by `scale` followed by a size-preserving convolution.
    pub fn upsample_conv(&mut self, input: Var, weight: Var, bias: Var, scale: usize) -> Result<Var> {
        if scale < 2 {
            return Err(LcmError::Geometry(format!("upsample_conv needs scale ≥ 2, got {scale}")));
        }
        let k = *self.value(weight).dims().get(2).unwrap_or(&0);
        if k % 2 == 0 {
            return Err(LcmError::Geometry(format!(
                "size-preserving convolution needs an odd kernel, got {k}"
            )));
        }
        let up = self.upsample(input, scale)?;
        self.conv2d(up, weight, bias, 1, k / 2)
    }

    pub fn leaky_relu(&mut self, input: Var, slope: T) -> Result<Var> {
        if !(slope >= T::zero() && slope < T::one()) {
            return Err(LcmError::Contract(format!(
                "leaky_relu slope must lie in [0, 1), got {slope}"
            )));
        }
        let out = self.value(input).map(|v| if v > T::zero() { v } else { slope * v });
        Ok(self.push(out, Op::LeakyRelu { input, slope }, &[input]))
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        let out = self.value(input).map(|v| T::one() / (T::one() + (-v).exp()));
        self.push(out, Op::Sigmoid { input }, &[input])
    }

    /// Per-channel normalization with affine gain/shift. In
    /// [`NormMode::Batch`] the moments of the batch are also returned so the
    /// caller can fold them into running statistics.
    pub fn channel_norm(
        &mut self,
        input: Var,
        gain: Var,
        shift: Var,
        mode: NormMode<'_, T>,
    ) -> Result<(Var, Option<BatchMoments<T>>)> {
        let x = self.value(input);
        let [n, c, h, w] = x.nchw()?;
        for (name, v) in [("gain", gain), ("shift", shift)] {
            if self.value(v).dims() != [c] {
                return Err(LcmError::Shape(format!(
                    "channel_norm {name} must have shape [{c}], got {}",
                    self.value(v).shape()
                )));
            }
        }
        let eps: T = cst(NORM_EPS);
        let (mean, var, moments) = match mode {
            NormMode::Batch => {
                let (mean, var) = kernels::channel_moments(x)?;
                let m = n * h * w;
                let unbiased_var = if m > 1 {
                    let f: T = cst(m as f64 / (m as f64 - 1.0));
                    var.iter().map(|&v| v * f).collect()
                } else {
                    var.clone()
                };
                let moments = BatchMoments {
                    mean: mean.clone(),
                    var: var.clone(),
                    unbiased_var,
                };
                (mean, var, Some(moments))
            }
            NormMode::Running(stats) => {
                if stats.mean.len() != c || stats.var.len() != c {
                    return Err(LcmError::Shape(format!(
                        "running statistics cover {} channels, input has {c}",
                        stats.mean.len()
                    )));
                }
                (stats.mean.clone(), stats.var.clone(), None)
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let hw = h * w;
        let mut xhat = Tensor::zeros_like(x);
        let mut out = Tensor::zeros_like(x);
        let g = self.value(gain).data();
        let s = self.value(shift).data();
        for (i, ((xv, xh), o)) in x
            .data()
            .iter()
            .zip(xhat.data_mut())
            .zip(out.data_mut())
            .enumerate()
        {
            let ch = (i / hw) % c;
            *xh = (*xv - mean[ch]) * inv_std[ch];
            *o = g[ch] * *xh + s[ch];
        }
        let batch = moments.is_some();
        let var_out = self.push(
            out,
            Op::ChannelNorm {
                input,
                gain,
                shift,
                xhat,
                inv_std,
                batch,
            },
            &[input, gain, shift],
        );
        Ok((var_out, moments))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let [na, ca, ha, wa] = self.value(a).nchw()?;
        let [nb, cb, hb, wb] = self.value(b).nchw()?;
        if (na, ha, wa) != (nb, hb, wb) {
            return Err(LcmError::Shape(format!(
                "cannot concatenate channels of {} and {}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let hw = ha * wa;
        let mut out = Vec::with_capacity(na * (ca + cb) * hw);
        let (da, db) = (self.value(a).data(), self.value(b).data());
        for n in 0..na {
            out.extend_from_slice(&da[n * ca * hw..(n + 1) * ca * hw]);
            out.extend_from_slice(&db[n * cb * hw..(n + 1) * cb * hw]);
        }
        let t = Tensor::from_vec(&[na, ca + cb, ha, wa], out)?;
        Ok(self.push(t, Op::ConcatChannels { a, b }, &[a, b]))
    }

    pub fn concat_batch(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Tensor::stack(&tensors)?;
        Ok(self.push(
            out,
            Op::ConcatBatch {
                parts: parts.to_vec(),
            },
            parts,
        ))
    }

    /// Fully connected layer: `[N, d] → [N, out]` with weight `[out, d]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let x = self.value(input);
        let w = self.value(weight);
        let b = self.value(bias);
        let (&[n, d], &[out_dim, wd]) = (x.dims(), w.dims()) else {
            return Err(LcmError::Shape(format!(
                "linear expects [N, d] input and [out, d] weight, got {} and {}",
                x.shape(),
                w.shape()
            )));
        };
        if wd != d || b.dims() != [out_dim] {
            return Err(LcmError::Shape(format!(
                "linear weight {} / bias {} incompatible with input {}",
                w.shape(),
                b.shape(),
                x.shape()
            )));
        }
        let mut out = Vec::with_capacity(n * out_dim);
        for _ in 0..n {
            out.extend_from_slice(b.data());
        }
        T::gemm(
            n,
            d,
            out_dim,
            T::one(),
            x.data(),
            d as isize,
            1,
            w.data(),
            1,
            d as isize,
            T::one(),
            &mut out,
            out_dim as isize,
            1,
        );
        let t = Tensor::from_vec(&[n, out_dim], out)?;
        Ok(self.push(
            t,
            Op::Linear {
                input,
                weight,
                bias,
            },
            &[input, weight, bias],
        ))
    }

    pub fn reshape(&mut self, input: Var, dims: &[usize]) -> Result<Var> {
        let out = self.value(input).clone().reshape(dims)?;
        Ok(self.push(out, Op::Reshape { input }, &[input]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(out, Op::Add { a, b }, &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        Ok(self.push(out, Op::Sub { a, b }, &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(out, Op::Mul { a, b }, &[a, b]))
    }

    /// Elementwise product with a constant tensor of the same shape.
    pub fn mul_const(&mut self, input: Var, factor: Tensor<T>) -> Result<Var> {
        let out = self.value(input).zip_map(&factor, |x, y| x * y)?;
        Ok(self.push(out, Op::MulConst { input, factor }, &[input]))
    }

    pub fn scale(&mut self, input: Var, k: T) -> Var {
        let out = self.value(input).map(|v| v * k);
        self.push(out, Op::Scale { input, k }, &[input])
    }

    pub fn square(&mut self, input: Var) -> Var {
        let out = self.value(input).map(|v| v * v);
        self.push(out, Op::Square { input }, &[input])
    }

    pub fn abs(&mut self, input: Var) -> Var {
        let out = self.value(input).map(|v| v.abs());
        self.push(out, Op::Abs { input }, &[input])
    }

    /// Sum of all entries, as a scalar node.
    pub fn sum(&mut self, input: Var) -> Var {
        let out = Tensor::scalar(self.value(input).sum());
        self.push(out, Op::Sum { input }, &[input])
    }

    /// Mean of all entries, as a scalar node.
    pub fn mean(&mut self, input: Var) -> Var {
        let n: T = cst(self.value(input).len() as f64);
        let s = self.sum(input);
        self.scale(s, T::one() / n)
    }

    /// Separable linear resampling `R · X · Cᵀ` applied to each image plane.
    pub fn resample(&mut self, input: Var, rows: Arc<Mat<T>>, cols: Arc<Mat<T>>) -> Result<Var> {
        let out = kernels::resample_forward(self.value(input), &rows, &cols)?;
        Ok(self.push(out, Op::Resample { input, rows, cols }, &[input]))
    }

    /// Average over the channel axis: `[N, C, H, W] → [N, 1, H, W]`.
    pub fn channel_mean(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let [n, c, h, w] = x.nchw()?;
        let hw = h * w;
        let inv: T = cst(1.0 / c as f64);
        let mut out = vec![T::zero(); n * hw];
        for b in 0..n {
            for ch in 0..c {
                let plane = &x.data()[(b * c + ch) * hw..(b * c + ch + 1) * hw];
                for (o, &v) in out[b * hw..(b + 1) * hw].iter_mut().zip(plane) {
                    *o += v;
                }
            }
        }
        out.iter_mut().for_each(|v| *v = *v * inv);
        let t = Tensor::from_vec(&[n, 1, h, w], out)?;
        Ok(self.push(t, Op::ChannelMean { input }, &[input]))
    }

    /// Gradients of the scalar node `loss` with respect to every node on a
    /// path from a [`Tape::param`] leaf.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if loss.0 >= self.nodes.len() {
            return Err(LcmError::Contract(format!("loss {loss:?} is not on this tape")));
        }
        if self.value(loss).len() != 1 {
            return Err(LcmError::Contract(format!(
                "backward needs a scalar loss, got shape {}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).dims(), T::one())?);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        // Only parameter-dependent nodes carry gradients.
        for (g, node) in grads.iter_mut().zip(&self.nodes) {
            if !node.requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let mut acc = |v: Var, d: Tensor<T>| -> Result<()> {
            if !self.nodes[v.0].requires_grad {
                return Ok(());
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&d)?,
                slot @ None => *slot = Some(d),
            }
            Ok(())
        };
        match &node.op {
            Op::Constant | Op::Param => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            } => {
                let (dx, dw, db) =
                    kernels::conv2d_backward(geom, self.value(*input), self.value(*weight), g);
                acc(*input, dx)?;
                acc(*weight, dw)?;
                acc(*bias, db)?;
            }
            Op::Upsample { input, scale } => {
                let dims = self.value(*input).dims().to_vec();
                acc(*input, kernels::upsample_nearest_backward(g, &dims, *scale))?;
            }
            Op::LeakyRelu { input, slope } => {
                let s = *slope;
                let d = self
                    .value(*input)
                    .zip_map(g, |x, gv| if x > T::zero() { gv } else { s * gv })?;
                acc(*input, d)?;
            }
            Op::Sigmoid { input } => {
                let d = node.value.zip_map(g, |y, gv| gv * y * (T::one() - y))?;
                acc(*input, d)?;
            }
            Op::ChannelNorm {
                input,
                gain,
                shift,
                xhat,
                inv_std,
                batch,
            } => {
                let [n, c, h, w] = xhat.nchw()?;
                let hw = h * w;
                let gain_v = self.value(*gain).data();
                let mut dgain = vec![T::zero(); c];
                let mut dshift = vec![T::zero(); c];
                // Σ dxhat and Σ dxhat·xhat per channel.
                let mut sum_dxh = vec![T::zero(); c];
                let mut sum_dxh_xh = vec![T::zero(); c];
                for (i, (&gv, &xh)) in g.data().iter().zip(xhat.data()).enumerate() {
                    let ch = (i / hw) % c;
                    dgain[ch] += gv * xh;
                    dshift[ch] += gv;
                    let dxh = gv * gain_v[ch];
                    sum_dxh[ch] += dxh;
                    sum_dxh_xh[ch] += dxh * xh;
                }
                let m: T = cst((n * hw) as f64);
                let mut dx = Tensor::zeros_like(xhat);
                for (i, ((d, &gv), &xh)) in dx
                    .data_mut()
                    .iter_mut()
                    .zip(g.data())
                    .zip(xhat.data())
                    .enumerate()
                {
                    let ch = (i / hw) % c;
                    let dxh = gv * gain_v[ch];
                    *d = if *batch {
                        inv_std[ch] * (dxh - sum_dxh[ch] / m - xh * sum_dxh_xh[ch] / m)
                    } else {
                        inv_std[ch] * dxh
                    };
                }
                acc(*input, dx)?;
                acc(*gain, Tensor::from_vec(&[c], dgain)?)?;
                acc(*shift, Tensor::from_vec(&[c], dshift)?)?;
            }
            Op::ConcatChannels { a, b } => {
                let [n, ca, h, w] = self.value(*a).nchw()?;
                let cb = self.value(*b).dims()[1];
                let hw = h * w;
                let mut da = Vec::with_capacity(n * ca * hw);
                let mut db = Vec::with_capacity(n * cb * hw);
                for item in g.data().chunks((ca + cb) * hw) {
                    da.extend_from_slice(&item[..ca * hw]);
                    db.extend_from_slice(&item[ca * hw..]);
                }
                acc(*a, Tensor::from_vec(&[n, ca, h, w], da)?)?;
                acc(*b, Tensor::from_vec(&[n, cb, h, w], db)?)?;
            }
            Op::ConcatBatch { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let dims = self.value(p).dims().to_vec();
                    let len = self.value(p).len();
                    acc(p, Tensor::from_vec(&dims, g.data()[offset..offset + len].to_vec())?)?;
                    offset += len;
                }
            }
            Op::Linear {
                input,
                weight,
                bias,
            } => {
                let x = self.value(*input);
                let w = self.value(*weight);
                let (n, d) = (x.dims()[0], x.dims()[1]);
                let out_dim = w.dims()[0];
                let mut dx = Tensor::zeros_like(x);
                let mut dw = Tensor::zeros_like(w);
                // dX = G · W
                T::gemm(
                    n, out_dim, d, T::one(), g.data(), out_dim as isize, 1, w.data(), d as isize, 1,
                    T::zero(), dx.data_mut(), d as isize, 1,
                );
                // dW = Gᵀ · X
                T::gemm(
                    out_dim, n, d, T::one(), g.data(), 1, out_dim as isize, x.data(), d as isize, 1,
                    T::zero(), dw.data_mut(), d as isize, 1,
                );
                let mut db = vec![T::zero(); out_dim];
                for row in g.data().chunks(out_dim) {
                    for (b, &v) in db.iter_mut().zip(row) {
                        *b += v;
                    }
                }
                acc(*input, dx)?;
                acc(*weight, dw)?;
                acc(*bias, Tensor::from_vec(&[out_dim], db)?)?;
            }
            Op::Reshape { input } => {
                let dims = self.value(*input).dims().to_vec();
                acc(*input, g.clone().reshape(&dims)?)?;
            }
            Op::Add { a, b } => {
                acc(*a, g.clone())?;
                acc(*b, g.clone())?;
            }
            Op::Sub { a, b } => {
                acc(*a, g.clone())?;
                acc(*b, g.map(|v| -v))?;
            }
            Op::Mul { a, b } => {
                acc(*a, g.zip_map(self.value(*b), |gv, y| gv * y)?)?;
                acc(*b, g.zip_map(self.value(*a), |gv, x| gv * x)?)?;
            }
            Op::MulConst { input, factor } => {
                acc(*input, g.zip_map(factor, |gv, f| gv * f)?)?;
            }
            Op::Scale { input, k } => {
                let k = *k;
                acc(*input, g.map(|v| v * k))?;
            }
            Op::Square { input } => {
                let two: T = cst(2.0);
                acc(*input, self.value(*input).zip_map(g, |x, gv| two * x * gv)?)?;
            }
            Op::Abs { input } => {
                let d = self.value(*input).zip_map(g, |x, gv| {
                    if x > T::zero() {
                        gv
                    } else if x < T::zero() {
                        -gv
                    } else {
                        T::zero()
                    }
                })?;
                acc(*input, d)?;
            }
            Op::Sum { input } => {
                let gv = g.data()[0];
                acc(*input, Tensor::full(self.value(*input).dims(), gv)?)?;
            }
            Op::Resample { input, rows, cols } => {
                let dims = self.value(*input).dims().to_vec();
                acc(*input, kernels::resample_backward(g, &dims, rows, cols))?;
            }
            Op::ChannelMean { input } => {
                let [n, c, h, w] = self.value(*input).nchw()?;
                let hw = h * w;
                let inv: T = cst(1.0 / c as f64);
                let mut dx = Vec::with_capacity(n * c * hw);
                for b in 0..n {
                    let plane = &g.data()[b * hw..(b + 1) * hw];
                    for _ in 0..c {
                        dx.extend(plane.iter().map(|&v| v * inv));
                    }
                }
                acc(*input, Tensor::from_vec(&[n, c, h, w], dx)?)?;
            }
        }
        Ok(())
    }
}
