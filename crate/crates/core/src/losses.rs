//! Laplacian pyramids and the Lap-L1 + MSE reconstruction loss.
//!
//! Smoothing uses the 5-tap binomial kernel `[1, 4, 6, 4, 1] / 16` applied
//! separably with mirror (reflect-101) boundaries, followed by keeping even
//! indices. Band-pass levels use nearest-neighbour upsampling of the next
//! coarser level, so summing the upsampled levels back reconstructs the
//! input exactly.
//!
//! Per-level L1 distances are means rather than sums, which makes the loss
//! independent of image resolution. Level 0 is the finest and has weight 1;
//! level `j` is weighted by `4^{-j}`.

use std::sync::Arc;

use crate::error::{LcmError, Result};
use crate::tape::{Mat, Tape, Var};
use crate::tensor::{cst, Real, Tensor};

pub const BINOMIAL_5: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

/// Weight of the MSE term added to Lap-L1 in the training loss.
pub const MSE_WEIGHT: f64 = 1.0;

/// Mirror an index into `0..n` without repeating the edge sample.
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut r = i.rem_euclid(period);
    if r >= n as isize {
        r = period - r;
    }
    r as usize
}

/// Number of pyramid levels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PyramidSpec {
    pub levels: usize,
}

impl PyramidSpec {
    pub fn new(levels: usize) -> Result<Self> {
        if levels == 0 {
            return Err(LcmError::Config("pyramid needs at least one level".into()));
        }
        Ok(PyramidSpec { levels })
    }

    /// `floor(log2(min(h, w))) − 2`, at least 1.
    pub fn default_for(h: usize, w: usize) -> Self {
        let levels = (max_levels(h, w) as isize - 2).max(1) as usize;
        PyramidSpec { levels }
    }

    pub fn validate_for(&self, h: usize, w: usize) -> Result<()> {
        let max = max_levels(h, w);
        if self.levels > max {
            return Err(LcmError::Geometry(format!(
                "{} pyramid levels requested but a {h}×{w} image supports at most {max}",
                self.levels
            )));
        }
        Ok(())
    }
}

fn max_levels(h: usize, w: usize) -> usize {
    let m = h.min(w).max(1);
    (usize::BITS - 1 - m.leading_zeros()) as usize
}

/// Smoothing + even-index decimation as a `ceil(n/2) × n` matrix.
pub fn smooth_down_matrix<T: Real>(n: usize) -> Mat<T> {
    let out = n.div_ceil(2);
    let mut m = Mat::zeros(out, n);
    for i in 0..out {
        for (t, &k) in BINOMIAL_5.iter().enumerate() {
            let src = reflect_index(2 * i as isize + t as isize - 2, n);
            m.add_at(i, src, cst(k));
        }
    }
    m
}

fn down_var<T: Real>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
    let [_, _, h, w] = tape.value(x).nchw()?;
    if h < 2 || w < 2 {
        return Err(LcmError::Geometry(format!(
            "cannot downsample a {h}×{w} image"
        )));
    }
    tape.resample(x, Arc::new(smooth_down_matrix(h)), Arc::new(smooth_down_matrix(w)))
}

fn up_to_var<T: Real>(tape: &mut Tape<T>, x: Var, h: usize, w: usize) -> Result<Var> {
    let [_, _, hs, ws] = tape.value(x).nchw()?;
    tape.resample(x, Arc::new(Mat::nearest(hs, h)), Arc::new(Mat::nearest(ws, w)))
}

/// One smoothing + decimation step on the tape.
pub fn gaussian_down_var<T: Real>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
    down_var(tape, x)
}

pub fn gaussian_down<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let v = tape.constant(x.clone());
    let out = down_var(&mut tape, v)?;
    Ok(tape.value(out).clone())
}

/// Pyramid levels of `x`, finest first; the last entry is the low-pass residual.
pub fn laplacian_pyramid_var<T: Real>(tape: &mut Tape<T>, x: Var, spec: &PyramidSpec) -> Result<Vec<Var>> {
    let [_, _, h, w] = tape.value(x).nchw()?;
    spec.validate_for(h, w)?;
    let mut levels = Vec::with_capacity(spec.levels);
    let mut current = x;
    for _ in 0..spec.levels - 1 {
        let [_, _, ch, cw] = tape.value(current).nchw()?;
        let down = down_var(tape, current)?;
        let up = up_to_var(tape, down, ch, cw)?;
        levels.push(tape.sub(current, up)?);
        current = down;
    }
    levels.push(current);
    Ok(levels)
}

pub fn laplacian_pyramid<T: Real>(x: &Tensor<T>, spec: &PyramidSpec) -> Result<Vec<Tensor<T>>> {
    let mut tape = Tape::new();
    let v = tape.constant(x.clone());
    let levels = laplacian_pyramid_var(&mut tape, v, spec)?;
    Ok(levels.into_iter().map(|l| tape.value(l).clone()).collect())
}

/// Inverse of [`laplacian_pyramid`]: upsample-and-add from the coarsest level.
pub fn reconstruct_pyramid<T: Real>(levels: &[Tensor<T>]) -> Result<Tensor<T>> {
    let (last, rest) = levels
        .split_last()
        .ok_or_else(|| LcmError::Contract("empty pyramid".into()))?;
    let mut tape = Tape::new();
    let mut acc = tape.constant(last.clone());
    for level in rest.iter().rev() {
        let [_, _, h, w] = level.nchw()?;
        let up = up_to_var(&mut tape, acc, h, w)?;
        let l = tape.constant(level.clone());
        acc = tape.add(up, l)?;
    }
    Ok(tape.value(acc).clone())
}

/// `Σ_j 4^{-j} · mean|L^j(a − b)|` on the tape.
pub fn lap_l1_var<T: Real>(tape: &mut Tape<T>, a: Var, b: Var, spec: &PyramidSpec) -> Result<Var> {
    let diff = tape.sub(a, b)?;
    lap_l1_of_diff(tape, diff, spec)
}

pub(crate) fn lap_l1_of_diff<T: Real>(tape: &mut Tape<T>, diff: Var, spec: &PyramidSpec) -> Result<Var> {
    let levels = laplacian_pyramid_var(tape, diff, spec)?;
    let mut total: Option<Var> = None;
    for (j, level) in levels.into_iter().enumerate() {
        let a = tape.abs(level);
        let m = tape.mean(a);
        let weighted = tape.scale(m, cst(0.25f64.powi(j as i32)));
        total = Some(match total {
            Some(t) => tape.add(t, weighted)?,
            None => weighted,
        });
    }
    Ok(total.expect("at least one level"))
}

pub fn lap_l1<T: Real>(x1: &Tensor<T>, x2: &Tensor<T>, spec: &PyramidSpec) -> Result<T> {
    x1.expect_same_shape(x2)?;
    let mut tape = Tape::new();
    let a = tape.constant(x1.clone());
    let b = tape.constant(x2.clone());
    let l = lap_l1_var(&mut tape, a, b, spec)?;
    Ok(tape.value(l).data()[0])
}

pub fn mse_var<T: Real>(tape: &mut Tape<T>, a: Var, b: Var) -> Result<Var> {
    let diff = tape.sub(a, b)?;
    let sq = tape.square(diff);
    Ok(tape.mean(sq))
}

/// Training loss: Lap-L1 plus [`MSE_WEIGHT`] times the mean squared error.
pub fn combined_loss_var<T: Real>(tape: &mut Tape<T>, x_hat: Var, x: Var, spec: &PyramidSpec) -> Result<Var> {
    let lap = lap_l1_var(tape, x_hat, x, spec)?;
    let mse = mse_var(tape, x_hat, x)?;
    let mse = tape.scale(mse, cst(MSE_WEIGHT));
    tape.add(lap, mse)
}

pub fn combined_loss<T: Real>(x_hat: &Tensor<T>, x: &Tensor<T>, spec: &PyramidSpec) -> Result<T> {
    x_hat.expect_same_shape(x)?;
    let mut tape = Tape::new();
    let a = tape.constant(x_hat.clone());
    let b = tape.constant(x.clone());
    let l = combined_loss_var(&mut tape, a, b, spec)?;
    Ok(tape.value(l).data()[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_img(dims: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::uniform(dims, 0.0, 1.0, &mut rng).unwrap()
    }

    #[test]
    fn reflect_index_mirrors_without_edge_repeat() {
        let got: Vec<usize> = (-3..7).map(|i| reflect_index(i, 4)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
        assert_eq!(reflect_index(-2, 2), 0);
        assert_eq!(reflect_index(5, 1), 0);
    }

    #[test]
    fn constant_image_stays_constant() {
        let x = Tensor::<f64>::full(&[1, 2, 6, 5], 0.7).unwrap();
        let d = gaussian_down(&x).unwrap();
        assert_eq!(d.dims(), &[1, 2, 3, 3]);
        assert!(d.data().iter().all(|v| (v - 0.7).abs() < 1e-12));
    }

    #[test]
    fn two_by_two_goes_to_one_pixel() {
        let x = Tensor::<f64>::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(gaussian_down(&x).unwrap().dims(), &[1, 1, 1, 1]);
        let one = Tensor::<f64>::full(&[1, 1, 1, 4], 1.0).unwrap();
        assert!(gaussian_down(&one).is_err());
    }

    #[test]
    fn single_level_pyramid_is_identity() {
        let x = rand_img(&[1, 3, 8, 8], 1);
        let p = laplacian_pyramid(&x, &PyramidSpec::new(1).unwrap()).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p[0], x);
    }

    #[test]
    fn pyramid_reconstructs_input() {
        for (h, w, levels) in [(8, 8, 3), (13, 9, 3), (32, 32, 5), (64, 48, 5)] {
            let x = rand_img(&[2, 3, h, w], h as u64);
            let p = laplacian_pyramid(&x, &PyramidSpec::new(levels).unwrap()).unwrap();
            let r = reconstruct_pyramid(&p).unwrap();
            let err = x.zip_map(&r, |a, b| (a - b).abs()).unwrap().max_abs();
            assert!(err <= 1e-12, "{h}×{w}: {err}");
        }
    }

    #[test]
    fn too_many_levels_rejected() {
        let x = rand_img(&[1, 1, 8, 8], 3);
        assert!(laplacian_pyramid(&x, &PyramidSpec::new(4).unwrap()).is_err());
        assert!(laplacian_pyramid(&x, &PyramidSpec::new(3).unwrap()).is_ok());
    }

    #[test]
    fn default_levels() {
        assert_eq!(PyramidSpec::default_for(32, 32).levels, 3);
        assert_eq!(PyramidSpec::default_for(128, 128).levels, 5);
        assert_eq!(PyramidSpec::default_for(4, 4).levels, 1);
    }

    #[test]
    fn lap_l1_single_level_is_mean_abs() {
        let a = rand_img(&[1, 3, 4, 4], 4);
        let b = rand_img(&[1, 3, 4, 4], 5);
        let spec = PyramidSpec::new(1).unwrap();
        let expect = a.zip_map(&b, |x, y| (x - y).abs()).unwrap().mean();
        assert!((lap_l1(&a, &b, &spec).unwrap() - expect).abs() < 1e-12);
        assert_eq!(lap_l1(&a, &a, &spec).unwrap(), 0.0);
    }

    #[test]
    fn combined_loss_constant_offset() {
        let x = rand_img(&[1, 3, 4, 4], 6);
        let c = 0.3;
        let x_hat = x.map(|v| v + c);
        let got = combined_loss(&x_hat, &x, &PyramidSpec::new(1).unwrap()).unwrap();
        assert!((got - (c + c * c)).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let a = rand_img(&[1, 3, 4, 4], 7);
        let b = rand_img(&[1, 3, 4, 2], 7);
        assert!(lap_l1(&a, &b, &PyramidSpec::new(1).unwrap()).is_err());
        assert!(combined_loss(&a, &b, &PyramidSpec::new(1).unwrap()).is_err());
    }
}
