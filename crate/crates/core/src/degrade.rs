//! Degradation operators and the data-fit energies used for restoration.
//!
//! Every energy is a mean squared error in the observation domain:
//! masked pixels for inpainting, the Lanczos-downsampled image for
//! superresolution and the channel average for colorization. An optional
//! `λ · ‖z‖²` term penalizes the latent norm.

use std::path::Path;
use std::sync::Arc;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LcmError, Result};
use crate::losses::{lap_l1_of_diff, reflect_index, PyramidSpec};
use crate::tape::{Mat, Tape, Var};
use crate::tensor::{cst, Real, Tensor};

/// Lanczos window radius.
pub const LANCZOS_A: f64 = 3.0;

/// Binary mask over image pixels: 1 = known, 0 = missing.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    h: usize,
    w: usize,
    known: Vec<bool>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
    Top,
    Bottom,
}

impl std::str::FromStr for Side {
    type Err = LcmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "left" => Ok(Side::Left),
            "right" => Ok(Side::Right),
            "top" => Ok(Side::Top),
            "bottom" => Ok(Side::Bottom),
            other => Err(LcmError::Config(format!("unknown half-mask side `{other}`"))),
        }
    }
}

impl Mask {
    pub fn ones(h: usize, w: usize) -> Self {
        Mask {
            h,
            w,
            known: vec![true; h * w],
        }
    }

    pub fn from_known(h: usize, w: usize, known: Vec<bool>) -> Result<Self> {
        if known.len() != h * w || h == 0 || w == 0 {
            return Err(LcmError::Shape(format!(
                "mask of {h}×{w} needs {} entries, got {}",
                h * w,
                known.len()
            )));
        }
        Ok(Mask { h, w, known })
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn is_known(&self, y: usize, x: usize) -> bool {
        self.known[y * self.w + x]
    }

    pub fn known_count(&self) -> usize {
        self.known.iter().filter(|&&k| k).count()
    }

    pub fn missing_count(&self) -> usize {
        self.known.len() - self.known_count()
    }

    pub fn invert(&self) -> Self {
        Mask {
            h: self.h,
            w: self.w,
            known: self.known.iter().map(|k| !k).collect(),
        }
    }

    /// Mask as a `[1, 1, H, W]` tensor of zeros and ones.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        let data = self.known.iter().map(|&k| if k { T::one() } else { T::zero() }).collect();
        Tensor::from_vec(&[1, 1, self.h, self.w], data).expect("mask extents are non-zero")
    }

    /// Broadcast to `[n, c, H, W]`.
    pub fn expand<T: Real>(&self, n: usize, c: usize) -> Tensor<T> {
        let plane: Vec<T> = self.known.iter().map(|&k| if k { T::one() } else { T::zero() }).collect();
        let mut data = Vec::with_capacity(n * c * plane.len());
        for _ in 0..n * c {
            data.extend_from_slice(&plane);
        }
        Tensor::from_vec(&[n, c, self.h, self.w], data).expect("mask extents are non-zero")
    }

    /// Reads a single-channel PNG; values ≥ 128 are known pixels.
    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| LcmError::Decode {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        let gray = img.to_luma8();
        let (w, h) = gray.dimensions();
        let known = gray.pixels().map(|p| p.0[0] >= 128).collect();
        Mask::from_known(h as usize, w as usize, known)
    }

    /// Writes a single-channel PNG: 0 = missing, 255 = known.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let buf: Vec<u8> = self.known.iter().map(|&k| if k { 255 } else { 0 }).collect();
        let img = image::GrayImage::from_raw(self.w as u32, self.h as u32, buf)
            .expect("buffer length matches mask");
        img.save(path).map_err(|e| match e {
            image::ImageError::IoError(io) => LcmError::io(path, io),
            other => LcmError::Decode {
                path: path.to_path_buf(),
                detail: other.to_string(),
            },
        })
    }
}

/// Zeros on a centered `hole_h × hole_w` block.
pub fn center_mask(h: usize, w: usize, hole_h: usize, hole_w: usize) -> Result<Mask> {
    if hole_h > h || hole_w > w {
        return Err(LcmError::Geometry(format!(
            "hole {hole_h}×{hole_w} does not fit in a {h}×{w} image"
        )));
    }
    let (top, left) = ((h - hole_h) / 2, (w - hole_w) / 2);
    let mut m = Mask::ones(h, w);
    for y in top..top + hole_h {
        for x in left..left + hole_w {
            m.known[y * w + x] = false;
        }
    }
    Ok(m)
}

/// Zeros on one half of the image, split at `floor(w/2)` or `floor(h/2)`.
pub fn half_mask(h: usize, w: usize, side: Side) -> Mask {
    let mut m = Mask::ones(h, w);
    for y in 0..h {
        for x in 0..w {
            let missing = match side {
                Side::Left => x < w / 2,
                Side::Right => x >= w / 2,
                Side::Top => y < h / 2,
                Side::Bottom => y >= h / 2,
            };
            m.known[y * w + x] = !missing;
        }
    }
    m
}

/// Exactly `round(fraction · h · w)` missing pixels drawn without replacement.
pub fn random_mask(h: usize, w: usize, missing_fraction: f64, seed: u64) -> Result<Mask> {
    if !(0.0..=1.0).contains(&missing_fraction) {
        return Err(LcmError::Config(format!(
            "missing fraction must be in [0, 1], got {missing_fraction}"
        )));
    }
    let total = h * w;
    let missing = (missing_fraction * total as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = Mask::ones(h, w);
    for idx in sample(&mut rng, total, missing) {
        m.known[idx] = false;
    }
    Ok(m)
}

fn sinc(t: f64) -> f64 {
    if t == 0.0 {
        1.0
    } else {
        let p = std::f64::consts::PI * t;
        p.sin() / p
    }
}

/// Lanczos-3 window `sinc(t) · sinc(t/3)` for `|t| < 3`, zero outside.
pub fn lanczos3(t: f64) -> f64 {
    if t.abs() < LANCZOS_A {
        sinc(t) * sinc(t / LANCZOS_A)
    } else {
        0.0
    }
}

/// 1-D Lanczos-3 decimation `n → n / factor` as a matrix.
///
/// The kernel is stretched by `factor` (antialiasing): output `i` is
/// centered at source coordinate `(i + ½) · factor` and source sample `j`
/// at `j + ½`, so the tap argument is `(j + ½ − (i + ½) · factor) / factor`.
/// Out-of-range taps are mirrored and each row is normalized to sum 1.
pub fn lanczos_matrix<T: Real>(n: usize, factor: usize) -> Result<Mat<T>> {
    if factor == 0 || n % factor != 0 {
        return Err(LcmError::Geometry(format!(
            "extent {n} is not divisible by downsampling factor {factor}"
        )));
    }
    let out = n / factor;
    let f = factor as f64;
    let mut rows = vec![vec![0.0f64; n]; out];
    for (i, row) in rows.iter_mut().enumerate() {
        let center = (i as f64 + 0.5) * f;
        let lo = (center - LANCZOS_A * f).floor() as isize - 1;
        let hi = (center + LANCZOS_A * f).ceil() as isize + 1;
        for j in lo..=hi {
            let t = (j as f64 + 0.5 - center) / f;
            let wgt = lanczos3(t);
            if wgt != 0.0 {
                row[reflect_index(j, n)] += wgt;
            }
        }
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= total);
    }
    let mut m = Mat::zeros(out, n);
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            m.add_at(i, j, cst(v));
        }
    }
    Ok(m)
}

pub fn lanczos_down_var<T: Real>(tape: &mut Tape<T>, x: Var, factor: usize) -> Result<Var> {
    let [_, _, h, w] = tape.value(x).nchw()?;
    let rows = Arc::new(lanczos_matrix(h, factor)?);
    let cols = Arc::new(lanczos_matrix(w, factor)?);
    tape.resample(x, rows, cols)
}

pub fn lanczos_down<T: Real>(x: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let v = tape.constant(x.clone());
    let out = lanczos_down_var(&mut tape, v, factor)?;
    Ok(tape.value(out).clone())
}

pub fn to_gray_var<T: Real>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
    let c = tape.value(x).nchw()?[1];
    if c != 3 {
        return Err(LcmError::Shape(format!("grayscale projection needs 3 channels, got {c}")));
    }
    tape.channel_mean(x)
}

/// Channel average `(r + g + b) / 3`.
pub fn to_gray<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let v = tape.constant(x.clone());
    let out = to_gray_var(&mut tape, v)?;
    Ok(tape.value(out).clone())
}

#[derive(Clone, Debug, PartialEq)]
pub enum Degradation {
    Inpaint(Mask),
    Superres { factor: usize },
    Colorize,
}

impl Degradation {
    pub fn task_name(&self) -> &'static str {
        match self {
            Degradation::Inpaint(_) => "inpaint",
            Degradation::Superres { .. } => "sr",
            Degradation::Colorize => "color",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DegradationSpec {
    pub kind: Degradation,
    /// Weight λ of the squared latent norm.
    pub latent_penalty: f64,
    /// Adds Lap-L1 of the observation-domain residual to the energy.
    pub pyramid_term: bool,
}

impl DegradationSpec {
    pub fn new(kind: Degradation) -> Result<Self> {
        let spec = DegradationSpec {
            kind,
            latent_penalty: 0.0,
            pyramid_term: false,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Inpainting with every pixel observed.
    pub fn identity(h: usize, w: usize) -> Self {
        DegradationSpec {
            kind: Degradation::Inpaint(Mask::ones(h, w)),
            latent_penalty: 0.0,
            pyramid_term: false,
        }
    }

    pub fn with_penalty(mut self, lambda: f64) -> Result<Self> {
        self.latent_penalty = lambda;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.latent_penalty >= 0.0 && self.latent_penalty.is_finite()) {
            return Err(LcmError::Config(format!(
                "latent penalty must be a finite value ≥ 0, got {}",
                self.latent_penalty
            )));
        }
        if let Degradation::Superres { factor } = self.kind {
            if ![2, 4, 8].contains(&factor) {
                return Err(LcmError::Config(format!(
                    "superresolution factor must be 2, 4 or 8, got {factor}"
                )));
            }
        }
        Ok(())
    }

    /// Observation `y` for a clean image `x`. Missing inpainting pixels are zero.
    pub fn apply<T: Real>(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let [n, c, h, w] = x.nchw()?;
        match &self.kind {
            Degradation::Inpaint(mask) => {
                check_mask(mask, h, w)?;
                x.zip_map(&mask.expand(n, c), |a, m| a * m)
            }
            Degradation::Superres { factor } => lanczos_down(x, *factor),
            Degradation::Colorize => to_gray(x),
        }
    }

    /// Shape of the observation for an image of shape `dims`.
    pub fn observation_dims(&self, dims: [usize; 4]) -> Result<[usize; 4]> {
        let [n, c, h, w] = dims;
        match &self.kind {
            Degradation::Inpaint(mask) => {
                check_mask(mask, h, w)?;
                Ok(dims)
            }
            Degradation::Superres { factor } => {
                if h % factor != 0 || w % factor != 0 {
                    return Err(LcmError::Geometry(format!(
                        "{h}×{w} is not divisible by factor {factor}"
                    )));
                }
                Ok([n, c, h / factor, w / factor])
            }
            Degradation::Colorize => {
                if c != 3 {
                    return Err(LcmError::Shape(format!("colorization needs RGB, got {c} channels")));
                }
                Ok([n, 1, h, w])
            }
        }
    }
}

fn check_mask(mask: &Mask, h: usize, w: usize) -> Result<()> {
    if mask.height() != h || mask.width() != w {
        return Err(LcmError::Shape(format!(
            "mask is {}×{} but image is {h}×{w}",
            mask.height(),
            mask.width()
        )));
    }
    Ok(())
}

/// Energy on the tape, split into its parts.
#[derive(Clone, Copy, Debug)]
pub struct EnergyVars {
    pub total: Var,
    /// Observation-domain MSE (without penalty or pyramid term).
    pub data: Var,
    /// True when the mask has no known pixel; the data term is then 0.
    pub degenerate: bool,
}

/// `E(x | y) + λ‖z‖²` on the tape. `latent_norm_sq` must be a scalar node.
pub fn energy_var<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    y: &Tensor<T>,
    spec: &DegradationSpec,
    latent_norm_sq: Option<Var>,
) -> Result<EnergyVars> {
    spec.validate()?;
    let dims = tape.value(x).nchw()?;
    let obs = spec.observation_dims(dims)?;
    if y.dims() != obs {
        return Err(LcmError::Shape(format!(
            "observation has shape {} but the {} degradation of {:?} gives {:?}",
            y.shape(),
            spec.kind.task_name(),
            dims,
            obs
        )));
    }
    let [n, c, _, _] = dims;
    let y_var = tape.constant(y.clone());
    let mut degenerate = false;
    let (data, residual) = match &spec.kind {
        Degradation::Inpaint(mask) => {
            let m = mask.expand::<T>(n, c);
            let known = mask.known_count() * n * c;
            let diff = tape.sub(x, y_var)?;
            let masked = tape.mul_const(diff, m)?;
            let sq = tape.square(masked);
            let s = tape.sum(sq);
            let data = if known == 0 {
                degenerate = true;
                log::warn!("inpainting mask has no known pixels; data term is 0");
                tape.scale(s, T::zero())
            } else {
                tape.scale(s, T::one() / cst(known as f64))
            };
            (data, masked)
        }
        Degradation::Superres { factor } => {
            let d = lanczos_down_var(tape, x, *factor)?;
            let diff = tape.sub(d, y_var)?;
            let sq = tape.square(diff);
            (tape.mean(sq), diff)
        }
        Degradation::Colorize => {
            let g = to_gray_var(tape, x)?;
            let diff = tape.sub(g, y_var)?;
            let sq = tape.square(diff);
            (tape.mean(sq), diff)
        }
    };
    let mut total = data;
    if spec.pyramid_term {
        let [_, _, h, w] = tape.value(residual).nchw()?;
        let lap = lap_l1_of_diff(tape, residual, &PyramidSpec::default_for(h, w))?;
        total = tape.add(total, lap)?;
    }
    if let Some(z2) = latent_norm_sq {
        if spec.latent_penalty > 0.0 {
            let pen = tape.scale(z2, cst(spec.latent_penalty));
            total = tape.add(total, pen)?;
        }
    }
    Ok(EnergyVars {
        total,
        data,
        degenerate,
    })
}

/// Energy value of a candidate image `x` against observation `y`.
pub fn energy<T: Real>(x: &Tensor<T>, y: &Tensor<T>, spec: &DegradationSpec, latent_norm_sq: T) -> Result<T> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let z2 = tape.constant(Tensor::scalar(latent_norm_sq));
    let e = energy_var(&mut tape, xv, y, spec, Some(z2))?;
    Ok(tape.value(e.total).data()[0])
}
