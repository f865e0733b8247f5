//! 8-bit PNG images as `[1, C, H, W]` tensors in `[0, 1]`.

use std::path::Path;

use image::{ColorType, DynamicImage, GrayImage, RgbImage};

use crate::error::{LcmError, Result};
use crate::tensor::{cst, Real, Tensor};

/// Decodes an 8-bit grayscale or RGB PNG (alpha is dropped), converts it to
/// `channels` (1 averages RGB, 3 replicates gray) and resizes both axes
/// independently with bilinear interpolation to `height × width`.
pub fn load_image<T: Real>(path: &Path, channels: usize, height: usize, width: usize) -> Result<Tensor<T>> {
    if !matches!(channels, 1 | 3) || height == 0 || width == 0 {
        return Err(LcmError::Shape(format!("cannot load into {channels}×{height}×{width}")));
    }
    let src = load_image_native::<T>(path)?;
    let [_, src_c, h0, w0] = src.nchw()?;
    let planes = src.data();
    let planes = match (src_c, channels) {
        (1, 3) => planes.repeat(3),
        (3, 1) => {
            let third: T = cst(1.0 / 3.0);
            (0..h0 * w0)
                .map(|i| (planes[i] + planes[h0 * w0 + i] + planes[2 * h0 * w0 + i]) * third)
                .collect()
        }
        _ => planes.to_vec(),
    };
    let src = Tensor::from_vec(&[1, channels, h0, w0], planes)?;
    if (h0, w0) == (height, width) {
        Ok(src)
    } else {
        resize_bilinear(&src, height, width)
    }
}

/// Decodes a PNG at its own size: 1 channel for gray, 3 for RGB.
pub fn load_image_native<T: Real>(path: &Path) -> Result<Tensor<T>> {
    let bytes = std::fs::read(path).map_err(|e| LcmError::io(path, e))?;
    let format = image::guess_format(&bytes).map_err(|e| LcmError::Decode {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    if format != image::ImageFormat::Png {
        return Err(LcmError::UnsupportedFormat {
            path: path.to_path_buf(),
            detail: format!("{format:?} (only PNG is read)"),
        });
    }
    let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png).map_err(|e| LcmError::Decode {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    let (src_c, raw) = match img.color() {
        ColorType::L8 | ColorType::La8 => (1, img.to_luma8().into_raw()),
        ColorType::Rgb8 | ColorType::Rgba8 => (3, img.to_rgb8().into_raw()),
        other => {
            return Err(LcmError::UnsupportedFormat {
                path: path.to_path_buf(),
                detail: format!("{other:?}; only 8-bit gray or RGB PNGs are supported"),
            })
        }
    };
    let (w0, h0) = (img.width() as usize, img.height() as usize);
    let mut planes = vec![T::zero(); src_c * h0 * w0];
    for y in 0..h0 {
        for x in 0..w0 {
            for c in 0..src_c {
                planes[(c * h0 + y) * w0 + x] = cst::<T>(raw[(y * w0 + x) * src_c + c] as f64 / 255.0);
            }
        }
    }
    Tensor::from_vec(&[1, src_c, h0, w0], planes)
}

/// Bilinear resampling with half-pixel centres and edge clamping; the two
/// axes are scaled independently.
pub fn resize_bilinear<T: Real>(x: &Tensor<T>, height: usize, width: usize) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.nchw()?;
    if height == 0 || width == 0 {
        return Err(LcmError::Geometry("resize target must be non-empty".into()));
    }
    let taps = |out: usize, inp: usize| -> Vec<(usize, usize, f64)> {
        (0..out)
            .map(|o| {
                let s = ((o as f64 + 0.5) * inp as f64 / out as f64 - 0.5).clamp(0.0, (inp - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(inp - 1);
                (i0, i1, s - i0 as f64)
            })
            .collect()
    };
    let ty = taps(height, h);
    let tx = taps(width, w);
    let src = x.data();
    let mut out = Vec::with_capacity(n * c * height * width);
    for p in 0..n * c {
        let plane = &src[p * h * w..(p + 1) * h * w];
        for &(y0, y1, fy) in &ty {
            for &(x0, x1, fx) in &tx {
                let v = |y: usize, xx: usize| plane[y * w + xx].to_f64().unwrap_or(f64::NAN);
                let top = v(y0, x0) * (1.0 - fx) + v(y0, x1) * fx;
                let bottom = v(y1, x0) * (1.0 - fx) + v(y1, x1) * fx;
                out.push(cst(top * (1.0 - fy) + bottom * fy));
            }
        }
    }
    Tensor::from_vec(&[n, c, height, width], out)
}

/// Quantizes to 8 bits with round-half-up and clamping to `[0, 255]`.
pub fn quantize<T: Real>(v: T) -> u8 {
    let f = v.to_f64().unwrap_or(0.0);
    if f.is_nan() {
        return 0;
    }
    (f * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Writes a `[1, C, H, W]` tensor (C = 1 or 3) as an 8-bit PNG.
pub fn save_image<T: Real>(x: &Tensor<T>, path: &Path) -> Result<()> {
    let [n, c, h, w] = x.nchw()?;
    if n != 1 || !matches!(c, 1 | 3) {
        return Err(LcmError::Shape(format!("cannot save {} as an image", x.shape())));
    }
    let d = x.data();
    let mut raw = vec![0u8; c * h * w];
    for y in 0..h {
        for xx in 0..w {
            for ch in 0..c {
                raw[(y * w + xx) * c + ch] = quantize(d[(ch * h + y) * w + xx]);
            }
        }
    }
    let img = if c == 1 {
        DynamicImage::ImageLuma8(GrayImage::from_raw(w as u32, h as u32, raw).expect("buffer sized for image"))
    } else {
        DynamicImage::ImageRgb8(RgbImage::from_raw(w as u32, h as u32, raw).expect("buffer sized for image"))
    };
    img.save_with_format(path, image::ImageFormat::Png).map_err(|e| match e {
        image::ImageError::IoError(io) => LcmError::io(path, io),
        other => LcmError::Decode {
            path: path.to_path_buf(),
            detail: other.to_string(),
        },
    })
}
