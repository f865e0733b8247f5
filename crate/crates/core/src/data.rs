//! In-memory image collections and a seeded synthetic dataset.

use rand::Rng;

use crate::error::{LcmError, Result};
use crate::rng::{stream_rng, streams};
use crate::tensor::{cst, Real, Tensor};

/// Ordered images; position `i` is the latent index of image `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T: Real = f32> {
    pub ids: Vec<String>,
    /// Each image is `[1, C, H, W]` with values in `[0, 1]`.
    pub images: Vec<Tensor<T>>,
}

impl<T: Real> Dataset<T> {
    pub fn new(ids: Vec<String>, images: Vec<Tensor<T>>) -> Result<Self> {
        if ids.len() != images.len() {
            return Err(LcmError::Contract(format!(
                "{} ids for {} images",
                ids.len(),
                images.len()
            )));
        }
        if let Some(first) = images.first() {
            let dims = first.nchw()?;
            if dims[0] != 1 {
                return Err(LcmError::Shape("dataset images must have batch extent 1".into()));
            }
            for img in &images {
                if img.nchw()? != dims {
                    return Err(LcmError::Shape(format!(
                        "dataset mixes shapes {} and {}",
                        first.shape(),
                        img.shape()
                    )));
                }
            }
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(LcmError::Contract(format!("duplicate image id `{dup}`")));
        }
        Ok(Dataset { ids, images })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// `[C, H, W]` of the images.
    pub fn image_shape(&self) -> Result<[usize; 3]> {
        let first = self
            .images
            .first()
            .ok_or_else(|| LcmError::Contract("dataset is empty".into()))?;
        let [_, c, h, w] = first.nchw()?;
        Ok([c, h, w])
    }

    /// Images at `indices` stacked into one batch.
    pub fn batch(&self, indices: &[usize]) -> Result<Tensor<T>> {
        let items: Vec<&Tensor<T>> = indices
            .iter()
            .map(|&i| {
                self.images
                    .get(i)
                    .ok_or_else(|| LcmError::Contract(format!("image index {i} out of range {}", self.len())))
            })
            .collect::<Result<_>>()?;
        Tensor::stack(&items)
    }

    /// Pixelwise mean image.
    pub fn mean_image(&self) -> Result<Tensor<T>> {
        let mut acc = Tensor::zeros_like(
            self.images
                .first()
                .ok_or_else(|| LcmError::Contract("dataset is empty".into()))?,
        );
        for img in &self.images {
            acc.add_assign(img)?;
        }
        let inv = T::one() / cst(self.len() as f64);
        Ok(acc.map(|v| v * inv))
    }

    /// Subset in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut ids = Vec::with_capacity(indices.len());
        let mut images = Vec::with_capacity(indices.len());
        for &i in indices {
            let img = self
                .images
                .get(i)
                .ok_or_else(|| LcmError::Contract(format!("image index {i} out of range {}", self.len())))?;
            ids.push(self.ids[i].clone());
            images.push(img.clone());
        }
        Ok(Dataset { ids, images })
    }
}

/// Seeded synthetic RGB images: a two-colour linear gradient background
/// with an antialiased disc near the centre.
pub fn synthetic_shapes<T: Real>(n: usize, size: usize, seed: u64) -> Result<Dataset<T>> {
    if size == 0 {
        return Err(LcmError::Geometry("image size must be ≥ 1".into()));
    }
    let mut ids = Vec::with_capacity(n);
    let mut images = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = stream_rng(seed, streams::DATA, i as u64);
        let color = |rng: &mut rand_chacha::ChaCha8Rng| -> [f64; 3] {
            [rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9)]
        };
        let bg_a = color(&mut rng);
        let bg_b = color(&mut rng);
        let disc = color(&mut rng);
        let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let s = size as f64;
        let cx = rng.gen_range(0.35..0.65) * s;
        let cy = rng.gen_range(0.35..0.65) * s;
        let r = rng.gen_range(0.15..0.3) * s;
        let (dx, dy) = (angle.cos(), angle.sin());
        let mut data = vec![T::zero(); 3 * size * size];
        for y in 0..size {
            for x in 0..size {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let t = (((px / s - 0.5) * dx + (py / s - 0.5) * dy) / std::f64::consts::SQRT_2 + 0.5).clamp(0.0, 1.0);
                let dist = ((px - cx).powi(2) + (py - cy).powi(2)).sqrt();
                let cover = (r - dist + 0.5).clamp(0.0, 1.0);
                for c in 0..3 {
                    let bg = bg_a[c] * (1.0 - t) + bg_b[c] * t;
                    data[(c * size + y) * size + x] = cst(bg * (1.0 - cover) + disc[c] * cover);
                }
            }
        }
        ids.push(format!("synth{i:05}"));
        images.push(Tensor::from_vec(&[1, 3, size, size], data)?);
    }
    Dataset::new(ids, images)
}

/// Seeded images of `blobs` overlapping Gaussian colour blobs on a flat
/// background. Each blob has its own centre, width and colour, so the
/// collection has roughly `6 · blobs` degrees of freedom, far more than
/// [`synthetic_shapes`].
pub fn synthetic_blobs<T: Real>(n: usize, size: usize, blobs: usize, seed: u64) -> Result<Dataset<T>> {
    if size == 0 {
        return Err(LcmError::Geometry("image size must be ≥ 1".into()));
    }
    let s = size as f64;
    let mut ids = Vec::with_capacity(n);
    let mut images = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = stream_rng(seed, streams::DATA, (1 << 32) + i as u64);
        let bg: [f64; 3] = [rng.gen_range(0.3..0.7), rng.gen_range(0.3..0.7), rng.gen_range(0.3..0.7)];
        let mut acc: Vec<f64> = (0..3 * size * size).map(|k| bg[k / (size * size)]).collect();
        for _ in 0..blobs {
            let cx = rng.gen_range(0.0..s);
            let cy = rng.gen_range(0.0..s);
            let sigma = rng.gen_range(0.04..0.12) * s;
            let amp: [f64; 3] = [rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3)];
            for y in 0..size {
                for x in 0..size {
                    let d2 = (x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2);
                    let g = (-d2 / (2.0 * sigma * sigma)).exp();
                    for (c, a) in amp.iter().enumerate() {
                        acc[(c * size + y) * size + x] += a * g;
                    }
                }
            }
        }
        let data = acc.into_iter().map(|v| cst(v.clamp(0.0, 1.0))).collect();
        ids.push(format!("blobs{i:05}"));
        images.push(Tensor::from_vec(&[1, 3, size, size], data)?);
    }
    Dataset::new(ids, images)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_is_seeded_and_in_range() {
        let a = synthetic_shapes::<f32>(4, 16, 1).unwrap();
        assert_eq!(a, synthetic_shapes(4, 16, 1).unwrap());
        assert_ne!(a.images[0], a.images[1]);
        for img in &a.images {
            assert_eq!(img.dims(), &[1, 3, 16, 16]);
            assert!(img.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn blobs_are_seeded_and_in_range() {
        let a = synthetic_blobs::<f64>(3, 12, 5, 2).unwrap();
        assert_eq!(a, synthetic_blobs(3, 12, 5, 2).unwrap());
        assert_ne!(a, synthetic_blobs(3, 12, 5, 3).unwrap());
        assert!(a.images.iter().all(|m| m.data().iter().all(|v| (0.0..=1.0).contains(v))));
    }

    #[test]
    fn mean_and_batch() {
        let d = synthetic_shapes::<f64>(3, 8, 2).unwrap();
        let m = d.mean_image().unwrap();
        let manual = (d.images[0].data()[5] + d.images[1].data()[5] + d.images[2].data()[5]) / 3.0;
        assert!((m.data()[5] - manual).abs() < 1e-12);
        assert_eq!(d.batch(&[2, 0]).unwrap().dims(), &[2, 3, 8, 8]);
        assert!(d.batch(&[3]).is_err());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let img = Tensor::<f32>::zeros(&[1, 3, 2, 2]).unwrap();
        assert!(Dataset::new(vec!["a".into(), "a".into()], vec![img.clone(), img]).is_err());
    }
}
