//! Scaled-down architecture presets.
//!
//! Latent nets stack unpadded 3×3 convolutions with channel widths doubling
//! per layer. Generators are hourglasses with two skip connections and
//! normalization + LeakyReLU after every convolution except the output one,
//! which is squashed by a sigmoid.

use super::arch::{Activation, ArchSpec, LayerSpec};
use crate::error::{LcmError, Result};

pub const PRESETS: &[&str] = &["toy32", "tiny16"];

/// `(latent net, generator)` pair for a named preset.
///
/// * `toy32`: 4×16×16 noise → 8×8×8 latent map; generator
///   8×8 → 2×2 → 32×32 RGB.
/// * `tiny16`: 2×8×8 noise → 4×4×4 latent map; generator
///   4×4 → 1×1 → 16×16 RGB. Small enough for exhaustive gradient checks.
pub fn toy_arch_templates(preset: &str) -> Result<(ArchSpec, ArchSpec)> {
    let pair = match preset {
        "toy32" => (
            latent_net("toy32-latent", 4, 16, &[8, 16, 32], 8),
            hourglass("toy32-generator", [8, 8, 8], [24, 32, 48], [32, 24, 16, 16], 32),
        ),
        "tiny16" => (
            latent_net("tiny16-latent", 2, 8, &[4], 4),
            hourglass("tiny16-generator", [4, 4, 4], [4, 4, 6], [4, 4, 4, 4], 16),
        ),
        other => return Err(LcmError::UnknownPreset(other.to_string())),
    };
    pair.0.validate()?;
    pair.1.validate()?;
    Ok(pair)
}

fn latent_net(name: &str, c_noise: usize, size: usize, hidden: &[usize], c_z: usize) -> ArchSpec {
    let mut layers = Vec::new();
    let mut c = c_noise;
    for &h in hidden {
        layers.push(LayerSpec::conv(c, h, 3, 1, 0));
        c = h;
    }
    layers.push(LayerSpec::conv(c, c_z, 3, 1, 0).activation(Activation::None));
    let out = size - 2 * layers.len();
    ArchSpec {
        name: name.to_string(),
        input: [c_noise, size, size],
        input_vector: None,
        layers,
        output: [c_z, out, out],
    }
}

/// Encoder: same-size conv, then two stride-2 convs. Decoder: four ×2
/// upsampling convs; the second and third receive the encoder maps of
/// matching size. Output conv maps to RGB.
fn hourglass(name: &str, z: [usize; 3], enc: [usize; 3], dec: [usize; 4], out_size: usize) -> ArchSpec {
    let c_z = z[0];
    let layers = vec![
        LayerSpec::conv(c_z, enc[0], 3, 1, 1).normed(),
        LayerSpec::conv(enc[0], enc[1], 3, 2, 1).normed(),
        LayerSpec::conv(enc[1], enc[2], 3, 2, 1).normed(),
        LayerSpec::up(enc[2], dec[0], 3, 2).normed(),
        LayerSpec::up(dec[0] + enc[1], dec[1], 3, 2).normed().skip(1),
        LayerSpec::up(dec[1] + enc[0], dec[2], 3, 2).normed().skip(0),
        LayerSpec::up(dec[2], dec[3], 3, 2).normed(),
        LayerSpec::conv(dec[3], 3, 3, 1, 1).activation(Activation::Sigmoid),
    ];
    ArchSpec {
        name: name.to_string(),
        input: z,
        input_vector: None,
        layers,
        output: [3, out_size, out_size],
    }
}
