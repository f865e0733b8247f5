//! Latent convolutional models.
//!
//! Images are modelled as `x = g_θ(f_φ(s))`: a shared hourglass generator
//! `g_θ` applied to the output of a small per-image ConvNet `f_φ` fed with
//! fixed noise `s`. The parameters `φ`, confined to a box, are the image's
//! latent code. Training fits `θ` and every `φ_i` jointly by projected SGD;
//! restoration of a degraded image searches `φ` (or the latent map `z`
//! directly) for the image whose degradation best explains the observation.

pub mod data;
pub mod degrade;
pub mod error;
pub mod gradcheck;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod nets;
pub mod param;
pub mod restore;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{LcmError, Result};
pub use tensor::{Real, Shape, Tensor};
