//! Restoration by latent optimization against a frozen generator.
//!
//! Three parametrizations of the generator input are supported: the
//! parameters of a boxed latent net (`manifold`), the latent map itself
//! (`zspace`), and a GLO map or vector (`glo`). Every step evaluates the
//! degradation energy of the rendered image, keeps the best iterate seen so
//! far, and takes one plain SGD step on the latent only.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::degrade::{energy_var, DegradationSpec};
use crate::error::{LcmError, Result};
use crate::nets::{
    init_latent_codec, ArchSpec, Bound, GeneratorModel, GloKind, GloLatent, LatentCodec, Mode,
};
use crate::param::ParamBlock;
use crate::rng::{derive_seed, streams};
use crate::tape::{Tape, Var};
use crate::tensor::{cst, Real, Tensor};

/// Energy ratio over the initial energy that counts as a divergent step.
pub const DIVERGENCE_FACTOR: f64 = 10.0;
/// Consecutive divergent steps before giving up.
pub const DIVERGENCE_PATIENCE: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RestoreMode {
    Manifold,
    #[serde(rename = "zspace")]
    ZSpace,
    Glo,
}

impl RestoreMode {
    pub fn name(&self) -> &'static str {
        match self {
            RestoreMode::Manifold => "manifold",
            RestoreMode::ZSpace => "zspace",
            RestoreMode::Glo => "glo",
        }
    }
}

impl std::str::FromStr for RestoreMode {
    type Err = LcmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "manifold" => Ok(RestoreMode::Manifold),
            "zspace" => Ok(RestoreMode::ZSpace),
            "glo" => Ok(RestoreMode::Glo),
            other => Err(LcmError::Config(format!(
                "unknown restoration mode `{other}` (expected manifold, zspace or glo)"
            ))),
        }
    }
}

/// Starting point of the optimized latent.
#[derive(Clone, Debug, Default, PartialEq)]
pub enum LatentInit<T: Real = f32> {
    /// Seeded random draw: a boxed latent net, `f_φ₀(s)` of one, or a GLO draw.
    #[default]
    Fresh,
    /// Start from these latent-net parameters (manifold mode).
    Codec(LatentCodec<T>),
    /// Start from this latent tensor (zspace and glo modes).
    Latent(Tensor<T>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RestoreConfig<T: Real = f32> {
    pub steps: usize,
    pub lr: f64,
    pub mode: RestoreMode,
    pub init: LatentInit<T>,
    pub seed: u64,
}

impl<T: Real> RestoreConfig<T> {
    /// Defaults for `mode`: 2000 steps, lr 1.0 (10.0 for GLO).
    pub fn for_mode(mode: RestoreMode) -> Self {
        RestoreConfig {
            steps: 2000,
            lr: if mode == RestoreMode::Glo { 10.0 } else { 1.0 },
            mode,
            init: LatentInit::Fresh,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(LcmError::Config("restoration needs at least one step".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(LcmError::Config(format!("restoration lr must be finite and > 0, got {}", self.lr)));
        }
        Ok(())
    }
}

impl<T: Real> Default for RestoreConfig<T> {
    fn default() -> Self {
        Self::for_mode(RestoreMode::Manifold)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RestorationResult<T: Real = f32> {
    pub mode: RestoreMode,
    /// Rendering of the best iterate, in `[0, 1]`.
    pub image: Tensor<T>,
    /// Latent fed to the generator at the best iterate.
    pub latent: Tensor<T>,
    /// Latent-net parameters at the best iterate (manifold mode only).
    pub codec: Option<LatentCodec<T>>,
    /// Total energy before each update; `steps + 1` entries.
    pub energy_trace: Vec<f64>,
    pub best_energy: f64,
    pub best_step: usize,
    /// Observation-domain MSE at the best iterate (known pixels for inpainting).
    pub data_fit: f64,
    /// `‖z‖²` at the best iterate.
    pub latent_norm_sq: f64,
    /// True when the mask had no known pixel.
    pub degenerate: bool,
    pub wall_clock: Duration,
}

enum Latent<'a, T: Real> {
    Manifold { codec: LatentCodec<T>, noise: &'a Tensor<T> },
    Free(ParamBlock<T>),
}

enum Binding {
    Net(Bound),
    Block(Var),
}

impl<T: Real> Latent<'_, T> {
    fn forward(&self, tape: &mut Tape<T>) -> Result<(Var, Binding)> {
        match self {
            Latent::Manifold { codec, noise } => {
                let b = codec.net.bind(tape, true);
                let s = tape.constant((*noise).clone());
                Ok((codec.forward(tape, &b, s)?, Binding::Net(b)))
            }
            Latent::Free(p) => {
                let v = p.bind(tape);
                Ok((v, Binding::Block(v)))
            }
        }
    }

    fn step(&mut self, binding: &Binding, grads: &crate::tape::Gradients<T>, lr: T) -> Result<()> {
        match (self, binding) {
            (Latent::Manifold { codec, .. }, Binding::Net(b)) => {
                codec.net.zero_grad();
                codec.net.accumulate(b, grads)?;
                codec.net.sgd_step(lr);
            }
            (Latent::Free(p), Binding::Block(v)) => {
                p.zero_grad();
                p.accumulate(grads, *v)?;
                p.sgd_step(lr);
            }
            _ => unreachable!("binding does not match latent kind"),
        }
        Ok(())
    }

    fn codec(&self) -> Option<&LatentCodec<T>> {
        match self {
            Latent::Manifold { codec, .. } => Some(codec),
            Latent::Free(_) => None,
        }
    }
}

fn to_f64<T: Real>(v: T) -> f64 {
    v.to_f64().unwrap_or(f64::NAN)
}

fn optimize<T: Real>(
    model: &GeneratorModel<T>,
    mut latent: Latent<'_, T>,
    y: &Tensor<T>,
    spec: &DegradationSpec,
    cfg: &RestoreConfig<T>,
) -> Result<RestorationResult<T>> {
    let started = Instant::now();
    let lr: T = cst(cfg.lr);
    let mut trace = Vec::with_capacity(cfg.steps + 1);
    let mut best: Option<RestorationResult<T>> = None;
    let mut initial = f64::NAN;
    let mut divergent = 0usize;
    for step in 0..=cfg.steps {
        let mut tape = Tape::new();
        let gb = model.net.bind(&mut tape, false);
        let (z, binding) = latent.forward(&mut tape)?;
        let (x, _) = model.forward(&mut tape, &gb, z, Mode::Eval)?;
        let zsq = tape.square(z);
        let z2 = tape.sum(zsq);
        let e = energy_var(&mut tape, x, y, spec, Some(z2))?;
        let value = to_f64(tape.value(e.total).data()[0]);
        trace.push(value);
        if !value.is_finite() {
            return Err(LcmError::NonFinite {
                step,
                detail: format!("{} restoration energy {value}", cfg.mode.name()),
            });
        }
        if step == 0 {
            initial = value;
        }
        if best.as_ref().map_or(true, |b| value < b.best_energy) {
            best = Some(RestorationResult {
                mode: cfg.mode,
                image: tape.value(x).clone(),
                latent: tape.value(z).clone(),
                codec: latent.codec().cloned(),
                energy_trace: Vec::new(),
                best_energy: value,
                best_step: step,
                data_fit: to_f64(tape.value(e.data).data()[0]),
                latent_norm_sq: to_f64(tape.value(z2).data()[0]),
                degenerate: e.degenerate,
                wall_clock: Duration::ZERO,
            });
        }
        if value > DIVERGENCE_FACTOR * initial {
            divergent += 1;
            if divergent >= DIVERGENCE_PATIENCE {
                return Err(LcmError::Divergence {
                    steps: step,
                    energy: value,
                    initial,
                    trace,
                });
            }
        } else {
            divergent = 0;
        }
        if step < cfg.steps {
            let grads = tape.backward(e.total)?;
            latent.step(&binding, &grads, lr)?;
        }
    }
    let mut out = best.expect("at least one energy evaluation");
    out.energy_trace = trace;
    out.wall_clock = started.elapsed();
    Ok(out)
}

fn check_mode<T: Real>(cfg: &RestoreConfig<T>, expected: RestoreMode) -> Result<()> {
    cfg.validate()?;
    if cfg.mode != expected {
        return Err(LcmError::Config(format!(
            "config asks for {} restoration but {} was called",
            cfg.mode.name(),
            expected.name()
        )));
    }
    Ok(())
}

fn fresh_codec<T: Real>(latent_arch: &ArchSpec, cfg: &RestoreConfig<T>) -> Result<LatentCodec<T>> {
    init_latent_codec(latent_arch, derive_seed(cfg.seed, streams::RESTORE_INIT, 0))
}

/// Optimizes the parameters φ of a fresh boxed latent net.
pub fn restore_manifold<T: Real>(
    model: &GeneratorModel<T>,
    latent_arch: &ArchSpec,
    noise: &Tensor<T>,
    y: &Tensor<T>,
    spec: &DegradationSpec,
    cfg: &RestoreConfig<T>,
) -> Result<RestorationResult<T>> {
    check_mode(cfg, RestoreMode::Manifold)?;
    crate::nets::check_compatible(latent_arch, model.arch())?;
    let codec = match &cfg.init {
        LatentInit::Fresh => fresh_codec(latent_arch, cfg)?,
        LatentInit::Codec(c) => {
            if c.arch() != latent_arch {
                return Err(LcmError::Shape("provided φ₀ has a different architecture".into()));
            }
            c.clone()
        }
        LatentInit::Latent(_) => {
            return Err(LcmError::Config("manifold restoration starts from latent-net parameters".into()))
        }
    };
    optimize(model, Latent::Manifold { codec, noise }, y, spec, cfg)
}

/// Optimizes the latent map directly, starting from `f_φ₀(s)`.
pub fn restore_zspace<T: Real>(
    model: &GeneratorModel<T>,
    latent_arch: &ArchSpec,
    noise: &Tensor<T>,
    y: &Tensor<T>,
    spec: &DegradationSpec,
    cfg: &RestoreConfig<T>,
) -> Result<RestorationResult<T>> {
    check_mode(cfg, RestoreMode::ZSpace)?;
    crate::nets::check_compatible(latent_arch, model.arch())?;
    let z0 = match &cfg.init {
        LatentInit::Fresh => fresh_codec(latent_arch, cfg)?.latent(noise)?,
        LatentInit::Codec(c) => c.latent(noise)?,
        LatentInit::Latent(z) => z.clone(),
    };
    let expected = model.net.input_dims(1);
    if z0.dims() != expected.as_slice() {
        return Err(LcmError::Shape(format!("z₀ has shape {} but the generator takes {expected:?}", z0.shape())));
    }
    optimize(model, Latent::Free(ParamBlock::new("z", z0)), y, spec, cfg)
}

/// Optimizes a GLO map or vector latent from a seeded uniform draw. Vector
/// latents stay in the unit ball, as in training.
pub fn restore_glo<T: Real>(
    model: &GeneratorModel<T>,
    kind: GloKind,
    y: &Tensor<T>,
    spec: &DegradationSpec,
    cfg: &RestoreConfig<T>,
) -> Result<RestorationResult<T>> {
    check_mode(cfg, RestoreMode::Glo)?;
    let z0 = match &cfg.init {
        LatentInit::Fresh => {
            let seed = derive_seed(cfg.seed, streams::RESTORE_INIT, 0);
            let z = GloLatent::<T>::init(kind, model.arch().input, seed, 0)?;
            z.check_generator(model.arch())?;
            z.value.value().clone()
        }
        LatentInit::Latent(z) => z.clone(),
        LatentInit::Codec(_) => {
            return Err(LcmError::Config("GLO restoration cannot start from latent-net parameters".into()))
        }
    };
    let expected = model.net.input_dims(1);
    if z0.dims() != expected.as_slice() {
        return Err(LcmError::Shape(format!("z₀ has shape {} but the generator takes {expected:?}", z0.shape())));
    }
    optimize(model, Latent::Free(GloLatent::block(kind, z0)), y, spec, cfg)
}

/// Energy trace as CSV rows `step,energy`.
pub fn energy_trace_csv(trace: &[f64]) -> String {
    use std::fmt::Write as _;
    let mut out = String::from("step,energy\n");
    for (i, e) in trace.iter().enumerate() {
        let _ = writeln!(out, "{i},{e}");
    }
    out
}
