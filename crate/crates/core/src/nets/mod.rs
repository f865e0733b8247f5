//! Latent ConvNets, the hourglass generator and GLO latents.
//!
//! Every network is an [`ArchSpec`] plus a flat list of [`ParamBlock`]s in
//! declaration order: an optional input projection (`input.weight`,
//! `input.bias`), then per layer `L{i}.weight`, `L{i}.bias` and, for
//! normalized layers, `L{i}.gain`, `L{i}.shift`.

mod arch;
mod templates;

pub use arch::{Activation, ArchSpec, LayerKind, LayerSpec, MapShape, LEAKY_SLOPE};
pub use templates::{toy_arch_templates, PRESETS};

use rand::Rng;

use crate::error::{LcmError, Result};
use crate::param::ParamBlock;
use crate::rng::{stream_rng, streams};
use crate::tape::{BatchMoments, Gradients, NormMode, NormStats, Tape, Var, NORM_MOMENTUM};
use crate::tensor::{cst, Real, Tensor};

/// Box bound on latent-net parameters.
pub const DEFAULT_BOX: f64 = 0.01;

/// Normalization statistics source for a forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; moments are reported for the running averages.
    Train,
    /// Frozen running statistics.
    Eval,
}

/// Parameter nodes of one network on one tape, aligned with its blocks.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Binding from caller-created nodes, one per block in declaration order.
    pub(crate) fn from_vars(vars: Vec<Var>) -> Self {
        Bound { vars }
    }
}

/// Architecture, parameters and normalization statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct Network<T: Real = f32> {
    pub arch: ArchSpec,
    pub params: Vec<ParamBlock<T>>,
    pub stats: Vec<NormStats<T>>,
}

enum Init<T> {
    /// Every scalar uniform on `[-b, b]` and box-constrained.
    Boxed(T),
    /// Weights and biases uniform on `±sqrt(1/fan_in)`, gain 1, shift 0.
    FanIn,
}

impl<T: Real> Network<T> {
    fn init<R: Rng>(arch: &ArchSpec, init: Init<T>, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let mut params = Vec::new();
        let block = |name: String, dims: &[usize], fan_in: usize, rng: &mut R| -> Result<ParamBlock<T>> {
            match init {
                Init::Boxed(b) => ParamBlock::bounded(name, Tensor::uniform(dims, -b, b, rng)?, b),
                Init::FanIn => {
                    let r: T = cst((1.0 / fan_in as f64).sqrt());
                    Ok(ParamBlock::new(name, Tensor::uniform(dims, -r, r, rng)?))
                }
            }
        };
        if let Some(d) = arch.input_vector {
            let m: usize = arch.input.iter().product();
            params.push(block("input.weight".into(), &[m, d], d, rng)?);
            params.push(block("input.bias".into(), &[m], d, rng)?);
        }
        for (i, l) in arch.layers.iter().enumerate() {
            let fan_in = l.c_in * l.kernel * l.kernel;
            params.push(block(format!("L{i}.weight"), &[l.c_out, l.c_in, l.kernel, l.kernel], fan_in, rng)?);
            params.push(block(format!("L{i}.bias"), &[l.c_out], fan_in, rng)?);
            if l.norm {
                let (gain, shift) = match init {
                    Init::Boxed(b) => (
                        ParamBlock::bounded(format!("L{i}.gain"), Tensor::uniform(&[l.c_out], -b, b, rng)?, b)?,
                        ParamBlock::bounded(format!("L{i}.shift"), Tensor::uniform(&[l.c_out], -b, b, rng)?, b)?,
                    ),
                    Init::FanIn => (
                        ParamBlock::new(format!("L{i}.gain"), Tensor::full(&[l.c_out], T::one())?),
                        ParamBlock::new(format!("L{i}.shift"), Tensor::zeros(&[l.c_out])?),
                    ),
                };
                params.push(gain);
                params.push(shift);
            }
        }
        let stats = arch.norm_channels().into_iter().map(NormStats::new).collect();
        Ok(Network {
            arch: arch.clone(),
            params,
            stats,
        })
    }

    /// Rebuilds a network from stored parameter values and statistics.
    pub fn from_parts(arch: ArchSpec, params: Vec<ParamBlock<T>>, stats: Vec<NormStats<T>>) -> Result<Self> {
        arch.validate()?;
        let expected: usize = arch.param_count();
        let got: usize = params.iter().map(ParamBlock::numel).sum();
        if expected != got || stats.len() != arch.norm_channels().len() {
            return Err(LcmError::Shape(format!(
                "{}: expected {expected} parameters and {} norm layers, got {got} and {}",
                arch.name,
                arch.norm_channels().len(),
                stats.len()
            )));
        }
        Ok(Network { arch, params, stats })
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(ParamBlock::numel).sum()
    }

    /// Puts every block on the tape; frozen networks are bound as constants.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|p| {
                if trainable {
                    p.bind(tape)
                } else {
                    tape.constant(p.value().clone())
                }
            })
            .collect();
        Bound { vars }
    }

    /// Expected input dims for a batch of `n`.
    pub fn input_dims(&self, n: usize) -> Vec<usize> {
        match self.arch.input_vector {
            Some(d) => vec![n, d],
            None => vec![n, self.arch.input[0], self.arch.input[1], self.arch.input[2]],
        }
    }

    pub fn forward(&self, tape: &mut Tape<T>, bound: &Bound, input: Var, mode: Mode) -> Result<(Var, Vec<BatchMoments<T>>)> {
        self.forward_impl(tape, bound, input, mode, false)
    }

    pub(crate) fn forward_impl(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        input: Var,
        mode: Mode,
        ablate_skips: bool,
    ) -> Result<(Var, Vec<BatchMoments<T>>)> {
        if bound.vars.len() != self.params.len() {
            return Err(LcmError::Contract("parameter binding does not match network".into()));
        }
        let dims = tape.value(input).dims().to_vec();
        let n = dims[0];
        if dims != self.input_dims(n) {
            return Err(LcmError::Shape(format!(
                "{} expects input {:?}, got {:?}",
                self.arch.name,
                self.input_dims(n),
                dims
            )));
        }
        let mut vars = bound.vars.iter().copied();
        let mut next = || vars.next().expect("binding length checked");
        let mut cur = input;
        if self.arch.input_vector.is_some() {
            let (w, b) = (next(), next());
            let lin = tape.linear(cur, w, b)?;
            let [c, h, wd] = self.arch.input;
            cur = tape.reshape(lin, &[n, c, h, wd])?;
        }
        let mut outputs: Vec<Var> = Vec::with_capacity(self.arch.layers.len());
        let mut moments = Vec::new();
        let mut norm_idx = 0;
        for layer in &self.arch.layers {
            let (w, b) = (next(), next());
            let mut x = cur;
            if let Some(j) = layer.skip_from {
                let src = if ablate_skips {
                    let z = Tensor::zeros_like(tape.value(outputs[j]));
                    tape.constant(z)
                } else {
                    outputs[j]
                };
                x = tape.concat_channels(x, src)?;
            }
            let mut y = match layer.kind {
                LayerKind::Conv { stride, padding } => tape.conv2d(x, w, b, stride, padding)?,
                LayerKind::UpConv { scale } => tape.upsample_conv(x, w, b, scale)?,
            };
            if layer.norm {
                let (g, s) = (next(), next());
                let norm_mode = match mode {
                    Mode::Train => NormMode::Batch,
                    Mode::Eval => NormMode::Running(&self.stats[norm_idx]),
                };
                let (out, m) = tape.channel_norm(y, g, s, norm_mode)?;
                y = out;
                moments.extend(m);
                norm_idx += 1;
            }
            y = match layer.activation {
                Activation::None => y,
                Activation::LeakyRelu => tape.leaky_relu(y, cst(LEAKY_SLOPE))?,
                Activation::Sigmoid => tape.sigmoid(y),
            };
            outputs.push(y);
            cur = y;
        }
        Ok((cur, moments))
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(ParamBlock::zero_grad);
    }

    pub fn accumulate(&mut self, bound: &Bound, grads: &Gradients<T>) -> Result<()> {
        for (p, &v) in self.params.iter_mut().zip(&bound.vars) {
            p.accumulate(grads, v)?;
        }
        Ok(())
    }

    /// SGD step on every block, projecting bounded ones.
    pub fn sgd_step(&mut self, lr: T) {
        self.params.iter_mut().for_each(|p| p.sgd_step(lr));
    }

    /// Folds batch moments into the running statistics.
    pub fn update_stats(&mut self, moments: &[BatchMoments<T>], momentum: T) -> Result<()> {
        if moments.len() != self.stats.len() {
            return Err(LcmError::Contract(format!(
                "{} moments for {} norm layers",
                moments.len(),
                self.stats.len()
            )));
        }
        for (s, m) in self.stats.iter_mut().zip(moments) {
            s.update(m, momentum);
        }
        Ok(())
    }

    /// Replaces running statistics with the given moments.
    pub fn set_stats(&mut self, moments: &[BatchMoments<T>]) -> Result<()> {
        self.update_stats(moments, T::one())
    }

    pub fn max_abs_param(&self) -> T {
        self.params.iter().fold(T::zero(), |m, p| m.max(p.value().max_abs()))
    }
}

/// i.i.d. uniform noise on `[-1, 1]`.
pub fn init_noise<T: Real>(shape: MapShape, seed: u64) -> Result<Tensor<T>> {
    let mut rng = stream_rng(seed, streams::NOISE, 0);
    let [c, h, w] = shape;
    Tensor::uniform(&[1, c, h, w], -T::one(), T::one(), &mut rng)
}

/// Per-image latent ConvNet whose parameters are the latent code.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentCodec<T: Real = f32> {
    pub net: Network<T>,
    /// Identifier of the shared noise input.
    pub noise_ref: String,
}

pub const SHARED_NOISE: &str = "s";

impl<T: Real> LatentCodec<T> {
    pub fn arch(&self) -> &ArchSpec {
        &self.net.arch
    }

    /// Number of scalars in the latent code.
    pub fn n_phi(&self) -> usize {
        self.net.param_count()
    }

    pub fn bound(&self) -> T {
        self.net.params.first().and_then(|p| p.bound()).unwrap_or(T::zero())
    }

    /// `z = f_φ(s)` on the tape.
    pub fn forward(&self, tape: &mut Tape<T>, bound: &Bound, noise: Var) -> Result<Var> {
        Ok(self.net.forward(tape, bound, noise, Mode::Eval)?.0)
    }

    /// `z = f_φ(s)` as a tensor.
    pub fn latent(&self, noise: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let b = self.net.bind(&mut tape, false);
        let s = tape.constant(noise.clone());
        let z = self.forward(&mut tape, &b, s)?;
        Ok(tape.value(z).clone())
    }
}

/// Latent net with every parameter uniform on `[-0.01, 0.01]` and boxed there.
pub fn init_latent_codec<T: Real>(arch: &ArchSpec, seed: u64) -> Result<LatentCodec<T>> {
    init_latent_codec_boxed(arch, seed, DEFAULT_BOX)
}

pub fn init_latent_codec_boxed<T: Real>(arch: &ArchSpec, seed: u64, bound: f64) -> Result<LatentCodec<T>> {
    if !(bound > 0.0) {
        return Err(LcmError::Config(format!("box bound must be > 0, got {bound}")));
    }
    let mut rng = stream_rng(seed, streams::LATENT_INIT, 0);
    Ok(LatentCodec {
        net: Network::init(arch, Init::Boxed(cst(bound)), &mut rng)?,
        noise_ref: SHARED_NOISE.to_string(),
    })
}

/// Shared generator `g_θ`.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorModel<T: Real = f32> {
    pub net: Network<T>,
}

impl<T: Real> GeneratorModel<T> {
    pub fn new(arch: &ArchSpec, seed: u64) -> Result<Self> {
        let mut rng = stream_rng(seed, streams::GENERATOR_INIT, 0);
        Ok(GeneratorModel {
            net: Network::init(arch, Init::FanIn, &mut rng)?,
        })
    }

    pub fn arch(&self) -> &ArchSpec {
        &self.net.arch
    }

    /// `x = g_θ(z)` on the tape, with the batch moments in train mode.
    pub fn forward(&self, tape: &mut Tape<T>, bound: &Bound, z: Var, mode: Mode) -> Result<(Var, Vec<BatchMoments<T>>)> {
        self.net.forward(tape, bound, z, mode)
    }

    /// Eval-mode rendering of a batch of latents.
    pub fn render(&self, z: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let b = self.net.bind(&mut tape, false);
        let zv = tape.constant(z.clone());
        let (x, _) = self.forward(&mut tape, &b, zv, Mode::Eval)?;
        Ok(tape.value(x).clone())
    }

    pub fn update_stats(&mut self, moments: &[BatchMoments<T>]) -> Result<()> {
        self.net.update_stats(moments, cst(NORM_MOMENTUM))
    }
}

/// Latent-net and generator architectures must meet at the latent map.
pub fn check_compatible(latent: &ArchSpec, generator: &ArchSpec) -> Result<()> {
    latent.validate()?;
    generator.validate()?;
    if generator.input_vector.is_some() || latent.output != generator.input {
        return Err(LcmError::Shape(format!(
            "latent net produces {:?} but generator {} takes {:?}{}",
            latent.output,
            generator.name,
            generator.input,
            if generator.input_vector.is_some() { " via a vector" } else { "" }
        )));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "dim")]
pub enum GloKind {
    Map,
    Vector(usize),
}

/// Free per-image latent of the GLO baselines.
#[derive(Clone, Debug, PartialEq)]
pub struct GloLatent<T: Real = f32> {
    pub kind: GloKind,
    pub value: ParamBlock<T>,
}

impl<T: Real> GloLatent<T> {
    /// Uniform on `[-1, 1]`; maps have the generator input shape. Vectors are
    /// then projected onto the unit ball, which constrains them for good.
    pub fn init(kind: GloKind, map: MapShape, seed: u64, index: u64) -> Result<Self> {
        let mut rng = stream_rng(seed, streams::GLO_INIT, index);
        let dims = match kind {
            GloKind::Map => vec![1, map[0], map[1], map[2]],
            GloKind::Vector(d) => vec![1, d],
        };
        let z = Tensor::uniform(&dims, -T::one(), T::one(), &mut rng)?;
        Ok(GloLatent {
            kind,
            value: Self::block(kind, z),
        })
    }

    /// Parameter block for a latent of `kind`, with its constraint.
    pub fn block(kind: GloKind, z: Tensor<T>) -> ParamBlock<T> {
        match kind {
            GloKind::Map => ParamBlock::new("z", z),
            GloKind::Vector(_) => ParamBlock::unit_ball("z", z),
        }
    }

    pub fn check_generator(&self, generator: &ArchSpec) -> Result<()> {
        let ok = match self.kind {
            GloKind::Map => generator.input_vector.is_none(),
            GloKind::Vector(d) => generator.input_vector == Some(d),
        };
        if !ok {
            return Err(LcmError::Shape(format!(
                "GLO latent {:?} does not fit generator {}",
                self.kind, generator.name
            )));
        }
        Ok(())
    }
}
