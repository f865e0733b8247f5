//! Joint projected-SGD training of the generator and per-image latents.
//!
//! One step forwards every image of a minibatch through its own latent
//! (a boxed latent net for LCM, a free map or vector for GLO), stacks the
//! latent maps, renders them with the shared generator using batch
//! statistics, and takes one plain SGD step on the generator and on the
//! batch's latents from the batch-averaged Lap-L1 + MSE loss. Latent-net
//! parameters are clamped back into `[-B, B]` after every step.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{LcmError, Result};
use crate::losses::{combined_loss, combined_loss_var, PyramidSpec};
use crate::nets::{
    check_compatible, init_latent_codec_boxed, init_noise, ArchSpec, GeneratorModel, GloKind, GloLatent,
    LatentCodec, Mode,
};
use crate::restore::{restore_glo, restore_manifold, RestoreConfig, RestoreMode};
use crate::degrade::DegradationSpec;
use crate::rng::{derive_seed, stream_rng, streams};
use crate::tape::{Tape, Var};
use crate::tensor::{cst, Real, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Stops after this many optimizer steps, possibly mid-epoch.
    pub max_steps: Option<usize>,
    pub batch_size: usize,
    pub lr_latent: f64,
    pub lr_generator: f64,
    /// Learning rate of GLO latents.
    pub lr_glo: f64,
    pub seed: u64,
    pub box_bound: f64,
    /// Pyramid depth; defaults to `floor(log2(min(H, W))) − 2`.
    pub pyramid_levels: Option<usize>,
    /// Checkpoint cadence in epochs; 0 disables.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            max_steps: None,
            batch_size: 8,
            lr_latent: 1.0,
            lr_generator: 1.0,
            lr_glo: 10.0,
            seed: 0,
            box_bound: 0.01,
            pyramid_levels: None,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, lr) in [
            ("lr_latent", self.lr_latent),
            ("lr_generator", self.lr_generator),
            ("lr_glo", self.lr_glo),
        ] {
            if !(lr >= 0.0 && lr.is_finite()) {
                return Err(LcmError::Config(format!("{name} must be finite and ≥ 0, got {lr}")));
            }
        }
        if !(self.box_bound > 0.0) {
            return Err(LcmError::Config(format!("box bound must be > 0, got {}", self.box_bound)));
        }
        if self.batch_size == 0 {
            return Err(LcmError::Config("batch size must be ≥ 1".into()));
        }
        if self.epochs == 0 && self.max_steps.is_none() {
            return Err(LcmError::Config("nothing to do: zero epochs".into()));
        }
        Ok(())
    }

    pub fn pyramid_for(&self, h: usize, w: usize) -> Result<PyramidSpec> {
        let spec = match self.pyramid_levels {
            Some(l) => PyramidSpec::new(l)?,
            None => PyramidSpec::default_for(h, w),
        };
        spec.validate_for(h, w)?;
        Ok(spec)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "dim")]
pub enum Variant {
    /// Latent ConvNets over a convolutional manifold.
    Lcm,
    /// Free latent maps with the generator's input shape.
    GloMap,
    /// Free length-`d` vectors mapped to the input shape by a linear layer.
    GloVector(usize),
}

impl Variant {
    pub fn name(&self) -> String {
        match self {
            Variant::Lcm => "lcm".into(),
            Variant::GloMap => "glo_map".into(),
            Variant::GloVector(d) => format!("glo_vector_{d}"),
        }
    }

    pub fn restore_mode(&self) -> RestoreMode {
        match self {
            Variant::Lcm => RestoreMode::Manifold,
            _ => RestoreMode::Glo,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Latents<T: Real = f32> {
    Lcm { noise: Tensor<T>, codecs: Vec<LatentCodec<T>> },
    Glo(Vec<GloLatent<T>>),
}

impl<T: Real> Latents<T> {
    pub fn len(&self) -> usize {
        match self {
            Latents::Lcm { codecs, .. } => codecs.len(),
            Latents::Glo(z) => z.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Largest |φ| over all latent nets (0 for GLO).
    pub fn max_abs_phi(&self) -> T {
        match self {
            Latents::Lcm { codecs, .. } => codecs.iter().fold(T::zero(), |m, c| m.max(c.net.max_abs_param())),
            Latents::Glo(_) => T::zero(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainState<T: Real = f32> {
    pub variant: Variant,
    pub generator: GeneratorModel<T>,
    pub latents: Latents<T>,
    pub pyramid: PyramidSpec,
    pub epoch: usize,
    pub step: usize,
    /// Mean minibatch loss per completed epoch.
    pub history: Vec<EpochRecord>,
    pub step_losses: Vec<f64>,
    /// Last checkpoint written, quoted in non-finite-loss diagnostics.
    pub last_checkpoint: Option<String>,
}

impl<T: Real> TrainState<T> {
    /// Fresh state for `dataset`. `latent_arch` is required for LCM; for
    /// GLO variants the generator input defines the latent shape.
    pub fn new(
        dataset: &Dataset<T>,
        cfg: &TrainConfig,
        variant: Variant,
        latent_arch: Option<&ArchSpec>,
        generator_arch: &ArchSpec,
    ) -> Result<Self> {
        cfg.validate()?;
        if dataset.is_empty() {
            return Err(LcmError::Contract("cannot train on an empty dataset".into()));
        }
        let [c, h, w] = dataset.image_shape()?;
        if generator_arch.output != [c, h, w] {
            return Err(LcmError::Shape(format!(
                "generator {} renders {:?} but images are {:?}",
                generator_arch.name,
                generator_arch.output,
                [c, h, w]
            )));
        }
        let pyramid = cfg.pyramid_for(h, w)?;
        let (generator_arch, latents) = match variant {
            Variant::Lcm => {
                let arch = latent_arch
                    .ok_or_else(|| LcmError::Config("LCM training needs a latent-net architecture".into()))?;
                check_compatible(arch, generator_arch)?;
                let noise = init_noise(arch.input, cfg.seed)?;
                let codecs = (0..dataset.len())
                    .map(|i| init_latent_codec_boxed(arch, derive_seed(cfg.seed, streams::LATENT_INIT, i as u64), cfg.box_bound))
                    .collect::<Result<Vec<_>>>()?;
                (generator_arch.clone(), Latents::Lcm { noise, codecs })
            }
            Variant::GloMap | Variant::GloVector(_) => {
                let (kind, arch) = match variant {
                    Variant::GloVector(d) => (GloKind::Vector(d), generator_arch.with_vector_input(d)),
                    _ => (GloKind::Map, generator_arch.clone()),
                };
                let z = (0..dataset.len())
                    .map(|i| GloLatent::init(kind, generator_arch.input, cfg.seed, i as u64))
                    .collect::<Result<Vec<_>>>()?;
                (arch, Latents::Glo(z))
            }
        };
        Ok(TrainState {
            variant,
            generator: GeneratorModel::new(&generator_arch, cfg.seed)?,
            latents,
            pyramid,
            epoch: 0,
            step: 0,
            history: Vec::new(),
            step_losses: Vec::new(),
            last_checkpoint: None,
        })
    }

    fn latent_lr(&self, cfg: &TrainConfig) -> f64 {
        match self.variant {
            Variant::Lcm => cfg.lr_latent,
            _ => cfg.lr_glo,
        }
    }
}

/// Records the minibatch objective for `indices` on `tape`.
fn batch_forward<T: Real>(
    state: &TrainState<T>,
    dataset: &Dataset<T>,
    indices: &[usize],
    tape: &mut Tape<T>,
    mode: Mode,
) -> Result<(Var, crate::nets::Bound, Vec<crate::nets::Bound>, Vec<Var>, Vec<crate::tape::BatchMoments<T>>)> {
    if indices.is_empty() {
        return Err(LcmError::Contract("empty minibatch".into()));
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= state.latents.len()) {
        return Err(LcmError::Contract(format!(
            "minibatch index {bad} out of range for {} latents",
            state.latents.len()
        )));
    }
    let gb = state.generator.net.bind(tape, true);
    let mut latent_vars = Vec::new();
    let mut glo_vars = Vec::new();
    let mut zs = Vec::with_capacity(indices.len());
    match &state.latents {
        Latents::Lcm { noise, codecs } => {
            let s = tape.constant(noise.clone());
            for &i in indices {
                let b = codecs[i].net.bind(tape, true);
                zs.push(codecs[i].forward(tape, &b, s)?);
                latent_vars.push(b);
            }
        }
        Latents::Glo(z) => {
            for &i in indices {
                let v = z[i].value.bind(tape);
                zs.push(v);
                glo_vars.push(v);
            }
        }
    }
    let z = if zs.len() == 1 {
        zs[0]
    } else if tape.value(zs[0]).dims().len() == 2 {
        // Vector latents: stack rows.
        let d = tape.value(zs[0]).dims()[1];
        let as4: Vec<Var> = zs
            .iter()
            .map(|&v| tape.reshape(v, &[1, d, 1, 1]))
            .collect::<Result<_>>()?;
        let stacked = tape.concat_batch(&as4)?;
        tape.reshape(stacked, &[indices.len(), d])?
    } else {
        tape.concat_batch(&zs)?
    };
    let (x_hat, moments) = state.generator.forward(tape, &gb, z, mode)?;
    let target = tape.constant(dataset.batch(indices)?);
    let loss = combined_loss_var(tape, x_hat, target, &state.pyramid)?;
    Ok((loss, gb, latent_vars, glo_vars, moments))
}

/// Minibatch objective without any update (batch statistics).
pub fn batch_objective<T: Real>(state: &TrainState<T>, dataset: &Dataset<T>, indices: &[usize]) -> Result<f64> {
    let mut tape = Tape::new();
    let (loss, ..) = batch_forward(state, dataset, indices, &mut tape, Mode::Train)?;
    Ok(to_f64(tape.value(loss).data()[0]))
}

/// Mean batch-statistics objective over the dataset in index order, in
/// chunks of `batch_size`.
pub fn dataset_objective<T: Real>(state: &TrainState<T>, dataset: &Dataset<T>, batch_size: usize) -> Result<f64> {
    let order: Vec<usize> = (0..dataset.len()).collect();
    let mut total = 0.0;
    let mut count = 0;
    for chunk in order.chunks(batch_size.max(1)) {
        total += batch_objective(state, dataset, chunk)? * chunk.len() as f64;
        count += chunk.len();
    }
    Ok(total / count as f64)
}

fn to_f64<T: Real>(v: T) -> f64 {
    v.to_f64().unwrap_or(f64::NAN)
}

/// One projected-SGD step on the minibatch. Returns the pre-step loss.
pub fn train_step<T: Real>(
    state: &mut TrainState<T>,
    dataset: &Dataset<T>,
    indices: &[usize],
    cfg: &TrainConfig,
) -> Result<f64> {
    let mut tape = Tape::new();
    let (loss, gb, latent_vars, glo_vars, moments) = batch_forward(state, dataset, indices, &mut tape, Mode::Train)?;
    let value = to_f64(tape.value(loss).data()[0]);
    if !value.is_finite() {
        return Err(LcmError::NonFinite {
            step: state.step,
            detail: match &state.last_checkpoint {
                Some(p) => format!("loss {value}; last good checkpoint: {p}"),
                None => format!("loss {value}; no checkpoint written yet"),
            },
        });
    }
    let grads = tape.backward(loss)?;

    let g = &mut state.generator.net;
    g.zero_grad();
    g.accumulate(&gb, &grads)?;
    g.sgd_step(cst(cfg.lr_generator));
    state.generator.update_stats(&moments)?;

    let lr: T = cst(state.latent_lr(cfg));
    match &mut state.latents {
        Latents::Lcm { codecs, .. } => {
            for (&i, b) in indices.iter().zip(&latent_vars) {
                let net = &mut codecs[i].net;
                net.zero_grad();
                net.accumulate(b, &grads)?;
                net.sgd_step(lr);
            }
        }
        Latents::Glo(z) => {
            for (&i, &v) in indices.iter().zip(&glo_vars) {
                let p = &mut z[i].value;
                p.zero_grad();
                p.accumulate(&grads, v)?;
                p.sgd_step(lr);
            }
        }
    }
    state.step += 1;
    state.step_losses.push(value);
    Ok(value)
}

/// Progress notifications from [`train_with`].
pub enum TrainEvent {
    Step,
    EpochEnd,
}

/// Minibatch order for an epoch, derived from `(seed, epoch)` only.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, streams::SHUFFLE, epoch as u64));
    order
}

pub fn train<T: Real>(
    dataset: &Dataset<T>,
    cfg: &TrainConfig,
    variant: Variant,
    latent_arch: Option<&ArchSpec>,
    generator_arch: &ArchSpec,
) -> Result<TrainState<T>> {
    train_with(dataset, cfg, variant, latent_arch, generator_arch, &mut |_, _| Ok(()))
}

/// Runs shuffled-minibatch epochs, calling `observer` after every step and
/// every epoch. Running normalization statistics are recalibrated on the
/// whole dataset at the end.
pub fn train_with<T: Real>(
    dataset: &Dataset<T>,
    cfg: &TrainConfig,
    variant: Variant,
    latent_arch: Option<&ArchSpec>,
    generator_arch: &ArchSpec,
    observer: &mut dyn FnMut(&mut TrainState<T>, TrainEvent) -> Result<()>,
) -> Result<TrainState<T>> {
    let mut state = TrainState::new(dataset, cfg, variant, latent_arch, generator_arch)?;
    resume(&mut state, dataset, cfg, observer)?;
    Ok(state)
}

/// Continues training `state` up to `cfg.epochs` / `cfg.max_steps`.
pub fn resume<T: Real>(
    state: &mut TrainState<T>,
    dataset: &Dataset<T>,
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(&mut TrainState<T>, TrainEvent) -> Result<()>,
) -> Result<()> {
    cfg.validate()?;
    if state.latents.len() != dataset.len() {
        return Err(LcmError::Contract(format!(
            "{} latents for {} images",
            state.latents.len(),
            dataset.len()
        )));
    }
    let step_limit = cfg.max_steps.unwrap_or(usize::MAX);
    let epoch_limit = if cfg.max_steps.is_some() { usize::MAX } else { cfg.epochs };
    while state.epoch < epoch_limit && state.step < step_limit {
        let order = epoch_order(dataset.len(), cfg.seed, state.epoch);
        let mut sum = 0.0;
        let mut count = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            if state.step >= step_limit {
                break;
            }
            sum += train_step(state, dataset, chunk, cfg)? * chunk.len() as f64;
            count += chunk.len();
            observer(state, TrainEvent::Step)?;
        }
        state.epoch += 1;
        state.history.push(EpochRecord {
            epoch: state.epoch,
            loss: sum / count.max(1) as f64,
        });
        observer(state, TrainEvent::EpochEnd)?;
    }
    recalibrate_stats(state, dataset)
}

/// Sets running statistics to the moments of the whole dataset rendered as
/// one batch from its current latents.
pub fn recalibrate_stats<T: Real>(state: &mut TrainState<T>, dataset: &Dataset<T>) -> Result<()> {
    let all: Vec<usize> = (0..dataset.len()).collect();
    let mut tape = Tape::new();
    let (_, _, _, _, moments) = batch_forward(state, dataset, &all, &mut tape, Mode::Train)?;
    state.generator.net.set_stats(&moments)
}

/// Eval-mode training loss with running statistics recalibrated on the
/// whole dataset first; comparable across any point of training.
pub fn calibrated_loss<T: Real>(state: &TrainState<T>, dataset: &Dataset<T>) -> Result<f64> {
    let mut probe = state.clone();
    recalibrate_stats(&mut probe, dataset)?;
    eval_loss(&probe, dataset, Split::Train, &RestoreConfig::default())
}

/// Renders training image `i` from its stored latent in eval mode.
pub fn reconstruct<T: Real>(state: &TrainState<T>, i: usize) -> Result<Tensor<T>> {
    let z = match &state.latents {
        Latents::Lcm { noise, codecs } => codecs
            .get(i)
            .ok_or_else(|| LcmError::Contract(format!("no latent {i}")))?
            .latent(noise)?,
        Latents::Glo(z) => z
            .get(i)
            .ok_or_else(|| LcmError::Contract(format!("no latent {i}")))?
            .value
            .value()
            .clone(),
    };
    state.generator.render(&z)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    /// Images the latents were trained on; index `i` uses latent `i`.
    Train,
    /// Unseen images; latents are fitted first with a full-observation energy.
    Test,
}

/// Mean eval-mode combined loss over `dataset`.
pub fn eval_loss<T: Real>(
    state: &TrainState<T>,
    dataset: &Dataset<T>,
    split: Split,
    fit: &RestoreConfig<T>,
) -> Result<f64> {
    if dataset.is_empty() {
        return Err(LcmError::Contract("eval_loss on an empty split".into()));
    }
    let mut total = 0.0;
    for (i, x) in dataset.images.iter().enumerate() {
        let x_hat = match split {
            Split::Train => {
                if dataset.len() != state.latents.len() {
                    return Err(LcmError::Contract("training split does not match the latents".into()));
                }
                reconstruct(state, i)?
            }
            Split::Test => {
                let [_, _, h, w] = x.nchw()?;
                let spec = DegradationSpec::identity(h, w);
                let mut cfg = fit.clone();
                cfg.seed = derive_seed(fit.seed, streams::RESTORE_INIT, i as u64);
                let r = match (&state.latents, state.variant) {
                    (Latents::Lcm { noise, codecs }, _) => {
                        restore_manifold(&state.generator, codecs[0].arch(), noise, x, &spec, &RestoreConfig { mode: RestoreMode::Manifold, ..cfg })?
                    }
                    (Latents::Glo(z), _) => restore_glo(&state.generator, z[0].kind, x, &spec, &RestoreConfig { mode: RestoreMode::Glo, ..cfg })?,
                };
                r.image
            }
        };
        total += to_f64(combined_loss(&x_hat, x, &state.pyramid)?);
    }
    Ok(total / dataset.len() as f64)
}

/// Loss history as CSV rows `epoch,split,loss`.
pub fn loss_history_csv(history: &[EpochRecord], split: &str) -> String {
    let mut out = String::from("epoch,split,loss\n");
    for r in history {
        let _ = writeln!(out, "{},{},{}", r.epoch, split, r.loss);
    }
    out
}
