//! Binary checkpoints.
//!
//! Layout, all little-endian: the magic `LCMK`, a `u32` format version, a
//! `u32` header length, the UTF-8 JSON header, then raw `f32` blobs in
//! order: noise (LCM only), generator blocks, running statistics (mean then
//! variance per normalization layer), and the latent blocks of each image
//! in manifest order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{LcmError, Result};
use crate::nets::{init_latent_codec_boxed, ArchSpec, GeneratorModel, GloKind, GloLatent, LatentCodec};
use crate::param::{BlockLayout, ParamBlock};
use crate::tensor::Tensor;
use crate::train::{EpochRecord, Latents, TrainConfig, TrainState, Variant};

pub const MAGIC: &[u8; 4] = b"LCMK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub variant: Variant,
    pub latent_arch: Option<ArchSpec>,
    pub generator_arch: ArchSpec,
    pub config: TrainConfig,
    pub manifest_hash: Option<String>,
    pub epoch: usize,
    pub step: usize,
    pub history: Vec<(usize, f64)>,
    pub noise_shape: Option<Vec<usize>>,
    pub generator_blocks: Vec<BlockLayout>,
    pub norm_channels: Vec<usize>,
    /// Ids of the stored latents; empty when latents were left out.
    pub latent_ids: Vec<String>,
    /// Block layout shared by every stored latent.
    pub latent_blocks: Vec<BlockLayout>,
}

/// Everything needed to resume training or to restore with a trained model.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub variant: Variant,
    pub generator: GeneratorModel<f32>,
    pub latent_arch: Option<ArchSpec>,
    pub noise: Option<Tensor<f32>>,
    /// Per-image latents aligned with `ids`, if saved.
    pub latents: Option<Latents<f32>>,
    pub ids: Vec<String>,
    pub config: TrainConfig,
    pub manifest_hash: Option<String>,
    pub epoch: usize,
    pub step: usize,
    pub history: Vec<EpochRecord>,
}

impl Checkpoint {
    pub fn from_state(
        state: &TrainState<f32>,
        config: &TrainConfig,
        ids: &[String],
        manifest_hash: Option<String>,
        with_latents: bool,
    ) -> Result<Self> {
        if ids.len() != state.latents.len() {
            return Err(LcmError::Contract(format!(
                "{} ids for {} latents",
                ids.len(),
                state.latents.len()
            )));
        }
        let (latent_arch, noise) = match &state.latents {
            Latents::Lcm { noise, codecs } => (codecs.first().map(|c| c.arch().clone()), Some(noise.clone())),
            Latents::Glo(_) => (None, None),
        };
        Ok(Checkpoint {
            variant: state.variant,
            generator: state.generator.clone(),
            latent_arch,
            noise,
            latents: with_latents.then(|| state.latents.clone()),
            ids: if with_latents { ids.to_vec() } else { Vec::new() },
            config: config.clone(),
            manifest_hash,
            epoch: state.epoch,
            step: state.step,
            history: state.history.clone(),
        })
    }

    /// Training state for resuming; requires stored latents.
    pub fn into_state(self) -> Result<TrainState<f32>> {
        let latents = self
            .latents
            .ok_or_else(|| LcmError::Contract("checkpoint holds no latents to resume from".into()))?;
        let pyramid = {
            let [_, h, w] = self.generator.arch().output;
            self.config.pyramid_for(h, w)?
        };
        Ok(TrainState {
            variant: self.variant,
            generator: self.generator,
            latents,
            pyramid,
            epoch: self.epoch,
            step: self.step,
            history: self.history,
            step_losses: Vec::new(),
            last_checkpoint: None,
        })
    }

    /// Latent kind used by GLO restoration.
    pub fn glo_kind(&self) -> Option<GloKind> {
        match self.variant {
            Variant::Lcm => None,
            Variant::GloMap => Some(GloKind::Map),
            Variant::GloVector(d) => Some(GloKind::Vector(d)),
        }
    }

    fn latent_blocks(&self) -> Vec<BlockLayout> {
        match &self.latents {
            Some(Latents::Lcm { codecs, .. }) => codecs
                .first()
                .map(|c| c.net.params.iter().map(BlockLayout::from).collect())
                .unwrap_or_default(),
            Some(Latents::Glo(z)) => z.first().map(|z| vec![BlockLayout::from(&z.value)]).unwrap_or_default(),
            None => Vec::new(),
        }
    }

    pub fn header(&self) -> CheckpointHeader {
        CheckpointHeader {
            variant: self.variant,
            latent_arch: self.latent_arch.clone(),
            generator_arch: self.generator.arch().clone(),
            config: self.config.clone(),
            manifest_hash: self.manifest_hash.clone(),
            epoch: self.epoch,
            step: self.step,
            history: self.history.iter().map(|r| (r.epoch, r.loss)).collect(),
            noise_shape: self.noise.as_ref().map(|n| n.dims().to_vec()),
            generator_blocks: self.generator.net.params.iter().map(BlockLayout::from).collect(),
            norm_channels: self.generator.net.stats.iter().map(|s| s.mean.len()).collect(),
            latent_ids: self.ids.clone(),
            latent_blocks: self.latent_blocks(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header()).expect("checkpoint header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        let mut put = |v: &[f32]| {
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        };
        if let Some(n) = &self.noise {
            put(n.data());
        }
        for p in &self.generator.net.params {
            put(p.value().data());
        }
        for s in &self.generator.net.stats {
            put(&s.mean);
            put(&s.var);
        }
        match &self.latents {
            Some(Latents::Lcm { codecs, .. }) => {
                for c in codecs {
                    for p in &c.net.params {
                        put(p.value().data());
                    }
                }
            }
            Some(Latents::Glo(z)) => {
                for z in z {
                    put(z.value.value().data());
                }
            }
            None => {}
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4, "magic")?.try_into().expect("4 bytes");
        if &magic != MAGIC {
            return Err(LcmError::BadMagic(magic));
        }
        let version = r.u32("format version")?;
        if version != FORMAT_VERSION {
            return Err(LcmError::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let len = r.u32("header length")? as usize;
        let header: CheckpointHeader =
            serde_json::from_slice(r.take(len, "header")?).map_err(|e| LcmError::Header(e.to_string()))?;
        let h = header;

        let noise = match &h.noise_shape {
            Some(dims) => Some(r.tensor(dims, "noise")?),
            None => None,
        };
        if noise.is_some() != (h.variant == Variant::Lcm) || h.latent_arch.is_some() != (h.variant == Variant::Lcm) {
            return Err(LcmError::Header("noise and latent architecture must be present exactly for LCM".into()));
        }
        let mut generator = GeneratorModel::<f32>::new(&h.generator_arch, 0).map_err(header_err)?;
        check_layout(&generator.net.params, &h.generator_blocks, "generator")?;
        for p in generator.net.params.iter_mut() {
            let v = r.tensor(p.value().dims(), &p.name)?;
            p.set_value(v)?;
        }
        let channels: Vec<usize> = generator.net.stats.iter().map(|s| s.mean.len()).collect();
        if channels != h.norm_channels {
            return Err(LcmError::Header(format!(
                "norm channels {:?} do not match the architecture's {channels:?}",
                h.norm_channels
            )));
        }
        for s in generator.net.stats.iter_mut() {
            s.mean = r.floats(s.mean.len(), "norm mean")?;
            s.var = r.floats(s.var.len(), "norm variance")?;
        }

        let latents = if h.latent_ids.is_empty() {
            None
        } else {
            Some(match (&h.latent_arch, &noise) {
                (Some(arch), Some(noise)) => {
                    let mut codecs = Vec::with_capacity(h.latent_ids.len());
                    for id in &h.latent_ids {
                        let mut c: LatentCodec<f32> =
                            init_latent_codec_boxed(arch, 0, h.config.box_bound).map_err(header_err)?;
                        check_layout(&c.net.params, &h.latent_blocks, "latent net")?;
                        for p in c.net.params.iter_mut() {
                            let v = r.tensor(p.value().dims(), &format!("{id}/{}", p.name))?;
                            p.set_value(v)?;
                        }
                        codecs.push(c);
                    }
                    Latents::Lcm {
                        noise: noise.clone(),
                        codecs,
                    }
                }
                _ => {
                    let kind = match h.variant {
                        Variant::GloVector(d) => GloKind::Vector(d),
                        _ => GloKind::Map,
                    };
                    let mut z = Vec::with_capacity(h.latent_ids.len());
                    for id in &h.latent_ids {
                        let mut g = GloLatent::<f32>::init(kind, h.generator_arch.input, 0, 0).map_err(header_err)?;
                        check_layout(std::slice::from_ref(&g.value), &h.latent_blocks, "GLO latent")?;
                        let v = r.tensor(g.value.value().dims(), id)?;
                        g.value.restore_value(v)?;
                        z.push(g);
                    }
                    Latents::Glo(z)
                }
            })
        };
        if r.pos != bytes.len() {
            return Err(LcmError::Header(format!("{} unexpected trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint {
            variant: h.variant,
            generator,
            latent_arch: h.latent_arch,
            noise,
            latents,
            ids: h.latent_ids,
            config: h.config,
            manifest_hash: h.manifest_hash,
            epoch: h.epoch,
            step: h.step,
            history: h.history.into_iter().map(|(epoch, loss)| EpochRecord { epoch, loss }).collect(),
        })
    }
}

fn header_err(e: LcmError) -> LcmError {
    LcmError::Header(format!("architecture in header is unusable: {e}"))
}

fn check_layout(params: &[ParamBlock<f32>], declared: &[BlockLayout], what: &str) -> Result<()> {
    let actual: Vec<BlockLayout> = params.iter().map(BlockLayout::from).collect();
    if actual != declared {
        return Err(LcmError::Header(format!("{what} block layout does not match its architecture")));
    }
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            LcmError::Truncated(format!(
                "{what}: need {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            ))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn floats(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let raw = self.take(n * 4, what)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }

    fn tensor(&mut self, dims: &[usize], what: &str) -> Result<Tensor<f32>> {
        let n = dims.iter().product();
        Tensor::from_vec(dims, self.floats(n, what)?)
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let tmp = path.with_extension("partial");
    std::fs::write(&tmp, ckpt.to_bytes()).map_err(|e| LcmError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| LcmError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| LcmError::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
