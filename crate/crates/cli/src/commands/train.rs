use std::path::Path;

use anyhow::Result;
use serde::Serialize;

use lcm::data::Dataset;
use lcm::io::{save_checkpoint, Checkpoint, DatasetManifest};
use lcm::nets::{toy_arch_templates, ArchSpec};
use lcm::train::{calibrated_loss, eval_loss, loss_history_csv, resume, Split, TrainConfig, TrainEvent, TrainState, Variant};

use super::{create_dir, write};
use crate::config::{invalid, parse_variant, variant_label, RunConfig};
use crate::TrainArgs;

pub(crate) struct Trained {
    pub state: TrainState<f32>,
    /// Eval-mode loss of the initial model, statistics calibrated.
    pub initial_loss: f64,
    /// Eval-mode loss after training.
    pub final_loss: f64,
}

pub(crate) struct CheckpointSink<'a> {
    pub dir: &'a Path,
    pub ids: &'a [String],
    pub manifest_hash: Option<String>,
}

pub(crate) fn load_dataset(cfg: &RunConfig) -> Result<(Dataset<f32>, DatasetManifest)> {
    let path = cfg
        .data
        .manifest
        .as_ref()
        .ok_or_else(|| invalid("no dataset manifest given (--manifest or [data] manifest)"))?;
    let manifest = DatasetManifest::load(path)?;
    let ds = manifest.load_dataset(&manifest.resolved_root(path))?;
    Ok((ds, manifest))
}

pub(crate) fn run_training(
    tc: &TrainConfig,
    variant: Variant,
    latent_arch: &ArchSpec,
    generator_arch: &ArchSpec,
    ds: &Dataset<f32>,
    sink: Option<CheckpointSink<'_>>,
) -> Result<Trained> {
    let lat = (variant == Variant::Lcm).then_some(latent_arch);
    let mut state = TrainState::new(ds, tc, variant, lat, generator_arch)?;
    let initial_loss = calibrated_loss(&state, ds)?;
    let every = tc.checkpoint_every;
    resume(&mut state, ds, tc, &mut |st, ev| {
        if let (TrainEvent::EpochEnd, Some(sink)) = (ev, &sink) {
            log::info!("epoch {} loss {:.6}", st.epoch, st.history.last().map_or(f64::NAN, |h| h.loss));
            if every > 0 && st.epoch % every == 0 {
                let path = sink.dir.join(format!("epoch-{:04}.lcmk", st.epoch));
                let ck = Checkpoint::from_state(st, tc, sink.ids, sink.manifest_hash.clone(), true)?;
                save_checkpoint(&path, &ck)?;
                st.last_checkpoint = Some(path.display().to_string());
            }
        }
        Ok(())
    })?;
    let final_loss = eval_loss(&state, ds, Split::Train, &Default::default())?;
    Ok(Trained {
        state,
        initial_loss,
        final_loss,
    })
}

#[derive(Serialize)]
struct Summary {
    variant: String,
    images: usize,
    epochs: usize,
    steps: usize,
    initial_loss: f64,
    final_loss: f64,
}

pub fn train(a: &TrainArgs) -> Result<bool> {
    let mut cfg = a.common.load()?;
    if let Some(m) = &a.manifest {
        cfg.data.manifest = Some(m.clone());
    }
    if let Some(p) = &a.preset {
        cfg.model.preset = p.clone();
    }
    if let Some(v) = &a.variant {
        cfg.model.variant = v.clone();
    }
    let t = &mut cfg.train;
    if let Some(v) = a.epochs {
        t.epochs = v;
    }
    if a.max_steps.is_some() {
        t.max_steps = a.max_steps;
    }
    if let Some(v) = a.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = a.lr_latent {
        t.lr_latent = v;
    }
    if let Some(v) = a.lr_generator {
        t.lr_generator = v;
    }
    if let Some(v) = a.lr_glo {
        t.lr_glo = v;
    }
    if a.pyramid_levels.is_some() {
        t.pyramid_levels = a.pyramid_levels;
    }
    if let Some(v) = a.checkpoint_every {
        t.checkpoint_every = v;
    }
    if let Some(s) = a.common.seed {
        t.seed = s;
    }
    cfg.train.validate()?;
    let variant = parse_variant(&cfg.model.variant)?;
    let (lat, gen) = toy_arch_templates(&cfg.model.preset)?;
    let (ds, manifest) = load_dataset(&cfg)?;

    let dir = cfg.start_run("train")?;
    let ckpt_dir = dir.join("checkpoints");
    create_dir(&ckpt_dir)?;
    let ids = manifest.ids();
    let hash = manifest.hash();
    let sink = CheckpointSink {
        dir: &ckpt_dir,
        ids: &ids,
        manifest_hash: Some(hash.clone()),
    };
    let out = run_training(&cfg.train, variant, &lat, &gen, &ds, Some(sink))?;

    write(&dir.join("loss.csv"), loss_history_csv(&out.state.history, "train"))?;
    let ck = Checkpoint::from_state(&out.state, &cfg.train, &ids, Some(hash), true)?;
    save_checkpoint(&dir.join("final.lcmk"), &ck)?;
    let summary = Summary {
        variant: variant_label(variant),
        images: ds.len(),
        epochs: out.state.epoch,
        steps: out.state.step,
        initial_loss: out.initial_loss,
        final_loss: out.final_loss,
    };
    write(&dir.join("summary.toml"), toml::to_string(&summary)?)?;
    println!(
        "trained {} on {} images for {} steps: loss {:.6} -> {:.6}",
        summary.variant, summary.images, summary.steps, summary.initial_loss, summary.final_loss
    );
    println!("output: {}", dir.display());
    Ok(true)
}
