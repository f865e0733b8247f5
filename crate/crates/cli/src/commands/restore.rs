use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rayon::prelude::*;

use lcm::degrade::{Degradation, DegradationSpec};
use lcm::io::{load_checkpoint, load_image, save_image, Checkpoint};
use lcm::restore::{energy_trace_csv, restore_glo, restore_manifold, restore_zspace, RestorationResult, RestoreConfig, RestoreMode};
use lcm::rng::{derive_seed, streams};
use lcm::Tensor;

use super::{create_dir, list_pngs, stem, worker_count, write};
use crate::config::{degradation, invalid, parse_mode, RestoreSection};
use crate::RestoreArgs;

/// Everything needed to restore one image with a loaded checkpoint.
pub(crate) struct Restorer<'a> {
    pub ckpt: &'a Checkpoint,
    pub mode: RestoreMode,
    pub section: &'a RestoreSection,
}

impl Restorer<'_> {
    pub fn new<'a>(ckpt: &'a Checkpoint, section: &'a RestoreSection) -> Result<Restorer<'a>> {
        let mode = match &section.mode {
            Some(m) => parse_mode(m)?,
            None => ckpt.variant.restore_mode(),
        };
        let lcm_model = ckpt.latent_arch.is_some() && ckpt.noise.is_some();
        match mode {
            RestoreMode::Manifold | RestoreMode::ZSpace if !lcm_model => {
                return Err(invalid(format!("{} restoration needs an LCM checkpoint", mode.name())))
            }
            RestoreMode::Glo if ckpt.glo_kind().is_none() => {
                return Err(invalid("glo restoration needs a GLO checkpoint"))
            }
            _ => {}
        }
        Ok(Restorer { ckpt, mode, section })
    }

    /// Per-image seeds derive from the run seed and the image's position.
    pub fn spec_for(&self, index: usize) -> Result<DegradationSpec> {
        let [_, h, w] = self.ckpt.generator.arch().output;
        degradation(self.section, h, w, derive_seed(self.section.seed, streams::DATA, index as u64))
    }

    pub fn run(&self, y: &Tensor<f32>, spec: &DegradationSpec, index: usize) -> Result<RestorationResult<f32>> {
        let mut cfg = RestoreConfig::<f32>::for_mode(self.mode);
        cfg.steps = self.section.steps;
        if let Some(lr) = self.section.lr {
            cfg.lr = lr;
        }
        cfg.seed = derive_seed(self.section.seed, streams::RESTORE_INIT, index as u64);
        cfg.validate()?;
        let g = &self.ckpt.generator;
        let r = match self.mode {
            RestoreMode::Manifold | RestoreMode::ZSpace => {
                let lat = self.ckpt.latent_arch.as_ref().expect("checked in Restorer::new");
                let noise = self.ckpt.noise.as_ref().expect("checked in Restorer::new");
                if self.mode == RestoreMode::Manifold {
                    restore_manifold(g, lat, noise, y, spec, &cfg)?
                } else {
                    restore_zspace(g, lat, noise, y, spec, &cfg)?
                }
            }
            RestoreMode::Glo => {
                let kind = self.ckpt.glo_kind().expect("checked in Restorer::new");
                restore_glo(g, kind, y, spec, &cfg)?
            }
        };
        Ok(r)
    }
}

struct Row {
    id: String,
    result: RestorationResult<f32>,
}

fn restore_one(r: &Restorer<'_>, path: &Path, index: usize, dir: &Path) -> Result<Row> {
    let [c, h, w] = r.ckpt.generator.arch().output;
    let id = stem(path);
    let x = load_image::<f32>(path, c, h, w)?;
    let spec = r.spec_for(index)?;
    let y = spec.apply(&x)?;
    let result = r.run(&y, &spec, index).with_context(|| format!("restoring {id}"))?;
    save_image(&result.image, &dir.join("restored").join(format!("{id}.png")))?;
    save_image(&y, &dir.join("observed").join(format!("{id}.png")))?;
    if let Degradation::Inpaint(m) = &spec.kind {
        m.save_png(&dir.join("masks").join(format!("{id}.png")))?;
    }
    write(&dir.join("traces").join(format!("{id}.csv")), energy_trace_csv(&result.energy_trace))?;
    Ok(Row { id, result })
}

pub fn restore(a: &RestoreArgs) -> Result<bool> {
    let mut cfg = a.common.load()?;
    let r = &mut cfg.restore;
    if let Some(v) = &a.checkpoint {
        r.checkpoint = Some(v.clone());
    }
    if let Some(v) = &a.input {
        r.input = Some(v.clone());
    }
    if let Some(v) = &a.task {
        r.task = v.clone();
    }
    if let Some(v) = &a.mask {
        r.mask = v.clone();
    }
    if let Some(v) = a.factor {
        r.factor = v;
    }
    if let Some(v) = &a.mode {
        r.mode = Some(v.clone());
    }
    if let Some(v) = a.lambda {
        r.lambda = v;
    }
    if let Some(v) = a.pyramid_term {
        r.pyramid_term = v;
    }
    if let Some(v) = a.steps {
        r.steps = v;
    }
    if a.lr.is_some() {
        r.lr = a.lr;
    }
    if let Some(s) = a.common.seed {
        r.seed = s;
    }

    let ckpt_path = cfg
        .restore
        .checkpoint
        .clone()
        .ok_or_else(|| invalid("no checkpoint given (--checkpoint or [restore] checkpoint)"))?;
    let input = cfg
        .restore
        .input
        .clone()
        .ok_or_else(|| invalid("no input given (--input or [restore] input)"))?;
    let ckpt = load_checkpoint(&ckpt_path)?;
    let restorer = Restorer::new(&ckpt, &cfg.restore)?;
    // Validate the flags once before touching the filesystem.
    restorer.spec_for(0)?;
    let files: Vec<PathBuf> = if input.is_dir() {
        list_pngs(&input)?
    } else {
        vec![input.clone()]
    };
    if files.is_empty() {
        return Err(invalid(format!("no PNG images in {}", input.display())));
    }

    let dir = cfg.start_run("restore")?;
    for sub in ["restored", "observed", "traces"] {
        create_dir(&dir.join(sub))?;
    }
    if cfg.restore.task == "inpaint" {
        create_dir(&dir.join("masks"))?;
    }
    let workers = worker_count(files.len(), a.common.deterministic);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build()?;
    let results: Vec<Result<Row>> = pool.install(|| {
        files
            .par_iter()
            .enumerate()
            .map(|(i, f)| restore_one(&restorer, f, i, &dir))
            .collect()
    });

    let mut csv = String::from("id,mode,best_energy,best_step,data_fit,latent_norm_sq,degenerate\n");
    for row in results {
        let Row { id, result: res } = row?;
        let _ = writeln!(
            csv,
            "{id},{},{},{},{},{},{}",
            res.mode.name(),
            res.best_energy,
            res.best_step,
            res.data_fit,
            res.latent_norm_sq,
            res.degenerate
        );
        if res.degenerate {
            log::warn!("{id}: the mask leaves no pixel observed");
        }
    }
    write(&dir.join("summary.csv"), csv)?;
    println!("restored {} image(s) in {} mode", files.len(), restorer.mode.name());
    println!("output: {}", dir.display());
    Ok(true)
}
