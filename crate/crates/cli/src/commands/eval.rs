use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Result;

use lcm::degrade::{Degradation, DegradationSpec, Mask};
use lcm::io::{load_image, load_image_native};
use lcm::metrics::{evaluate_lists, EvalReport};
use lcm::LcmError;

use super::{list_pngs, stem, write};
use crate::config::invalid;
use crate::EvalArgs;

fn by_id(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    Ok(list_pngs(dir)?.into_iter().map(|p| (stem(&p), p)).collect())
}

/// Pairs restored and ground-truth images by file stem and scores them.
pub(crate) fn score_dirs(restored: &Path, truth: &Path, masks: Option<&Path>, task: &str, factor: usize) -> Result<EvalReport> {
    let r = by_id(restored)?;
    let t = by_id(truth)?;
    if r.keys().ne(t.keys()) {
        let unmatched = r
            .keys()
            .find(|k| !t.contains_key(*k))
            .or_else(|| t.keys().find(|k| !r.contains_key(*k)))
            .cloned()
            .unwrap_or_default();
        return Err(LcmError::Contract(format!(
            "{} restored vs {} ground-truth images; `{unmatched}` has no partner",
            r.len(),
            t.len()
        ))
        .into());
    }
    if r.is_empty() {
        return Err(invalid(format!("no PNG images in {}", restored.display())));
    }
    let mut ids = Vec::new();
    let mut restored_imgs = Vec::new();
    let mut truth_imgs = Vec::new();
    let mut specs = Vec::new();
    for (id, rp) in &r {
        let x_hat = load_image_native::<f64>(rp)?;
        let [_, c, h, w] = x_hat.nchw()?;
        let x = load_image::<f64>(&t[id], c, h, w)?;
        let kind = match (masks, task) {
            (Some(dir), _) => Degradation::Inpaint(Mask::load_png(&dir.join(format!("{id}.png")))?),
            (None, "inpaint") => Degradation::Inpaint(Mask::ones(h, w)),
            (None, "sr") => Degradation::Superres { factor },
            (None, "color") => Degradation::Colorize,
            (None, other) => return Err(invalid(format!("unknown task `{other}` (inpaint, sr, color)"))),
        };
        ids.push(id.clone());
        restored_imgs.push(x_hat);
        truth_imgs.push(x);
        specs.push(DegradationSpec::new(kind)?);
    }
    Ok(evaluate_lists(&ids, &restored_imgs, &truth_imgs, &specs, None)?)
}

pub fn eval(a: &EvalArgs) -> Result<bool> {
    let mut cfg = a.common.load()?;
    let e = &mut cfg.eval;
    if let Some(v) = &a.restored {
        e.restored = Some(v.clone());
    }
    if let Some(v) = &a.truth {
        e.truth = Some(v.clone());
    }
    if let Some(v) = &a.masks {
        e.masks = Some(v.clone());
    }
    if let Some(v) = &a.task {
        e.task = v.clone();
    }
    let restored = e.restored.clone().ok_or_else(|| invalid("--restored is required"))?;
    let truth = e.truth.clone().ok_or_else(|| invalid("--truth is required"))?;
    let report = score_dirs(&restored, &truth, e.masks.as_deref(), &e.task, cfg.restore.factor)?;
    let dir = cfg.start_run("eval")?;
    write(&dir.join("eval.csv"), report.to_csv())?;
    let m = &report.mean;
    println!(
        "{} images: mse_full {:.6} mse_known {} mse_hole {} lap_l1 {:.6}",
        report.rows.len(),
        m.mse_full,
        m.mse_known.map_or("-".into(), |v| format!("{v:.6}")),
        m.mse_hole.map_or("-".into(), |v| format!("{v:.6}")),
        m.lap_l1
    );
    println!("output: {}", dir.display());
    Ok(true)
}
