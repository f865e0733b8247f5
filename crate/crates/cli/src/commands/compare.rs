use std::fmt::Write as _;

use anyhow::Result;

use lcm::degrade::Degradation;
use lcm::metrics::{evaluate, Scored};
use lcm::nets::toy_arch_templates;
use lcm::restore::RestoreMode;
use lcm::train::{TrainState, Variant};

use super::restore::Restorer;
use super::train::{load_dataset, run_training};
use super::write;
use crate::config::{parse_variant, variant_label, RestoreSection};
use crate::CompareArgs;

/// Scalars in each latent; for LCM the size of the latent map.
fn z_dim(state: &TrainState<f32>) -> usize {
    let [c, h, w] = state.generator.arch().input;
    match state.variant {
        Variant::GloVector(d) => d,
        _ => c * h * w,
    }
}

fn claim(out: &mut String, name: &str, holds: bool, detail: String) {
    let _ = writeln!(out, "{name},{holds},{detail}");
    println!("{:<5} {name}: {detail}", if holds { "yes" } else { "no" });
}

pub fn compare(a: &CompareArgs) -> Result<bool> {
    let mut cfg = a.common.load()?;
    if let Some(m) = &a.manifest {
        cfg.data.manifest = Some(m.clone());
    }
    if let Some(p) = &a.preset {
        cfg.model.preset = p.clone();
    }
    if a.max_steps.is_some() {
        cfg.train.max_steps = a.max_steps;
    }
    if let Some(b) = a.batch_size {
        cfg.train.batch_size = b;
    }
    if let Some(s) = a.common.seed {
        cfg.train.seed = s;
        cfg.restore.seed = s;
    }
    let c = &mut cfg.compare;
    if let Some(v) = &a.variants {
        c.variants = v.clone();
    }
    if let Some(v) = a.restore_images {
        c.restore_images = v;
    }
    if let Some(v) = a.restore_steps {
        c.restore_steps = v;
    }
    if let Some(v) = &a.mask {
        c.mask = v.clone();
    }
    cfg.train.validate()?;
    let variants: Vec<Variant> = cfg.compare.variants.iter().map(|v| parse_variant(v)).collect::<Result<_>>()?;
    let (lat, gen) = toy_arch_templates(&cfg.model.preset)?;
    let (ds, manifest) = load_dataset(&cfg)?;
    let dir = cfg.start_run("compare")?;

    let mut table = String::from("variant,z_dim,initial_loss,train_loss\n");
    let mut losses = Vec::new();
    let mut lcm_state = None;
    for &v in &variants {
        let t = run_training(&cfg.train, v, &lat, &gen, &ds, None)?;
        let _ = writeln!(table, "{},{},{},{}", variant_label(v), z_dim(&t.state), t.initial_loss, t.final_loss);
        println!("{:<12} train loss {:.6}", variant_label(v), t.final_loss);
        losses.push((v, t.final_loss));
        if v == Variant::Lcm {
            lcm_state = Some(t.state);
        }
    }
    write(&dir.join("summary.csv"), table)?;

    let mut claims = String::from("claim,holds,detail\n");
    let loss_of = |want: Variant| losses.iter().find(|(v, _)| *v == want).map(|(_, l)| *l);
    if let (Some(map), Some(lcm_loss)) = (loss_of(Variant::GloMap), loss_of(Variant::Lcm)) {
        claim(
            &mut claims,
            "glo_map_fits_no_worse_than_lcm",
            map <= lcm_loss * 1.05,
            format!("glo-map {map:.6} vs lcm {lcm_loss:.6} (+5% slack)"),
        );
    }
    let mut vectors: Vec<(usize, f64)> = losses
        .iter()
        .filter_map(|(v, l)| match v {
            Variant::GloVector(d) => Some((*d, *l)),
            _ => None,
        })
        .collect();
    vectors.sort_by_key(|(d, _)| *d);
    if vectors.len() >= 2 {
        let monotone = vectors.windows(2).all(|w| w[1].1 <= w[0].1);
        let detail = vectors.iter().map(|(d, l)| format!("d={d}: {l:.6}")).collect::<Vec<_>>().join("; ");
        claim(&mut claims, "vector_loss_non_increasing_in_d", monotone, detail);
    }
    if let (Some(map), false) = (loss_of(Variant::GloMap), vectors.is_empty()) {
        let best = vectors.iter().map(|(_, l)| *l).fold(f64::INFINITY, f64::min);
        claim(
            &mut claims,
            "glo_map_beats_every_vector",
            vectors.iter().all(|(_, l)| map < *l),
            format!("glo-map {map:.6} vs best vector {best:.6}"),
        );
    }

    if let (Some(state), true) = (lcm_state, cfg.compare.restore_images > 0) {
        let ck = lcm::io::Checkpoint::from_state(&state, &cfg.train, &manifest.ids(), Some(manifest.hash()), false)?;
        let k = cfg.compare.restore_images.min(ds.len());
        let mut rows = String::new();
        let mut known = [0.0f64; 2];
        for (slot, mode) in [RestoreMode::Manifold, RestoreMode::ZSpace].into_iter().enumerate() {
            let section = RestoreSection {
                task: "inpaint".into(),
                mask: cfg.compare.mask.clone(),
                mode: Some(mode.name().into()),
                steps: cfg.compare.restore_steps,
                seed: cfg.restore.seed,
                ..RestoreSection::default()
            };
            let restorer = Restorer::new(&ck, &section)?;
            let mut images = Vec::with_capacity(k);
            let mut specs = Vec::with_capacity(k);
            for i in 0..k {
                let spec = restorer.spec_for(i)?;
                let y = spec.apply(&ds.images[i])?;
                let r = restorer.run(&y, &spec, i)?;
                if let Degradation::Inpaint(_) = spec.kind {
                    known[slot] += r.data_fit / k as f64;
                }
                images.push(r.image);
                specs.push(spec);
            }
            let items: Vec<Scored<'_, f32>> = (0..k)
                .map(|i| Scored {
                    id: &ds.ids[i],
                    restored: &images[i],
                    truth: &ds.images[i],
                    spec: &specs[i],
                    mode: Some(mode),
                })
                .collect();
            let csv = evaluate(&items)?.to_csv();
            // Keep one header across both modes.
            let body = if slot == 0 { csv.as_str() } else { csv.split_once('\n').map_or("", |(_, b)| b) };
            rows.push_str(body);
        }
        write(&dir.join("restoration.csv"), rows)?;
        claim(
            &mut claims,
            "zspace_known_energy_not_above_manifold",
            known[1] <= known[0],
            format!("zspace {:.6} vs manifold {:.6} over {k} images", known[1], known[0]),
        );
    }
    write(&dir.join("claims.csv"), claims)?;
    println!("output: {}", dir.display());
    Ok(true)
}
