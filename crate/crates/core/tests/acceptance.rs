//! End-to-end acceptance run on the toy configuration.
//!
//! Every criterion prints one `PASS` or `FAIL` line straight to stderr so the
//! verdicts show up even when the harness captures test output. The single
//! test fails if any criterion fails.

mod common;

use std::io::Write as _;
use std::time::{Duration, Instant};

use lcm::data::{synthetic_shapes, Dataset};
use lcm::degrade::{center_mask, half_mask, lanczos_down, random_mask, Degradation, DegradationSpec, Side};
use lcm::gradcheck::{run_suite, SuiteConfig};
use lcm::io::{load_checkpoint, load_image_native, save_checkpoint, save_image, Checkpoint};
use lcm::losses::{laplacian_pyramid, reconstruct_pyramid, PyramidSpec};
use lcm::metrics::{evaluate, mse_region, Region, Scored};
use lcm::nets::{toy_arch_templates, ArchSpec};
use lcm::restore::{restore_manifold, restore_zspace, RestorationResult, RestoreConfig, RestoreMode};
use lcm::rng::{derive_seed, streams};
use lcm::train::{
    calibrated_loss, eval_loss, loss_history_csv, reconstruct, train_with, Latents, Split, TrainConfig,
    TrainEvent, TrainState, Variant,
};
use lcm::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 0;
const TOY_IMAGES: usize = 64;
const SIZE: usize = 32;
const TOY_STEPS: usize = 2000;
const BATCH: usize = 16;
const RESTORE_IMAGES: usize = 10;
const RESTORE_STEPS: usize = 1000;
const HOLE: usize = 12;

fn report(id: usize, pass: bool, name: &str, detail: &str) {
    let line = format!("criterion {id:>2} {} {name}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn note(text: &str) {
    let _ = std::io::stderr().write_all(format!("    {text}\n").as_bytes());
}

fn toy_config(steps: usize) -> TrainConfig {
    TrainConfig {
        max_steps: Some(steps),
        batch_size: BATCH,
        seed: SEED,
        ..TrainConfig::default()
    }
}

struct Run {
    state: TrainState<f32>,
    initial: f64,
    final_loss: f64,
    csv: String,
    step_bits: Vec<u64>,
    elapsed: Duration,
    max_phi: f64,
}

/// Trains from scratch, tracking the largest |φ| seen after any step.
fn run(ds: &Dataset<f32>, cfg: &TrainConfig, variant: Variant, lat: &ArchSpec, gen: &ArchSpec) -> Run {
    let start = Instant::now();
    let probe = TrainState::new(ds, cfg, variant, Some(lat), gen).unwrap();
    let initial = calibrated_loss(&probe, ds).unwrap();
    let mut max_phi = 0.0f64;
    let state = train_with(ds, cfg, variant, Some(lat), gen, &mut |s, e| {
        if let TrainEvent::Step = e {
            max_phi = max_phi.max(s.latents.max_abs_phi() as f64);
        }
        Ok(())
    })
    .unwrap();
    let elapsed = start.elapsed();
    let final_loss = eval_loss(&state, ds, Split::Train, &RestoreConfig::default()).unwrap();
    Run {
        csv: loss_history_csv(&state.history, "train"),
        step_bits: state.step_losses.iter().map(|l| l.to_bits()).collect(),
        state,
        initial,
        final_loss,
        elapsed,
        max_phi,
    }
}

fn restore_all(
    state: &TrainState<f32>,
    lat: &ArchSpec,
    ds: &Dataset<f32>,
    specs: &[DegradationSpec],
    mode: RestoreMode,
    lr: f64,
) -> Vec<RestorationResult<f32>> {
    let Latents::Lcm { noise, .. } = &state.latents else { panic!("LCM state expected") };
    specs
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            let y = spec.apply(&ds.images[i]).unwrap();
            let cfg = RestoreConfig::<f32> {
                steps: RESTORE_STEPS,
                lr,
                seed: derive_seed(SEED, streams::RESTORE_INIT, i as u64),
                ..RestoreConfig::for_mode(mode)
            };
            match mode {
                RestoreMode::Manifold => restore_manifold(&state.generator, lat, noise, &y, spec, &cfg).unwrap(),
                _ => restore_zspace(&state.generator, lat, noise, &y, spec, &cfg).unwrap(),
            }
        })
        .collect()
}

fn mean(v: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.into_iter().collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn gradient_integrity() -> bool {
    let r = run_suite(&SuiteConfig::default()).unwrap();
    let fast = r.elapsed < Duration::from_secs(120);
    let worst = r.cases.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
    let min_instances = r.cases.iter().map(|c| c.instances).min().unwrap_or(0);
    let pass = r.passed() && fast && min_instances >= 20;
    report(
        1,
        pass,
        "gradient integrity",
        &format!("{} cases, ≥{min_instances} instances each, worst rel err {worst:.2e}, {:.1?}", r.cases.len(), r.elapsed),
    );
    pass
}

fn oracle_equivalence() -> bool {
    let results = common::oracles::all(50);
    let pass = results.iter().all(|(_, e)| *e <= 1e-5);
    let detail = results.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect::<Vec<_>>().join(", ");
    report(2, pass, "oracle equivalence", &detail);
    pass
}

fn structural_invariants(max_phi: f64) -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut recon = 0.0f64;
    let mut flat = 0.0f64;
    for (h, w) in [(32, 32), (17, 9), (8, 12)] {
        let x = Tensor::<f64>::uniform(&[1, 3, h, w], -1.0, 1.0, &mut rng).unwrap();
        let levels = (h.min(w) as f64).log2().floor() as usize;
        let back = reconstruct_pyramid(&laplacian_pyramid(&x, &PyramidSpec::new(levels).unwrap()).unwrap()).unwrap();
        recon = back.data().iter().zip(x.data()).map(|(a, b)| (a - b).abs()).fold(recon, f64::max);
    }
    for factor in [1, 2, 4, 8] {
        let c = Tensor::<f64>::from_vec(&[1, 2, 32, 32], vec![0.37; 2048]).unwrap();
        flat = lanczos_down(&c, factor).unwrap().data().iter().map(|v| (v - 0.37).abs()).fold(flat, f64::max);
    }
    let center = center_mask(128, 128, 50, 50).unwrap().to_tensor::<f32>();
    let zeros = center.data().iter().filter(|&&v| v == 0.0).count();
    let binary = center.data().iter().all(|&v| v == 0.0 || v == 1.0);
    let halves = [Side::Left, Side::Right, Side::Top, Side::Bottom]
        .into_iter()
        .all(|s| half_mask(128, 128, s).missing_count() == 64 * 128);
    let random_exact = (0..20u64).all(|s| random_mask(40, 30, 0.25, s).unwrap().missing_count() == 300);
    let pass = max_phi <= 0.01 && recon <= 1e-5 && flat <= 1e-6 && zeros == 2500 && binary && halves && random_exact;
    report(
        3,
        pass,
        "structural invariants",
        &format!(
            "max |φ| over all steps {max_phi:.4}, pyramid recon {recon:.1e}, Lanczos constant {flat:.1e}, \
             center 50×50 zeros {zeros}, halves {halves}, random counts {random_exact}"
        ),
    );
    pass
}

fn convergence(a: &Run, b: &Run) -> bool {
    let ratio = a.final_loss / a.initial;
    let identical = a.csv == b.csv && a.step_bits == b.step_bits;
    let fast = a.elapsed < Duration::from_secs(15 * 60);
    let pass = ratio < 0.25 && identical && fast;
    report(
        4,
        pass,
        "toy training convergence",
        &format!(
            "loss {:.5} -> {:.5} (ratio {ratio:.3}), {:.0?} for {TOY_STEPS} steps, reruns bit-identical {identical}",
            a.initial, a.final_loss, a.elapsed
        ),
    );
    pass
}

fn constraint_ordering(lcm_loss: f64, map_loss: f64) -> bool {
    let pass = map_loss <= lcm_loss * 1.05;
    report(5, pass, "GLO map fits no worse than LCM", &format!("glo-map {map_loss:.5} vs lcm {lcm_loss:.5} (+5% slack)"));
    pass
}

fn vector_trend(ds: &Dataset<f32>, cfg: &TrainConfig, map: f64, lat: &ArchSpec, gen: &ArchSpec) -> bool {
    let loss = |v: Variant| {
        let r = run(ds, cfg, v, lat, gen);
        note(&format!("sweep {:<12} train loss {:.5} ({:.0?})", v.name(), r.final_loss, r.elapsed));
        r.final_loss
    };
    let vectors: Vec<(usize, f64)> = [64, 128, 256].into_iter().map(|d| (d, loss(Variant::GloVector(d)))).collect();
    let monotone = vectors.windows(2).all(|w| w[1].1 <= w[0].1);
    let map_best = vectors.iter().all(|(_, l)| map < *l);
    let detail = vectors.iter().map(|(d, l)| format!("d={d} {l:.5}")).collect::<Vec<_>>().join(", ");
    report(
        6,
        monotone && map_best,
        "vector GLO underfitting trend",
        &format!("{detail}, map {map:.5}; non-increasing {monotone}, map beats all {map_best}"),
    );
    monotone && map_best
}

fn restoration(ds: &Dataset<f32>, manifold: &[RestorationResult<f32>], specs: &[DegradationSpec]) -> bool {
    let baseline = ds.mean_image().unwrap();
    let mut known_ok = 0;
    let mut hole_ok = 0;
    let mut rows = Vec::new();
    for (i, (r, spec)) in manifold.iter().zip(specs).enumerate() {
        let Degradation::Inpaint(mask) = &spec.kind else { unreachable!() };
        let known = mse_region(&r.image, &ds.images[i], mask, Region::Known).unwrap();
        let hole = mse_region(&r.image, &ds.images[i], mask, Region::Hole).unwrap();
        let base = mse_region(&baseline, &ds.images[i], mask, Region::Hole).unwrap();
        known_ok += usize::from(known < 0.01);
        hole_ok += usize::from(hole < base);
        rows.push(format!("{known:.4}/{hole:.4}/{base:.4}"));
    }
    let pass = known_ok == manifold.len() && hole_ok >= 8;
    note(&format!("known/hole/mean-image hole MSE: {}", rows.join(" ")));
    report(
        7,
        pass,
        "restoration efficacy",
        &format!("known MSE < 0.01 on {known_ok}/{}, hole beats mean image on {hole_ok}/{}", manifold.len(), manifold.len()),
    );
    pass
}

fn manifold_vs_zspace(
    ds: &Dataset<f32>,
    manifold: &[RestorationResult<f32>],
    zspace: &[RestorationResult<f32>],
    specs: &[DegradationSpec],
) -> bool {
    for (mode, results) in [(RestoreMode::Manifold, manifold), (RestoreMode::ZSpace, zspace)] {
        let items: Vec<Scored<'_, f32>> = results
            .iter()
            .enumerate()
            .map(|(i, r)| Scored { id: &ds.ids[i], restored: &r.image, truth: &ds.images[i], spec: &specs[i], mode: Some(mode) })
            .collect();
        for line in evaluate(&items).unwrap().to_csv().lines() {
            note(line);
        }
    }
    let m = mean(manifold.iter().map(|r| r.data_fit));
    let z = mean(zspace.iter().map(|r| r.data_fit));
    let pass = z <= m && manifold.len() >= 10;
    report(
        8,
        pass,
        "z-space fits known pixels no worse than manifold",
        &format!("mean known-pixel energy zspace {z:.6} vs manifold {m:.6} over {} images", manifold.len()),
    );
    pass
}

/// Penalizes the latent map in z-space, where the penalty acts on the
/// optimized variable itself. Its curvature is 2λ, so plain gradient descent
/// at λ = 1 needs lr < 1; every λ shares lr 0.5.
fn penalty_monotonicity(state: &TrainState<f32>, lat: &ArchSpec, ds: &Dataset<f32>, specs: &[DegradationSpec]) -> bool {
    let fits: Vec<(f64, f64)> = [0.0, 1e-3, 1.0]
        .into_iter()
        .map(|lambda| {
            let penalized: Vec<DegradationSpec> = specs.iter().map(|s| s.clone().with_penalty(lambda).unwrap()).collect();
            let rs = restore_all(state, lat, ds, &penalized, RestoreMode::ZSpace, 0.5);
            (lambda, mean(rs.iter().map(|r| r.data_fit)))
        })
        .collect();
    let pass = fits.windows(2).all(|w| w[1].1 >= w[0].1);
    let detail = fits.iter().map(|(l, f)| format!("λ={l} {f:.6}")).collect::<Vec<_>>().join(", ");
    report(9, pass, "penalty monotonicity", &format!("mean known-pixel fit {detail}"));
    pass
}

fn persistence(state: &TrainState<f32>, cfg: &TrainConfig, ds: &Dataset<f32>) -> bool {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("toy.lcmk");
    let ck = Checkpoint::from_state(state, cfg, &ds.ids, None, true).unwrap();
    save_checkpoint(&path, &ck).unwrap();
    let loaded = load_checkpoint(&path).unwrap().into_state().unwrap();
    let exact = (0..ds.len()).all(|i| {
        let a = reconstruct(state, i).unwrap();
        let b = reconstruct(&loaded, i).unwrap();
        a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
    });

    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut drift = 0.0f64;
    for (k, c) in [1usize, 3].into_iter().enumerate() {
        let x = Tensor::<f32>::uniform(&[1, c, 19, 23], 0.0, 1.0, &mut rng).unwrap();
        let png = dir.path().join(format!("x{k}.png"));
        save_image(&x, &png).unwrap();
        let back = load_image_native::<f32>(&png).unwrap();
        assert_eq!(back.dims(), x.dims());
        drift = back.data().iter().zip(x.data()).map(|(a, b)| (a - b).abs() as f64).fold(drift, f64::max);
    }
    let pass = exact && drift <= 1.0 / 255.0;
    report(10, pass, "persistence", &format!("checkpoint forward bit-exact {exact}, PNG drift {:.3}/255", drift * 255.0));
    pass
}

#[test]
fn primary_criteria() {
    let (lat, gen) = toy_arch_templates("toy32").unwrap();
    let mut passed = Vec::new();
    passed.push(gradient_integrity());
    passed.push(oracle_equivalence());

    let ds = synthetic_shapes::<f32>(TOY_IMAGES, SIZE, SEED).unwrap();
    let cfg = toy_config(TOY_STEPS);
    let first = run(&ds, &cfg, Variant::Lcm, &lat, &gen);
    let second = run(&ds, &cfg, Variant::Lcm, &lat, &gen);
    passed.push(structural_invariants(first.max_phi.max(second.max_phi)));
    passed.push(convergence(&first, &second));
    drop(second);

    let map = run(&ds, &cfg, Variant::GloMap, &lat, &gen);
    passed.push(constraint_ordering(first.final_loss, map.final_loss));
    passed.push(vector_trend(&ds, &cfg, map.final_loss, &lat, &gen));
    drop(map);

    let specs: Vec<DegradationSpec> = (0..RESTORE_IMAGES)
        .map(|_| DegradationSpec::new(Degradation::Inpaint(center_mask(SIZE, SIZE, HOLE, HOLE).unwrap())).unwrap())
        .collect();
    let manifold = restore_all(&first.state, &lat, &ds, &specs, RestoreMode::Manifold, 1.0);
    let zspace = restore_all(&first.state, &lat, &ds, &specs, RestoreMode::ZSpace, 1.0);
    passed.push(restoration(&ds, &manifold, &specs));
    passed.push(manifold_vs_zspace(&ds, &manifold, &zspace, &specs));
    passed.push(penalty_monotonicity(&first.state, &lat, &ds, &specs));
    passed.push(persistence(&first.state, &cfg, &ds));

    let failed: Vec<usize> = passed.iter().enumerate().filter(|(_, p)| !**p).map(|(i, _)| i + 1).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
