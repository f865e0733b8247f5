//! The finite-difference suite: every differentiable primitive, the losses,
//! the three energies and a composed latent-net + generator model, each on
//! many random small instances in 64-bit precision.

use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{analytic_gradients, evaluate, rel_error};
use crate::degrade::{center_mask, energy_var, lanczos_matrix, random_mask, Degradation, DegradationSpec};
use crate::error::{LcmError, Result};
use crate::losses::{combined_loss_var, gaussian_down_var, lap_l1_var, mse_var, PyramidSpec};
use crate::nets::{init_latent_codec, init_noise, toy_arch_templates, Bound, GeneratorModel, Mode};
use crate::rng::stream_rng;
use crate::tape::{Mat, NormMode, NormStats, Tape, Var};
use crate::tensor::Tensor;

/// Deliberate defects used to confirm the suite can fail.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// Negates every analytic gradient before comparison.
    SignFlip,
}

#[derive(Clone, Debug)]
pub struct SuiteConfig {
    /// Architecture preset of the composed-model case.
    pub preset: String,
    /// A case passes when every instance's error is strictly below this.
    pub tolerance: f64,
    pub instances: usize,
    pub step: f64,
    pub seed: u64,
    /// Cap on checked coordinates per input tensor (spread evenly).
    pub max_coords: usize,
    pub fault: Option<Fault>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            preset: "tiny16".into(),
            tolerance: 1e-5,
            instances: 20,
            step: 1e-5,
            seed: 0,
            max_coords: 4096,
            fault: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CaseReport {
    pub name: &'static str,
    pub instances: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug)]
pub struct SuiteReport {
    pub cases: Vec<CaseReport>,
    pub elapsed: Duration,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.cases.iter().all(|c| c.passed)
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        for c in &self.cases {
            s.push_str(&format!(
                "{:<24} {:>3} instances  max rel err {:.3e}  {}\n",
                c.name,
                c.instances,
                c.max_rel_error,
                if c.passed { "ok" } else { "FAIL" }
            ));
        }
        s.push_str(&format!("{} cases in {:.1?}\n", self.cases.len(), self.elapsed));
        s
    }
}

type Build = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>;

/// One random instance: a scalar function and the point to check it at.
struct Instance {
    build: Build,
    inputs: Vec<Tensor<f64>>,
}

fn uniform(rng: &mut ChaCha8Rng, dims: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::uniform(dims, lo, hi, rng).expect("valid dims")
}

/// Uniform on `[-1, 1]` with `|v| ≥ 0.05`, keeping clear of kinks at 0.
fn away_from_zero(rng: &mut ChaCha8Rng, dims: &[usize]) -> Tensor<f64> {
    uniform(rng, dims, -1.0, 1.0).map(|v| if v.abs() < 0.05 { v.signum() * 0.05 + v } else { v })
}

/// Reduces an arbitrary node to a scalar with random weights so that
/// gradients of shape-preserving ops are not trivially constant.
fn weighted_sum(t: &mut Tape<f64>, v: Var, weights: &Tensor<f64>) -> Result<Var> {
    let m = t.mul_const(v, weights.clone())?;
    Ok(t.sum(m))
}

fn nchw(rng: &mut ChaCha8Rng, max_n: usize, max_c: usize, lo_hw: usize, max_hw: usize) -> [usize; 4] {
    [
        rng.gen_range(1..=max_n),
        rng.gen_range(1..=max_c),
        rng.gen_range(lo_hw..=max_hw),
        rng.gen_range(lo_hw..=max_hw),
    ]
}

fn case_conv(rng: &mut ChaCha8Rng) -> Instance {
    let k = [1, 3, 5][rng.gen_range(0..3)];
    let pad = rng.gen_range(0..=k / 2);
    let stride = rng.gen_range(1..=2);
    let [n, c, _, _] = nchw(rng, 2, 3, 1, 1);
    let hw = rng.gen_range(k.max(2)..=7);
    let co = rng.gen_range(1..=3);
    let x = uniform(rng, &[n, c, hw, hw], -1.0, 1.0);
    let w = uniform(rng, &[co, c, k, k], -1.0, 1.0);
    let b = uniform(rng, &[co], -1.0, 1.0);
    let ho = (hw + 2 * pad - k) / stride + 1;
    let r = uniform(rng, &[n, co, ho, ho], -1.0, 1.0);
    Instance {
        build: Box::new(move |t, v| {
            let y = t.conv2d(v[0], v[1], v[2], stride, pad)?;
            weighted_sum(t, y, &r)
        }),
        inputs: vec![x, w, b],
    }
}

fn case_upsample_conv(rng: &mut ChaCha8Rng) -> Instance {
    let scale = rng.gen_range(2..=3);
    let k = [1, 3][rng.gen_range(0..2)];
    let [n, c, h, _] = nchw(rng, 2, 3, 1, 4);
    let co = rng.gen_range(1..=3);
    let x = uniform(rng, &[n, c, h, h], -1.0, 1.0);
    let w = uniform(rng, &[co, c, k, k], -1.0, 1.0);
    let b = uniform(rng, &[co], -1.0, 1.0);
    let r = uniform(rng, &[n, co, h * scale, h * scale], -1.0, 1.0);
    Instance {
        build: Box::new(move |t, v| {
            let y = t.upsample_conv(v[0], v[1], v[2], scale)?;
            weighted_sum(t, y, &r)
        }),
        inputs: vec![x, w, b],
    }
}

fn case_upsample(rng: &mut ChaCha8Rng) -> Instance {
    let scale = rng.gen_range(1..=3);
    let d = nchw(rng, 2, 3, 1, 4);
    let x = uniform(rng, &d, -1.0, 1.0);
    let r = uniform(rng, &[d[0], d[1], d[2] * scale, d[3] * scale], -1.0, 1.0);
    Instance {
        build: Box::new(move |t, v| {
            let y = t.upsample(v[0], scale)?;
            weighted_sum(t, y, &r)
        }),
        inputs: vec![x],
    }
}

fn case_pointwise(rng: &mut ChaCha8Rng) -> Instance {
    let d = nchw(rng, 2, 3, 1, 5);
    let x = away_from_zero(rng, &d);
    let y = uniform(rng, &d, -1.0, 1.0);
    let r = uniform(rng, &d, -1.0, 1.0);
    let slope = rng.gen_range(0.0..0.9);
    let k = rng.gen_range(-2.0..2.0);
    Instance {
        build: Box::new(move |t, v| {
            let a = t.leaky_relu(v[0], slope)?;
            let s = t.sigmoid(v[1]);
            let p = t.mul(a, s)?;
            let q = t.abs(v[0]);
            let sq = t.square(v[1]);
            let u = t.sub(q, sq)?;
            let u = t.scale(u, k);
            let o = t.add(p, u)?;
            weighted_sum(t, o, &r)
        }),
        inputs: vec![x, y],
    }
}

fn case_norm_batch(rng: &mut ChaCha8Rng) -> Instance {
    let mut d = nchw(rng, 3, 3, 1, 4);
    if d[0] * d[2] * d[3] < 2 {
        d[0] = 2;
    }
    let x = uniform(rng, &d, -1.0, 1.0);
    let g = uniform(rng, &[d[1]], 0.5, 1.5);
    let s = uniform(rng, &[d[1]], -0.5, 0.5);
    let r = uniform(rng, &d, -1.0, 1.0);
    Instance {
        build: Box::new(move |t, v| {
            let (y, _) = t.channel_norm(v[0], v[1], v[2], NormMode::Batch)?;
            weighted_sum(t, y, &r)
        }),
        inputs: vec![x, g, s],
    }
}

fn case_norm_running(rng: &mut ChaCha8Rng) -> Instance {
    let d = nchw(rng, 2, 3, 1, 4);
    let x = uniform(rng, &d, -1.0, 1.0);
    let g = uniform(rng, &[d[1]], 0.5, 1.5);
    let s = uniform(rng, &[d[1]], -0.5, 0.5);
    let stats = NormStats {
        mean: (0..d[1]).map(|_| rng.gen_range(-0.5..0.5)).collect(),
        var: (0..d[1]).map(|_| rng.gen_range(0.2..2.0)).collect(),
    };
    let r = uniform(rng, &d, -1.0, 1.0);
    Instance {
        build: Box::new(move |t, v| {
            let (y, _) = t.channel_norm(v[0], v[1], v[2], NormMode::Running(&stats))?;
            weighted_sum(t, y, &r)
        }),
        inputs: vec![x, g, s],
    }
}

fn case_concat(rng: &mut ChaCha8Rng) -> Instance {
    let [n, c, h, w] = nchw(rng, 2, 3, 1, 4);
    let c2 = rng.gen_range(1..=3);
    let a = uniform(rng, &[n, c, h, w], -1.0, 1.0);
    let b = uniform(rng, &[n, c2, h, w], -1.0, 1.0);
    let e = uniform(rng, &[n, c + c2, h, w], -1.0, 1.0);
    let r = uniform(rng, &[2 * n, c + c2, h, w], -1.0, 1.0);
    Instance {
        build: Box::new(move |t, v| {
            let ab = t.concat_channels(v[0], v[1])?;
            let both = t.concat_batch(&[ab, v[2]])?;
            weighted_sum(t, both, &r)
        }),
        inputs: vec![a, b, e],
    }
}

fn case_linear(rng: &mut ChaCha8Rng) -> Instance {
    let n = rng.gen_range(1..=3);
    let d = rng.gen_range(1..=5);
    let [c, h, w] = [rng.gen_range(1..=3), rng.gen_range(1..=3), rng.gen_range(1..=3)];
    let x = uniform(rng, &[n, d], -1.0, 1.0);
    let wt = uniform(rng, &[c * h * w, d], -1.0, 1.0);
    let b = uniform(rng, &[c * h * w], -1.0, 1.0);
    let r = uniform(rng, &[n, 1, h, w], -1.0, 1.0);
    Instance {
        build: Box::new(move |t, v| {
            let y = t.linear(v[0], v[1], v[2])?;
            let m = t.reshape(y, &[n, c, h, w])?;
            let g = t.channel_mean(m)?;
            let sq = t.square(g);
            let mn = t.mean(sq);
            let ws = weighted_sum(t, g, &r)?;
            t.add(mn, ws)
        }),
        inputs: vec![x, wt, b],
    }
}

fn case_resample(rng: &mut ChaCha8Rng) -> Instance {
    let factor = [1, 2, 4][rng.gen_range(0..3)];
    let d = [rng.gen_range(1..=2), rng.gen_range(1..=3), factor * rng.gen_range(1..=2), factor * rng.gen_range(1..=2)];
    let rows = Arc::new(lanczos_matrix::<f64>(d[2], factor).expect("divisible"));
    let cols: Arc<Mat<f64>> = Arc::new(Mat::nearest(d[3], d[3] / factor));
    let x = uniform(rng, &d, -1.0, 1.0);
    let r = uniform(rng, &[d[0], d[1], d[2] / factor, d[3] / factor], -1.0, 1.0);
    Instance {
        build: Box::new(move |t, v| {
            let y = t.resample(v[0], rows.clone(), cols.clone())?;
            weighted_sum(t, y, &r)
        }),
        inputs: vec![x],
    }
}

fn image_pair(rng: &mut ChaCha8Rng, lo_hw: usize) -> (Tensor<f64>, Tensor<f64>) {
    let d = nchw(rng, 2, 3, lo_hw, 8);
    (uniform(rng, &d, 0.0, 1.0), uniform(rng, &d, 0.0, 1.0))
}

fn case_gaussian_down(rng: &mut ChaCha8Rng) -> Instance {
    let (x, _) = image_pair(rng, 2);
    let [n, c, h, w] = x.nchw().expect("4-d");
    let r = uniform(rng, &[n, c, h.div_ceil(2), w.div_ceil(2)], -1.0, 1.0);
    Instance {
        build: Box::new(move |t, v| {
            let y = gaussian_down_var(t, v[0])?;
            weighted_sum(t, y, &r)
        }),
        inputs: vec![x],
    }
}

fn random_pyramid(rng: &mut ChaCha8Rng, h: usize, w: usize) -> PyramidSpec {
    let max = (h.min(w) as f64).log2().floor().max(1.0) as usize;
    PyramidSpec::new(rng.gen_range(1..=max)).expect("levels ≥ 1")
}

fn case_lap_l1(rng: &mut ChaCha8Rng) -> Instance {
    let (a, b) = image_pair(rng, 2);
    let [_, _, h, w] = a.nchw().expect("4-d");
    let spec = random_pyramid(rng, h, w);
    Instance {
        build: Box::new(move |t, v| lap_l1_var(t, v[0], v[1], &spec)),
        inputs: vec![a, b],
    }
}

fn case_mse(rng: &mut ChaCha8Rng) -> Instance {
    let (a, b) = image_pair(rng, 1);
    Instance {
        build: Box::new(|t, v| mse_var(t, v[0], v[1])),
        inputs: vec![a, b],
    }
}

fn case_combined(rng: &mut ChaCha8Rng) -> Instance {
    let (a, b) = image_pair(rng, 2);
    let [_, _, h, w] = a.nchw().expect("4-d");
    let spec = random_pyramid(rng, h, w);
    Instance {
        build: Box::new(move |t, v| combined_loss_var(t, v[0], v[1], &spec)),
        inputs: vec![a, b],
    }
}

fn energy_instance(rng: &mut ChaCha8Rng, kind: Degradation, dims: [usize; 4]) -> Instance {
    let x = uniform(rng, &dims, 0.0, 1.0);
    let zd = rng.gen_range(1..=4);
    let z = uniform(rng, &[1, zd], -1.0, 1.0);
    let truth = uniform(rng, &dims, 0.0, 1.0);
    let mut spec = DegradationSpec::new(kind).expect("valid degradation");
    spec.latent_penalty = [0.0, 1e-3, 0.5][rng.gen_range(0..3)];
    let [_, _, oh, ow] = spec.observation_dims(dims).expect("consistent shapes");
    spec.pyramid_term = oh.min(ow) >= 2 && rng.gen_bool(0.5);
    let y = spec.apply(&truth).expect("consistent shapes");
    Instance {
        build: Box::new(move |t, v| {
            let sq = t.square(v[1]);
            let z2 = t.sum(sq);
            Ok(energy_var(t, v[0], &y, &spec, Some(z2))?.total)
        }),
        inputs: vec![x, z],
    }
}

fn case_energy_inpaint(rng: &mut ChaCha8Rng) -> Instance {
    let d = nchw(rng, 2, 3, 2, 8);
    let mask = if rng.gen_bool(0.5) {
        center_mask(d[2], d[3], rng.gen_range(0..d[2]), rng.gen_range(0..d[3])).expect("hole fits")
    } else {
        random_mask(d[2], d[3], rng.gen_range(0.0..0.9), rng.gen()).expect("fraction in range")
    };
    energy_instance(rng, Degradation::Inpaint(mask), d)
}

fn case_energy_superres(rng: &mut ChaCha8Rng) -> Instance {
    let factor = [2, 4][rng.gen_range(0..2)];
    let d = [rng.gen_range(1..=2), rng.gen_range(1..=3), factor * rng.gen_range(1..=2), factor * rng.gen_range(1..=2)];
    energy_instance(rng, Degradation::Superres { factor }, d)
}

fn case_energy_colorize(rng: &mut ChaCha8Rng) -> Instance {
    let mut d = nchw(rng, 2, 3, 2, 6);
    d[1] = 3;
    energy_instance(rng, Degradation::Colorize, d)
}

/// Latent net → generator → combined loss, differentiated with respect to
/// every latent-net and generator block at once.
fn case_composed(rng: &mut ChaCha8Rng, preset: &str, mode: Mode) -> Result<Instance> {
    let (lat, gen) = toy_arch_templates(preset)?;
    let codec = init_latent_codec::<f64>(&lat, rng.gen())?;
    let mut g = GeneratorModel::<f64>::new(&gen, rng.gen())?;
    let noise = init_noise::<f64>(lat.input, rng.gen())?;
    let [c, h, w] = gen.output;
    let target = uniform(rng, &[1, c, h, w], 0.0, 1.0);
    let spec = PyramidSpec::default_for(h, w);
    let n_phi = codec.net.params.len();
    // Fresh norm layers have zero shift, which puts a bottleneck activation
    // exactly on the leaky-relu kink.
    for p in g.net.params.iter_mut() {
        let (lo, hi) = if p.name.ends_with(".gain") {
            (0.5, 1.5)
        } else if p.name.ends_with(".shift") {
            (-0.5, 0.5)
        } else {
            continue;
        };
        let v = uniform(rng, p.value().dims(), lo, hi);
        p.set_value(v)?;
    }
    // Scale φ up from its box so the latent map is not dominated by biases.
    let phi: Vec<Tensor<f64>> = codec.net.params.iter().map(|p| p.value().map(|v| v * 30.0)).collect();
    // Running statistics measured on this input plus seven more noise draws;
    // a single sample leaves the 1×1 bottleneck with zero variance.
    {
        let mut t = Tape::new();
        let pb = Bound::from_vars(phi.iter().map(|p| t.constant(p.clone())).collect());
        let s = t.constant(noise.clone());
        let z = codec.forward(&mut t, &pb, s)?;
        let mut zs = vec![z];
        for _ in 0..7 {
            let s2 = t.constant(init_noise::<f64>(lat.input, rng.gen())?);
            zs.push(codec.forward(&mut t, &pb, s2)?);
        }
        let zz = t.concat_batch(&zs)?;
        let gb = g.net.bind(&mut t, false);
        let (_, moments) = g.forward(&mut t, &gb, zz, Mode::Train)?;
        g.net.set_stats(&moments)?;
    }
    let mut inputs = phi;
    inputs.extend(g.net.params.iter().map(|p| p.value().clone()));
    Ok(Instance {
        build: Box::new(move |t, v| {
            let s = t.constant(noise.clone());
            let phi = Bound::from_vars(v[..n_phi].to_vec());
            let theta = Bound::from_vars(v[n_phi..].to_vec());
            let z = codec.forward(t, &phi, s)?;
            let (x, _) = g.forward(t, &theta, z, mode)?;
            let tv = t.constant(target.clone());
            combined_loss_var(t, x, tv, &spec)
        }),
        inputs,
    })
}

/// Central differences on up to `max_coords` evenly spaced entries of
/// every input; returns the per-instance worst normwise error.
fn check_instance(inst: &Instance, cfg: &SuiteConfig) -> Result<f64> {
    let mut analytic = analytic_gradients(&inst.build, &inst.inputs)?;
    if cfg.fault == Some(Fault::SignFlip) {
        for a in analytic.iter_mut() {
            *a = a.map(|v| -v);
        }
    }
    let mut worst = 0.0f64;
    let mut probe = inst.inputs.clone();
    for (which, a) in analytic.iter().enumerate() {
        let len = inst.inputs[which].len();
        let stride = len.div_ceil(cfg.max_coords.max(1));
        let coords: Vec<usize> = (0..len).step_by(stride).collect();
        let mut num = Vec::with_capacity(coords.len());
        for &i in &coords {
            let orig = inst.inputs[which].data()[i];
            probe[which].data_mut()[i] = orig + cfg.step;
            let plus = evaluate(&inst.build, &probe)?;
            probe[which].data_mut()[i] = orig - cfg.step;
            let minus = evaluate(&inst.build, &probe)?;
            probe[which].data_mut()[i] = orig;
            num.push((plus - minus) / (2.0 * cfg.step));
        }
        let picked: Vec<f64> = coords.iter().map(|&i| a.data()[i]).collect();
        let n = coords.len();
        let e = rel_error(
            &Tensor::from_vec(&[n], picked)?,
            &Tensor::from_vec(&[n], num)?,
        );
        worst = worst.max(e);
    }
    Ok(worst)
}

type Maker = fn(&mut ChaCha8Rng) -> Instance;

const PRIMITIVE_CASES: &[(&str, Maker)] = &[
    ("conv2d", case_conv),
    ("upsample_conv", case_upsample_conv),
    ("upsample_nearest", case_upsample),
    ("pointwise", case_pointwise),
    ("channel_norm_batch", case_norm_batch),
    ("channel_norm_running", case_norm_running),
    ("concat", case_concat),
    ("linear_reshape_mean", case_linear),
    ("resample", case_resample),
    ("gaussian_down", case_gaussian_down),
    ("lap_l1", case_lap_l1),
    ("mse", case_mse),
    ("combined_loss", case_combined),
    ("energy_inpaint", case_energy_inpaint),
    ("energy_superres", case_energy_superres),
    ("energy_colorize", case_energy_colorize),
];

pub fn run_suite(cfg: &SuiteConfig) -> Result<SuiteReport> {
    if cfg.instances == 0 {
        return Err(LcmError::Config("gradient suite needs at least one instance per case".into()));
    }
    if !(cfg.tolerance >= 0.0) || !(cfg.step > 0.0) {
        return Err(LcmError::Config("tolerance must be ≥ 0 and the step > 0".into()));
    }
    toy_arch_templates(&cfg.preset)?;
    let started = Instant::now();
    let mut cases = Vec::new();
    let mut run_case = |name: &'static str, idx: u64, make: &dyn Fn(&mut ChaCha8Rng) -> Result<Instance>| -> Result<()> {
        let mut worst = 0.0f64;
        for i in 0..cfg.instances {
            let mut rng = stream_rng(cfg.seed, 1000 + idx, i as u64);
            let inst = make(&mut rng)?;
            let e = check_instance(&inst, cfg)?;
            worst = if e.is_nan() { f64::INFINITY } else { worst.max(e) };
        }
        cases.push(CaseReport {
            name,
            instances: cfg.instances,
            max_rel_error: worst,
            passed: worst < cfg.tolerance,
        });
        Ok(())
    };
    for (idx, (name, make)) in PRIMITIVE_CASES.iter().enumerate() {
        run_case(name, idx as u64, &|rng| Ok(make(rng)))?;
    }
    let base = PRIMITIVE_CASES.len() as u64;
    run_case("composed_train_mode", base, &|rng| case_composed(rng, &cfg.preset, Mode::Train))?;
    run_case("composed_eval_mode", base + 1, &|rng| case_composed(rng, &cfg.preset, Mode::Eval))?;
    Ok(SuiteReport {
        cases,
        elapsed: started.elapsed(),
    })
}
