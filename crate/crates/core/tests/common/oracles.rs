//! Plain-loop reimplementations of the image kernels, and checks that
//! return the worst relative error over random small inputs.

use lcm::degrade::{self, random_mask, Mask};
use lcm::losses::{self, PyramidSpec};
use lcm::metrics::{self, Region};
use lcm::tape::Tape;
use lcm::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Dense NCHW array with loop-friendly indexing.
#[derive(Clone)]
struct Img {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    v: Vec<f64>,
}

impl Img {
    fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Img { n, c, h, w, v: vec![0.0; n * c * h * w] }
    }
    fn random(rng: &mut ChaCha8Rng, n: usize, c: usize, h: usize, w: usize) -> Self {
        let mut x = Img::zeros(n, c, h, w);
        x.v.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        x
    }
    fn get(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.v[((n * self.c + c) * self.h + y) * self.w + x]
    }
    fn set(&mut self, n: usize, c: usize, y: usize, x: usize, val: f64) {
        let i = ((n * self.c + c) * self.h + y) * self.w + x;
        self.v[i] = val;
    }
    fn tensor(&self) -> Tensor<f64> {
        Tensor::from_vec(&[self.n, self.c, self.h, self.w], self.v.clone()).unwrap()
    }
    fn sub(&self, o: &Img) -> Img {
        let mut d = self.clone();
        d.v.iter_mut().zip(&o.v).for_each(|(a, b)| *a -= b);
        d
    }
}

fn rel(got: &[f64], want: &[f64]) -> f64 {
    assert_eq!(got.len(), want.len());
    let diff: f64 = got.iter().zip(want).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = want.iter().map(|b| b * b).sum::<f64>().sqrt();
    if norm < 1e-12 {
        diff
    } else {
        diff / norm
    }
}

/// Mirror without repeating the edge sample, by repeated folding.
fn mirror(mut i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n {
            i = 2 * (n - 1) - i;
        } else {
            return i as usize;
        }
    }
}

fn conv_oracle(x: &Img, w: &Img, b: &[f64], stride: usize, pad: usize) -> Img {
    let k = w.h;
    let oh = (x.h + 2 * pad - k) / stride + 1;
    let ow = (x.w + 2 * pad - k) / stride + 1;
    let mut out = Img::zeros(x.n, w.n, oh, ow);
    for n in 0..x.n {
        for co in 0..w.n {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut s = b[co];
                    for ci in 0..x.c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < x.h && (ix as usize) < x.w {
                                    s += w.get(co, ci, ky, kx) * x.get(n, ci, iy as usize, ix as usize);
                                }
                            }
                        }
                    }
                    out.set(n, co, oy, ox, s);
                }
            }
        }
    }
    out
}

/// 5×5 binomial blur evaluated at even pixels only.
fn down_oracle(x: &Img) -> Img {
    let k = [1.0, 4.0, 6.0, 4.0, 1.0];
    let (oh, ow) = (x.h.div_ceil(2), x.w.div_ceil(2));
    let mut out = Img::zeros(x.n, x.c, oh, ow);
    for n in 0..x.n {
        for c in 0..x.c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut s = 0.0;
                    for dy in 0..5 {
                        for dx in 0..5 {
                            let y = mirror(2 * oy as isize + dy as isize - 2, x.h);
                            let xx = mirror(2 * ox as isize + dx as isize - 2, x.w);
                            s += k[dy] * k[dx] * x.get(n, c, y, xx);
                        }
                    }
                    out.set(n, c, oy, ox, s / 256.0);
                }
            }
        }
    }
    out
}

fn up_oracle(x: &Img, h: usize, w: usize) -> Img {
    let mut out = Img::zeros(x.n, x.c, h, w);
    for n in 0..x.n {
        for c in 0..x.c {
            for y in 0..h {
                for xx in 0..w {
                    out.set(n, c, y, xx, x.get(n, c, y / 2, xx / 2));
                }
            }
        }
    }
    out
}

fn pyramid_oracle(x: &Img, levels: usize) -> Vec<Img> {
    let mut out = Vec::new();
    let mut cur = x.clone();
    for _ in 0..levels - 1 {
        let down = down_oracle(&cur);
        out.push(cur.sub(&up_oracle(&down, cur.h, cur.w)));
        cur = down;
    }
    out.push(cur);
    out
}

fn lap_l1_oracle(a: &Img, b: &Img, levels: usize) -> f64 {
    pyramid_oracle(&a.sub(b), levels)
        .iter()
        .enumerate()
        .map(|(j, l)| l.v.iter().map(|v| v.abs()).sum::<f64>() / l.v.len() as f64 / 4f64.powi(j as i32))
        .sum()
}

fn lanczos_weight(t: f64) -> f64 {
    let sinc = |u: f64| if u == 0.0 { 1.0 } else { (std::f64::consts::PI * u).sin() / (std::f64::consts::PI * u) };
    if t.abs() >= 3.0 {
        0.0
    } else {
        sinc(t) * sinc(t / 3.0)
    }
}

/// Normalized taps of output `i` over the `n` source samples.
fn lanczos_taps(i: usize, n: usize, f: usize) -> Vec<f64> {
    let mut taps = vec![0.0; n];
    let center = (i as f64 + 0.5) * f as f64;
    let reach = 3 * f as isize + 2;
    for j in (center as isize - reach)..=(center as isize + reach) {
        taps[mirror(j, n)] += lanczos_weight((j as f64 + 0.5 - center) / f as f64);
    }
    let total: f64 = taps.iter().sum();
    taps.iter().map(|t| t / total).collect()
}

fn lanczos_oracle(x: &Img, f: usize) -> Img {
    let (oh, ow) = (x.h / f, x.w / f);
    let mut out = Img::zeros(x.n, x.c, oh, ow);
    for oy in 0..oh {
        let ty = lanczos_taps(oy, x.h, f);
        for ox in 0..ow {
            let tx = lanczos_taps(ox, x.w, f);
            for n in 0..x.n {
                for c in 0..x.c {
                    let mut s = 0.0;
                    for y in 0..x.h {
                        for xx in 0..x.w {
                            s += ty[y] * tx[xx] * x.get(n, c, y, xx);
                        }
                    }
                    out.set(n, c, oy, ox, s);
                }
            }
        }
    }
    out
}

fn rng(salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0x5eed_0000 + salt)
}

pub fn conv2d(instances: usize) -> f64 {
    let mut r = rng(1);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let k = r.gen_range(1..=3);
        let pad = r.gen_range(0..k);
        let stride = r.gen_range(1..=2);
        let h = r.gen_range(k.max(2)..=8);
        let w = r.gen_range(k.max(2)..=8);
        let (n, ci, co) = (r.gen_range(1..=2), r.gen_range(1..=3), r.gen_range(1..=3));
        let x = Img::random(&mut r, n, ci, h, w);
        let wt = Img::random(&mut r, co, ci, k, k);
        let b: Vec<f64> = (0..co).map(|_| r.gen_range(-1.0..1.0)).collect();
        let mut t = Tape::new();
        let xv = t.constant(x.tensor());
        let wv = t.constant(wt.tensor());
        let bv = t.constant(Tensor::from_vec(&[co], b.clone()).unwrap());
        let y = t.conv2d(xv, wv, bv, stride, pad).unwrap();
        let want = conv_oracle(&x, &wt, &b, stride, pad);
        assert_eq!(t.value(y).dims(), &[n, co, want.h, want.w]);
        worst = worst.max(rel(t.value(y).data(), &want.v));
    }
    worst
}

pub fn gaussian_down(instances: usize) -> f64 {
    let mut r = rng(2);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let (c, h, w) = (r.gen_range(1..=3), r.gen_range(2..=8), r.gen_range(2..=8));
        let x = Img::random(&mut r, 1, c, h, w);
        let got = losses::gaussian_down(&x.tensor()).unwrap();
        let want = down_oracle(&x);
        assert_eq!(got.dims(), &[1, x.c, want.h, want.w]);
        worst = worst.max(rel(got.data(), &want.v));
    }
    worst
}

pub fn laplacian_pyramid(instances: usize) -> f64 {
    let mut r = rng(3);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let (c, h, w) = (r.gen_range(1..=3), r.gen_range(2..=8), r.gen_range(2..=8));
        let x = Img::random(&mut r, 1, c, h, w);
        let max = (x.h.min(x.w) as f64).log2().floor() as usize;
        let levels = r.gen_range(1..=max);
        let got = losses::laplacian_pyramid(&x.tensor(), &PyramidSpec::new(levels).unwrap()).unwrap();
        let want = pyramid_oracle(&x, levels);
        assert_eq!(got.len(), want.len());
        for (g, w) in got.iter().zip(&want) {
            assert_eq!(g.dims(), &[1, w.c, w.h, w.w]);
            worst = worst.max(rel(g.data(), &w.v));
        }
    }
    worst
}

pub fn lap_l1(instances: usize) -> f64 {
    let mut r = rng(4);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let (c, h, w) = (r.gen_range(1..=3), r.gen_range(2..=8), r.gen_range(2..=8));
        let a = Img::random(&mut r, 1, c, h, w);
        let b = Img::random(&mut r, 1, c, h, w);
        let max = (h.min(w) as f64).log2().floor() as usize;
        let levels = r.gen_range(1..=max);
        let got = losses::lap_l1(&a.tensor(), &b.tensor(), &PyramidSpec::new(levels).unwrap()).unwrap();
        let want = lap_l1_oracle(&a, &b, levels);
        worst = worst.max(((got - want) / want).abs());
    }
    worst
}

pub fn lanczos_down(instances: usize) -> f64 {
    let mut r = rng(5);
    let extents = [2usize, 4, 6, 8];
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let f = *[1usize, 2, 4].get(r.gen_range(0..3)).unwrap();
        let candidates: Vec<usize> = extents.iter().copied().filter(|e| e % f == 0).collect();
        let h = candidates[r.gen_range(0..candidates.len())];
        let w = candidates[r.gen_range(0..candidates.len())];
        let (n, c) = (r.gen_range(1..=2), r.gen_range(1..=3));
        let x = Img::random(&mut r, n, c, h, w);
        let got = degrade::lanczos_down(&x.tensor(), f).unwrap();
        let want = lanczos_oracle(&x, f);
        assert_eq!(got.dims(), &[x.n, x.c, want.h, want.w]);
        worst = worst.max(rel(got.data(), &want.v));
    }
    worst
}

/// Also requires an error whenever the region is empty.
pub fn mse_region(instances: usize) -> f64 {
    let mut r = rng(6);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let (c, h, w) = (r.gen_range(1..=3), r.gen_range(1..=8), r.gen_range(1..=8));
        let a = Img::random(&mut r, 1, c, h, w);
        let b = Img::random(&mut r, 1, c, h, w);
        let mask: Mask = random_mask(h, w, r.gen_range(0.0..1.0), r.gen()).unwrap();
        for region in [Region::Known, Region::Hole, Region::Full] {
            let mut s = 0.0;
            let mut count = 0;
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        let keep = match region {
                            Region::Known => mask.is_known(y, x),
                            Region::Hole => !mask.is_known(y, x),
                            Region::Full => true,
                        };
                        if keep {
                            s += (a.get(0, ch, y, x) - b.get(0, ch, y, x)).powi(2);
                            count += 1;
                        }
                    }
                }
            }
            let got = metrics::mse_region(&a.tensor(), &b.tensor(), &mask, region);
            if count == 0 {
                assert!(got.is_err());
            } else {
                let want = s / count as f64;
                worst = worst.max(((got.unwrap() - want) / want).abs());
            }
        }
    }
    worst
}

/// Worst error of every kernel, in a fixed order.
pub fn all(instances: usize) -> Vec<(&'static str, f64)> {
    vec![
        ("conv2d", conv2d(instances)),
        ("gaussian_down", gaussian_down(instances)),
        ("laplacian_pyramid", laplacian_pyramid(instances)),
        ("lap_l1", lap_l1(instances)),
        ("lanczos_down", lanczos_down(instances)),
        ("mse_region", mse_region(instances)),
    ]
}
