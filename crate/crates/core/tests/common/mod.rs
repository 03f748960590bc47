//! Independent reference implementations shared by the integration tests.
//! Everything here is written directly from the definitions, with no calls
//! into the library beyond tensor construction.

#![allow(dead_code)]

use std::f64::consts::TAU;

use sfaunet::{Fill, Rng, Tensor};

pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut Rng) -> Tensor {
    Tensor::create(shape, Fill::Uniform { lo, hi, rng }).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

// ---- spectral ----

/// `F[k,l] = sum_{m,n} x[m,n] exp(-2 pi i (k m / H + l n / W))`, evaluated
/// term by term. Phases are reduced modulo the period before the
/// trigonometric call so large indices cost no accuracy.
pub fn dft_bin(x: &[f64], h: usize, w: usize, k: usize, l: usize) -> (f64, f64) {
    let (mut re, mut im) = (0.0, 0.0);
    for m in 0..h {
        for n in 0..w {
            let phase = TAU * (((k * m) % h) as f64 / h as f64 + ((l * n) % w) as f64 / w as f64);
            re += x[m * w + n] * phase.cos();
            im -= x[m * w + n] * phase.sin();
        }
    }
    (re, im)
}

pub fn circular_conv(a: &[f64], b: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            for i in 0..h {
                for j in 0..w {
                    out[y * w + x] += a[i * w + j] * b[((y + h - i) % h) * w + (x + w - j) % w];
                }
            }
        }
    }
    out
}

// ---- Scharr ----

pub const GX: [[f64; 3]; 3] = [[-3.0, 0.0, 3.0], [-10.0, 0.0, 10.0], [-3.0, 0.0, 3.0]];

pub fn transpose(k: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    std::array::from_fn(|i| std::array::from_fn(|j| k[j][i]))
}

/// 3x3 cross-correlation of one plane, edges replicated.
pub fn sliding_window(img: &[f64], h: usize, w: usize, k: &[[f64; 3]; 3]) -> Vec<f64> {
    let px = |y: isize, x: isize| img[y.clamp(0, h as isize - 1) as usize * w + x.clamp(0, w as isize - 1) as usize];
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut acc = 0.0;
            for (dy, row) in k.iter().enumerate() {
                for (dx, &kv) in row.iter().enumerate() {
                    acc += kv * px(y + dy as isize - 1, x + dx as isize - 1);
                }
            }
            out.push(acc);
        }
    }
    out
}

// ---- parameter counts, layer by layer ----

fn conv(ci: usize, co: usize, k: usize) -> usize {
    co * ci * k * k + co
}

fn bn(c: usize) -> usize {
    2 * c
}

fn cbr(ci: usize, co: usize, k: usize) -> usize {
    conv(ci, co, k) + bn(co)
}

fn sc_ffc(c: usize) -> usize {
    let scharr = cbr(2 * c, c, 1);
    let spectral = conv(2 * c, 2 * c, 1) + bn(2 * c);
    let ffc = cbr(c, c, 3) + spectral;
    let fuse = cbr(2 * c, c, 1);
    scharr + ffc + fuse
}

fn gate(cg: usize, cx: usize) -> usize {
    let ci = (cx / 2).max(1);
    conv(cg, ci, 1) + conv(cx, ci, 1) + conv(ci, 1, 1)
}

fn dcl(ci: usize, co: usize) -> usize {
    cbr(ci, co, 3) + sc_ffc(co) + cbr(co, co, 3)
}

/// Trainable parameters of the whole network for encoder widths `enc` and
/// middle width `mid`, single-channel in and out.
pub fn count_oracle(enc: [usize; 3], mid: usize) -> usize {
    let mut total = 0;
    let mut c_in = 1;
    for c in enc {
        total += dcl(c_in, c) + gate(c_in, c);
        c_in = c;
    }
    total += dcl(c_in, mid);
    let mut deep = mid;
    for c in enc.into_iter().rev() {
        let up = c * deep * 4 + c;
        total += up + gate(c, c) + dcl(2 * c, c);
        deep = c;
    }
    total + conv(deep, 1, 1)
}

// ---- metrics ----

pub const MH: usize = 32;
pub const MW: usize = 32;

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, mut i: usize) -> usize {
        while self.0[i] != i {
            self.0[i] = self.0[self.0[i]];
            i = self.0[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        self.0[ra.max(rb)] = ra.min(rb);
    }
}

/// Component root per foreground pixel, 8-connected.
fn components(m: &[bool]) -> Vec<Option<usize>> {
    let mut uf = UnionFind((0..MH * MW).collect());
    for y in 0..MH {
        for x in 0..MW {
            if !m[y * MW + x] {
                continue;
            }
            for (dy, dx) in [(0, 1), (1, -1), (1, 0), (1, 1)] {
                let (ny, nx) = (y as isize + dy, x as isize + dx);
                if ny < MH as isize && nx >= 0 && nx < MW as isize && m[ny as usize * MW + nx as usize] {
                    uf.union(y * MW + x, ny as usize * MW + nx as usize);
                }
            }
        }
    }
    (0..MH * MW).map(|i| m[i].then(|| uf.find(i))).collect()
}

pub struct PixelOracle {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
    pub detected: usize,
    pub objects: usize,
    pub false_px: usize,
}

pub fn pixel_oracle(pred: &[bool], gt: &[bool]) -> PixelOracle {
    let count = |f: &dyn Fn(bool, bool) -> bool| pred.iter().zip(gt).filter(|(&p, &g)| f(p, g)).count() as u64;
    let labels = components(gt);
    let mut roots: Vec<usize> = labels.iter().flatten().copied().collect();
    roots.sort_unstable();
    roots.dedup();
    let detected = roots
        .iter()
        .filter(|&&r| (0..MH * MW).any(|i| pred[i] && labels[i] == Some(r)))
        .count();
    PixelOracle {
        tp: count(&|p, g| p && g),
        fp: count(&|p, g| p && !g),
        fn_: count(&|p, g| !p && g),
        tn: count(&|p, g| !p && !g),
        detected,
        objects: roots.len(),
        false_px: (0..MH * MW).filter(|&i| pred[i] && labels[i].is_none()).count(),
    }
}

/// Dataset-level metrics recomputed from per-image oracles.
pub struct DatasetOracle {
    pub iou: f64,
    pub niou: f64,
    pub pd: f64,
    pub fa: f64,
    pub f_score: f64,
}

pub fn dataset_oracle(per_image: &[PixelOracle]) -> DatasetOracle {
    let n = per_image.len() as f64;
    let (tp, fp, fn_) = per_image.iter().fold((0, 0, 0), |a, o| (a.0 + o.tp, a.1 + o.fp, a.2 + o.fn_));
    let ratio = |a: u64, b: u64| a as f64 / b as f64;
    let with_objects: Vec<&PixelOracle> = per_image.iter().filter(|o| o.objects > 0).collect();
    let (precision, recall) = (ratio(tp, tp + fp), ratio(tp, tp + fn_));
    DatasetOracle {
        iou: ratio(tp, tp + fp + fn_),
        niou: per_image
            .iter()
            .map(|o| if o.tp + o.fp + o.fn_ == 0 { 1.0 } else { ratio(o.tp, o.tp + o.fp + o.fn_) })
            .sum::<f64>()
            / n,
        pd: with_objects.iter().map(|o| o.detected as f64 / o.objects as f64).sum::<f64>() / with_objects.len() as f64,
        fa: per_image.iter().map(|o| o.false_px as f64 / (MH * MW) as f64).sum::<f64>() / n,
        f_score: 2.0 * precision * recall / (precision + recall),
    }
}

/// Area under the ROC traced by thresholds i/255, each evaluated with a
/// fresh pass over every pixel.
pub fn auc_oracle(probs: &[Vec<f64>], gts: &[Vec<bool>]) -> f64 {
    let pairs: Vec<(f64, bool)> =
        probs.iter().zip(gts).flat_map(|(p, g)| p.iter().copied().zip(g.iter().copied())).collect();
    let pos = pairs.iter().filter(|q| q.1).count() as f64;
    let neg = pairs.len() as f64 - pos;
    if pos == 0.0 || neg == 0.0 {
        return 0.5;
    }
    let mut pts = vec![(0.0, 0.0)];
    for i in (0..256).rev() {
        let t = i as f64 / 255.0;
        let tp = pairs.iter().filter(|q| q.1 && q.0 >= t).count() as f64;
        let fp = pairs.iter().filter(|q| !q.1 && q.0 >= t).count() as f64;
        pts.push((fp / neg, tp / pos));
    }
    pts.push((1.0, 1.0));
    pts.windows(2).map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0).sum()
}

/// A few square blobs, so components vary in size and sometimes touch.
pub fn random_gt(rng: &mut Rng) -> Vec<bool> {
    let mut m = vec![false; MH * MW];
    for _ in 0..rng.range_inclusive(0, 5) {
        let (y0, x0, s) = (rng.range_inclusive(0, MH - 1), rng.range_inclusive(0, MW - 1), rng.range_inclusive(1, 4));
        for y in y0..(y0 + s).min(MH) {
            for x in x0..(x0 + s).min(MW) {
                m[y * MW + x] = true;
            }
        }
    }
    m
}

/// Probabilities loosely correlated with the mask, with some values placed
/// exactly on threshold levels.
pub fn random_probs(gt: &[bool], rng: &mut Rng) -> Vec<f64> {
    gt.iter()
        .map(|&g| {
            if rng.uniform(0.0, 1.0) < 0.2 {
                rng.range_inclusive(0, 255) as f64 / 255.0
            } else {
                let centre = if g { 0.7 } else { 0.3 };
                (centre + rng.uniform(-0.45, 0.45)).clamp(0.0, 1.0)
            }
        })
        .collect()
}
