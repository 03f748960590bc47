//! Self-verification suite: small, fast oracles covering the FFT, the Scharr
//! filter, gradients of every block, the metrics and the optimizer.

use std::time::Instant;

use rustfft::num_complex::Complex;

use crate::blocks::{
    scharr_filter_with, AttentionGate, DclBlock, DecoderBlock, FfcBlock, ScFfcBlock, ScharrBlock, ScharrKernels,
};
use crate::gradcheck::{self, GradCheckConfig};
use crate::layers::{conv2d, maxpool2d, upconv2x, BatchNorm2d, Module, ParamKind};
use crate::metrics::{confusion, iou, niou, pd_fa, roc_auc, ConfusionCounts, Mask, ProbMap};
use crate::model::{Model, ModelConfig};
use crate::spectral::{irfft2, multiply_spectra, rfft2, SpectralTransform};
use crate::tensor::{Padding, Rng, Tensor};
use crate::train::{AdamW, OptimizerHyper};
use crate::{Mode, Result};

#[derive(Clone, Debug, Default)]
pub struct CheckOptions {
    /// Run the Scharr check against deliberately wrong kernels (verifies
    /// that the suite can fail).
    pub corrupt_scharr: bool,
}

#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

type CheckFn = fn(&CheckOptions) -> Result<(bool, String)>;

const CHECKS: &[(&str, CheckFn)] = &[
    ("fft_round_trip", fft_round_trip),
    ("fft_convolution_theorem", fft_convolution_theorem),
    ("scharr_step_edge", scharr_step_edge),
    ("grad_layers", grad_layers),
    ("grad_blocks", grad_blocks),
    ("grad_micro_model", grad_micro_model),
    ("metric_oracles", metric_oracles),
    ("adamw_trajectory", adamw_trajectory),
];

pub fn check_names() -> Vec<&'static str> {
    CHECKS.iter().map(|(n, _)| *n).collect()
}

/// Run every check; an error inside a check counts as a failure.
pub fn run_checks(opts: &CheckOptions) -> Vec<CheckOutcome> {
    CHECKS
        .iter()
        .map(|(name, f)| {
            let start = Instant::now();
            let (passed, detail) = f(opts).unwrap_or_else(|e| (false, format!("error: {e}")));
            CheckOutcome {
                name,
                passed,
                detail,
                seconds: start.elapsed().as_secs_f64(),
            }
        })
        .collect()
}

fn random(shape: &[usize], rng: &mut Rng) -> Result<Tensor> {
    Tensor::randn(shape, 0.0, 1.0, rng)
}

fn fft_round_trip(_: &CheckOptions) -> Result<(bool, String)> {
    let mut rng = Rng::new(11);
    let mut worst = 0.0f64;
    for (h, w) in [(2, 2), (4, 6), (7, 5), (8, 8)] {
        let x = random(&[1, 2, h, w], &mut rng)?;
        worst = worst.max(irfft2(&rfft2(&x)?, w)?.max_abs_diff(&x));
    }
    Ok((worst < 1e-10, format!("max |irfft2(rfft2(x)) - x| = {worst:.2e}")))
}

fn fft_convolution_theorem(_: &CheckOptions) -> Result<(bool, String)> {
    let mut rng = Rng::new(12);
    let (h, w) = (6, 5);
    let a = random(&[1, 1, h, w], &mut rng)?;
    let b = random(&[1, 1, h, w], &mut rng)?;
    let via_fft = irfft2(&multiply_spectra(&rfft2(&a)?, &rfft2(&b)?)?, w)?;
    let mut worst = 0.0f64;
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for i in 0..h {
                for j in 0..w {
                    acc += a.data()[i * w + j] * b.data()[((y + h - i) % h) * w + (x + w - j) % w];
                }
            }
            worst = worst.max((acc - via_fft.data()[y * w + x]).abs());
        }
    }
    // DC bin of a single impulse is 1
    let mut imp = vec![0.0; 16];
    imp[5] = 1.0;
    let s = rfft2(&Tensor::new(&[1, 1, 4, 4], imp)?)?;
    let dc_ok = (s.bin(0, 0, 0, 0) - Complex::new(1.0, 0.0)).norm() < 1e-12;
    Ok((worst < 1e-8 && dc_ok, format!("max circular-convolution error {worst:.2e}")))
}

fn scharr_step_edge(opts: &CheckOptions) -> Result<(bool, String)> {
    let mut kernels = ScharrKernels::STANDARD;
    if opts.corrupt_scharr {
        kernels.gx[1][2] = 9.0;
    }
    let sums_ok = kernels.gx.iter().flatten().sum::<f64>() == 0.0 && kernels.gy.iter().flatten().sum::<f64>() == 0.0;
    let row = [0.0, 0.0, 1.0, 1.0];
    let x = Tensor::new(&[1, 1, 4, 4], (0..4).flat_map(|_| row).collect())?;
    let (ix, iy) = scharr_filter_with(&x, &kernels)?;
    let mut ok = sums_ok;
    for y in 1..3 {
        for c in 1..3 {
            ok &= ix.at(&[0, 0, y, c]) == 16.0 && iy.at(&[0, 0, y, c]) == 0.0;
        }
    }
    Ok((ok, format!("I_x at edge = {}, I_y = {}", ix.at(&[0, 0, 1, 1]), iy.at(&[0, 0, 1, 1]))))
}

/// `sum(y * r)` for a fixed random `r`, so gradients are not trivially zero
/// (a plain sum of a batch-normalized map is constant).
pub fn projection(y: &Tensor, seed: u64) -> Result<Tensor> {
    let r = Tensor::randn(y.shape(), 0.0, 1.0, &mut Rng::new(seed))?;
    y.mul(&r)?.sum()
}

fn summarize(results: &[(&str, f64)], tol: f64) -> (bool, String) {
    let worst = results.iter().cloned().fold(("", 0.0), |a, b| if b.1 > a.1 { b } else { a });
    (
        results.iter().all(|r| r.1 < tol),
        format!("{} gradients checked, worst {} rel err {:.2e} (tol {tol:.0e})", results.len(), worst.0, worst.1),
    )
}

fn rel_err(r: &gradcheck::GradCheckReport) -> f64 {
    r.max_rel_err
}

fn grad_layers(_: &CheckOptions) -> Result<(bool, String)> {
    let mut rng = Rng::new(21);
    let cfg = GradCheckConfig::default();
    let mut out = Vec::new();

    let x = random(&[1, 2, 5, 5], &mut rng)?;
    let w = random(&[3, 2, 3, 3], &mut rng)?;
    let b = random(&[3], &mut rng)?;
    let r = gradcheck::check(
        &[x.clone(), w, b],
        |v| projection(&conv2d(&v[0], &v[1], &v[2], 1, Padding::same(3, 3))?, 1),
        cfg,
    )?;
    out.push(("conv2d", r.max_rel_err));

    let bn = BatchNorm2d::new(2)?;
    let r = gradcheck::check(
        &[x.clone(), random(&[2], &mut rng)?, random(&[2], &mut rng)?],
        |v| {
            let mut layer = bn.clone();
            layer.gamma = v[1].clone();
            layer.beta = v[2].clone();
            projection(&layer.forward(&v[0], Mode::Train)?, 2)
        },
        cfg,
    )?;
    out.push(("batchnorm2d", r.max_rel_err));

    let xp = random(&[1, 2, 4, 4], &mut rng)?;
    let r = gradcheck::check(&[xp.clone()], |v| projection(&maxpool2d(&v[0])?, 3), cfg)?;
    out.push(("maxpool2d", r.max_rel_err));

    let r = gradcheck::check(
        &[xp, random(&[3, 2, 2, 2], &mut rng)?, random(&[3], &mut rng)?],
        |v| projection(&upconv2x(&v[0], &v[1], &v[2])?, 4),
        cfg,
    )?;
    out.push(("upconv2x", r.max_rel_err));

    let spec = SpectralTransform::new(2, &mut rng)?;
    let r = gradcheck::check(&[random(&[1, 2, 4, 6], &mut rng)?], |v| projection(&spec.forward(&v[0], Mode::Train)?, 5), cfg)?;
    out.push(("spectral_transform", r.max_rel_err));

    Ok(summarize(&out, 1e-4))
}

/// Gradient of a module's output projection with respect to its input and
/// every trainable tensor.
pub fn module_gradcheck<M: Module + Clone>(
    module: &M,
    inputs: &[Tensor],
    forward: impl Fn(&M, &[Tensor]) -> Result<Tensor>,
    cfg: GradCheckConfig,
) -> Result<gradcheck::GradCheckReport> {
    let mut params = Vec::new();
    module.visit("", &mut |_, t, k| {
        if k == ParamKind::Trainable {
            params.push(t.clone());
        }
    });
    let n_in = inputs.len();
    let all: Vec<Tensor> = inputs.iter().cloned().chain(params).collect();
    let report = gradcheck::check(
        &all,
        |v| {
            let mut m = module.clone();
            let mut it = v[n_in..].iter();
            m.visit_mut("", &mut |_, t, k| {
                if k == ParamKind::Trainable {
                    *t = it.next().unwrap().clone();
                }
            });
            projection(&forward(&m, &v[..n_in])?, 7)
        },
        cfg,
    )?;
    Ok(report)
}

fn grad_blocks(_: &CheckOptions) -> Result<(bool, String)> {
    let mut rng = Rng::new(31);
    let cfg = GradCheckConfig { relative_floor: 1e-5, max_coords: Some(60), seed: 3, ..Default::default() };
    let mut out = Vec::new();
    let x = random(&[1, 2, 8, 8], &mut rng)?;

    let scharr = ScharrBlock::new(2, &mut rng)?;
    out.push((
        "scharr_block",
        rel_err(&module_gradcheck(&scharr, &[x.clone()], |m, v| m.forward(&v[0], Mode::Train), cfg)?),
    ));
    let ffc = FfcBlock::new(2, &mut rng)?;
    out.push((
        "ffc_block",
        rel_err(&module_gradcheck(&ffc, &[x.clone()], |m, v| m.forward(&v[0], Mode::Train), cfg)?),
    ));
    let sc = ScFfcBlock::new(2, &mut rng)?;
    out.push((
        "sc_ffc_block",
        rel_err(&module_gradcheck(&sc, &[x.clone()], |m, v| m.forward(&v[0], Mode::Train), cfg)?),
    ));
    let ag = AttentionGate::new(2, 2, &mut rng)?;
    let g = random(&[1, 2, 8, 8], &mut rng)?;
    out.push((
        "attention_gate",
        rel_err(&module_gradcheck(&ag, &[g, x.clone()], |m, v| m.forward(&v[0], &v[1]), cfg)?),
    ));
    let enc = DclBlock::encoder(2, 2, &mut rng)?;
    out.push((
        "dcl_encoder",
        rel_err(&module_gradcheck(&enc, &[x.clone()], |m, v| m.encode(&v[0], Mode::Train).map(|r| r.1), cfg)?),
    ));
    let dec = DecoderBlock::new(4, 2, &mut rng)?;
    let deep = random(&[1, 4, 4, 4], &mut rng)?;
    out.push((
        "dcl_decoder",
        rel_err(&module_gradcheck(&dec, &[deep, x], |m, v| m.forward(&v[0], &v[1], Mode::Train), cfg)?),
    ));
    Ok(summarize(&out, 1e-4))
}

fn grad_micro_model(_: &CheckOptions) -> Result<(bool, String)> {
    let model = Model::build(&ModelConfig::micro(5))?;
    let x = Tensor::create(
        &[1, 1, 16, 16],
        crate::Fill::Uniform { lo: 0.0, hi: 1.0, rng: &mut Rng::new(6) },
    )?;
    // small steps, refined further where a perturbation straddles a kink
    let cfg = GradCheckConfig {
        h: 1e-6,
        relative_floor: 1e-5,
        max_coords: Some(60),
        seed: 9,
        refinements: 2,
        ..Default::default()
    };
    let r = module_gradcheck(&model, &[x], |m, v| m.forward(&v[0], Mode::Train), cfg)?;
    Ok(summarize(&[("micro_model", r.max_rel_err)], 1e-3))
}

fn metric_oracles(_: &CheckOptions) -> Result<(bool, String)> {
    let pred = Mask::from_points(2, 2, &[(0, 0), (0, 1)]);
    let gt = Mask::from_points(2, 2, &[(0, 1), (1, 1)]);
    let mut ok = confusion(&pred, &gt)? == ConfusionCounts { tp: 1, fp: 1, fn_: 1, tn: 1 };
    let counts = [
        ConfusionCounts { tp: 3, fp: 1, fn_: 2, tn: 0 },
        ConfusionCounts { tp: 1, fp: 0, fn_: 0, tn: 0 },
    ];
    ok &= (iou(&counts)? - 4.0 / 7.0).abs() < 1e-12 && (niou(&counts)? - 0.75).abs() < 1e-12;
    let diag = Mask::from_points(32, 32, &[(3, 3), (4, 4)]);
    let mut spurious = diag.clone();
    for x in 20..23 {
        spurious.pixels[30 * 32 + x] = true;
    }
    let (pd, fa) = pd_fa(&[spurious], &[diag.clone()])?;
    ok &= pd == 1.0 && fa == 3.0 / 1024.0;
    let flat = ProbMap::new(32, 32, vec![0.5; 1024])?;
    ok &= roc_auc(&[flat], &[diag])? == 0.5;
    Ok((ok, format!("pd={pd}, fa={fa:.6}")))
}

fn adamw_trajectory(_: &CheckOptions) -> Result<(bool, String)> {
    let hyper = OptimizerHyper::default();
    let mut opt = AdamW::new(hyper)?;
    let mut p = [Tensor::scalar(1.0)];
    // hand-evaluated: with constant g the bias-corrected ratio m_hat/sqrt(v_hat) is 1
    let mut theta = 1.0f64;
    let mut worst = 0.0f64;
    for _ in 0..3 {
        opt.step(&mut p, &[Tensor::scalar(1.0)])?;
        theta -= hyper.lr * (1.0 / (1.0 + hyper.epsilon) + hyper.weight_decay * theta);
        worst = worst.max((p[0].data()[0] - theta).abs());
    }
    let mut decay = AdamW::new(hyper)?;
    let mut q = [Tensor::scalar(1.0)];
    decay.step(&mut q, &[Tensor::scalar(0.0)])?;
    let contracted = q[0].data()[0] == 1.0 - hyper.lr * (hyper.weight_decay * 1.0);
    Ok((worst < 1e-12 && contracted, format!("max trajectory deviation {worst:.2e}")))
}
