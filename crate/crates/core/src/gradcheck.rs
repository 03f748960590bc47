//! Central finite-difference gradient checking.
//!
//! The numeric side never touches the tape: each coordinate is perturbed by
//! `±h` on an untracked copy of the inputs and the scalar loss re-evaluated.

use crate::tensor::{Rng, Tape, Tensor};
use crate::Result;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    /// Central-difference step. Small enough that a perturbation rarely
    /// crosses a ReLU or max-pool kink in the networks checked here.
    pub h: f64,
    /// Denominator floor for the relative error, so coordinates whose true
    /// gradient is ~0 are judged by absolute error instead.
    pub floor: f64,
    /// Additional floor as a fraction of the largest analytic gradient
    /// magnitude; keeps exactly-zero gradients from being judged against
    /// finite-difference noise that scales with the loss.
    pub relative_floor: f64,
    /// Check at most this many coordinates, sampled uniformly over all
    /// inputs. `None` checks every coordinate.
    pub max_coords: Option<usize>,
    pub seed: u64,
    /// Re-measure a disagreeing coordinate up to this many times, each with
    /// a step ten times smaller, keeping the best agreement. A perturbation
    /// that straddles a ReLU or max-pool kink gives a meaningless central
    /// difference; the kink drops out as the step shrinks, a wrong
    /// gradient does not.
    pub refinements: u32,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            h: 1e-5,
            floor: 1e-5,
            relative_floor: 0.0,
            max_coords: None,
            seed: 0,
            refinements: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub coords_checked: usize,
    pub max_rel_err: f64,
    /// `(input index, flat coordinate, analytic, numeric)` at the worst error.
    pub worst: Option<(usize, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compare tape gradients of `loss_fn` against central differences.
///
/// `loss_fn` must return a single-element tensor and must be deterministic
/// for fixed inputs.
pub fn check<F>(inputs: &[Tensor], loss_fn: F, cfg: GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    let tape = Tape::new();
    let watched: Vec<Tensor> = inputs.iter().map(|t| tape.watch(t)).collect();
    let loss = loss_fn(&watched)?;
    let grads = tape.backward(&loss)?;
    let analytic: Vec<Tensor> = watched.iter().map(|w| grads.get_or_zeros(w)).collect();
    drop(watched);
    let max_grad = analytic
        .iter()
        .flat_map(|t| t.data().iter())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = cfg.floor.max(cfg.relative_floor * max_grad);

    let mut coords: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.numel()).map(move |j| (i, j)))
        .collect();
    if let Some(max) = cfg.max_coords {
        if coords.len() > max {
            Rng::new(cfg.seed).shuffle(&mut coords);
            coords.truncate(max);
            coords.sort_unstable();
        }
    }

    let mut base: Vec<Tensor> = inputs.iter().map(Tensor::detach).collect();
    let mut report = GradCheckReport {
        coords_checked: coords.len(),
        max_rel_err: 0.0,
        worst: None,
    };
    for &(i, j) in &coords {
        let original = inputs[i].data().to_vec();
        let mut eval_at = |delta: f64| -> Result<f64> {
            let mut d = original.clone();
            d[j] += delta;
            base[i] = inputs[i].with_data(d);
            loss_fn(&base)?.item()
        };
        let a = analytic[i].data()[j];
        let (mut err, mut numeric) = (f64::INFINITY, f64::NAN);
        let mut h = cfg.h;
        for _ in 0..=cfg.refinements {
            let central = (eval_at(h)? - eval_at(-h)?) / (2.0 * h);
            let e = relative_error(a, central, floor);
            if e < err {
                (err, numeric) = (e, central);
            }
            if err <= 1e-7 {
                break;
            }
            h /= 10.0;
        }
        base[i] = inputs[i].detach();
        if err > report.max_rel_err || report.worst.is_none() {
            report.max_rel_err = report.max_rel_err.max(err);
            report.worst = Some((i, j, a, numeric));
        }
    }
    Ok(report)
}
