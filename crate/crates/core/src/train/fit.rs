use std::fmt::Write as _;

use super::data::{stack, Sample};
use super::loss::bce_loss;
use super::optim::{AdamW, OptimizerHyper};
use crate::layers::{Module, ParamKind};
use crate::metrics::{Mask, MetricsReport, ProbMap};
use crate::model::Model;
use crate::tensor::{Rng, Tape, Tensor};
use crate::{Error, Mode, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Stop after this many optimizer steps even mid-epoch.
    pub max_steps: Option<usize>,
    /// Evaluate every this many epochs; the last epoch is always evaluated.
    pub eval_every: usize,
    pub hyper: OptimizerHyper,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 150,
            batch_size: 8,
            max_steps: None,
            eval_every: 1,
            hyper: OptimizerHyper::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training loss over the epoch's steps.
    pub loss: f64,
    pub report: Option<MetricsReport>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Loss of every optimizer step, in order.
    pub step_losses: Vec<f64>,
}

impl History {
    pub const CSV_HEADER: &'static str = "epoch,loss,iou,niou,pd,fa_e6,f_score,auc";

    /// One row per epoch; metric columns are empty for epochs that were not
    /// evaluated.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.epochs {
            let _ = write!(out, "{},{:.9}", r.epoch, r.loss);
            match &r.report {
                Some(m) => {
                    let _ = writeln!(
                        out,
                        ",{:.6},{:.6},{:.6},{:.3},{:.6},{:.6}",
                        m.iou,
                        m.niou,
                        m.pd,
                        m.fa * 1e6,
                        m.f_score,
                        m.auc
                    );
                }
                None => out.push_str(",,,,,,\n"),
            }
        }
        out
    }
}

/// One optimizer step on a batch: train-mode forward, BCE on logits,
/// backward, AdamW update. Returns the batch loss.
pub fn train_step(model: &mut Model, opt: &mut AdamW, images: &Tensor, masks: &Tensor) -> Result<f64> {
    let tape = Tape::new();
    model.visit_mut("", &mut |_, t, kind| {
        if kind == ParamKind::Trainable {
            *t = tape.watch(t);
        }
    });
    let result = (|| {
        let logits = model.forward_logits(images, Mode::Train)?;
        let loss = bce_loss(&logits, masks)?;
        let grads = tape.backward(&loss)?;
        opt.step_module(model, &grads)?;
        loss.item()
    })();
    // always leave the model untracked, even when the step failed
    model.visit_mut("", &mut |_, t, _| {
        if t.requires_grad() {
            *t = t.detach();
        }
    });
    result.map_err(|e| match e {
        Error::NonFinite(op) => Error::TrainingAborted(op),
        e => e,
    })
}

/// Eval-mode probabilities for every sample, in order.
pub fn predict(model: &Model, samples: &[Sample], batch_size: usize) -> Result<Vec<ProbMap>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let (images, _) = stack(&refs)?;
        let probs = model.forward(&images, Mode::Eval)?;
        let (_, _, h, w) = probs.dims4()?;
        for plane in probs.data().chunks(h * w) {
            out.push(ProbMap::new(h, w, plane.to_vec())?);
        }
    }
    Ok(out)
}

pub fn ground_truth(samples: &[Sample]) -> Vec<Mask> {
    samples
        .iter()
        .map(|s| {
            let (h, w) = s.size();
            Mask {
                height: h,
                width: w,
                pixels: s.mask.data().iter().map(|&m| m > 0.5).collect(),
            }
        })
        .collect()
}

pub fn evaluate(model: &Model, samples: &[Sample], batch_size: usize) -> Result<MetricsReport> {
    let probs = predict(model, samples, batch_size)?;
    MetricsReport::compute(&probs, &ground_truth(samples))
}

/// Mini-batch training with a seeded shuffle each epoch. `on_epoch` sees
/// every record as soon as it is complete (checkpointing hooks in here).
pub fn train_loop(
    model: &mut Model,
    train: &[Sample],
    eval: &[Sample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord, &Model) -> Result<()>,
) -> Result<History> {
    if train.is_empty() || eval.is_empty() {
        return Err(Error::InvalidArgument {
            op: "train_loop",
            msg: "training and evaluation sets must be non-empty".into(),
        });
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 || cfg.eval_every == 0 {
        return Err(Error::Config("epochs, batch size and eval interval must be positive".into()));
    }
    let mut opt = AdamW::new(cfg.hyper)?;
    let mut rng = Rng::new(cfg.seed);
    let mut history = History::default();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let step_budget = cfg.max_steps.unwrap_or(usize::MAX);

    for epoch in 1..=cfg.epochs {
        rng.shuffle(&mut order);
        let mut losses = Vec::new();
        for chunk in order.chunks(cfg.batch_size) {
            if history.step_losses.len() >= step_budget {
                break;
            }
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train[i]).collect();
            let (images, masks) = stack(&batch)?;
            let loss = train_step(model, &mut opt, &images, &masks)?;
            losses.push(loss);
            history.step_losses.push(loss);
        }
        let done = epoch == cfg.epochs || history.step_losses.len() >= step_budget;
        let report = if done || epoch % cfg.eval_every == 0 {
            Some(evaluate(model, eval, cfg.batch_size)?)
        } else {
            None
        };
        let record = EpochRecord {
            epoch,
            loss: losses.iter().sum::<f64>() / losses.len().max(1) as f64,
            report,
        };
        on_epoch(&record, model)?;
        history.epochs.push(record);
        if done {
            break;
        }
    }
    Ok(history)
}
