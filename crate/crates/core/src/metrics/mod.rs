//! Segmentation metrics for small-object detection.
//!
//! Pixel level: IoU (dataset-pooled) and nIoU (per-image mean).
//! Object level: Pd (fraction of ground-truth components hit by at least
//! one predicted pixel) and Fa (falsely predicted pixels over all pixels).
//! Model level: F-score and pixel ROC-AUC.

mod components;

pub use components::{connected_components, Components};

use std::fmt;

use crate::{Error, Result};

/// Probability maps are binarized with `p >= PRED_THRESHOLD`.
pub const PRED_THRESHOLD: f64 = 0.5;
/// ROC thresholds `i / (AUC_THRESHOLDS - 1)`.
pub const AUC_THRESHOLDS: usize = 256;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize, pixels: Vec<bool>) -> Result<Self> {
        if pixels.len() != height * width {
            return Err(Error::InvalidArgument {
                op: "mask",
                msg: format!("{height}x{width} mask needs {} pixels, got {}", height * width, pixels.len()),
            });
        }
        Ok(Self { height, width, pixels })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self { height, width, pixels: vec![false; height * width] }
    }

    /// Mask with the listed `(row, col)` pixels set.
    pub fn from_points(height: usize, width: usize, points: &[(usize, usize)]) -> Self {
        let mut m = Self::empty(height, width);
        for &(y, x) in points {
            m.pixels[y * width + x] = true;
        }
        m
    }

    pub fn from_probs(probs: &ProbMap) -> Self {
        Self {
            height: probs.height,
            width: probs.width,
            pixels: probs.values.iter().map(|&p| p >= PRED_THRESHOLD).collect(),
        }
    }

    pub fn count(&self) -> usize {
        self.pixels.iter().filter(|&&b| b).count()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl ProbMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::InvalidArgument {
                op: "prob_map",
                msg: format!("{height}x{width} map needs {} values, got {}", height * width, values.len()),
            });
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument {
                op: "prob_map",
                msg: format!("probability {v} outside [0, 1]"),
            });
        }
        Ok(Self { height, width, values })
    }
}

fn same_dims(op: &'static str, a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch {
            op,
            lhs: vec![a.0, a.1],
            rhs: vec![b.0, b.1],
        });
    }
    Ok(())
}

fn same_len(op: &'static str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::InvalidArgument {
            op,
            msg: format!("{a} predictions vs {b} ground truths"),
        });
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn union(&self) -> u64 {
        self.tp + self.fp + self.fn_
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }
}

pub fn confusion(pred: &Mask, gt: &Mask) -> Result<ConfusionCounts> {
    same_dims("confusion", (pred.height, pred.width), (gt.height, gt.width))?;
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.pixels.iter().zip(&gt.pixels) {
        match (p, g) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

fn non_empty(op: &'static str, counts: &[ConfusionCounts]) -> Result<()> {
    if counts.is_empty() {
        return Err(Error::InvalidArgument { op, msg: "no samples".into() });
    }
    Ok(())
}

/// `sum(tp) / sum(tp + fp + fn)`; 1 when every union is empty.
pub fn iou(counts: &[ConfusionCounts]) -> Result<f64> {
    non_empty("iou", counts)?;
    let total = counts.iter().fold(ConfusionCounts::default(), |a, &b| a + b);
    Ok(match total.union() {
        0 => 1.0,
        u => total.tp as f64 / u as f64,
    })
}

/// Mean of per-image `tp / (tp + fp + fn)`; an image where both masks are
/// empty scores 1.
pub fn niou(counts: &[ConfusionCounts]) -> Result<f64> {
    non_empty("niou", counts)?;
    let sum: f64 = counts
        .iter()
        .map(|c| match c.union() {
            0 => 1.0,
            u => c.tp as f64 / u as f64,
        })
        .sum();
    Ok(sum / counts.len() as f64)
}

/// `2PR / (P + R)`; 1 when prediction and ground truth are both empty, 0
/// when exactly one is.
pub fn f_score(c: &ConfusionCounts) -> f64 {
    let pred_pos = c.tp + c.fp;
    let gt_pos = c.tp + c.fn_;
    match (pred_pos, gt_pos) {
        (0, 0) => 1.0,
        (0, _) | (_, 0) => 0.0,
        _ if c.tp == 0 => 0.0,
        _ => {
            let p = c.tp as f64 / pred_pos as f64;
            let r = c.tp as f64 / gt_pos as f64;
            2.0 * p * r / (p + r)
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DetectionCounts {
    /// Ground-truth components overlapped by at least one predicted pixel.
    pub n_pred: usize,
    /// Ground-truth components.
    pub n_all: usize,
    /// Predicted pixels outside every ground-truth component.
    pub p_false: usize,
    /// All pixels of the image.
    pub p_all: usize,
}

pub fn detection_counts(pred: &Mask, gt: &Mask) -> Result<DetectionCounts> {
    same_dims("detection_counts", (pred.height, pred.width), (gt.height, gt.width))?;
    let cc = connected_components(gt);
    let mut hit = vec![false; cc.count()];
    let mut p_false = 0;
    for (i, &p) in pred.pixels.iter().enumerate() {
        if !p {
            continue;
        }
        match cc.labels[i] {
            0 => p_false += 1,
            l => hit[l as usize - 1] = true,
        }
    }
    Ok(DetectionCounts {
        n_pred: hit.iter().filter(|&&h| h).count(),
        n_all: cc.count(),
        p_false,
        p_all: pred.pixels.len(),
    })
}

/// `(Pd, Fa)` from per-image detection counts. Pd averages
/// `n_pred / n_all` over images that contain objects (1 if none do); Fa
/// averages `p_false / p_all` over all images.
pub fn pd_fa_from_counts(counts: &[DetectionCounts]) -> Result<(f64, f64)> {
    if counts.is_empty() {
        return Err(Error::InvalidArgument { op: "pd_fa", msg: "no samples".into() });
    }
    let with_objects: Vec<f64> = counts
        .iter()
        .filter(|c| c.n_all > 0)
        .map(|c| c.n_pred as f64 / c.n_all as f64)
        .collect();
    let pd = if with_objects.is_empty() {
        1.0
    } else {
        with_objects.iter().sum::<f64>() / with_objects.len() as f64
    };
    let fa = counts.iter().map(|c| c.p_false as f64 / c.p_all as f64).sum::<f64>() / counts.len() as f64;
    Ok((pd, fa))
}

pub fn pd_fa(preds: &[Mask], gts: &[Mask]) -> Result<(f64, f64)> {
    same_len("pd_fa", preds.len(), gts.len())?;
    let counts = preds
        .iter()
        .zip(gts)
        .map(|(p, g)| detection_counts(p, g))
        .collect::<Result<Vec<_>>>()?;
    pd_fa_from_counts(&counts)
}

/// Number of thresholds `t_i = i / 255` with `t_i <= p`, minus one: the
/// pixel is counted positive at thresholds `0..=bin`.
fn threshold_bin(p: f64) -> usize {
    let last = AUC_THRESHOLDS - 1;
    let t = |i: usize| i as f64 / last as f64;
    let mut k = ((p * last as f64).floor() as usize).min(last);
    while k < last && t(k + 1) <= p {
        k += 1;
    }
    while k > 0 && t(k) > p {
        k -= 1;
    }
    k
}

/// Per-threshold positive/negative histograms, accumulated across images.
#[derive(Clone, Debug)]
pub struct RocAccumulator {
    pos: Vec<u64>,
    neg: Vec<u64>,
}

impl Default for RocAccumulator {
    fn default() -> Self {
        Self {
            pos: vec![0; AUC_THRESHOLDS],
            neg: vec![0; AUC_THRESHOLDS],
        }
    }
}

impl RocAccumulator {
    pub fn add(&mut self, probs: &ProbMap, gt: &Mask) -> Result<()> {
        same_dims("roc_auc", (probs.height, probs.width), (gt.height, gt.width))?;
        for (&p, &g) in probs.values.iter().zip(&gt.pixels) {
            let k = threshold_bin(p);
            if g {
                self.pos[k] += 1;
            } else {
                self.neg[k] += 1;
            }
        }
        Ok(())
    }

    /// `(FPR, TPR)` at each threshold, in threshold order.
    pub fn curve(&self) -> Vec<(f64, f64)> {
        let p_total: u64 = self.pos.iter().sum();
        let n_total: u64 = self.neg.iter().sum();
        let mut tp = 0;
        let mut fp = 0;
        let mut pts = vec![(0.0, 0.0); AUC_THRESHOLDS];
        for i in (0..AUC_THRESHOLDS).rev() {
            tp += self.pos[i];
            fp += self.neg[i];
            pts[i] = (fp as f64 / n_total.max(1) as f64, tp as f64 / p_total.max(1) as f64);
        }
        pts
    }

    /// Trapezoidal area with the (0,0) and (1,1) endpoints included; 0.5 if
    /// either class is absent.
    pub fn auc(&self) -> f64 {
        if self.pos.iter().sum::<u64>() == 0 || self.neg.iter().sum::<u64>() == 0 {
            return 0.5;
        }
        let mut pts = vec![(0.0, 0.0)];
        // thresholds ascend, so rates descend; walk them in reverse
        pts.extend(self.curve().into_iter().rev());
        pts.push((1.0, 1.0));
        pts.windows(2)
            .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
            .sum()
    }
}

pub fn roc_auc(probs: &[ProbMap], gts: &[Mask]) -> Result<f64> {
    same_len("roc_auc", probs.len(), gts.len())?;
    let mut acc = RocAccumulator::default();
    for (p, g) in probs.iter().zip(gts) {
        acc.add(p, g)?;
    }
    Ok(acc.auc())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsReport {
    pub n: usize,
    pub iou: f64,
    pub niou: f64,
    pub pd: f64,
    /// Raw fraction; printed scaled by 1e6.
    pub fa: f64,
    pub f_score: f64,
    pub auc: f64,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str = "n,iou,niou,pd,fa_e6,f_score,auc";

    /// All metrics for paired probability maps and ground-truth masks.
    pub fn compute(probs: &[ProbMap], gts: &[Mask]) -> Result<Self> {
        same_len("metrics", probs.len(), gts.len())?;
        let preds: Vec<Mask> = probs.iter().map(Mask::from_probs).collect();
        Self::from_masks(&preds, gts, Some(roc_auc(probs, gts)?))
    }

    /// Metrics for already-binarized predictions. Without probabilities the
    /// AUC is that of the hard masks (a single interior ROC point).
    pub fn from_masks(preds: &[Mask], gts: &[Mask], auc: Option<f64>) -> Result<Self> {
        same_len("metrics", preds.len(), gts.len())?;
        let counts = preds
            .iter()
            .zip(gts)
            .map(|(p, g)| confusion(p, g))
            .collect::<Result<Vec<_>>>()?;
        let total = counts.iter().fold(ConfusionCounts::default(), |a, &b| a + b);
        let (pd, fa) = pd_fa(preds, gts)?;
        let auc = match auc {
            Some(a) => a,
            None => {
                let hard: Vec<ProbMap> = preds
                    .iter()
                    .map(|m| ProbMap {
                        height: m.height,
                        width: m.width,
                        values: m.pixels.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
                    })
                    .collect();
                roc_auc(&hard, gts)?
            }
        };
        Ok(Self {
            n: preds.len(),
            iou: iou(&counts)?,
            niou: niou(&counts)?,
            pd,
            fa,
            f_score: f_score(&total),
            auc,
        })
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{:.3},{:.6},{:.6}",
            self.n,
            self.iou,
            self.niou,
            self.pd,
            self.fa * 1e6,
            self.f_score,
            self.auc
        )
    }
}

/// `key=value` lines.
impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "n={}", self.n)?;
        writeln!(f, "iou={:.6}", self.iou)?;
        writeln!(f, "niou={:.6}", self.niou)?;
        writeln!(f, "pd={:.6}", self.pd)?;
        writeln!(f, "fa_e6={:.3}", self.fa * 1e6)?;
        writeln!(f, "f_score={:.6}", self.f_score)?;
        write!(f, "auc={:.6}", self.auc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cc(tp: u64, fp: u64, fn_: u64) -> ConfusionCounts {
        ConfusionCounts { tp, fp, fn_, tn: 0 }
    }

    #[test]
    fn confusion_examples() {
        let pred = Mask::from_points(2, 2, &[(0, 0), (0, 1)]);
        let gt = Mask::from_points(2, 2, &[(0, 1), (1, 1)]);
        assert_eq!(confusion(&pred, &gt).unwrap(), ConfusionCounts { tp: 1, fp: 1, fn_: 1, tn: 1 });

        let ones = Mask::new(4, 4, vec![true; 16]).unwrap();
        let c = confusion(&ones, &Mask::empty(4, 4)).unwrap();
        assert_eq!(c, ConfusionCounts { tp: 0, fp: 16, fn_: 0, tn: 0 });
        assert!(confusion(&ones, &Mask::empty(4, 5)).is_err());
    }

    #[test]
    fn iou_examples() {
        let counts = [cc(3, 1, 2), cc(1, 0, 0)];
        assert!((iou(&counts).unwrap() - 4.0 / 7.0).abs() < 1e-15);
        assert!((niou(&counts).unwrap() - 0.75).abs() < 1e-15);
        assert_eq!(iou(&[cc(0, 4, 4)]).unwrap(), 0.0);
        assert_eq!(niou(&[ConfusionCounts { tn: 9, ..Default::default() }]).unwrap(), 1.0);
        assert!(iou(&[]).is_err());
    }

    #[test]
    fn f_score_examples() {
        assert_eq!(f_score(&cc(1, 1, 1)), 0.5);
        assert_eq!(f_score(&cc(0, 0, 0)), 1.0);
        assert_eq!(f_score(&cc(0, 3, 0)), 0.0);
        assert_eq!(f_score(&cc(5, 0, 0)), 1.0);
    }

    #[test]
    fn pd_fa_examples() {
        let gt = Mask::from_points(32, 32, &[(10, 10), (10, 11), (11, 10), (11, 11)]);
        assert_eq!(pd_fa(&[gt.clone()], &[gt.clone()]).unwrap(), (1.0, 0.0));
        assert_eq!(pd_fa(&[Mask::empty(32, 32)], &[gt.clone()]).unwrap(), (0.0, 0.0));
        let mut pred = gt.clone();
        for x in 20..23 {
            pred.pixels[30 * 32 + x] = true;
        }
        let (pd, fa) = pd_fa(&[pred], &[gt]).unwrap();
        assert_eq!(pd, 1.0);
        assert_eq!(fa, 3.0 / 1024.0);
    }

    #[test]
    fn threshold_bins_are_exact() {
        assert_eq!(threshold_bin(0.0), 0);
        assert_eq!(threshold_bin(1.0), 255);
        assert_eq!(threshold_bin(0.5), 127);
        for i in 0..256 {
            assert_eq!(threshold_bin(i as f64 / 255.0), i);
        }
    }

    #[test]
    fn auc_examples() {
        let gt = Mask::from_points(4, 4, &[(1, 1), (2, 2)]);
        let perfect = ProbMap::new(4, 4, gt.pixels.iter().map(|&b| b as u8 as f64).collect()).unwrap();
        assert_eq!(roc_auc(&[perfect], &[gt.clone()]).unwrap(), 1.0);
        let flat = ProbMap::new(4, 4, vec![0.5; 16]).unwrap();
        assert_eq!(roc_auc(&[flat], &[gt]).unwrap(), 0.5);
        assert!(ProbMap::new(1, 1, vec![1.5]).is_err());
    }

    #[test]
    fn report_formats() {
        let gt = Mask::from_points(4, 4, &[(1, 1)]);
        let r = MetricsReport::from_masks(&[gt.clone()], &[gt], None).unwrap();
        assert_eq!(r.csv_row(), "1,1.000000,1.000000,1.000000,0.000,1.000000,1.000000");
        assert!(r.to_string().contains("fa_e6=0.000"));
    }
}
