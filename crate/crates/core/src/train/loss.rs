use crate::tensor::{record, Tensor};
use crate::{Error, Result};

/// Mean binary cross-entropy between `sigmoid(logits)` and a 0/1 target,
/// evaluated as `max(z, 0) - z t + ln(1 + e^-|z|)` so that large logits
/// never overflow.
pub fn bce_loss(logits: &Tensor, target: &Tensor) -> Result<Tensor> {
    if logits.shape() != target.shape() {
        return Err(Error::ShapeMismatch {
            op: "bce_loss",
            lhs: logits.shape().to_vec(),
            rhs: target.shape().to_vec(),
        });
    }
    if let Some(t) = target.data().iter().find(|&&t| t != 0.0 && t != 1.0) {
        return Err(Error::InvalidArgument {
            op: "bce_loss",
            msg: format!("target must be 0 or 1, found {t}"),
        });
    }
    let n = logits.numel() as f64;
    let z = logits.data.clone();
    let t = target.data.clone();
    let sum: f64 = z
        .iter()
        .zip(t.iter())
        .map(|(&z, &t)| z.max(0.0) - z * t + (-z.abs()).exp().ln_1p())
        .sum();
    record("bce_loss", &[logits, target], vec![1], vec![sum / n], move |g, wants| {
        let scale = g[0] / n;
        let dz = wants[0].then(|| {
            z.iter()
                .zip(t.iter())
                .map(|(&z, &t)| scale * (crate::tensor::sigmoid(z) - t))
                .collect()
        });
        vec![dz, None]
    })
}
