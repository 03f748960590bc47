use std::sync::{Arc, Mutex};

use super::{join, Module, ParamKind};
use crate::tensor::{record, Tensor};
use crate::{Error, Mode, Result};

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Debug)]
struct RunningStats {
    mean: Tensor,
    var: Tensor,
}

/// Per-channel batch normalization over `(N, H, W)`.
///
/// Running statistics live behind a mutex so a frozen model can be shared
/// across threads; only train-mode forwards write to them.
#[derive(Debug)]
pub struct BatchNorm2d {
    pub gamma: Tensor,
    pub beta: Tensor,
    running: Mutex<RunningStats>,
    pub momentum: f64,
    pub epsilon: f64,
}

impl Clone for BatchNorm2d {
    fn clone(&self) -> Self {
        Self {
            gamma: self.gamma.clone(),
            beta: self.beta.clone(),
            running: Mutex::new(self.running.lock().unwrap().clone()),
            momentum: self.momentum,
            epsilon: self.epsilon,
        }
    }
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: Tensor::ones(&[channels])?,
            beta: Tensor::zeros(&[channels])?,
            running: Mutex::new(RunningStats {
                mean: Tensor::zeros(&[channels])?,
                var: Tensor::ones(&[channels])?,
            }),
            momentum: BN_MOMENTUM,
            epsilon: BN_EPSILON,
        })
    }

    pub fn channels(&self) -> usize {
        self.gamma.numel()
    }

    pub fn running_mean(&self) -> Tensor {
        self.running.lock().unwrap().mean.clone()
    }

    pub fn running_var(&self) -> Tensor {
        self.running.lock().unwrap().var.clone()
    }

    pub fn set_running(&mut self, mean: Tensor, var: Tensor) -> Result<()> {
        let c = self.channels();
        if mean.shape() != [c] || var.shape() != [c] || var.data().iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidArgument {
                op: "batchnorm2d",
                msg: format!("running stats must be [{c}] with var >= 0"),
            });
        }
        *self.running.get_mut().unwrap() = RunningStats { mean, var };
        Ok(())
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let (n, c, h, w) = x.dims4()?;
        if c != self.channels() {
            return Err(Error::ShapeMismatch {
                op: "batchnorm2d",
                lhs: x.shape().to_vec(),
                rhs: self.gamma.shape().to_vec(),
            });
        }
        let hw = h * w;
        let count = (n * hw) as f64;
        let xd = x.data.clone();
        let (mean, var) = match mode {
            Mode::Train => {
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for i in 0..n {
                    for ch in 0..c {
                        let plane = &xd[(i * c + ch) * hw..(i * c + ch + 1) * hw];
                        mean[ch] += plane.iter().sum::<f64>();
                    }
                }
                mean.iter_mut().for_each(|m| *m /= count);
                for i in 0..n {
                    for ch in 0..c {
                        let plane = &xd[(i * c + ch) * hw..(i * c + ch + 1) * hw];
                        var[ch] += plane.iter().map(|v| (v - mean[ch]).powi(2)).sum::<f64>();
                    }
                }
                var.iter_mut().for_each(|v| *v /= count);

                let mut rs = self.running.lock().unwrap();
                let m = self.momentum;
                let new_mean = rs.mean.data().iter().zip(&mean).map(|(o, b)| (1.0 - m) * o + m * b).collect();
                let new_var = rs.var.data().iter().zip(&var).map(|(o, b)| (1.0 - m) * o + m * b).collect();
                rs.mean = rs.mean.with_data(new_mean);
                rs.var = rs.var.with_data(new_var);
                (mean, var)
            }
            Mode::Eval => {
                let rs = self.running.lock().unwrap();
                (rs.mean.to_vec(), rs.var.to_vec())
            }
        };
        let inv_std: Arc<Vec<f64>> = Arc::new(var.iter().map(|v| 1.0 / (v + self.epsilon).sqrt()).collect());
        let gamma = self.gamma.data.clone();
        let beta = self.beta.data.clone();

        let mut xhat = vec![0.0; xd.len()];
        let mut out = vec![0.0; xd.len()];
        for i in 0..n {
            for ch in 0..c {
                let off = (i * c + ch) * hw;
                for j in off..off + hw {
                    xhat[j] = (xd[j] - mean[ch]) * inv_std[ch];
                    out[j] = gamma[ch] * xhat[j] + beta[ch];
                }
            }
        }
        let xhat = Arc::new(xhat);
        let train = mode == Mode::Train;

        record("batchnorm2d", &[x, &self.gamma, &self.beta], vec![n, c, h, w], out, move |g, wants| {
            let mut sum_g = vec![0.0; c];
            let mut sum_gx = vec![0.0; c];
            for i in 0..n {
                for ch in 0..c {
                    let off = (i * c + ch) * hw;
                    for j in off..off + hw {
                        sum_g[ch] += g[j];
                        sum_gx[ch] += g[j] * xhat[j];
                    }
                }
            }
            let dx = wants[0].then(|| {
                let mut dx = vec![0.0; g.len()];
                for i in 0..n {
                    for ch in 0..c {
                        let off = (i * c + ch) * hw;
                        let scale = gamma[ch] * inv_std[ch];
                        for j in off..off + hw {
                            dx[j] = if train {
                                // batch statistics depend on x as well
                                scale * (g[j] - sum_g[ch] / count - xhat[j] * sum_gx[ch] / count)
                            } else {
                                scale * g[j]
                            };
                        }
                    }
                }
                dx
            });
            vec![dx, wants[1].then_some(sum_gx), wants[2].then_some(sum_g)]
        })
    }
}

impl Module for BatchNorm2d {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor, ParamKind)) {
        f(&join(prefix, "gamma"), &self.gamma, ParamKind::Trainable);
        f(&join(prefix, "beta"), &self.beta, ParamKind::Trainable);
        let rs = self.running.lock().unwrap();
        f(&join(prefix, "running_mean"), &rs.mean, ParamKind::Buffer);
        f(&join(prefix, "running_var"), &rs.var, ParamKind::Buffer);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor, ParamKind)) {
        f(&join(prefix, "gamma"), &mut self.gamma, ParamKind::Trainable);
        f(&join(prefix, "beta"), &mut self.beta, ParamKind::Trainable);
        let rs = self.running.get_mut().unwrap();
        f(&join(prefix, "running_mean"), &mut rs.mean, ParamKind::Buffer);
        f(&join(prefix, "running_var"), &mut rs.var, ParamKind::Buffer);
    }
}
