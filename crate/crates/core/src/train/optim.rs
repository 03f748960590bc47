use crate::layers::{Module, ParamKind};
use crate::tensor::{Gradients, Tensor};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimizerHyper {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerHyper {
    fn default() -> Self {
        Self {
            lr: 0.001,
            weight_decay: 0.004,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl OptimizerHyper {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.lr.is_finite()
            && self.weight_decay >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if !ok {
            return Err(Error::Config(format!("invalid optimizer settings {self:?}")));
        }
        Ok(())
    }
}

/// Adam with decoupled weight decay:
/// `theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta)`.
///
/// Moment buffers are matched to parameters by position, so every call must
/// pass the same parameter list in the same order.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub hyper: OptimizerHyper,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(hyper: OptimizerHyper) -> Result<Self> {
        hyper.validate()?;
        Ok(Self {
            hyper,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        })
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// Second-moment estimates, one buffer per parameter.
    pub fn second_moments(&self) -> &[Vec<f64>] {
        &self.v
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::InvalidArgument {
                op: "adamw_step",
                msg: format!("{} parameters but {} gradients", params.len(), grads.len()),
            });
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.numel()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() {
            return Err(Error::InvalidArgument {
                op: "adamw_step",
                msg: format!("optimizer tracks {} parameters, got {}", self.m.len(), params.len()),
            });
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || self.m[i].len() != p.numel() {
                return Err(Error::ShapeMismatch {
                    op: "adamw_step",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
        }

        self.t += 1;
        let h = self.hyper;
        let c1 = 1.0 - h.beta1.powi(self.t as i32);
        let c2 = 1.0 - h.beta2.powi(self.t as i32);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let mut out = Vec::with_capacity(p.numel());
            for (j, (&theta, &g)) in p.data().iter().zip(g.data()).enumerate() {
                m[j] = h.beta1 * m[j] + (1.0 - h.beta1) * g;
                v[j] = h.beta2 * v[j] + (1.0 - h.beta2) * g * g;
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                out.push(theta - h.lr * (m_hat / (v_hat.sqrt() + h.epsilon) + h.weight_decay * theta));
            }
            *p = p.with_data(out);
        }
        Ok(())
    }

    /// One update of every trainable tensor of `module` using `grads`
    /// (tensors absent from `grads` get a zero gradient). Updated tensors
    /// are untracked.
    pub fn step_module<M: Module + ?Sized>(&mut self, module: &mut M, grads: &Gradients) -> Result<()> {
        let mut params = Vec::new();
        module.visit("", &mut |_, t, kind| {
            if kind == ParamKind::Trainable {
                params.push(t.clone());
            }
        });
        let g: Vec<Tensor> = params.iter().map(|p| grads.get_or_zeros(p)).collect();
        self.step(&mut params, &g)?;
        let mut it = params.into_iter();
        module.visit_mut("", &mut |_, t, kind| {
            if kind == ParamKind::Trainable {
                *t = it.next().expect("parameter list changed during step");
            }
        });
        Ok(())
    }
}
