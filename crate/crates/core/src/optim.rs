//! Adam with decoupled weight decay and bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default)]
    pub weight_decay: f64,
}

fn default_lr() -> f64 {
    1e-4
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.95
}
fn default_eps() -> f64 {
    1e-8
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: default_lr(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
            weight_decay: 0.0,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0
            && self.weight_decay.is_finite();
        if !ok {
            return Err(Error::InvalidConfig {
                field: "optimizer",
                reason: format!("{self:?} violates lr>0, betas in [0,1), eps>0, wd>=0"),
            });
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct Adam {
    cfg: AdamConfig,
    steps: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, params: &[Tensor]) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            steps: 0,
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
        })
    }

    /// Applies one update in place; `grads` must align with `params`.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        assert_eq!(params.len(), self.m.len(), "optimizer/param count mismatch");
        assert_eq!(grads.len(), params.len(), "grad/param count mismatch");
        self.steps += 1;
        let t = self.steps as i32;
        let bc1 = 1.0 - self.cfg.beta1.powi(t);
        let bc2 = 1.0 - self.cfg.beta2.powi(t);
        for (i, param) in params.iter_mut().enumerate() {
            let g = grads[i].data();
            let p = param.data();
            let mut out = vec![0.0; p.len()];
            for j in 0..p.len() {
                self.m[i][j] = self.cfg.beta1 * self.m[i][j] + (1.0 - self.cfg.beta1) * g[j];
                self.v[i][j] = self.cfg.beta2 * self.v[i][j] + (1.0 - self.cfg.beta2) * g[j] * g[j];
                let m_hat = self.m[i][j] / bc1;
                let v_hat = self.v[i][j] / bc2;
                out[j] = p[j]
                    - self.cfg.lr * (m_hat / (v_hat.sqrt() + self.cfg.eps)
                        + self.cfg.weight_decay * p[j]);
            }
            if let Some(index) = out.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFinite {
                    op: "adam_step",
                    index,
                });
            }
            *param = Tensor::new_unchecked(param.shape().to_vec(), out);
        }
        Ok(())
    }
}
