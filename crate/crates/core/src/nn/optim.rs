use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.kind == OptimizerKind::Adam
            && !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2) && self.eps > 0.0)
        {
            return Err(Error::Config("adam needs beta1, beta2 in [0, 1) and eps > 0".into()));
        }
        Ok(())
    }
}

/// Optimizer with per-parameter moment buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer {
    pub config: OptimizerConfig,
    first_moments: Vec<Tensor>,
    second_moments: Vec<Tensor>,
    step: u64,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, param_shapes: &[Vec<usize>]) -> Result<Self> {
        config.validate()?;
        let zeros = || param_shapes.iter().map(|s| Tensor::zeros(s.clone())).collect();
        let (m, v) = match config.kind {
            OptimizerKind::Adam => (zeros(), zeros()),
            OptimizerKind::Sgd => (Vec::new(), Vec::new()),
        };
        Ok(Optimizer {
            config,
            first_moments: m,
            second_moments: v,
            step: 0,
        })
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn second_moments(&self) -> &[Tensor] {
        &self.second_moments
    }

    /// Applies one update. Gradients are checked for finiteness before any
    /// parameter is touched.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::dim(
                "optimizer",
                format!("{} parameters but {} gradients", params.len(), grads.len()),
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(Error::dim(
                    "optimizer",
                    format!("parameter {i} has shape {:?}, gradient {:?}", p.shape(), g.shape()),
                ));
            }
            if !g.all_finite() {
                return Err(Error::NonFinite(format!("non-finite gradient for parameter {i}")));
            }
        }
        if self.config.kind == OptimizerKind::Adam && self.first_moments.len() != params.len() {
            return Err(Error::State(format!(
                "optimizer initialised for {} parameters, got {}",
                self.first_moments.len(),
                params.len()
            )));
        }
        self.step += 1;
        let lr = self.config.learning_rate;
        match self.config.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (w, d) in p.data_mut().iter_mut().zip(g.data()) {
                        *w -= lr * d;
                    }
                }
            }
            OptimizerKind::Adam => {
                let OptimizerConfig {
                    beta1, beta2, eps, ..
                } = self.config;
                let t = self.step as i32;
                let bc1 = (1.0 - (beta1 as f64).powi(t)) as f32;
                let bc2 = (1.0 - (beta2 as f64).powi(t)) as f32;
                for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                    let m = self.first_moments[i].data_mut();
                    let v = self.second_moments[i].data_mut();
                    for (((w, &d), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                        *m = beta1 * *m + (1.0 - beta1) * d;
                        *v = beta2 * *v + (1.0 - beta2) * d * d;
                        let m_hat = *m / bc1;
                        let v_hat = *v / bc2;
                        *w -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
