use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RmsPropConfig {
    pub learning_rate: f64,
    pub rho: f64,
    /// Only 0 is supported.
    pub momentum: f64,
    /// Added inside the square root.
    pub epsilon: f64,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2.5e-4,
            rho: 0.95,
            momentum: 0.0,
            epsilon: 1e-7,
        }
    }
}

impl RmsPropConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.rho) || !(self.epsilon > 0.0) {
            return Err(Error::Config(format!("bad RMSprop settings {self:?}")));
        }
        if self.momentum != 0.0 {
            return Err(Error::Config("RMSprop momentum is not supported".into()));
        }
        Ok(())
    }
}

/// `a <- rho a + (1 - rho) g^2; p <- p - lr g / sqrt(a + eps)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsProp {
    pub config: RmsPropConfig,
    accumulators: Vec<f64>,
}

impl RmsProp {
    pub fn new(config: RmsPropConfig, n_params: usize) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            accumulators: vec![0.0; n_params],
        })
    }

    pub fn accumulators(&self) -> &[f64] {
        &self.accumulators
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.accumulators.len() || grads.len() != params.len() {
            return Err(Error::Shape {
                expected: format!("{} parameters and gradients", self.accumulators.len()),
                got: format!("{} / {}", params.len(), grads.len()),
            });
        }
        let RmsPropConfig {
            learning_rate: lr,
            rho,
            epsilon: eps,
            ..
        } = self.config;
        for ((p, a), &g) in params.iter_mut().zip(&mut self.accumulators).zip(grads) {
            *a = rho * *a + (1.0 - rho) * g * g;
            *p -= lr * g / (*a + eps).sqrt();
        }
        Ok(())
    }
}
