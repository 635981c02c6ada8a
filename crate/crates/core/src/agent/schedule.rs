use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Probability that a uniformly random episode never re-tilts a cell:
/// `prod_{i<C} (1 - i/C) = (C-1)! / C^(C-1)`.
pub fn episode_success_probability(n_cells: usize) -> f64 {
    let c = n_cells as f64;
    (0..n_cells).map(|i| 1.0 - i as f64 / c).product()
}

/// Constrained-action probability for episode step `step` (1-based) so that
/// every step after the first is compliant with probability
/// `p_target^(1/(C-1))`.
pub fn eta_for_step(step: usize, n_cells: usize, p_target: f64) -> f64 {
    if step <= 1 || n_cells <= 1 {
        return 0.0;
    }
    let per_step = p_target.powf(1.0 / (n_cells - 1) as f64);
    let untouched = (n_cells - step + 1) as f64 / n_cells as f64;
    ((per_step - untouched) / (1.0 - untouched)).clamp(0.0, 1.0)
}

/// Per-step eta, fixed for the whole training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtaSchedule {
    pub p_target: f64,
    values: Vec<f64>,
}

impl EtaSchedule {
    pub fn new(n_cells: usize, p_target: f64) -> Result<Self> {
        if !(p_target > 0.0 && p_target < 1.0) {
            return Err(Error::Config(format!(
                "target success probability {p_target} not in (0, 1)"
            )));
        }
        Ok(Self {
            p_target,
            values: (1..=n_cells)
                .map(|s| eta_for_step(s, n_cells, p_target))
                .collect(),
        })
    }

    /// Eta identically zero (plain epsilon-greedy).
    pub fn disabled(n_cells: usize) -> Self {
        Self {
            p_target: 0.0,
            values: vec![0.0; n_cells],
        }
    }

    /// Eta at 1-based episode step `step`.
    pub fn eta(&self, step: usize) -> f64 {
        self.values[step - 1]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpsConfig {
    pub eps_max: f64,
    pub eps_min: f64,
    /// `tau_1` as a fraction of the training episodes.
    pub tau0_fraction: f64,
    /// Relative growth of tau per extra depth.
    pub kappa: f64,
}

impl Default for EpsConfig {
    fn default() -> Self {
        Self {
            eps_max: 1.0,
            eps_min: 0.05,
            tau0_fraction: 0.15,
            kappa: 0.35,
        }
    }
}

/// `eps_d(t) = eps_min + (eps_max - eps_min) exp(-t / tau_d)`, `t` in
/// episodes, `d` the 1-based episode step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsSchedule {
    pub eps_max: f64,
    pub eps_min: f64,
    taus: Vec<f64>,
}

impl EpsSchedule {
    /// `tau_d = tau0 (1 + kappa (d - 1))`: deeper levels keep exploring longer.
    pub fn depthwise(cfg: &EpsConfig, n_cells: usize, train_episodes: usize) -> Result<Self> {
        Self::validate(cfg)?;
        let tau0 = cfg.tau0_fraction * train_episodes as f64;
        Ok(Self {
            eps_max: cfg.eps_max,
            eps_min: cfg.eps_min,
            taus: (0..n_cells)
                .map(|d| tau0 * (1.0 + cfg.kappa * d as f64))
                .collect(),
        })
    }

    /// One decay shared by all depths, with the mean of the depth-wise taus.
    pub fn single(cfg: &EpsConfig, n_cells: usize, train_episodes: usize) -> Result<Self> {
        let dw = Self::depthwise(cfg, n_cells, train_episodes)?;
        let tau = dw.taus.iter().sum::<f64>() / n_cells as f64;
        Ok(Self {
            taus: vec![tau; n_cells],
            ..dw
        })
    }

    fn validate(cfg: &EpsConfig) -> Result<()> {
        let ok = (0.0..=1.0).contains(&cfg.eps_min)
            && (0.0..=1.0).contains(&cfg.eps_max)
            && cfg.eps_min <= cfg.eps_max
            && cfg.tau0_fraction > 0.0
            && cfg.kappa >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("bad epsilon schedule {cfg:?}")))
        }
    }

    pub fn taus(&self) -> &[f64] {
        &self.taus
    }

    /// Epsilon at 1-based depth `depth` after `episode` training episodes.
    pub fn eps(&self, depth: usize, episode: usize) -> f64 {
        let tau = self.taus[depth - 1];
        self.eps_min + (self.eps_max - self.eps_min) * (-(episode as f64) / tau).exp()
    }
}
