use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Action, Observation, StepInfo, StepResult, TreeEnv};
use crate::mdt::{
    assign_act_ue_shares, dbm_to_mw, draw_poisson_weights, sinr_from_interference_mw, MdtDataset,
    Pixel,
};
use crate::reward::{reward_case1, reward_case2, RewardMode, RewardModel};
use crate::scenario::{best_server, RsrpGridSet};
use crate::stats::percentile;
use crate::{Error, Result};

/// Fixed min-max bounds for the image channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObservationBounds {
    pub rsrp_dbm: (f64, f64),
    pub sinr_db: (f64, f64),
    /// Weights are scaled by this percentile of the episode's weights.
    pub weight_percentile: f64,
}

impl Default for ObservationBounds {
    fn default() -> Self {
        Self {
            rsrp_dbm: (-140.0, -60.0),
            sinr_db: (-10.0, 25.0),
            weight_percentile: 0.99,
        }
    }
}

/// How pixel weights are produced at reset.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightMode {
    /// Poisson around each pixel's call count.
    #[default]
    Poisson,
    /// Normalized call counts plus uniform noise of width `d_range`,
    /// renormalized to `[0, 1]`.
    Perturbed { d_range: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub reward_mode: RewardMode,
    pub reward: RewardModel,
    pub repeat_penalty: f64,
    pub weights: WeightMode,
    pub bounds: ObservationBounds,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            reward_mode: RewardMode::Case1,
            reward: RewardModel::default(),
            repeat_penalty: 5.0,
            weights: WeightMode::Poisson,
            bounds: ObservationBounds::default(),
        }
    }
}

/// Immutable data shared by every clone of an environment.
#[derive(Debug)]
struct Shared {
    grids: Arc<RsrpGridSet>,
    dataset: Arc<MdtDataset>,
    cfg: EnvConfig,
    /// Flat grid index of each retained pixel.
    flat: Vec<usize>,
    /// Linear power `[cell][tilt][retained pixel]` in mW.
    power_mw: Vec<f64>,
    total_act_ues: f64,
}

impl Shared {
    #[inline]
    fn mw(&self, cell: usize, tilt: usize, i: usize) -> f64 {
        let n = self.flat.len();
        self.power_mw[(cell * self.grids.n_tilts() + tilt) * n + i]
    }
}

/// The MDT-driven radio environment.
///
/// At every step the target cell's tilt changes, pixels reselect their
/// strongest simulated server, simulated SINR is recomputed and the synthetic
/// measurement `MDT' = SIM + delta` feeds the reward and the observation.
#[derive(Debug, Clone)]
pub struct NetworkEnv {
    shared: Arc<Shared>,
    tilts: Vec<usize>,
    pixels: Vec<Pixel>,
    w_max: f64,
    history: Vec<bool>,
    touched: Vec<bool>,
    steps: usize,
    last_info: StepInfo,
}

impl NetworkEnv {
    pub fn new(grids: Arc<RsrpGridSet>, dataset: Arc<MdtDataset>, cfg: EnvConfig) -> Result<Self> {
        cfg.reward.scheduler.validate()?;
        if dataset.shape != grids.shape() || dataset.baseline_tilts.len() != grids.n_cells() {
            return Err(Error::Shape {
                expected: format!("{} cells on {:?}", grids.n_cells(), grids.shape()),
                got: format!(
                    "{} cells on {:?}",
                    dataset.baseline_tilts.len(),
                    dataset.shape
                ),
            });
        }
        if dataset.pixels.is_empty() {
            return Err(Error::Dataset(
                "environment needs at least one pixel".into(),
            ));
        }
        if let WeightMode::Perturbed { d_range } = cfg.weights {
            if !(d_range >= 0.0) {
                return Err(Error::Config(format!("d_range {d_range} must be >= 0")));
            }
        }
        let flat: Vec<usize> = dataset
            .pixels
            .iter()
            .map(|p| dataset.flat_index(p))
            .collect();
        let mut power_mw = Vec::with_capacity(grids.n_cells() * grids.n_tilts() * flat.len());
        for cell in 0..grids.n_cells() {
            for tilt in 0..grids.n_tilts() {
                power_mw.extend(flat.iter().map(|&p| dbm_to_mw(grids.rsrp(cell, tilt, p))));
            }
        }
        let n_actions = grids.n_targets() * grids.n_tilts();
        let n_targets = grids.n_targets();
        let shared = Shared {
            total_act_ues: dataset.kpis.total_act_ues(),
            grids,
            dataset,
            cfg,
            flat,
            power_mw,
        };
        let mut env = Self {
            tilts: shared.dataset.baseline_tilts.clone(),
            pixels: shared.dataset.pixels.clone(),
            shared: Arc::new(shared),
            w_max: 1.0,
            history: vec![false; n_actions],
            touched: vec![false; n_targets],
            steps: 0,
            last_info: StepInfo::default(),
        };
        env.reset(0)?;
        Ok(env)
    }

    pub fn config(&self) -> &EnvConfig {
        &self.shared.cfg
    }

    pub fn grids(&self) -> &RsrpGridSet {
        &self.shared.grids
    }

    pub fn dataset(&self) -> &MdtDataset {
        &self.shared.dataset
    }

    /// Current synthetic MDT pixels (after reselection).
    pub fn pixels(&self) -> &[Pixel] {
        &self.pixels
    }

    /// Tilt index of every modeled cell, boundary cells included.
    pub fn tilts(&self) -> &[usize] {
        &self.tilts
    }

    pub fn last_info(&self) -> &StepInfo {
        &self.last_info
    }

    /// Active UEs attributed to each modeled cell by its served pixels.
    pub fn cell_act_ues(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.shared.grids.n_cells()];
        for p in &self.pixels {
            out[p.serving_cell] += p.act_ue_share * self.shared.total_act_ues;
        }
        out
    }

    /// Reward of the current pixel state, without any penalty.
    pub fn state_reward(&self) -> Result<StepInfo> {
        let cfg = &self.shared.cfg;
        match cfg.reward_mode {
            RewardMode::Case1 => {
                let b = reward_case1(
                    &self.pixels,
                    self.shared.grids.n_cells(),
                    self.shared.total_act_ues,
                    &cfg.reward,
                )?;
                Ok(StepInfo {
                    coverage_pct: b.coverage_pct,
                    throughput_mbps: b.throughput_mbps,
                    base_reward: b.reward,
                    repeat_violation: false,
                })
            }
            RewardMode::Case2 => {
                let coverage_pct =
                    crate::reward::coverage_fraction(&self.pixels, &cfg.reward.coverage)?;
                Ok(StepInfo {
                    coverage_pct,
                    throughput_mbps: 0.0,
                    base_reward: reward_case2(&self.pixels)?,
                    repeat_violation: false,
                })
            }
        }
    }

    /// Shifts every pixel's default weight by independent uniform noise in
    /// `[-d_range / 2, d_range / 2]` and min-max normalizes the result.
    pub fn perturb_weights<R: Rng + ?Sized>(&mut self, d_range: f64, rng: &mut R) -> Result<()> {
        if !(d_range >= 0.0) {
            return Err(Error::Config(format!("d_range {d_range} must be >= 0")));
        }
        let defaults: Vec<f64> = self
            .shared
            .dataset
            .pixels
            .iter()
            .map(|p| p.lambda)
            .collect();
        let mut w = min_max_normalize(&defaults);
        if d_range > 0.0 {
            for v in &mut w {
                *v += rng.random_range(-d_range / 2.0..=d_range / 2.0);
            }
            w = min_max_normalize(&w);
        }
        for (p, v) in self.pixels.iter_mut().zip(w) {
            p.weight = v;
        }
        assign_act_ue_shares(&mut self.pixels);
        Ok(())
    }

    /// Reselection plus `MDT' = SIM + delta` for every pixel.
    fn refresh_pixels(&mut self) {
        let shared = &*self.shared;
        for (i, (px, &flat)) in self.pixels.iter_mut().zip(&shared.flat).enumerate() {
            let best = best_server(&shared.grids, &self.tilts, flat);
            let interference: f64 = self
                .tilts
                .iter()
                .enumerate()
                .filter(|&(c, _)| c != best.0)
                .map(|(c, &t)| shared.mw(c, t, i))
                .sum();
            let sim_sinr = sinr_from_interference_mw(best.1, interference);
            px.serving_cell = best.0;
            px.rsrp = best.1 + px.delta_r;
            px.sinr = sim_sinr + px.delta_s;
        }
    }
}

fn min_max_normalize(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        values.iter().map(|v| (v - lo) / (hi - lo)).collect()
    } else {
        vec![1.0; values.len()]
    }
}

/// Builds the three normalized image channels (RSRP, WEIGHT, SINR) over the
/// full grid; pixels without data stay at 0.
pub fn encode_observation(
    pixels: &[Pixel],
    shape: (usize, usize),
    w_max: f64,
    bounds: &ObservationBounds,
    history: &[bool],
    progress: f64,
) -> Observation {
    let n = shape.0 * shape.1;
    let mut image = vec![0.0; 3 * n];
    let scale = |v: f64, (lo, hi): (f64, f64)| (v.clamp(lo, hi) - lo) / (hi - lo);
    for p in pixels {
        let k = p.y * shape.1 + p.z;
        image[k] = scale(p.rsrp, bounds.rsrp_dbm);
        image[n + k] = if w_max > 0.0 {
            (p.weight / w_max).clamp(0.0, 1.0)
        } else {
            0.0
        };
        image[2 * n + k] = scale(p.sinr, bounds.sinr_db);
    }
    Observation {
        shape: (3, shape.0, shape.1),
        image,
        history: history.to_vec(),
        progress,
    }
}

impl TreeEnv for NetworkEnv {
    fn n_cells(&self) -> usize {
        self.shared.grids.n_targets()
    }

    fn n_tilts(&self) -> usize {
        self.shared.grids.n_tilts()
    }

    fn image_shape(&self) -> (usize, usize, usize) {
        let (y, z) = self.shared.grids.shape();
        (3, y, z)
    }

    fn reset(&mut self, seed: u64) -> Result<Observation> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.tilts.clone_from(&self.shared.dataset.baseline_tilts);
        self.pixels.clone_from(&self.shared.dataset.pixels);
        match self.shared.cfg.weights {
            WeightMode::Poisson => {
                draw_poisson_weights(&mut self.pixels, &mut rng);
                assign_act_ue_shares(&mut self.pixels);
            }
            WeightMode::Perturbed { d_range } => self.perturb_weights(d_range, &mut rng)?,
        }
        let weights: Vec<f64> = self.pixels.iter().map(|p| p.weight).collect();
        self.w_max = percentile(&weights, self.shared.cfg.bounds.weight_percentile);
        self.history.iter_mut().for_each(|b| *b = false);
        self.touched.iter_mut().for_each(|b| *b = false);
        self.steps = 0;
        self.refresh_pixels();
        self.last_info = self.state_reward()?;
        Ok(self.observation())
    }

    fn step(&mut self, action: Action) -> Result<StepResult> {
        if self.done() {
            return Err(Error::Episode(format!(
                "step after the episode ended ({} steps)",
                self.steps
            )));
        }
        if action.cell >= self.n_cells() || action.tilt >= self.n_tilts() {
            return Err(Error::Episode(format!("action {action:?} out of range")));
        }
        let repeat = self.touched[action.cell];
        self.tilts[action.cell] = action.tilt;
        self.refresh_pixels();
        let mut info = self.state_reward()?;
        info.repeat_violation = repeat;
        let reward = if repeat {
            info.base_reward - self.shared.cfg.repeat_penalty
        } else {
            info.base_reward
        };
        self.touched[action.cell] = true;
        let id = action.flat(self.n_tilts());
        self.history[id] = true;
        self.steps += 1;
        self.last_info = info.clone();
        if !reward.is_finite() {
            return Err(Error::NonFinite {
                context: "step reward".into(),
                index: self.steps,
            });
        }
        Ok(StepResult {
            observation: self.observation(),
            reward,
            done: self.done(),
            info,
        })
    }

    fn observation(&self) -> Observation {
        encode_observation(
            &self.pixels,
            self.shared.grids.shape(),
            self.w_max,
            &self.shared.cfg.bounds,
            &self.history,
            self.steps as f64 / self.n_cells() as f64,
        )
    }

    fn steps_taken(&self) -> usize {
        self.steps
    }

    fn repeat_penalty(&self) -> f64 {
        self.shared.cfg.repeat_penalty
    }

    fn target_tilts(&self) -> Vec<usize> {
        self.tilts[..self.n_cells()].to_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdt::{build_dataset, TrafficConfig};
    use crate::scenario::{generate_grids, serving_cell_map, ScenarioConfig};
    use crate::stats::variance;

    fn desk_env(cfg: EnvConfig) -> NetworkEnv {
        let scenario = ScenarioConfig::desk();
        let grids = generate_grids(&scenario).unwrap();
        let baseline = vec![0; grids.n_cells()];
        let ds = build_dataset(&grids, &baseline, &TrafficConfig::default()).unwrap();
        NetworkEnv::new(Arc::new(grids), Arc::new(ds), cfg).unwrap()
    }

    #[test]
    fn reset_is_deterministic_and_clears_history() {
        let mut env = desk_env(EnvConfig::default());
        let a = env.reset(3).unwrap();
        env.step(Action::new(0, 2)).unwrap();
        let b = env.reset(3).unwrap();
        assert_eq!(a, b);
        assert!(b.history.iter().all(|&h| !h));
        assert_eq!(env.steps_taken(), 0);
    }

    #[test]
    fn reseeding_changes_weights_not_rsrp() {
        let mut env = desk_env(EnvConfig::default());
        let a = env.reset(1).unwrap();
        let b = env.reset(2).unwrap();
        assert_eq!(a.channel(0), b.channel(0));
        assert_ne!(a.channel(1), b.channel(1));
    }

    #[test]
    fn baseline_replay_reproduces_reset_channels() {
        let mut env = desk_env(EnvConfig::default());
        let obs = env.reset(9).unwrap();
        let baseline = env.dataset().baseline_tilts.clone();
        let mut last = None;
        for cell in 0..env.n_cells() {
            last = Some(env.step(Action::new(cell, baseline[cell])).unwrap());
        }
        let last = last.unwrap();
        assert!(last.done);
        assert_eq!(last.observation.image, obs.image);
    }

    #[test]
    fn episode_length_is_fixed() {
        let mut env = desk_env(EnvConfig::default());
        env.reset(0).unwrap();
        for i in 0..4 {
            let r = env.step(Action::new(0, 1)).unwrap();
            assert_eq!(r.done, i == 3);
        }
        assert!(matches!(
            env.step(Action::new(1, 1)),
            Err(Error::Episode(_))
        ));
    }

    #[test]
    fn repeat_cell_costs_the_penalty() {
        let mut env = desk_env(EnvConfig::default());
        env.reset(4).unwrap();
        // Fresh: cell 1 -> tilt 1 after cell 0 -> tilt 2.
        env.step(Action::new(0, 2)).unwrap();
        let fresh = env.step(Action::new(1, 1)).unwrap();
        // Repeat: cell 1 -> tilt 1 again from the same state.
        let repeat = env.step(Action::new(1, 1)).unwrap();
        assert!(repeat.info.repeat_violation && !fresh.info.repeat_violation);
        assert_eq!(repeat.info.base_reward, fresh.info.base_reward);
        assert!((fresh.reward - repeat.reward - 5.0).abs() < 1e-12);
    }

    #[test]
    fn action_order_does_not_change_terminal_state() {
        let mut env = desk_env(EnvConfig::default());
        let actions = [
            Action::new(0, 2),
            Action::new(1, 1),
            Action::new(2, 0),
            Action::new(3, 2),
        ];
        env.reset(5).unwrap();
        for a in actions {
            env.step(a).unwrap();
        }
        let forward = (env.target_tilts(), env.pixels().to_vec());
        env.reset(5).unwrap();
        for a in actions.iter().rev() {
            env.step(*a).unwrap();
        }
        assert_eq!(forward.0, env.target_tilts());
        assert_eq!(forward.1, env.pixels());
        let map = serving_cell_map(env.grids(), env.tilts()).unwrap();
        let ds = env.dataset();
        for p in env.pixels() {
            assert_eq!(p.serving_cell, map[ds.flat_index(p)]);
        }
    }

    #[test]
    fn retilt_only_moves_rsrp_where_that_cell_serves() {
        let mut env = desk_env(EnvConfig::default());
        env.reset(6).unwrap();
        let before = env.pixels().to_vec();
        env.step(Action::new(1, 2)).unwrap();
        let mut changed = 0;
        for (a, b) in before.iter().zip(env.pixels()) {
            if a.rsrp != b.rsrp {
                changed += 1;
                assert!(a.serving_cell == 1 || b.serving_cell == 1);
            }
        }
        assert!(changed > 0);
    }

    #[test]
    fn act_ues_are_conserved_through_reselection() {
        let mut env = desk_env(EnvConfig::default());
        env.reset(7).unwrap();
        let total: f64 = env.cell_act_ues().iter().sum();
        assert!((total - env.dataset().kpis.total_act_ues()).abs() < 1e-9);
        for a in [Action::new(0, 2), Action::new(3, 2), Action::new(1, 2)] {
            env.step(a).unwrap();
            let now: f64 = env.cell_act_ues().iter().sum();
            assert!((now - total).abs() < 1e-9);
        }
    }

    #[test]
    fn reconstruction_holds_at_every_step() {
        let mut env = desk_env(EnvConfig::default());
        env.reset(8).unwrap();
        for a in [Action::new(2, 1), Action::new(0, 2)] {
            env.step(a).unwrap();
            let grids = env.grids();
            let ds = env.dataset();
            for p in env.pixels() {
                let (_, r, s) = crate::mdt::simulated_pixel(grids, env.tilts(), ds.flat_index(p));
                assert!((p.rsrp - (r + p.delta_r)).abs() < 1e-9);
                assert!((p.sinr - (s + p.delta_s)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn observation_normalization() {
        let bounds = ObservationBounds::default();
        let mk = |rsrp: f64, weight: f64| Pixel {
            y: 0,
            z: 0,
            rsrp,
            sinr: 25.0,
            rsrq: -10.0,
            weight,
            lambda: 1.0,
            serving_cell: 0,
            delta_r: 0.0,
            delta_s: 0.0,
            act_ue_share: 1.0,
            n_reports: 5,
        };
        let obs = |p: Pixel| encode_observation(&[p], (1, 2), 4.0, &bounds, &[false], 0.0);
        assert_eq!(obs(mk(-140.0, 0.0)).image[0], 0.0);
        assert_eq!(obs(mk(-60.0, 0.0)).image[0], 1.0);
        assert_eq!(obs(mk(-100.0, 0.0)).image[0], 0.5);
        assert_eq!(obs(mk(-30.0, 9.0)).image[0], 1.0);
        assert_eq!(obs(mk(-100.0, 9.0)).image[2], 1.0);
        assert_eq!(obs(mk(-100.0, 2.0)).image[2], 0.5);
        assert_eq!(obs(mk(-100.0, 2.0)).image[4], 1.0);
        // The second pixel has no data.
        assert_eq!(obs(mk(-100.0, 2.0)).image[1], 0.0);
    }

    #[test]
    fn perturbed_weights_are_normalized() {
        let mut env = desk_env(EnvConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        env.perturb_weights(0.0, &mut rng).unwrap();
        let lambdas: Vec<f64> = env.dataset().pixels.iter().map(|p| p.lambda).collect();
        let expected = min_max_normalize(&lambdas);
        let w: Vec<f64> = env.pixels().iter().map(|p| p.weight).collect();
        assert_eq!(w, expected);

        env.perturb_weights(0.5, &mut rng).unwrap();
        let w: Vec<f64> = env.pixels().iter().map(|p| p.weight).collect();
        let lo = w.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!((lo, hi), (0.0, 1.0));
        assert!(env.perturb_weights(-1.0, &mut rng).is_err());
    }

    #[test]
    fn wider_perturbation_spreads_rewards() {
        let variance_for = |d_range: f64| {
            let mut env = desk_env(EnvConfig {
                weights: WeightMode::Perturbed { d_range },
                ..Default::default()
            });
            let rewards: Vec<f64> = (0..50)
                .map(|s| {
                    env.reset(s).unwrap();
                    env.step(Action::new(0, 1)).unwrap().reward
                })
                .collect();
            variance(&rewards)
        };
        let (v0, v1) = (variance_for(0.0), variance_for(1.0));
        assert!(v0 < 1e-20);
        assert!(v1 > variance_for(0.1));
    }

    #[test]
    fn case2_reward_mode_runs() {
        let mut env = desk_env(EnvConfig {
            reward_mode: RewardMode::Case2,
            ..Default::default()
        });
        env.reset(0).unwrap();
        let r = env.step(Action::new(0, 1)).unwrap();
        assert!(r.reward < 0.0 && r.reward > -150.0);
    }
}
