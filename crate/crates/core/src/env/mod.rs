//! Episodic tree-MDP environments.
//!
//! An episode is exactly `C` decisions; each decision picks one target cell
//! and one of its `P` tilts, so the flat action space has `P * C` entries.
//! [`NetworkEnv`] is the MDT-driven radio environment; [`LandscapeEnv`] is a
//! table-driven stand-in used to build small crafted scenarios.

mod landscape;
mod network;

use serde::{Deserialize, Serialize};

pub use landscape::LandscapeEnv;
pub use network::{encode_observation, EnvConfig, NetworkEnv, ObservationBounds, WeightMode};

use crate::Result;

/// Tilt index for every modeled cell (targets first, then boundary).
pub type TiltAssignment = Vec<usize>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Action {
    /// Target cell index in `[0, C)`.
    pub cell: usize,
    /// Tilt index in `[0, P)`.
    pub tilt: usize,
}

impl Action {
    pub fn new(cell: usize, tilt: usize) -> Self {
        Self { cell, tilt }
    }

    pub fn from_flat(id: usize, n_tilts: usize) -> Self {
        Self {
            cell: id / n_tilts,
            tilt: id % n_tilts,
        }
    }

    pub fn flat(self, n_tilts: usize) -> usize {
        self.cell * n_tilts + self.tilt
    }
}

/// Image channels plus episode-history bits.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    /// `(channels, rows, cols)`.
    pub shape: (usize, usize, usize),
    /// Channel-major values in `[0, 1]`.
    pub image: Vec<f64>,
    /// Bit `i` is set once flat action `i` was taken this episode.
    pub history: Vec<bool>,
    /// Fraction of the episode already played. Re-taking an action leaves
    /// image and history unchanged, so this is what tells those states apart.
    pub progress: f64,
}

impl Observation {
    /// Non-image network inputs: the history bits as 0/1, then `progress`.
    pub fn side_inputs(&self) -> impl Iterator<Item = f64> + '_ {
        self.history
            .iter()
            .map(|&b| if b { 1.0 } else { 0.0 })
            .chain(std::iter::once(self.progress))
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.shape.1 * self.shape.2;
        &self.image[c * n..(c + 1) * n]
    }

    /// Cells with at least one history bit set.
    pub fn touched_cells(&self, n_tilts: usize) -> Vec<bool> {
        self.history
            .chunks(n_tilts)
            .map(|c| c.iter().any(|&b| b))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StepInfo {
    pub coverage_pct: f64,
    pub throughput_mbps: f64,
    /// Reward before the repeat-cell penalty.
    pub base_reward: f64,
    /// The action re-tilted a cell already modified this episode.
    pub repeat_violation: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// What agents and search baselines need from an environment.
///
/// `Clone` must produce an independent snapshot: probing a clone never
/// affects the original.
pub trait TreeEnv: Clone + Send + Sync {
    /// Target cells `C` (also the episode length).
    fn n_cells(&self) -> usize;
    /// Tilts per cell `P`.
    fn n_tilts(&self) -> usize;
    /// `(channels, rows, cols)` of observation images.
    fn image_shape(&self) -> (usize, usize, usize);
    fn reset(&mut self, seed: u64) -> Result<Observation>;
    fn step(&mut self, action: Action) -> Result<StepResult>;
    fn observation(&self) -> Observation;
    fn steps_taken(&self) -> usize;
    /// Subtracted from the step reward when a cell is re-tilted.
    fn repeat_penalty(&self) -> f64;
    /// Current tilt index of every target cell.
    fn target_tilts(&self) -> Vec<usize>;

    fn n_actions(&self) -> usize {
        self.n_cells() * self.n_tilts()
    }

    fn done(&self) -> bool {
        self.steps_taken() >= self.n_cells()
    }
}

/// Plays `actions` from the current state and returns the step rewards.
pub fn rollout<E: TreeEnv>(env: &mut E, actions: &[Action]) -> Result<Vec<f64>> {
    actions
        .iter()
        .map(|&a| env.step(a).map(|r| r.reward))
        .collect()
}
