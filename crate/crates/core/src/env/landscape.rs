use super::{Action, Observation, StepInfo, StepResult, TreeEnv};
use crate::{Error, Result};

/// A tree-MDP whose state reward is read from a table over tilt assignments.
///
/// Useful for crafted scenarios where the radio model would only get in the
/// way. The observation is a one-hot map of the current tilts (channel 0),
/// a mask of the rows in use (channel 1) and the normalized state value
/// (channel 2), padded to at least 5x5 so the convolution fits.
#[derive(Debug, Clone)]
pub struct LandscapeEnv {
    n_cells: usize,
    n_tilts: usize,
    /// Value of assignment `sum_c tilt_c * P^c`.
    values: Vec<f64>,
    baseline: Vec<usize>,
    penalty: f64,
    tilts: Vec<usize>,
    history: Vec<bool>,
    touched: Vec<bool>,
    steps: usize,
}

impl LandscapeEnv {
    pub fn new(
        n_cells: usize,
        n_tilts: usize,
        values: Vec<f64>,
        baseline: Vec<usize>,
        penalty: f64,
    ) -> Result<Self> {
        if n_cells == 0 || n_tilts == 0 {
            return Err(Error::Config(
                "landscape needs at least one cell and one tilt".into(),
            ));
        }
        let size = n_tilts
            .checked_pow(n_cells as u32)
            .filter(|&s| s <= 1 << 20)
            .ok_or_else(|| {
                Error::Config(format!(
                    "landscape with {n_tilts}^{n_cells} states is too large"
                ))
            })?;
        if values.len() != size {
            return Err(Error::Shape {
                expected: format!("{size} state values"),
                got: values.len().to_string(),
            });
        }
        if baseline.len() != n_cells || baseline.iter().any(|&t| t >= n_tilts) {
            return Err(Error::Config(format!("invalid baseline {baseline:?}")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("landscape values must be finite".into()));
        }
        Ok(Self {
            n_cells,
            n_tilts,
            values,
            tilts: baseline.clone(),
            baseline,
            penalty,
            history: vec![false; n_cells * n_tilts],
            touched: vec![false; n_cells],
            steps: 0,
        })
    }

    /// Two cells, three tilts, baseline `(0, 0)`. The best first move
    /// (cell 0 -> tilt 1, worth 5) leads to a subtree worth at most 5 more,
    /// while the modest opening (cell 1 -> tilt 1, worth 4) unlocks 20.
    pub fn deceptive() -> Self {
        let mut v = vec![0.0; 9];
        let mut set = |t0: usize, t1: usize, x: f64| v[t0 + 3 * t1] = x;
        set(1, 0, 5.0);
        set(0, 1, 4.0);
        set(2, 1, 20.0);
        set(1, 1, 1.0);
        set(1, 2, 1.0);
        Self::new(2, 3, v, vec![0, 0], 5.0).expect("valid table")
    }

    /// State value is a sum of independent per-cell terms `gains[c][t]`.
    pub fn additive(gains: &[Vec<f64>], baseline: Vec<usize>, penalty: f64) -> Result<Self> {
        let n_cells = gains.len();
        let n_tilts = gains.first().map_or(0, Vec::len);
        if gains.iter().any(|g| g.len() != n_tilts) {
            return Err(Error::Config(
                "every cell needs the same number of tilts".into(),
            ));
        }
        let size = n_tilts.checked_pow(n_cells as u32).unwrap_or(usize::MAX);
        if size > 1 << 20 {
            return Err(Error::Config(format!(
                "landscape with {n_tilts}^{n_cells} states is too large"
            )));
        }
        let values = (0..size)
            .map(|idx| {
                let mut rest = idx;
                gains
                    .iter()
                    .map(|g| {
                        let t = rest % n_tilts;
                        rest /= n_tilts;
                        g[t]
                    })
                    .sum()
            })
            .collect();
        Self::new(n_cells, n_tilts, values, baseline, penalty)
    }

    /// The additive control scenario used alongside [`Self::deceptive`].
    pub fn additive_control() -> Self {
        Self::additive(
            &[vec![0.0, 3.0, -2.0], vec![0.0, 1.0, 6.0]],
            vec![0, 0],
            5.0,
        )
        .expect("valid gains")
    }

    pub fn value_of(&self, tilts: &[usize]) -> f64 {
        let idx = tilts.iter().rev().fold(0, |acc, &t| acc * self.n_tilts + t);
        self.values[idx]
    }

    fn padded(&self) -> (usize, usize) {
        (self.n_cells.max(5), self.n_tilts.max(5))
    }
}

impl TreeEnv for LandscapeEnv {
    fn n_cells(&self) -> usize {
        self.n_cells
    }

    fn n_tilts(&self) -> usize {
        self.n_tilts
    }

    fn image_shape(&self) -> (usize, usize, usize) {
        let (h, w) = self.padded();
        (3, h, w)
    }

    fn reset(&mut self, _seed: u64) -> Result<Observation> {
        self.tilts.clone_from(&self.baseline);
        self.history.iter_mut().for_each(|b| *b = false);
        self.touched.iter_mut().for_each(|b| *b = false);
        self.steps = 0;
        Ok(self.observation())
    }

    fn step(&mut self, action: Action) -> Result<StepResult> {
        if self.done() {
            return Err(Error::Episode(format!(
                "step after the episode ended ({} steps)",
                self.steps
            )));
        }
        if action.cell >= self.n_cells || action.tilt >= self.n_tilts {
            return Err(Error::Episode(format!("action {action:?} out of range")));
        }
        let repeat = self.touched[action.cell];
        self.tilts[action.cell] = action.tilt;
        self.touched[action.cell] = true;
        self.history[action.flat(self.n_tilts)] = true;
        self.steps += 1;
        let base = self.value_of(&self.tilts);
        Ok(StepResult {
            observation: self.observation(),
            reward: if repeat { base - self.penalty } else { base },
            done: self.done(),
            info: StepInfo {
                coverage_pct: 100.0,
                throughput_mbps: 0.0,
                base_reward: base,
                repeat_violation: repeat,
            },
        })
    }

    fn observation(&self) -> Observation {
        let (h, w) = self.padded();
        let n = h * w;
        let mut image = vec![0.0; 3 * n];
        let lo = self.values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = self
            .values
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        let level = if hi > lo {
            (self.value_of(&self.tilts) - lo) / (hi - lo)
        } else {
            0.0
        };
        for (c, &t) in self.tilts.iter().enumerate() {
            image[c * w + t] = 1.0;
            for k in 0..self.n_tilts {
                image[n + c * w + k] = 1.0;
            }
        }
        image[2 * n..].iter_mut().for_each(|v| *v = level);
        Observation {
            shape: (3, h, w),
            image,
            history: self.history.clone(),
            progress: self.steps as f64 / self.n_cells as f64,
        }
    }

    fn steps_taken(&self) -> usize {
        self.steps
    }

    fn repeat_penalty(&self) -> f64 {
        self.penalty
    }

    fn target_tilts(&self) -> Vec<usize> {
        self.tilts.clone()
    }
}
