//! Run configuration: one TOML file describing scenario, traffic,
//! environment, agent and experiment settings.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agent::AgentConfig;
use crate::env::EnvConfig;
use crate::mdt::TrafficConfig;
use crate::scenario::ScenarioConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Seeds used by `eval`, `bfs` and the stress test.
    pub eval_seeds: usize,
    /// First evaluation seed; kept away from training seeds.
    pub eval_seed_base: u64,
    pub stress_d_ranges: Vec<f64>,
    /// Worker threads for seed-parallel commands (0 = all cores).
    pub workers: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            eval_seeds: 50,
            eval_seed_base: 2_000_000,
            stress_d_ranges: vec![0.0, 0.25, 0.5, 1.0],
            workers: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn eval_seed_list(&self) -> Vec<u64> {
        (0..self.eval_seeds as u64)
            .map(|i| self.eval_seed_base + i)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Scenario file; overrides the inline `scenario` table when set.
    pub scenario_path: Option<PathBuf>,
    pub scenario: ScenarioConfig,
    pub dataset: TrafficConfig,
    pub env: EnvConfig,
    pub agent: AgentConfig,
    pub experiment: ExperimentConfig,
    /// Training seeds.
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scenario_path: None,
            scenario: ScenarioConfig::desk(),
            dataset: TrafficConfig::default(),
            env: EnvConfig::default(),
            agent: AgentConfig::desk(),
            experiment: ExperimentConfig::default(),
            seeds: (0..10).collect(),
            output_dir: PathBuf::from("runs"),
        }
    }
}

impl RunConfig {
    /// Reads a TOML file; missing keys take the desk defaults. Relative
    /// `scenario_path` values resolve against the config file's directory.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let bad = |e: &dyn std::fmt::Display| Error::Config(format!("{}: {e}", path.display()));
        let overrides: toml::Table = toml::from_str(&text).map_err(|e| bad(&e))?;
        let mut merged = toml::Table::try_from(Self::default()).map_err(|e| bad(&e))?;
        merge(&mut merged, overrides);
        let mut cfg: Self = merged.try_into().map_err(|e| bad(&e))?;
        if let Some(p) = cfg.scenario_path.take() {
            let p = if p.is_relative() {
                path.parent().unwrap_or(Path::new(".")).join(p)
            } else {
                p
            };
            if !p.exists() {
                return Err(Error::Config(format!(
                    "scenario file {} does not exist",
                    p.display()
                )));
            }
            cfg.scenario = ScenarioConfig::from_path(&p)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.dataset.validate()?;
        self.agent.validate()?;
        self.env.reward.scheduler.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.experiment.stress_d_ranges.iter().any(|d| !(*d >= 0.0)) {
            return Err(Error::Config("stress d_range values must be >= 0".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Short SHA-256 of the resolved config; `output_dir` is excluded so
    /// moving a run does not change its identity.
    pub fn hash(&self) -> String {
        let mut resolved = self.clone();
        resolved.output_dir = PathBuf::new();
        let json = serde_json::to_vec(&resolved).expect("config serializes");
        let digest = Sha256::digest(&json);
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Recursively overlays `over` onto `base`; tables merge, everything else
/// is replaced.
fn merge(base: &mut toml::Table, over: toml::Table) {
    for (key, value) in over {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, value) => {
                base.insert(key, value);
            }
        }
    }
}
