//! Long-format CSV metrics (`run_id, phase, episode, step, metric, value`)
//! and JSON summaries.

use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agent::{EpisodeEval, TrainingLog};
use crate::baselines::SearchResult;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub run_id: String,
    pub phase: String,
    pub episode: Option<usize>,
    pub step: Option<usize>,
    pub metric: String,
    pub value: f64,
}

pub struct MetricsWriter {
    writer: csv::Writer<File>,
    run_id: String,
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

impl MetricsWriter {
    pub fn create(path: &Path, run_id: &str) -> Result<Self> {
        Ok(Self {
            writer: csv::Writer::from_path(path).map_err(csv_err)?,
            run_id: run_id.to_string(),
        })
    }

    pub fn row(
        &mut self,
        phase: &str,
        episode: Option<usize>,
        step: Option<usize>,
        metric: &str,
        value: f64,
    ) -> Result<()> {
        self.writer
            .serialize(MetricRow {
                run_id: self.run_id.clone(),
                phase: phase.to_string(),
                episode,
                step,
                metric: metric.to_string(),
                value,
            })
            .map_err(csv_err)
    }

    /// Per-episode training rewards, losses and epsilons plus the periodic
    /// greedy evaluations (`step` holds the environment step count).
    pub fn training_log(&mut self, phase: &str, log: &TrainingLog) -> Result<()> {
        for e in &log.episodes {
            let ep = Some(e.episode);
            self.row(phase, ep, None, "episode_reward", e.reward)?;
            self.row(
                phase,
                ep,
                None,
                "compliant",
                f64::from(u8::from(e.compliant)),
            )?;
            if let Some(loss) = e.loss {
                self.row(phase, ep, None, "loss", loss)?;
            }
            for (d, eps) in e.eps.iter().enumerate() {
                self.row(phase, ep, Some(d + 1), "eps", *eps)?;
            }
        }
        for ev in &log.evals {
            self.row(
                phase,
                Some(ev.episode),
                Some(ev.env_steps),
                "eval_mean_reward",
                ev.mean,
            )?;
        }
        Ok(())
    }

    /// One row per seed for the episode reward and one per step reward; the
    /// seed goes in the `episode` column.
    pub fn evaluations(&mut self, phase: &str, evals: &[EpisodeEval]) -> Result<()> {
        for e in evals {
            let ep = Some(e.seed as usize);
            self.row(phase, ep, None, "episode_reward", e.reward)?;
            for (s, r) in e.step_rewards.iter().enumerate() {
                self.row(phase, ep, Some(s + 1), "step_reward", *r)?;
            }
        }
        Ok(())
    }

    pub fn search(&mut self, phase: &str, seed: u64, result: &SearchResult) -> Result<()> {
        let ep = Some(seed as usize);
        self.row(phase, ep, None, "episode_reward", result.episode_reward)?;
        for (s, r) in result.step_rewards.iter().enumerate() {
            self.row(phase, ep, Some(s + 1), "step_reward", *r)?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.writer.flush()?;
        Ok(())
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    reader.deserialize().map(|r| r.map_err(csv_err)).collect()
}

pub fn write_summary<T: Serialize>(path: &Path, summary: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(summary)?)?;
    Ok(())
}
