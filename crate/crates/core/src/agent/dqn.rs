use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::policy::{argmax, select_action};
use super::replay::{ReplayBuffer, Transition};
use super::schedule::{EpsConfig, EpsSchedule, EtaSchedule};
use crate::env::{Action, TreeEnv};
use crate::nn::{Batch, NetworkWidths, QNetwork, RmsProp, RmsPropConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exploration {
    /// Depth-wise epsilon decay plus the constrained-action eta schedule.
    #[default]
    DepthwiseEpsEta,
    /// One epsilon decay for every depth and no constrained actions.
    EpsGreedy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub exploration: Exploration,
    pub gamma: f64,
    /// Rewards are multiplied by this before they enter the replay buffer,
    /// so Q-values live on a scale the Huber loss handles well.
    pub reward_scale: f64,
    pub batch_size: usize,
    /// Copy the online network into the target network every this many
    /// gradient steps.
    pub target_update_every: usize,
    pub replay_capacity: usize,
    /// Transitions collected before the first gradient step.
    pub warmup: usize,
    pub train_episodes: usize,
    /// Environment steps per gradient step.
    pub train_every: usize,
    /// Greedy evaluation period in environment steps (0 disables it).
    pub eval_every_steps: usize,
    pub eval_seeds: Vec<u64>,
    pub eps: EpsConfig,
    /// Target probability of a penalty-free exploratory episode.
    pub eta_target: f64,
    pub network: NetworkWidths,
    pub optimizer: RmsPropConfig,
    /// Stop once the mean greedy evaluation reward reaches this value.
    pub stop_at_eval_reward: Option<f64>,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            exploration: Exploration::DepthwiseEpsEta,
            gamma: 1.0,
            reward_scale: 1.0,
            batch_size: 256,
            target_update_every: 1500,
            replay_capacity: 200_000,
            warmup: 5000,
            train_episodes: 66_000,
            train_every: 1,
            eval_every_steps: 1000,
            eval_seeds: (0..10).map(|i| 1_000_000 + i).collect(),
            eps: EpsConfig::default(),
            eta_target: 0.5,
            network: NetworkWidths::default(),
            optimizer: RmsPropConfig::default(),
            stop_at_eval_reward: None,
        }
    }
}

impl AgentConfig {
    /// Settings sized for a few thousand episodes on a single CPU core.
    pub fn desk() -> Self {
        Self {
            reward_scale: 0.1,
            batch_size: 32,
            target_update_every: 250,
            replay_capacity: 20_000,
            warmup: 500,
            train_episodes: 3000,
            network: NetworkWidths {
                conv_filters: 4,
                kernel: 5,
                dense: vec![32, 32, 32],
                head: vec![32],
            },
            optimizer: RmsPropConfig {
                learning_rate: 1e-3,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.target_update_every == 0 || self.train_every == 0 {
            return Err(Error::Config(
                "batch size, target period and train period must be positive".into(),
            ));
        }
        if !(self.reward_scale > 0.0) {
            return Err(Error::Config(format!(
                "reward scale {} must be positive",
                self.reward_scale
            )));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma {} not in [0, 1]", self.gamma)));
        }
        if self.replay_capacity < self.batch_size {
            return Err(Error::Config(
                "replay capacity is smaller than a batch".into(),
            ));
        }
        if self.eval_every_steps > 0 && self.eval_seeds.is_empty() {
            return Err(Error::Config(
                "periodic evaluation needs at least one seed".into(),
            ));
        }
        self.optimizer.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub reward: f64,
    /// No cell was re-tilted.
    pub compliant: bool,
    /// Epsilon used at each depth.
    pub eps: Vec<f64>,
    /// Mean loss of the gradient steps taken during the episode.
    pub loss: Option<f64>,
    pub env_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub env_steps: usize,
    /// Episodes completed when the evaluation ran.
    pub episode: usize,
    pub rewards: Vec<f64>,
    pub mean: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub episodes: Vec<EpisodeRecord>,
    pub evals: Vec<EvalRecord>,
    pub train_steps: usize,
    /// Gradient-step counts at which the target network was refreshed.
    pub target_updates: Vec<usize>,
    pub stopped_early: bool,
}

impl TrainingLog {
    /// Episodes completed at the first evaluation whose mean reached `level`.
    pub fn episodes_to_reach(&self, level: f64) -> Option<usize> {
        self.evals
            .iter()
            .find(|e| e.mean >= level)
            .map(|e| e.episode)
    }
}

/// One greedy episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeEval {
    pub seed: u64,
    pub reward: f64,
    pub step_rewards: Vec<f64>,
    pub actions: Vec<usize>,
    pub compliant: bool,
}

/// DQN with fixed Q-targets and uniform replay.
#[derive(Debug, Clone)]
pub struct Agent {
    config: AgentConfig,
    online: QNetwork,
    target: QNetwork,
    optimizer: RmsProp,
    replay: ReplayBuffer,
    eps: EpsSchedule,
    eta: EtaSchedule,
    rng: ChaCha8Rng,
    env_rng: ChaCha8Rng,
    n_tilts: usize,
    env_steps: usize,
    episode: usize,
    grad: Vec<f64>,
    log: TrainingLog,
}

impl Agent {
    pub fn new<E: TreeEnv>(env: &E, config: AgentConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let n_cells = env.n_cells();
        // Side inputs: one history bit per action plus the episode progress.
        let spec = config
            .network
            .spec_for(env.image_shape(), env.n_actions() + 1, env.n_actions());
        let online = QNetwork::new(spec, seed)?;
        let (eps, eta) = match config.exploration {
            Exploration::DepthwiseEpsEta => (
                EpsSchedule::depthwise(&config.eps, n_cells, config.train_episodes)?,
                EtaSchedule::new(n_cells, config.eta_target)?,
            ),
            Exploration::EpsGreedy => (
                EpsSchedule::single(&config.eps, n_cells, config.train_episodes)?,
                EtaSchedule::disabled(n_cells),
            ),
        };
        Ok(Self {
            optimizer: RmsProp::new(config.optimizer.clone(), online.n_params())?,
            replay: ReplayBuffer::new(config.replay_capacity)?,
            target: online.clone(),
            grad: vec![0.0; online.n_params()],
            online,
            eps,
            eta,
            rng: ChaCha8Rng::seed_from_u64(seed),
            env_rng: ChaCha8Rng::seed_from_u64(seed ^ 0x005e_ed0f_e915_0de5),
            n_tilts: env.n_tilts(),
            env_steps: 0,
            episode: 0,
            log: TrainingLog::default(),
            config,
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn network(&self) -> &QNetwork {
        &self.online
    }

    pub fn target_network(&self) -> &QNetwork {
        &self.target
    }

    pub fn log(&self) -> &TrainingLog {
        &self.log
    }

    pub fn eps_schedule(&self) -> &EpsSchedule {
        &self.eps
    }

    pub fn eta_schedule(&self) -> &EtaSchedule {
        &self.eta
    }

    /// Runs the configured number of episodes (or until the early-stop
    /// level) and returns the log. `on_episode` sees every finished episode.
    pub fn train<E, F>(&mut self, env: &mut E, mut on_episode: F) -> Result<TrainingLog>
    where
        E: TreeEnv,
        F: FnMut(&EpisodeRecord),
    {
        while self.episode < self.config.train_episodes {
            let record = self.run_episode(env)?;
            on_episode(&record);
            self.log.episodes.push(record);
            if self.log.stopped_early {
                break;
            }
        }
        Ok(self.log.clone())
    }

    fn run_episode<E: TreeEnv>(&mut self, env: &mut E) -> Result<EpisodeRecord> {
        let seed = self.env_rng.random::<u64>();
        let mut obs = Arc::new(env.reset(seed)?);
        let (mut reward, mut compliant) = (0.0, true);
        let (mut loss_sum, mut n_losses) = (0.0, 0);
        let eps: Vec<f64> = (1..=env.n_cells())
            .map(|d| self.eps.eps(d, self.episode))
            .collect();
        for depth in 1..=env.n_cells() {
            let q = self.online.forward(&obs)?;
            let a = select_action(
                &q,
                &obs.history,
                self.n_tilts,
                eps[depth - 1],
                self.eta.eta(depth),
                &mut self.rng,
            );
            let step = env.step(Action::from_flat(a, self.n_tilts))?;
            reward += step.reward;
            compliant &= !step.info.repeat_violation;
            let next = Arc::new(step.observation);
            self.replay.push(Transition {
                obs,
                action: a,
                reward: step.reward * self.config.reward_scale,
                next_obs: next.clone(),
                done: step.done,
            });
            obs = next;
            self.env_steps += 1;

            let ready = self.replay.len() >= self.config.warmup.max(self.config.batch_size);
            if ready && self.env_steps.is_multiple_of(self.config.train_every) {
                loss_sum += self.train_step()?;
                n_losses += 1;
            }
            if self.config.eval_every_steps > 0
                && self.env_steps.is_multiple_of(self.config.eval_every_steps)
            {
                self.periodic_eval(env, self.episode + usize::from(step.done))?;
            }
        }
        self.episode += 1;
        Ok(EpisodeRecord {
            episode: self.episode - 1,
            reward,
            compliant,
            eps,
            loss: (n_losses > 0).then(|| loss_sum / n_losses as f64),
            env_steps: self.env_steps,
        })
    }

    fn periodic_eval<E: TreeEnv>(&mut self, env: &E, episode: usize) -> Result<()> {
        let evals = evaluate_greedy(env, &self.online, &self.config.eval_seeds)?;
        let rewards: Vec<f64> = evals.iter().map(|e| e.reward).collect();
        let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
        tracing::debug!(
            env_steps = self.env_steps,
            episode,
            mean,
            "greedy evaluation"
        );
        if self
            .config
            .stop_at_eval_reward
            .is_some_and(|level| mean >= level)
        {
            self.log.stopped_early = true;
        }
        self.log.evals.push(EvalRecord {
            env_steps: self.env_steps,
            episode,
            rewards,
            mean,
        });
        Ok(())
    }

    /// One gradient step on a uniformly sampled batch.
    fn train_step(&mut self) -> Result<f64> {
        let picked = self
            .replay
            .sample_indices(self.config.batch_size, &mut self.rng)?;
        let mut batch = Batch::default();
        let mut next = Batch::default();
        let mut actions = Vec::with_capacity(picked.len());
        for &i in &picked {
            let t = self.replay.get(i).expect("sampled index is in range");
            batch.push(&t.obs);
            next.push(&t.next_obs);
            actions.push(t.action);
        }
        let q_next = self.target.forward_batch(&next)?;
        let n_out = self.online.spec().outputs;
        let targets: Vec<f64> = picked
            .iter()
            .enumerate()
            .map(|(b, &i)| {
                let t = self.replay.get(i).expect("sampled index is in range");
                if t.done {
                    t.reward
                } else {
                    let row = &q_next[b * n_out..(b + 1) * n_out];
                    t.reward + self.config.gamma * row[argmax(row)]
                }
            })
            .collect();
        let loss = self
            .online
            .loss_and_grad(&batch, &actions, &targets, &mut self.grad)?;
        self.optimizer.step(self.online.params_mut(), &self.grad)?;
        self.log.train_steps += 1;
        if self.log.train_steps.is_multiple_of(self.config.target_update_every) {
            self.target.copy_from(&self.online)?;
            self.log.target_updates.push(self.log.train_steps);
        }
        Ok(loss)
    }
}

/// Greedy rollouts of `net`, one per seed, each on its own copy of `env`.
pub fn evaluate_greedy<E: TreeEnv>(
    env: &E,
    net: &QNetwork,
    seeds: &[u64],
) -> Result<Vec<EpisodeEval>> {
    seeds
        .par_iter()
        .map(|&seed| {
            let mut env = env.clone();
            let mut obs = env.reset(seed)?;
            let n_tilts = env.n_tilts();
            let mut out = EpisodeEval {
                seed,
                reward: 0.0,
                step_rewards: Vec::with_capacity(env.n_cells()),
                actions: Vec::with_capacity(env.n_cells()),
                compliant: true,
            };
            while !env.done() {
                let a = argmax(&net.forward(&obs)?);
                let step = env.step(Action::from_flat(a, n_tilts))?;
                out.reward += step.reward;
                out.step_rewards.push(step.reward);
                out.actions.push(a);
                out.compliant &= !step.info.repeat_violation;
                obs = step.observation;
            }
            Ok(out)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::LandscapeEnv;

    fn tiny_config() -> AgentConfig {
        AgentConfig {
            batch_size: 8,
            warmup: 8,
            replay_capacity: 500,
            train_episodes: 30,
            target_update_every: 5,
            eval_every_steps: 20,
            eval_seeds: vec![1, 2],
            network: NetworkWidths {
                conv_filters: 2,
                kernel: 5,
                dense: vec![8, 8, 8],
                head: vec![8],
            },
            ..Default::default()
        }
    }

    #[test]
    fn warmup_shorter_than_batch_takes_no_step() {
        let mut env = LandscapeEnv::deceptive();
        let cfg = AgentConfig {
            batch_size: 100,
            warmup: 10,
            train_episodes: 20,
            ..tiny_config()
        };
        let mut agent = Agent::new(&env, cfg, 0).unwrap();
        let before = agent.network().clone();
        let log = agent.train(&mut env, |_| {}).unwrap();
        assert_eq!(log.train_steps, 0);
        assert_eq!(agent.network(), &before);
    }

    #[test]
    fn target_copies_follow_the_period() {
        let mut env = LandscapeEnv::deceptive();
        let cfg = AgentConfig {
            target_update_every: 1,
            ..tiny_config()
        };
        let mut agent = Agent::new(&env, cfg, 0).unwrap();
        agent.train(&mut env, |_| {}).unwrap();
        assert_eq!(agent.network(), agent.target_network());

        let mut agent = Agent::new(&env, tiny_config(), 0).unwrap();
        let log = agent.train(&mut env, |_| {}).unwrap();
        assert!(log.train_steps > 10);
        assert!(log.target_updates.iter().all(|s| s % 5 == 0));
        assert_eq!(log.target_updates.len(), log.train_steps / 5);
    }

    #[test]
    fn training_is_deterministic() {
        let run = || {
            let mut env = LandscapeEnv::deceptive();
            let mut agent = Agent::new(&env, tiny_config(), 7).unwrap();
            let log = agent.train(&mut env, |_| {}).unwrap();
            (log, agent.network().clone())
        };
        let (a, na) = run();
        let (b, nb) = run();
        assert_eq!(a, b);
        assert_eq!(na, nb);
        assert_eq!(a.episodes.len(), 30);
        assert!(!a.evals.is_empty());
    }

    #[test]
    fn greedy_evaluation_contract() {
        let env = LandscapeEnv::deceptive();
        let net =
            QNetwork::new(tiny_config().network.spec_for(env.image_shape(), 7, 6), 1).unwrap();
        let evals = evaluate_greedy(&env, &net, &[3, 4, 3]).unwrap();
        assert_eq!(evals.len(), 3);
        assert_eq!(evals[0], evals[2]);
        assert!(evals.iter().all(|e| e.step_rewards.len() == 2));
    }

    #[test]
    fn early_stop_ends_training() {
        let mut env = LandscapeEnv::deceptive();
        let cfg = AgentConfig {
            stop_at_eval_reward: Some(f64::NEG_INFINITY),
            ..tiny_config()
        };
        let mut agent = Agent::new(&env, cfg, 0).unwrap();
        let log = agent.train(&mut env, |_| {}).unwrap();
        assert!(log.stopped_early);
        assert_eq!(log.episodes.len(), 10);
    }

    #[test]
    fn config_validation() {
        assert!(AgentConfig::default().validate().is_ok());
        assert!(AgentConfig::desk().validate().is_ok());
        let bad = AgentConfig {
            batch_size: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
