//! DQN agent with fixed Q-targets, uniform replay and depth-wise
//! epsilon/eta exploration.

mod dqn;
mod policy;
mod replay;
mod schedule;

pub use dqn::{
    evaluate_greedy, Agent, AgentConfig, EpisodeEval, EpisodeRecord, EvalRecord, Exploration,
    TrainingLog,
};
pub use policy::{argmax, select_action};
pub use replay::{ReplayBuffer, Transition};
pub use schedule::{
    episode_success_probability, eta_for_step, EpsConfig, EpsSchedule, EtaSchedule,
};
