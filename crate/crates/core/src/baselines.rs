//! Reference optimizers: greedy best-first search, a uniform random policy
//! and the exact optimum of small instances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{Action, TreeEnv};
use crate::{Error, Result};

/// Largest number of terminal tilt assignments the exact search accepts.
pub const MAX_ASSIGNMENTS: u128 = 100_000;
/// Largest dynamic-programming table (steps x assignments x touched sets).
const MAX_DP_ENTRIES: u128 = 50_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub actions: Vec<Action>,
    pub terminal_tilts: Vec<usize>,
    pub episode_reward: f64,
    pub step_rewards: Vec<f64>,
    pub nodes_expanded: usize,
}

fn require_fresh<E: TreeEnv>(env: &E) -> Result<()> {
    if env.steps_taken() != 0 {
        return Err(Error::Episode(format!(
            "search needs a freshly reset environment, {} steps already taken",
            env.steps_taken()
        )));
    }
    Ok(())
}

/// Plays `actions` on a copy of `env`.
fn replay<E: TreeEnv>(
    env: &E,
    actions: Vec<Action>,
    nodes_expanded: usize,
) -> Result<SearchResult> {
    let mut env = env.clone();
    let mut step_rewards = Vec::with_capacity(actions.len());
    for &a in &actions {
        step_rewards.push(env.step(a)?.reward);
    }
    Ok(SearchResult {
        episode_reward: step_rewards.iter().sum(),
        terminal_tilts: env.target_tilts(),
        actions,
        step_rewards,
        nodes_expanded,
    })
}

/// At every step, probe all `P * C` actions on copies of the current state
/// and commit the one with the largest immediate reward (lowest id on ties).
pub fn best_first_search<E: TreeEnv>(env: &E) -> Result<SearchResult> {
    require_fresh(env)?;
    let mut current = env.clone();
    let n_tilts = env.n_tilts();
    let mut actions = Vec::with_capacity(env.n_cells());
    let mut nodes = 0;
    while !current.done() {
        let probes: Vec<f64> = (0..current.n_actions())
            .into_par_iter()
            .map(|id| {
                let mut probe = current.clone();
                probe.step(Action::from_flat(id, n_tilts)).map(|r| r.reward)
            })
            .collect::<Result<_>>()?;
        nodes += probes.len();
        let best = crate::agent::argmax(&probes);
        let action = Action::from_flat(best, n_tilts);
        current.step(action)?;
        actions.push(action);
    }
    replay(env, actions, nodes)
}

/// Uniformly random actions for a whole episode.
pub fn random_policy<E: TreeEnv>(env: &E, seed: u64) -> Result<SearchResult> {
    require_fresh(env)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let actions = (0..env.n_cells())
        .map(|_| Action::from_flat(rng.random_range(0..env.n_actions()), env.n_tilts()))
        .collect();
    replay(env, actions, 0)
}

/// The best episode reachable from the current (fresh) state.
///
/// The state reward depends only on the tilt assignment, so each of the
/// `P^C` assignments is simulated once. An exact backward recursion over
/// (step, assignment, touched cells) then scores every action sequence,
/// repeat-cell actions included. The winning sequence is replayed on a copy
/// of the environment as a cross-check.
pub fn brute_force_optimum<E: TreeEnv>(env: &E) -> Result<SearchResult> {
    require_fresh(env)?;
    let (c, p) = (env.n_cells(), env.n_tilts());
    let size = (p as u128).checked_pow(c as u32).unwrap_or(u128::MAX);
    if size > MAX_ASSIGNMENTS {
        return Err(Error::SearchTooLarge {
            size,
            limit: MAX_ASSIGNMENTS,
        });
    }
    let dp_entries = size
        .saturating_mul(c as u128)
        .saturating_mul(1u128 << c.min(100));
    if dp_entries > MAX_DP_ENTRIES {
        return Err(Error::SearchTooLarge {
            size: dp_entries,
            limit: MAX_DP_ENTRIES,
        });
    }
    let n_states = size as usize;
    let decode = |mut idx: usize| -> Vec<usize> {
        (0..c)
            .map(|_| {
                let t = idx % p;
                idx /= p;
                t
            })
            .collect()
    };
    let values: Vec<f64> = (0..n_states)
        .into_par_iter()
        .map(|idx| {
            let mut probe = env.clone();
            let mut last = 0.0;
            for (cell, t) in decode(idx).into_iter().enumerate() {
                last = probe.step(Action::new(cell, t))?.info.base_reward;
            }
            Ok(last)
        })
        .collect::<Result<_>>()?;

    let penalty = env.repeat_penalty();
    let n_touched = 1usize << c;
    let powers: Vec<usize> = (0..c).map(|i| p.pow(i as u32)).collect();
    let entries = n_states * n_touched;
    // best[s] for the layer after the current one; choice per layer.
    let mut next = vec![0.0; entries];
    let mut choice = vec![0u32; c * entries];
    for k in (0..c).rev() {
        let mut cur = vec![f64::NEG_INFINITY; entries];
        for state in 0..n_states {
            for touched in 0..n_touched {
                let slot = state * n_touched + touched;
                for id in 0..c * p {
                    let (cell, tilt) = (id / p, id % p);
                    let old = (state / powers[cell]) % p;
                    let new_state = state - old * powers[cell] + tilt * powers[cell];
                    let repeat = touched & (1 << cell) != 0;
                    let r = values[new_state] - if repeat { penalty } else { 0.0 };
                    let v = r + next[new_state * n_touched + (touched | 1 << cell)];
                    if v > cur[slot] {
                        cur[slot] = v;
                        choice[k * entries + slot] = id as u32;
                    }
                }
            }
        }
        next = cur;
    }

    let start = env
        .target_tilts()
        .iter()
        .rev()
        .fold(0, |acc, &t| acc * p + t);
    let (mut state, mut touched) = (start, 0usize);
    let mut actions = Vec::with_capacity(c);
    for k in 0..c {
        let id = choice[k * entries + state * n_touched + touched] as usize;
        let a = Action::from_flat(id, p);
        let old = (state / powers[a.cell]) % p;
        state = state - old * powers[a.cell] + a.tilt * powers[a.cell];
        touched |= 1 << a.cell;
        actions.push(a);
    }
    let optimum = next[start * n_touched];
    let result = replay(env, actions, n_states)?;
    if (result.episode_reward - optimum).abs() > 1e-9 * optimum.abs().max(1.0) {
        return Err(Error::Episode(format!(
            "optimal sequence replays to {} instead of {optimum}",
            result.episode_reward
        )));
    }
    Ok(result)
}
