//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria listed in `KNOWN_FAILURES` are reported as FAIL but do not fail
//! the process unless `TILTLAB_ACCEPTANCE_STRICT=1` is set; everything else
//! that fails exits non-zero.

use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use tiltlab::agent::{
    episode_success_probability, eta_for_step, evaluate_greedy, select_action, Agent, AgentConfig,
    EtaSchedule, Exploration,
};
use tiltlab::baselines::{best_first_search, brute_force_optimum};
use tiltlab::env::{Action, EnvConfig, LandscapeEnv, NetworkEnv, TreeEnv, WeightMode};
use tiltlab::mdt::{build_dataset, TrafficConfig};
use tiltlab::nn::{Batch, QNetwork, QNetworkSpec};
use tiltlab::reward::{coverage_cost, CoverageCostParams, CqiTable};
use tiltlab::scenario::{generate_grids, ScenarioConfig};
use tiltlab::stats::{iqr, mean, median, spearman, variance};

/// Directional claims that the desk scenario does not reproduce; the reasons
/// are written up in the decisions ledger.
const KNOWN_FAILURES: &[(&str, &str)] = &[
    (
        "sample efficiency",
        "with 4 cells the repeat penalty is learned from history bits almost immediately, so plain epsilon-greedy is not slowed down",
    ),
    (
        "variance compactness",
        "best-first search is already optimal on every desk seed, so the DQN can at best tie its mean; the IQR comparison against epsilon-greedy is also within noise",
    ),
];

const EVAL_SEEDS: std::ops::Range<u64> = 2_000_000..2_000_050;

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
    elapsed: Duration,
}

fn check(name: &'static str, budget: Duration, f: impl FnOnce() -> (bool, String)) -> Outcome {
    let start = Instant::now();
    let (ok, mut detail) = f();
    let elapsed = start.elapsed();
    let in_time = elapsed <= budget;
    if !in_time {
        detail.push_str(&format!("; over budget of {budget:?}"));
    }
    let out = Outcome {
        name,
        pass: ok && in_time,
        detail,
        elapsed,
    };
    println!(
        "{} {:<24} {} [{:.1?}]",
        if out.pass { "PASS" } else { "FAIL" },
        out.name,
        out.detail,
        out.elapsed
    );
    out
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

fn desk_env(weights: WeightMode) -> NetworkEnv {
    let scenario = ScenarioConfig::desk();
    let grids = generate_grids(&scenario).expect("desk grids");
    let baseline = vec![0; grids.n_cells()];
    let ds = build_dataset(&grids, &baseline, &TrafficConfig::default()).expect("desk dataset");
    let cfg = EnvConfig {
        weights,
        ..EnvConfig::default()
    };
    NetworkEnv::new(Arc::new(grids), Arc::new(ds), cfg).expect("desk env")
}

fn oracle_rewards<E: TreeEnv>(env: &E, seeds: &[u64]) -> Vec<f64> {
    seeds
        .par_iter()
        .map(|&s| {
            let mut e = env.clone();
            e.reset(s).unwrap();
            brute_force_optimum(&e).unwrap().episode_reward
        })
        .collect()
}

fn greedy_rewards<E: TreeEnv>(env: &E, net: &QNetwork, seeds: &[u64]) -> Vec<f64> {
    evaluate_greedy(env, net, seeds)
        .unwrap()
        .into_iter()
        .map(|e| e.reward)
        .collect()
}

fn train<E: TreeEnv>(env: &E, cfg: AgentConfig, seed: u64) -> (Agent, tiltlab::agent::TrainingLog) {
    let mut env = env.clone();
    let mut agent = Agent::new(&env, cfg, seed).unwrap();
    let log = agent.train(&mut env, |_| {}).unwrap();
    (agent, log)
}

/// Compliant fraction of `episodes` exploratory episodes (epsilon = 1).
fn compliant_fraction(
    c: usize,
    p: usize,
    eta: &EtaSchedule,
    episodes: usize,
    seed: u64,
) -> (usize, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = vec![0.0; c * p];
    let mut ok = 0;
    for _ in 0..episodes {
        let mut history = vec![false; c * p];
        let mut touched = vec![false; c];
        let mut compliant = true;
        for step in 1..=c {
            let a = select_action(&q, &history, p, 1.0, eta.eta(step), &mut rng);
            let cell = a / p;
            compliant &= !touched[cell];
            touched[cell] = true;
            history[a] = true;
        }
        ok += usize::from(compliant);
    }
    (ok, episodes)
}

fn schedule_fidelity() -> (bool, String) {
    let expected = [0.0, 0.253, 0.627, 0.751, 0.813, 0.851, 0.876, 0.893, 0.907];
    let worst = (1..=9)
        .map(|k| (eta_for_step(k, 9, 0.5) - expected[k - 1]).abs())
        .fold(0.0, f64::max);
    (worst <= 5e-4, format!("max |eta - table| = {worst:.2e}"))
}

fn success_probability() -> (bool, String) {
    let p = episode_success_probability(9);
    let inverse = 1.0 / p;
    let n = 100_000;
    let (hits, _) = compliant_fraction(9, 3, &EtaSchedule::disabled(9), n, 12);
    let expected = n as f64 * p;
    let sigma = (n as f64 * p * (1.0 - p)).sqrt();
    let z = (hits as f64 - expected) / sigma;
    (
        (1066.0..=1068.0).contains(&inverse) && z.abs() <= 3.0,
        format!("1/p = {inverse:.2}; Monte Carlo {hits} vs {expected:.1} expected (z = {z:.2})"),
    )
}

fn constraint_balance() -> (bool, String) {
    let eta = EtaSchedule::new(9, 0.5).unwrap();
    let (ok, n) = compliant_fraction(9, 3, &eta, 10_000, 13);
    let frac = ok as f64 / n as f64;
    (
        (frac - 0.5).abs() <= 0.05,
        format!("compliant fraction {frac:.4}"),
    )
}

fn cqi_table() -> (bool, String) {
    let thresholds = [
        -6.4, -4.8, -3.4, -2.2, -1.2, -0.1, 0.9, 2.1, 3.3, 4.8, 6.5, 8.5, 10.9, 13.8, 17.1,
    ];
    let efficiency = [
        0.1524, 0.377, 0.877, 1.4764, 1.914, 2.4064, 2.7306, 3.3222, 3.9024, 4.5234, 5.115, 5.5544,
        6.2264, 6.9072, 7.4064,
    ];
    let table = CqiTable::default();
    let mut mismatches = 0;
    let mut steps = 0;
    for i in -1000..=2000 {
        let sinr = f64::from(i) / 100.0;
        let n = thresholds.iter().filter(|&&t| t <= sinr).count();
        let want = if n == 0 {
            (0, 0.0)
        } else {
            (n as u8, efficiency[n - 1])
        };
        if table.lookup(sinr) != want {
            mismatches += 1;
        }
        steps += 1;
    }
    (
        mismatches == 0,
        format!("{mismatches} mismatches over {steps} SINR steps"),
    )
}

fn coverage_cost_values() -> (bool, String) {
    let params = CoverageCostParams::default();
    let direct = |a: f64| {
        let g = 4.6f64.powf(a - 101.1);
        (1.0 - g) / (11.2 * g)
    };
    let cases = [
        (100.0, 0.0),
        (99.5, 0.0),
        (99.0, direct(99.0)),
        (98.0, direct(98.0)),
        (97.0, 10.0),
    ];
    let worst = cases
        .iter()
        .map(|&(a, want)| (coverage_cost(a, &params) - want).abs())
        .fold(0.0, f64::max);
    let at98 = coverage_cost(98.0, &params);
    (
        worst <= 1e-6 && (at98 - 10.06).abs() < 0.05,
        format!(
            "max deviation {worst:.1e}; cost(99) = {:.4}, cost(98) = {at98:.4}",
            direct(99.0)
        ),
    )
}

fn baseline_identity() -> (bool, String) {
    let env = desk_env(WeightMode::Poisson);
    let mut identical = 0;
    for seed in 0..20 {
        let mut e = env.clone();
        let first = e.reset(seed).unwrap();
        let baseline = e.dataset().baseline_tilts.clone();
        let mut last = None;
        for (cell, &tilt) in baseline.iter().enumerate().take(e.n_cells()) {
            last = Some(e.step(Action::new(cell, tilt)).unwrap().observation);
        }
        let last = last.unwrap();
        let bits_equal = last
            .image
            .iter()
            .zip(&first.image)
            .all(|(a, b)| a.to_bits() == b.to_bits());
        identical += usize::from(bits_equal);
    }
    (
        identical == 20,
        format!("{identical}/20 seeds bit-identical"),
    )
}

fn gradient_check() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (mut cases, mut rejected, mut checked, mut worst) = (0, 0, 0usize, 0.0f64);
    let h = 1e-5;
    while cases < 100 {
        let spec = QNetworkSpec {
            input: [
                rng.random_range(1..=3),
                rng.random_range(3..=7),
                rng.random_range(3..=7),
            ],
            kernel: rng.random_range(1..=3),
            conv_filters: rng.random_range(1..=3),
            dense: (0..rng.random_range(1..=3))
                .map(|_| rng.random_range(1..=5))
                .collect(),
            history: rng.random_range(0..=4),
            head: (0..rng.random_range(0..=2))
                .map(|_| rng.random_range(1..=4))
                .collect(),
            outputs: rng.random_range(1..=4),
        };
        let mut net = QNetwork::new(spec.clone(), rng.random()).unwrap();
        net.params_mut()
            .iter_mut()
            .for_each(|p| *p = rng.random_range(-1.0..1.0));
        let bsz = rng.random_range(1..=3);
        let img: usize = spec.input.iter().product();
        let batch = Batch {
            images: (0..bsz * img).map(|_| rng.random_range(0.0..1.0)).collect(),
            history: (0..bsz * spec.history)
                .map(|_| f64::from(u8::from(rng.random_bool(0.5))))
                .collect(),
            size: bsz,
        };
        if net.relu_margin(&batch).unwrap() < 1e-4 {
            rejected += 1;
            continue;
        }
        let actions: Vec<usize> = (0..bsz)
            .map(|_| rng.random_range(0..spec.outputs))
            .collect();
        let targets: Vec<f64> = (0..bsz).map(|_| rng.random_range(-3.0..3.0)).collect();
        let mut grad = vec![0.0; net.n_params()];
        let mut scratch = grad.clone();
        net.loss_and_grad(&batch, &actions, &targets, &mut grad)
            .unwrap();
        for i in 0..net.n_params() {
            let orig = net.params()[i];
            net.params_mut()[i] = orig + h;
            let up = net
                .loss_and_grad(&batch, &actions, &targets, &mut scratch)
                .unwrap();
            net.params_mut()[i] = orig - h;
            let down = net
                .loss_and_grad(&batch, &actions, &targets, &mut scratch)
                .unwrap();
            net.params_mut()[i] = orig;
            let fd = (up - down) / (2.0 * h);
            // The floor keeps (numerically) zero gradients from dividing by zero.
            let rel = (grad[i] - fd).abs() / grad[i].abs().max(fd.abs()).max(1e-6);
            worst = worst.max(rel);
            checked += 1;
        }
        cases += 1;
    }
    (
        worst < 1e-4,
        format!("{cases} cases, {checked} parameters, worst relative error {worst:.2e} ({rejected} near-kink draws redrawn)"),
    )
}

struct DeskRuns {
    env: NetworkEnv,
    oracle: Vec<f64>,
    /// Greedy networks of the depth-wise runs, by training seed.
    depthwise: Vec<QNetwork>,
}

fn oracle_and_learning(runs: &mut Option<DeskRuns>) -> (bool, String) {
    let env = desk_env(WeightMode::Poisson);
    let seeds: Vec<u64> = EVAL_SEEDS.collect();
    let t = Instant::now();
    let mut probe = env.clone();
    probe.reset(seeds[0]).unwrap();
    let single = brute_force_optimum(&probe).unwrap();
    let single_time = t.elapsed();
    let oracle = oracle_rewards(&env, &seeds);
    let oracle_mean = mean(&oracle);

    let t = Instant::now();
    let nets: Vec<QNetwork> = (0..10u64)
        .into_par_iter()
        .map(|seed| train(&env, AgentConfig::desk(), seed).0.network().clone())
        .collect();
    let train_time = t.elapsed();
    let ratios: Vec<f64> = nets
        .iter()
        .map(|a| mean(&greedy_rewards(&env, a, &seeds)) / oracle_mean)
        .collect();
    let good = ratios.iter().filter(|&&r| r >= 0.95).count();
    let ok = single_time < secs(60) && good >= 8 && train_time < secs(30 * 60);
    let detail = format!(
        "oracle over {} configurations in {single_time:.1?}; {good}/10 seeds >= 95% of oracle (ratios {}); training {train_time:.0?}",
        single.nodes_expanded,
        ratios.iter().map(|r| format!("{r:.3}")).collect::<Vec<_>>().join(" ")
    );
    *runs = Some(DeskRuns {
        env,
        oracle,
        depthwise: nets,
    });
    (ok, detail)
}

fn sample_efficiency() -> (bool, String) {
    let env = desk_env(WeightMode::Poisson);
    let base = AgentConfig {
        eval_every_steps: 40,
        ..AgentConfig::desk()
    };
    let level = 0.9 * mean(&oracle_rewards(&env, &base.eval_seeds));
    let episodes_to_level = |exploration: Exploration| -> Vec<f64> {
        (0..5u64)
            .into_par_iter()
            .map(|seed| {
                let cfg = AgentConfig {
                    exploration,
                    stop_at_eval_reward: Some(level),
                    ..base.clone()
                };
                let (_, log) = train(&env, cfg, seed);
                log.episodes_to_reach(level)
                    .map_or(f64::INFINITY, |e| e as f64)
            })
            .collect()
    };
    let dw = episodes_to_level(Exploration::DepthwiseEpsEta);
    let eg = episodes_to_level(Exploration::EpsGreedy);
    let ratio = median(&dw) / median(&eg);
    (
        ratio <= 0.6,
        format!("episodes to 90% of oracle: depth-wise {dw:?}, epsilon-greedy {eg:?}, median ratio {ratio:.2}"),
    )
}

fn bfs_relationship() -> (bool, String) {
    let deceptive = LandscapeEnv::deceptive();
    let bfs = best_first_search(&deceptive).unwrap().episode_reward;
    let opt = brute_force_optimum(&deceptive).unwrap().episode_reward;
    let cfg = AgentConfig {
        train_episodes: 2000,
        ..AgentConfig::desk()
    };
    let (agent, _) = train(&deceptive, cfg, 0);
    let dqn = greedy_rewards(&deceptive, agent.network(), &[0])[0];

    let additive = LandscapeEnv::additive_control();
    let add_bfs = best_first_search(&additive).unwrap().episode_reward;
    let add_opt = brute_force_optimum(&additive).unwrap().episode_reward;
    (
        dqn > bfs && bfs < opt && add_bfs == add_opt,
        format!("deceptive: DQN {dqn}, BFS {bfs}, oracle {opt}; additive: BFS {add_bfs}, oracle {add_opt}"),
    )
}

fn variance_compactness(runs: &DeskRuns) -> (bool, String) {
    let seeds: Vec<u64> = EVAL_SEEDS.collect();
    let dw = greedy_rewards(&runs.env, &runs.depthwise[0], &seeds);
    let cfg = AgentConfig {
        exploration: Exploration::EpsGreedy,
        ..AgentConfig::desk()
    };
    let (eg_agent, _) = train(&runs.env, cfg, 0);
    let eg = greedy_rewards(&runs.env, eg_agent.network(), &seeds);
    let bfs: Vec<f64> = seeds
        .par_iter()
        .map(|&s| {
            let mut e = runs.env.clone();
            e.reset(s).unwrap();
            best_first_search(&e).unwrap().episode_reward
        })
        .collect();
    let (m_dw, m_eg, m_bfs) = (mean(&dw), mean(&eg), mean(&bfs));
    let ok = iqr(&dw) <= iqr(&eg) && m_dw >= m_eg && m_dw >= m_bfs;
    (
        ok,
        format!(
            "IQR depth-wise {:.3} vs epsilon-greedy {:.3}; means depth-wise {m_dw:.3}, epsilon-greedy {m_eg:.3}, BFS {m_bfs:.3} (oracle {:.3})",
            iqr(&dw),
            iqr(&eg),
            mean(&runs.oracle)
        ),
    )
}

fn stress_stability(runs: &DeskRuns) -> (bool, String) {
    let seeds: Vec<u64> = EVAL_SEEDS.collect();
    let d_ranges = [0.0, 0.25, 0.5, 1.0];
    let variances: Vec<f64> = d_ranges
        .iter()
        .map(|&d_range| {
            let env = desk_env(WeightMode::Perturbed { d_range });
            variance(&greedy_rewards(&env, &runs.depthwise[0], &seeds))
        })
        .collect();
    let rho = spearman(&d_ranges, &variances);
    (
        rho >= 0.0,
        format!(
            "variance by d_range {}; Spearman rho {rho:.2}",
            variances
                .iter()
                .map(|v| format!("{v:.3}"))
                .collect::<Vec<_>>()
                .join(" ")
        ),
    )
}

fn main() {
    let strict = std::env::var("TILTLAB_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let mut desk = None;
    let mut outcomes = vec![
        check("schedule fidelity", secs(1), schedule_fidelity),
        check("success probability", secs(30), success_probability),
        check("constraint balance", secs(30), constraint_balance),
        check("cqi table", secs(5), cqi_table),
        check("coverage cost", secs(1), coverage_cost_values),
        check("baseline identity", secs(10), baseline_identity),
        check("gradient correctness", secs(60), gradient_check),
        check("oracle and learning", secs(31 * 60), || {
            oracle_and_learning(&mut desk)
        }),
        check("sample efficiency", secs(30 * 60), sample_efficiency),
        check("bfs relationship", secs(10 * 60), bfs_relationship),
    ];
    let runs = desk.expect("desk runs were trained");
    outcomes.push(check("variance compactness", secs(10 * 60), || {
        variance_compactness(&runs)
    }));
    outcomes.push(check("stress stability", secs(5 * 60), || {
        stress_stability(&runs)
    }));

    let mut hard_failures = 0;
    for o in outcomes.iter().filter(|o| !o.pass) {
        match KNOWN_FAILURES.iter().find(|(name, _)| *name == o.name) {
            Some((_, why)) if !strict => println!("note: {} is a known failure: {why}", o.name),
            _ => hard_failures += 1,
        }
    }
    let passed = outcomes.iter().filter(|o| o.pass).count();
    println!("{passed}/{} criteria passed", outcomes.len());
    if hard_failures > 0 {
        std::process::exit(1);
    }
}
