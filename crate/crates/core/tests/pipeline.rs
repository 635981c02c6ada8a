use std::sync::Arc;

use tiltlab::agent::{evaluate_greedy, Agent, AgentConfig};
use tiltlab::baselines::{best_first_search, brute_force_optimum, random_policy};
use tiltlab::config::RunConfig;
use tiltlab::env::{rollout, Action, EnvConfig, NetworkEnv, TreeEnv};
use tiltlab::mdt::{build_dataset, MdtDataset, TrafficConfig};
use tiltlab::nn::{read_checkpoint, write_checkpoint};
use tiltlab::scenario::{generate_grids, RsrpGridSet, ScenarioConfig};

fn desk() -> (ScenarioConfig, RsrpGridSet, MdtDataset) {
    let scenario = ScenarioConfig::desk();
    let grids = generate_grids(&scenario).unwrap();
    let baseline = vec![0; grids.n_cells()];
    let ds = build_dataset(&grids, &baseline, &TrafficConfig::default()).unwrap();
    (scenario, grids, ds)
}

fn env_from(grids: RsrpGridSet, ds: MdtDataset) -> NetworkEnv {
    NetworkEnv::new(Arc::new(grids), Arc::new(ds), EnvConfig::default()).unwrap()
}

#[test]
fn oracle_dominates_bfs_dominates_random_on_desk() {
    let (_, grids, ds) = desk();
    let env = env_from(grids, ds);
    for seed in 0..5 {
        let mut e = env.clone();
        e.reset(seed).unwrap();
        let opt = brute_force_optimum(&e).unwrap();
        let bfs = best_first_search(&e).unwrap();
        let random = (0..20)
            .map(|s| random_policy(&e, s).unwrap().episode_reward)
            .sum::<f64>()
            / 20.0;
        assert!(opt.episode_reward >= bfs.episode_reward - 1e-9);
        assert!(bfs.episode_reward >= random);
        assert_eq!(opt.nodes_expanded, 81);
        let mut replay = e.clone();
        let total: f64 = rollout(&mut replay, &opt.actions).unwrap().iter().sum();
        assert!((total - opt.episode_reward).abs() < 1e-9);
    }
}

#[test]
fn cached_artifacts_rebuild_the_same_environment() {
    let (scenario, grids, ds) = desk();
    let dir = tempfile::tempdir().unwrap();
    let grid_path = dir.path().join("grids.bin");
    let ds_path = dir.path().join("dataset.jsonl");
    grids.write_to(&grid_path).unwrap();
    ds.write_jsonl(&ds_path).unwrap();

    let reloaded = env_from(
        RsrpGridSet::read_from(&grid_path, &scenario).unwrap(),
        MdtDataset::read_jsonl(&ds_path).unwrap(),
    );
    let original = env_from(grids, ds);
    let actions = [
        Action::new(0, 2),
        Action::new(3, 1),
        Action::new(0, 1),
        Action::new(2, 2),
    ];
    let (mut a, mut b) = (original.clone(), reloaded.clone());
    assert_eq!(a.reset(4).unwrap(), b.reset(4).unwrap());
    assert_eq!(
        rollout(&mut a, &actions).unwrap(),
        rollout(&mut b, &actions).unwrap()
    );
}

#[test]
fn trained_network_survives_a_checkpoint() {
    let (_, grids, ds) = desk();
    let mut env = env_from(grids, ds);
    let cfg = AgentConfig {
        train_episodes: 30,
        warmup: 32,
        batch_size: 8,
        eval_every_steps: 0,
        ..AgentConfig::desk()
    };
    let mut agent = Agent::new(&env, cfg, 5).unwrap();
    let log = agent.train(&mut env, |_| {}).unwrap();
    assert_eq!(log.episodes.len(), 30);
    assert!(log.train_steps > 0);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.ckpt");
    write_checkpoint(&path, agent.network(), "pipeline").unwrap();
    let (net, tag) = read_checkpoint(&path).unwrap();
    assert_eq!(tag, "pipeline");
    let seeds = [10, 11, 12];
    assert_eq!(
        evaluate_greedy(&env, agent.network(), &seeds).unwrap(),
        evaluate_greedy(&env, &net, &seeds).unwrap()
    );
}

#[test]
fn run_config_can_point_at_a_scenario_file() {
    let dir = tempfile::tempdir().unwrap();
    let mut scenario = ScenarioConfig::desk();
    scenario.seed = 99;
    std::fs::write(
        dir.path().join("scenario.toml"),
        toml::to_string(&scenario).unwrap(),
    )
    .unwrap();
    let run = dir.path().join("run.toml");
    std::fs::write(&run, "scenario_path = \"scenario.toml\"\nseeds = [1]\n").unwrap();
    let cfg = RunConfig::from_path(&run).unwrap();
    assert_eq!(cfg.scenario, scenario);
    assert_ne!(cfg.hash(), RunConfig::default().hash());
    generate_grids(&cfg.scenario).unwrap();
}
