//! `tiltlab` command line front end.
//!
//! Every command resolves the run config, writes a copy of it (with its
//! hash) next to its artifacts, and tags CSV rows and JSON summaries with
//! the same hash. Exit codes: 0 success, 1 configuration or I/O problem,
//! 2 numerical failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use tiltlab::agent::{
    episode_success_probability, eta_for_step, evaluate_greedy, Agent, EpisodeEval, EpsSchedule,
    Exploration,
};
use tiltlab::baselines::{best_first_search, brute_force_optimum, SearchResult};
use tiltlab::config::RunConfig;
use tiltlab::env::{NetworkEnv, TreeEnv, WeightMode};
use tiltlab::mdt::{build_dataset, MdtDataset};
use tiltlab::metrics::{write_summary, MetricsWriter};
use tiltlab::nn::{read_checkpoint, write_checkpoint, QNetwork};
use tiltlab::scenario::{generate_grids, RsrpGridSet};
use tiltlab::stats::{iqr, mean, spearman, variance};

#[derive(Parser, Debug)]
#[command(
    name = "tiltlab",
    version,
    about = "MDT-driven antenna tilt optimization lab"
)]
struct Cli {
    /// Run config (TOML). Missing keys take the desk defaults.
    #[arg(long, global = true, env = "TILTLAB_CONFIG")]
    config: Option<PathBuf>,
    /// Single training seed; overrides the config's seed list.
    #[arg(long, global = true, env = "TILTLAB_SEED", conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Training seed range `N..M` (half open) or `N..=M`.
    #[arg(long, global = true, env = "TILTLAB_SEEDS", value_parser = parse_seed_range)]
    seeds: Option<SeedRange>,
    /// Output directory; overrides the config's `output_dir`.
    #[arg(long, global = true, env = "TILTLAB_OUT")]
    out: Option<PathBuf>,
    /// Log progress and library debug events to stderr.
    #[arg(long, short, global = true, env = "TILTLAB_VERBOSE")]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the simulated RSRP grids and cache them.
    Generate,
    /// Synthesize and pixelize the MDT dataset.
    Synthesize,
    /// Train one DQN per seed; writes metrics, checkpoints and a summary.
    Train {
        /// Train the plain epsilon-greedy variant instead.
        #[arg(long)]
        eps_greedy: bool,
    },
    /// Greedy evaluation of trained checkpoints on the evaluation seeds.
    Eval {
        /// Checkpoint to evaluate; defaults to the per-seed training outputs.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Best-first search on the evaluation seeds.
    Bfs,
    /// Exact optimum on the evaluation seeds.
    Oracle,
    /// Evaluate checkpoints under increasingly perturbed traffic weights.
    Stress {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Print the CQI lookup, the eta schedule and the episode success
    /// probabilities.
    Tables {
        /// Episode length; defaults to the scenario's target cells.
        #[arg(long)]
        cells: Option<usize>,
    },
}

#[derive(Debug, Clone, Copy)]
struct SeedRange(u64, u64);

fn parse_seed_range(s: &str) -> std::result::Result<SeedRange, String> {
    let (a, b, inclusive) = if let Some((a, b)) = s.split_once("..=") {
        (a, b, true)
    } else if let Some((a, b)) = s.split_once("..") {
        (a, b, false)
    } else {
        return Err(format!("expected N..M or N..=M, got {s:?}"));
    };
    let a: u64 = a
        .trim()
        .parse()
        .map_err(|_| format!("bad range start {a:?}"))?;
    let b: u64 = b
        .trim()
        .parse()
        .map_err(|_| format!("bad range end {b:?}"))?;
    let end = if inclusive { b + 1 } else { b };
    if end <= a {
        return Err(format!("seed range {s:?} is empty"));
    }
    Ok(SeedRange(a, end))
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Lab(#[from] tiltlab::Error),
    #[error("{source}; network state written to {}", checkpoint.display())]
    Numerical {
        source: tiltlab::Error,
        checkpoint: PathBuf,
    },
    #[error("{0}")]
    Usage(String),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Lab(e.into())
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            Self::Numerical { .. } | Self::Lab(tiltlab::Error::NonFinite { .. }) => 2,
            _ => 1,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

/// Resolved configuration plus the pieces every command needs.
struct Ctx {
    cfg: RunConfig,
    hash: String,
    out: PathBuf,
    pool: rayon::ThreadPool,
    verbose: bool,
}

impl Ctx {
    fn new(cli: &Cli) -> Result<Self> {
        let mut cfg = match &cli.config {
            Some(path) => RunConfig::from_path(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = cli.seed {
            cfg.seeds = vec![seed];
        }
        if let Some(SeedRange(a, b)) = cli.seeds {
            cfg.seeds = (a..b).collect();
        }
        if let Some(out) = &cli.out {
            cfg.output_dir.clone_from(out);
        }
        cfg.validate()?;
        let workers = match cfg.experiment.workers {
            0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
            n => n,
        };
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| CliError::Usage(format!("cannot start {workers} worker threads: {e}")))?;
        Ok(Self {
            hash: cfg.hash(),
            out: cfg.output_dir.clone(),
            cfg,
            pool,
            verbose: cli.verbose,
        })
    }

    /// Creates the output directory and drops the resolved config in it.
    fn prepare(&self) -> Result<()> {
        std::fs::create_dir_all(&self.out)?;
        let text = format!("# config hash: {}\n{}", self.hash, self.cfg.to_toml()?);
        std::fs::write(self.out.join("resolved_config.toml"), text)?;
        Ok(())
    }

    fn run_id(&self, seed: Option<u64>) -> String {
        match seed {
            Some(s) => format!("{}-s{s}", self.hash),
            None => self.hash.clone(),
        }
    }

    fn log(&self, msg: impl AsRef<str>) {
        if self.verbose {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn grids(&self) -> Result<RsrpGridSet> {
        Ok(generate_grids(&self.cfg.scenario)?)
    }

    fn dataset(&self, grids: &RsrpGridSet) -> Result<MdtDataset> {
        // Tilt index 0 is the deployed configuration for every cell.
        let baseline = vec![0; grids.n_cells()];
        Ok(build_dataset(grids, &baseline, &self.cfg.dataset)?)
    }

    fn env_with(&self, weights: Option<WeightMode>) -> Result<NetworkEnv> {
        let grids = self.grids()?;
        let dataset = self.dataset(&grids)?;
        let mut env_cfg = self.cfg.env.clone();
        if let Some(w) = weights {
            env_cfg.weights = w;
        }
        Ok(NetworkEnv::new(
            Arc::new(grids),
            Arc::new(dataset),
            env_cfg,
        )?)
    }

    fn checkpoint_path(&self, seed: u64) -> PathBuf {
        self.out
            .join("checkpoints")
            .join(format!("seed_{seed}.ckpt"))
    }

    /// Either the explicit checkpoint or one per configured seed.
    fn networks(&self, explicit: Option<&Path>) -> Result<Vec<(u64, QNetwork)>> {
        let paths: Vec<(u64, PathBuf)> = match explicit {
            Some(p) => vec![(self.cfg.seeds[0], p.to_path_buf())],
            None => self
                .cfg
                .seeds
                .iter()
                .map(|&s| (s, self.checkpoint_path(s)))
                .collect(),
        };
        paths
            .into_iter()
            .map(|(seed, path)| {
                if !path.exists() {
                    return Err(CliError::Usage(format!(
                        "checkpoint {} not found; run `train` first or pass --checkpoint",
                        path.display()
                    )));
                }
                Ok((seed, read_checkpoint(&path)?.0))
            })
            .collect()
    }
}

#[derive(Serialize)]
struct GenerateSummary {
    config_hash: String,
    cells: usize,
    targets: usize,
    tilts: usize,
    grid: (usize, usize),
    clamped_pixels: usize,
}

fn generate(ctx: &Ctx) -> Result<()> {
    ctx.prepare()?;
    let grids = ctx.grids()?;
    let path = ctx.out.join("grids.bin");
    grids.write_to(&path)?;
    write_summary(
        &ctx.out.join("generate_summary.json"),
        &GenerateSummary {
            config_hash: ctx.hash.clone(),
            cells: grids.n_cells(),
            targets: grids.n_targets(),
            tilts: grids.n_tilts(),
            grid: grids.shape(),
            clamped_pixels: grids.clamped_pixels(),
        },
    )?;
    println!("wrote {}", path.display());
    Ok(())
}

#[derive(Serialize)]
struct SynthesizeSummary {
    config_hash: String,
    retained_pixels: usize,
    discarded_fraction: f64,
    total_act_ues: f64,
    baseline_step_reward: f64,
}

fn synthesize(ctx: &Ctx) -> Result<()> {
    ctx.prepare()?;
    let grids = ctx.grids()?;
    let dataset = ctx.dataset(&grids)?;
    let path = ctx.out.join("dataset.jsonl");
    dataset.write_jsonl(&path)?;
    let env = NetworkEnv::new(
        Arc::new(grids),
        Arc::new(dataset.clone()),
        ctx.cfg.env.clone(),
    )?;
    let summary = SynthesizeSummary {
        config_hash: ctx.hash.clone(),
        retained_pixels: dataset.pixels.len(),
        discarded_fraction: dataset.discarded_fraction,
        total_act_ues: dataset.kpis.total_act_ues(),
        baseline_step_reward: env.state_reward()?.base_reward,
    };
    write_summary(&ctx.out.join("synthesize_summary.json"), &summary)?;
    println!(
        "wrote {} ({} pixels, baseline step reward {:.4})",
        path.display(),
        summary.retained_pixels,
        summary.baseline_step_reward
    );
    Ok(())
}

#[derive(Serialize)]
struct SeedSummary {
    seed: u64,
    mean_reward: f64,
    compliant_fraction: f64,
    checkpoint: Option<PathBuf>,
}

#[derive(Serialize)]
struct EvalSummary {
    config_hash: String,
    phase: String,
    eval_seeds: Vec<u64>,
    per_seed: Vec<SeedSummary>,
    mean_reward: f64,
    iqr: f64,
}

fn summarize_evals(
    ctx: &Ctx,
    phase: &str,
    results: &[(u64, Vec<EpisodeEval>, Option<PathBuf>)],
) -> EvalSummary {
    let per_seed: Vec<SeedSummary> = results
        .iter()
        .map(|(seed, evals, ckpt)| {
            let rewards: Vec<f64> = evals.iter().map(|e| e.reward).collect();
            SeedSummary {
                seed: *seed,
                mean_reward: mean(&rewards),
                compliant_fraction: evals.iter().filter(|e| e.compliant).count() as f64
                    / evals.len() as f64,
                checkpoint: ckpt.clone(),
            }
        })
        .collect();
    let all: Vec<f64> = results
        .iter()
        .flat_map(|(_, e, _)| e.iter().map(|x| x.reward))
        .collect();
    EvalSummary {
        config_hash: ctx.hash.clone(),
        phase: phase.to_string(),
        eval_seeds: ctx.cfg.experiment.eval_seed_list(),
        per_seed,
        mean_reward: mean(&all),
        iqr: iqr(&all),
    }
}

fn train(ctx: &Ctx, eps_greedy: bool) -> Result<()> {
    ctx.prepare()?;
    std::fs::create_dir_all(ctx.out.join("checkpoints"))?;
    let env = ctx.env_with(None)?;
    let mut agent_cfg = ctx.cfg.agent.clone();
    if eps_greedy {
        agent_cfg.exploration = Exploration::EpsGreedy;
    }
    let eval_seeds = ctx.cfg.experiment.eval_seed_list();
    let outcomes: Vec<Result<_>> = ctx.pool.install(|| {
        ctx.cfg
            .seeds
            .par_iter()
            .map(|&seed| {
                let mut env = env.clone();
                let mut agent = Agent::new(&env, agent_cfg.clone(), seed)?;
                let episodes = agent_cfg.train_episodes;
                let trained = agent.train(&mut env, |r| {
                    if (r.episode + 1) % 500 == 0 || r.episode + 1 == episodes {
                        ctx.log(format!(
                            "seed {seed}: episode {} reward {:.3}",
                            r.episode + 1,
                            r.reward
                        ));
                    }
                });
                let ckpt = ctx.checkpoint_path(seed);
                let log = match trained {
                    Ok(log) => log,
                    Err(e @ tiltlab::Error::NonFinite { .. }) => {
                        let dump = ckpt.with_extension("nonfinite.ckpt");
                        write_checkpoint(
                            &dump,
                            agent.network(),
                            &format!("{}-s{seed} nonfinite", ctx.hash),
                        )?;
                        return Err(CliError::Numerical {
                            source: e,
                            checkpoint: dump,
                        });
                    }
                    Err(e) => return Err(e.into()),
                };
                write_checkpoint(&ckpt, agent.network(), &ctx.run_id(Some(seed)))?;
                let evals = evaluate_greedy(&env, agent.network(), &eval_seeds)?;
                Ok((seed, log, evals, ckpt))
            })
            .collect()
    });
    let mut results = Vec::new();
    for r in outcomes {
        results.push(r?);
    }

    let mut writer = MetricsWriter::create(&ctx.out.join("train_metrics.csv"), &ctx.hash)?;
    for (seed, log, evals, _) in &results {
        let mut w = MetricsWriter::create(
            &ctx.out.join(format!("train_seed_{seed}.csv")),
            &ctx.run_id(Some(*seed)),
        )?;
        w.training_log("train", log)?;
        w.evaluations("eval", evals)?;
        w.finish()?;
        writer.evaluations(&format!("eval_seed_{seed}"), evals)?;
    }
    writer.finish()?;
    // Checkpoint paths are recorded relative to the output directory so a
    // summary does not depend on where the run was written.
    let evals: Vec<_> = results
        .into_iter()
        .map(|(s, _, e, c)| {
            let rel = c.strip_prefix(&ctx.out).map(Path::to_path_buf).unwrap_or(c);
            (s, e, Some(rel))
        })
        .collect();
    let summary = summarize_evals(ctx, "train", &evals);
    write_summary(&ctx.out.join("train_summary.json"), &summary)?;
    for s in &summary.per_seed {
        println!(
            "seed {}: greedy mean reward {:.4}, compliant {:.2}",
            s.seed, s.mean_reward, s.compliant_fraction
        );
    }
    Ok(())
}

fn eval(ctx: &Ctx, checkpoint: Option<&Path>) -> Result<()> {
    let nets = ctx.networks(checkpoint)?;
    ctx.prepare()?;
    let env = ctx.env_with(None)?;
    let seeds = ctx.cfg.experiment.eval_seed_list();
    let results: Vec<_> = ctx.pool.install(|| {
        nets.iter()
            .map(|(seed, net)| Ok((*seed, evaluate_greedy(&env, net, &seeds)?, None)))
            .collect::<Result<_>>()
    })?;
    let mut writer = MetricsWriter::create(&ctx.out.join("eval_metrics.csv"), &ctx.hash)?;
    for (seed, evals, _) in &results {
        writer.evaluations(&format!("eval_seed_{seed}"), evals)?;
    }
    writer.finish()?;
    let summary = summarize_evals(ctx, "eval", &results);
    write_summary(&ctx.out.join("eval_summary.json"), &summary)?;
    println!(
        "mean greedy reward {:.4} (IQR {:.4})",
        summary.mean_reward, summary.iqr
    );
    Ok(())
}

#[derive(Serialize)]
struct SearchSummary {
    config_hash: String,
    method: String,
    eval_seeds: Vec<u64>,
    rewards: Vec<f64>,
    actions: Vec<Vec<usize>>,
    mean_reward: f64,
    iqr: f64,
    nodes_expanded: usize,
}

fn search(
    ctx: &Ctx,
    method: &str,
    f: fn(&NetworkEnv) -> tiltlab::Result<SearchResult>,
) -> Result<()> {
    ctx.prepare()?;
    let env = ctx.env_with(None)?;
    let seeds = ctx.cfg.experiment.eval_seed_list();
    let results: Vec<SearchResult> = ctx.pool.install(|| {
        seeds
            .par_iter()
            .map(|&s| {
                let mut e = env.clone();
                e.reset(s)?;
                f(&e)
            })
            .collect::<tiltlab::Result<_>>()
    })?;
    let mut writer =
        MetricsWriter::create(&ctx.out.join(format!("{method}_metrics.csv")), &ctx.hash)?;
    for (seed, r) in seeds.iter().zip(&results) {
        writer.search(method, *seed, r)?;
    }
    writer.finish()?;
    let rewards: Vec<f64> = results.iter().map(|r| r.episode_reward).collect();
    let summary = SearchSummary {
        config_hash: ctx.hash.clone(),
        method: method.to_string(),
        actions: results
            .iter()
            .map(|r| r.actions.iter().map(|a| a.flat(env.n_tilts())).collect())
            .collect(),
        mean_reward: mean(&rewards),
        iqr: iqr(&rewards),
        nodes_expanded: results.iter().map(|r| r.nodes_expanded).sum(),
        eval_seeds: seeds,
        rewards,
    };
    write_summary(&ctx.out.join(format!("{method}_summary.json")), &summary)?;
    println!(
        "{method}: mean episode reward {:.6} over {} seeds",
        summary.mean_reward,
        summary.rewards.len()
    );
    Ok(())
}

#[derive(Serialize)]
struct StressSummary {
    config_hash: String,
    d_ranges: Vec<f64>,
    variances: Vec<f64>,
    means: Vec<f64>,
    spearman: f64,
}

fn stress(ctx: &Ctx, checkpoint: Option<&Path>) -> Result<()> {
    let nets = ctx.networks(checkpoint)?;
    ctx.prepare()?;
    let seeds = ctx.cfg.experiment.eval_seed_list();
    let d_ranges = ctx.cfg.experiment.stress_d_ranges.clone();
    let mut writer = MetricsWriter::create(&ctx.out.join("stress_metrics.csv"), &ctx.hash)?;
    let (mut variances, mut means) = (Vec::new(), Vec::new());
    for &d_range in &d_ranges {
        let env = ctx.env_with(Some(WeightMode::Perturbed { d_range }))?;
        let mut rewards = Vec::new();
        for (seed, net) in &nets {
            let evals = ctx.pool.install(|| evaluate_greedy(&env, net, &seeds))?;
            writer.evaluations(&format!("stress_d{d_range}_seed_{seed}"), &evals)?;
            rewards.extend(evals.iter().map(|e| e.reward));
        }
        ctx.log(format!(
            "d_range {d_range}: variance {:.4}",
            variance(&rewards)
        ));
        variances.push(variance(&rewards));
        means.push(mean(&rewards));
    }
    writer.finish()?;
    let summary = StressSummary {
        config_hash: ctx.hash.clone(),
        spearman: spearman(&d_ranges, &variances),
        d_ranges,
        variances,
        means,
    };
    write_summary(&ctx.out.join("stress_summary.json"), &summary)?;
    for ((d, v), m) in summary
        .d_ranges
        .iter()
        .zip(&summary.variances)
        .zip(&summary.means)
    {
        println!("d_range {d:<5} mean {m:.4} variance {v:.6}");
    }
    println!("spearman(d_range, variance) = {:.3}", summary.spearman);
    Ok(())
}

fn tables(ctx: &Ctx, cells: Option<usize>) -> Result<()> {
    let c = cells.unwrap_or_else(|| ctx.cfg.scenario.n_targets());
    if c == 0 {
        return Err(CliError::Usage("--cells must be positive".into()));
    }
    let p = ctx.cfg.agent.eta_target;
    println!("CQI  SINR (dB)  modulation  code rate  efficiency");
    for row in ctx.cfg.env.reward.cqi.rows() {
        println!(
            "{:>3}  {:>9.1}  {:<10}  {:>9.3}  {:>10.4}",
            row.cqi, row.sinr_threshold, row.modulation, row.code_rate, row.spectral_efficiency
        );
    }
    println!();
    println!("eta schedule, C = {c}, target P = {p}");
    println!("step  eta");
    for k in 1..=c {
        println!("{k:>4}  {:.3}", eta_for_step(k, c, p));
    }
    println!();
    println!("random-episode success probability");
    println!("   C  probability  1/probability");
    for k in 1..=c {
        let ps = episode_success_probability(k);
        println!("{k:>4}  {ps:>11.6}  {:>13.1}", 1.0 / ps);
    }
    let eps = EpsSchedule::depthwise(&ctx.cfg.agent.eps, c, ctx.cfg.agent.train_episodes)?;
    println!();
    println!("depth-wise epsilon decay constants (episodes)");
    for (d, tau) in eps.taus().iter().enumerate() {
        println!("{:>4}  {tau:.1}", d + 1);
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let ctx = Ctx::new(cli)?;
    ctx.log(format!(
        "config hash {}; output in {}",
        ctx.hash,
        ctx.out.display()
    ));
    match &cli.command {
        Command::Generate => generate(&ctx),
        Command::Synthesize => synthesize(&ctx),
        Command::Train { eps_greedy } => train(&ctx, *eps_greedy),
        Command::Eval { checkpoint } => eval(&ctx, checkpoint.as_deref()),
        Command::Bfs => search(&ctx, "bfs", best_first_search),
        Command::Oracle => search(&ctx, "oracle", brute_force_optimum),
        Command::Stress { checkpoint } => stress(&ctx, checkpoint.as_deref()),
        Command::Tables { cells } => tables(&ctx, *cells),
    }
}

fn main() -> ExitCode {
    // Usage errors exit with 1; 2 is reserved for numerical failures.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = if cli.verbose {
        tracing_subscriber::filter::LevelFilter::DEBUG
    } else {
        tracing_subscriber::filter::LevelFilter::WARN
    };
    tracing_subscriber::fmt()
        .with_max_level(level)
        .with_writer(std::io::stderr)
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
