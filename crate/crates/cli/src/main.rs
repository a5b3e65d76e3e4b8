use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use trajlab::env::{Env, EnvConfig};
use trajlab::harness::{attention_heatmap, evaluate_policy, BoxPusherOracle, Controller, CouchOracle, EvalOptions};
use trajlab::io::{read_text, trajectory_from_str, trajectory_to_string, write_text, EpisodeRecord};
use trajlab::plans::PlanConfig;
use trajlab::policy::Policy;
use trajlab::reward::{MatchTracker, RewardParams};
use trajlab::trainer::{train, RunConfig};
use trajlab::{Dissimilarity, EnvKind, Error};

#[derive(Parser)]
#[command(name = "trajlab", version, about = "Train and run plan-conditioned control policies")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a policy from a TOML run config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `out_dir` from the config.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Print the default run config for an environment.
    Config {
        #[arg(long, default_value = "boxpusher")]
        env: String,
    },
    /// Deterministic evaluation of a checkpoint.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        env: String,
        #[arg(long, default_value_t = 128)]
        episodes: usize,
        /// Replan on final-state match and on timeout.
        #[arg(long)]
        replan: bool,
        #[arg(long, default_value_t = 50)]
        timeout: usize,
        #[arg(long, default_value_t = 3)]
        max_replans: usize,
        /// Prompt skip; defaults to the environment's value.
        #[arg(long)]
        p: Option<usize>,
        #[arg(long)]
        max_steps: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the full report as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Sample an initial environment state and write its snapshot.
    Snapshot {
        #[arg(long)]
        env: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Plan from an environment snapshot.
    Plan {
        #[arg(long)]
        snapshot: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        variant_seed: u64,
    },
    /// Execute a trajectory with the scripted controller from a snapshot.
    Replay {
        #[arg(long)]
        traj: PathBuf,
        #[arg(long)]
        snapshot: PathBuf,
        /// Save the executed episode.
        #[arg(long)]
        episode_out: Option<PathBuf>,
        #[arg(long)]
        max_steps: Option<usize>,
    },
    /// Attention heatmap of a recorded episode; writes a grid and a PPM image.
    Attn {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        episode: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        p: Option<usize>,
    },
    /// Per-step reward trace of a recorded episode.
    Trace {
        #[arg(long)]
        episode: PathBuf,
    },
}

enum Outcome {
    Ok,
    TaskFailed,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::TaskFailed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_configuration() { 2 } else { 1 })
        }
    }
}

fn run(cmd: Cmd) -> trajlab::Result<Outcome> {
    match cmd {
        Cmd::Train { config, out_dir, threads } => {
            let mut cfg = RunConfig::load(&config)?;
            if out_dir.is_some() {
                cfg.out_dir = out_dir;
            }
            if let Some(t) = threads {
                cfg.threads = t;
            }
            let out = train(&cfg, |e| {
                info!(
                    "epoch {} steps {} success {:.3} return {:.3} kl {:.4} updates {}",
                    e.epoch, e.env_steps, e.success_rate, e.mean_return, e.kl, e.updates
                )
            })?;
            if let Some(last) = out.log.last() {
                println!("{}", last.to_json_line());
            }
            Ok(Outcome::Ok)
        }
        Cmd::Config { env } => {
            let kind = EnvConfig::from_tag(&env)?.kind();
            let mut cfg = RunConfig::for_env(kind);
            cfg.env = EnvConfig::from_tag(&env)?;
            print!("{}", cfg.to_toml());
            Ok(Outcome::Ok)
        }
        Cmd::Eval {
            ckpt,
            env,
            episodes,
            replan,
            timeout,
            max_replans,
            p,
            max_steps,
            seed,
            report,
        } => {
            let policy = Policy::load(&ckpt, None)?;
            let mut env_cfg = EnvConfig::from_tag(&env)?;
            if let Some(m) = max_steps {
                env_cfg = env_cfg.with_max_episode_len(m);
            }
            let skip = p.unwrap_or(PlanConfig::for_env(env_cfg.kind()).p);
            let opts = if replan {
                EvalOptions::replanning(timeout, max_replans)
            } else {
                EvalOptions::default()
            };
            let rep = evaluate_policy(&policy, &env_cfg, skip, episodes, seed, &opts)?;
            println!(
                "env {} episodes {} success_rate {:.4} stderr {:.4}",
                env, rep.n_episodes, rep.success_rate, rep.stderr
            );
            if let Some(path) = report {
                write_text(&path, &serde_json::to_string_pretty(&rep).expect("reports serialize"))?;
            }
            Ok(Outcome::Ok)
        }
        Cmd::Snapshot { env, seed, out } => {
            let cfg = EnvConfig::from_tag(&env)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            write_text(&out, &Env::reset(&cfg, &mut rng)?.to_snapshot())?;
            Ok(Outcome::Ok)
        }
        Cmd::Plan { snapshot, out, variant_seed } => {
            let env = Env::from_snapshot(&read_text(&snapshot)?)?;
            let cfg = PlanConfig::for_env(env.kind());
            let mut rng = ChaCha8Rng::seed_from_u64(variant_seed);
            match env.plan(cfg.epsilon_spacing, &mut rng) {
                Ok(traj) => {
                    write_text(&out, &trajectory_to_string(&traj, env.kind()))?;
                    println!("wrote {} states to {}", traj.len(), out.display());
                    Ok(Outcome::Ok)
                }
                Err(e @ Error::Planning(_)) => {
                    eprintln!("{e}");
                    Ok(Outcome::TaskFailed)
                }
                Err(e) => Err(e),
            }
        }
        Cmd::Replay {
            traj,
            snapshot,
            episode_out,
            max_steps,
        } => replay(&traj, &snapshot, episode_out.as_deref(), max_steps),
        Cmd::Attn { ckpt, episode, out, p } => {
            let policy = Policy::load(&ckpt, None)?;
            let record = EpisodeRecord::load(&episode)?;
            let plan = PlanConfig::for_env(record.env);
            let map = attention_heatmap(&policy, &record, p.unwrap_or(plan.p), plan.epsilon_spacing)?;
            let grid = if out.extension().is_some_and(|e| e == "ppm") {
                out.with_extension("txt")
            } else {
                out.clone()
            };
            write_text(&grid, &map.to_grid_string())?;
            let maze = match record.env {
                EnvKind::Couch => Env::from_snapshot(&record.snapshot)?.maze().cloned(),
                EnvKind::BoxPusher => None,
            };
            let img = out.with_extension("ppm");
            std::fs::write(&img, map.to_ppm(maze.as_deref())).map_err(|e| Error::io(&img, e))?;
            println!("wrote {} and {}", grid.display(), img.display());
            Ok(Outcome::Ok)
        }
        Cmd::Trace { episode } => trace(&episode),
    }
}

/// Follows `traj` from the snapshot state; Box Pusher runs use the plan
/// itself, couch runs the maze-aware controller.
fn replay(traj: &Path, snapshot: &Path, episode_out: Option<&Path>, max_steps: Option<usize>) -> trajlab::Result<Outcome> {
    let mut env = Env::from_snapshot(&read_text(snapshot)?)?;
    let (kind, plan) = trajectory_from_str(&read_text(traj)?)?;
    if kind != env.kind() {
        return Err(Error::config(format!(
            "trajectory is for `{}`, snapshot is `{}`",
            kind.tag(),
            env.kind().tag()
        )));
    }
    let cfg = PlanConfig::for_env(kind);
    let reward = RewardParams::for_env(kind);
    let plan = Arc::new(plan);
    let mut tracker = MatchTracker::new(plan.clone(), Dissimilarity::for_env(kind), cfg.epsilon_spacing)?;
    let mut controller: Box<dyn Controller> = match kind {
        EnvKind::BoxPusher => Box::new(BoxPusherOracle::default()),
        EnvKind::Couch => Box::new(CouchOracle::default()),
    };
    controller.on_plan(&env, &plan)?;
    let mut record = EpisodeRecord {
        env: kind,
        snapshot: env.to_snapshot(),
        plans: vec![trajlab::io::PlanSegment {
            start_step: 0,
            states: plan.states().iter().map(|s| s.0.clone()).collect(),
        }],
        observations: vec![env.observe().0],
        actions: Vec::new(),
        success: false,
        replans: 0,
    };
    let limit = max_steps.unwrap_or(env.cfg.max_episode_len());
    let mut total = 0.0;
    for _ in 0..limit {
        let a = controller.act(&env, &tracker)?;
        env.step(&a);
        let obs = env.observe();
        total += tracker.step(&obs, &reward)?.reward;
        record.actions.push(a.0);
        record.observations.push(obs.0);
        if env.success() && tracker.is_complete() {
            break;
        }
    }
    record.success = env.success();
    println!(
        "steps {} j_final {}/{} traj_return {:.4} success {}",
        record.actions.len(),
        tracker.j_prev(),
        tracker.n(),
        total,
        record.success
    );
    if let Some(path) = episode_out {
        record.save(path)?;
    }
    Ok(if record.success { Outcome::Ok } else { Outcome::TaskFailed })
}

fn trace(episode: &Path) -> trajlab::Result<Outcome> {
    let record = EpisodeRecord::load(episode)?;
    let cfg = PlanConfig::for_env(record.env);
    let reward = RewardParams::for_env(record.env);
    let lows = record.low_states();
    let mut tracker: Option<(usize, MatchTracker)> = None;
    let mut sum = 0.0;
    println!("step j_t traj_reward running_sum");
    for (t, low) in lows.iter().enumerate().skip(1) {
        let plan = record.plan_at(t - 1)?;
        let seg = record.plans.iter().rev().find(|p| p.start_step < t).map_or(0, |p| p.start_step);
        if tracker.as_ref().is_none_or(|(s, _)| *s != seg) {
            tracker = Some((seg, MatchTracker::new(Arc::new(plan), Dissimilarity::for_env(record.env), cfg.epsilon_spacing)?));
        }
        let tr = &mut tracker.as_mut().expect("set above").1;
        let out = tr.step(low, &reward)?;
        sum += out.reward;
        println!("{} {} {:.6} {:.6}", t, out.j, out.reward, sum);
    }
    Ok(Outcome::Ok)
}
