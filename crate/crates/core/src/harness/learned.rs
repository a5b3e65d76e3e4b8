//! Learned-policy control, attention maps, prompt-granularity sweeps and
//! the teleport replanning experiment.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{evaluate, run_with_replanning, teleport_box, BoxPusherOracle, Controller, EvalOptions, EvalReport, RunOptions};
use crate::couch::Maze;
use crate::env::{Env, EnvConfig};
use crate::error::{Error, Result};
use crate::io::EpisodeRecord;
use crate::plans::{chunk_periodic, ReplanTrigger};
use crate::policy::{fit_prompt, scale_action, ActMode, BackboneKind, ObsHistory, Policy, PreparedPrompt, PromptInput};
use crate::reward::{MatchTracker, RewardParams};
use crate::state::{AbstractTrajectory, ActionVec, Dissimilarity, EnvKind, LowState};
use crate::trainer::{train, RunConfig};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn prompt_input(traj: &AbstractTrajectory, p: usize, l_max: usize) -> Result<PromptInput> {
    let prompt = fit_prompt(traj, p, l_max)?;
    Ok(PromptInput {
        states: prompt.states.iter().flat_map(|s| s.0.iter().copied()).collect(),
        indices: prompt.indices,
    })
}

/// Runs a trained policy: mean actions by default, the prompt re-prepared
/// whenever the plan changes.
pub struct PolicyController<'a> {
    policy: &'a Policy,
    prompt_skip: usize,
    mode: ActMode,
    rng: ChaCha8Rng,
    history: Option<ObsHistory>,
    prepared: Option<PreparedPrompt>,
}

impl<'a> PolicyController<'a> {
    pub fn new(policy: &'a Policy, prompt_skip: usize) -> Self {
        PolicyController {
            policy,
            prompt_skip,
            mode: ActMode::Mean,
            rng: ChaCha8Rng::seed_from_u64(0),
            history: None,
            prepared: None,
        }
    }

    pub fn sampling(mut self, seed: u64) -> Self {
        self.mode = ActMode::Sample;
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self
    }
}

impl Controller for PolicyController<'_> {
    fn on_plan(&mut self, _env: &Env, plan: &Arc<AbstractTrajectory>) -> Result<()> {
        let input = prompt_input(plan, self.prompt_skip, self.policy.cfg.l_max)?;
        self.prepared = Some(self.policy.prepare(input));
        Ok(())
    }

    fn act(&mut self, env: &Env, tracker: &MatchTracker) -> Result<ActionVec> {
        let obs = env.observe();
        match self.history.as_mut() {
            Some(h) => h.push(obs),
            None => self.history = Some(ObsHistory::new(self.policy.cfg.k, obs)),
        }
        let history = self.history.as_ref().expect("set above").to_vec();
        let prepared = self.prepared.as_ref().ok_or_else(|| Error::Planning("policy acted before a plan".into()))?;
        let q = self.policy.query(0, &history, self.policy.goal_for(tracker))?;
        let (mean, _) = self.policy.infer(&[prepared], vec![q], false);
        let a = match self.mode {
            ActMode::Mean => mean,
            ActMode::Sample => crate::policy::ActionDistribution {
                mean,
                log_std: self.policy.log_std().to_vec(),
            }
            .sample(&mut self.rng),
        };
        Ok(scale_action(&a, &env.cfg.action_bounds()))
    }
}

/// Deterministic evaluation of a policy.
pub fn evaluate_policy(
    policy: &Policy,
    env_cfg: &EnvConfig,
    prompt_skip: usize,
    n_episodes: usize,
    seed: u64,
    eval: &EvalOptions,
) -> Result<EvalReport> {
    if policy.cfg.low_dim != env_cfg.kind().low_dim() {
        return Err(Error::config(format!(
            "checkpoint expects low dim {}, environment `{}` has {}",
            policy.cfg.low_dim,
            env_cfg.kind().tag(),
            env_cfg.kind().low_dim()
        )));
    }
    evaluate(|| PolicyController::new(policy, prompt_skip), env_cfg, n_episodes, seed, eval)
}

/// Policy inputs seen at each recorded step, rebuilt the way the episode
/// runner chunks and switches plans.
pub struct ReplayStep {
    pub prompt: PromptInput,
    /// Plan chunk the prompt was drawn from.
    pub chunk: Arc<AbstractTrajectory>,
    pub history: Vec<LowState>,
    pub goal: Vec<f64>,
}

pub fn replay_inputs(record: &EpisodeRecord, policy: &Policy, prompt_skip: usize, epsilon: f64) -> Result<Vec<ReplayStep>> {
    let d = Dissimilarity::for_env(record.env);
    let lows = record.low_states();
    if lows.len() != record.actions.len() + 1 {
        return Err(Error::config("episode record needs one more observation than actions"));
    }
    let reward = RewardParams::for_env(record.env);
    let mut out = Vec::with_capacity(record.actions.len());
    let mut history = ObsHistory::new(policy.cfg.k, lows[0].clone());
    let mut segment_start = usize::MAX;
    let mut chunks: Vec<Arc<AbstractTrajectory>> = Vec::new();
    let mut tracker: Option<MatchTracker> = None;
    for t in 0..record.actions.len() {
        if t > 0 {
            history.push(lows[t].clone());
        }
        let seg_start = record.plans.iter().rev().find(|p| p.start_step <= t).map(|p| p.start_step);
        if seg_start != Some(segment_start) {
            segment_start = seg_start.ok_or_else(|| Error::config("episode record has no plan"))?;
            chunks = chunk_periodic(&record.plan_at(t)?, epsilon).into_iter().map(Arc::new).collect();
            chunks.reverse();
            let first = chunks.pop().expect("chunking keeps at least one chunk");
            tracker = Some(MatchTracker::new(first, d.clone(), epsilon)?);
        }
        let tr = tracker.as_mut().expect("set with the segment");
        let chunk = tr.trajectory().clone();
        out.push(ReplayStep {
            prompt: prompt_input(&chunk, prompt_skip, policy.cfg.l_max)?,
            chunk,
            history: history.to_vec(),
            goal: policy.goal_for(tr),
        });
        tr.step(&lows[t + 1], &reward)?;
        if tr.is_complete() {
            if let Some(next) = chunks.pop() {
                *tr = MatchTracker::new(next, d.clone(), epsilon)?;
            }
        }
    }
    Ok(out)
}

/// Per-step attention over prompt positions, optionally binned to maze cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionMap {
    /// `[step][prompt position]`, each row min-max scaled to `[0, 1]`.
    pub steps: Vec<Vec<f64>>,
    /// High states of the prompt in force at each step.
    pub positions: Vec<Vec<Vec<f64>>>,
    /// Couch only: `[step][(cell, value)]`, scaled per step.
    pub cells: Option<Vec<Vec<([i32; 2], f64)>>>,
}

/// Min-max scaling; a constant row maps to all ones.
pub fn min_max_scale(v: &[f64]) -> Vec<f64> {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 1e-15 {
        return vec![1.0; v.len()];
    }
    v.iter().map(|x| (x - lo) / (hi - lo)).collect()
}

/// Mean final-token attention over layers and heads, restricted to the
/// first `n_prompt` keys.
pub fn mean_prompt_attention(att: &[Vec<Vec<f64>>], n_prompt: usize) -> Vec<f64> {
    let mut acc = vec![0.0; n_prompt];
    let mut count: f64 = 0.0;
    for layer in att {
        for head in layer {
            for (a, w) in acc.iter_mut().zip(head) {
                *a += w;
            }
            count += 1.0;
        }
    }
    acc.iter().map(|a| a / count.max(1.0)).collect()
}

/// Bins per-position values into the maze cells holding each position.
pub fn bin_to_cells(values: &[f64], positions: &[Vec<f64>]) -> Vec<([i32; 2], f64)> {
    let mut cells: BTreeMap<[i32; 2], f64> = BTreeMap::new();
    for (v, p) in values.iter().zip(positions) {
        *cells.entry(Maze::cell_of([p[0], p[1]])).or_insert(0.0) += v;
    }
    let scaled = min_max_scale(&cells.values().copied().collect::<Vec<_>>());
    cells.keys().copied().zip(scaled).collect()
}

pub fn attention_heatmap(policy: &Policy, record: &EpisodeRecord, prompt_skip: usize, epsilon: f64) -> Result<AttentionMap> {
    if policy.cfg.backbone != BackboneKind::CausalAttention {
        return Err(Error::Unsupported(format!(
            "attention maps need a causal-attention policy, checkpoint has {:?}",
            policy.cfg.backbone
        )));
    }
    let mut map = AttentionMap {
        steps: Vec::new(),
        positions: Vec::new(),
        cells: (record.env == EnvKind::Couch).then(Vec::new),
    };
    for step in replay_inputs(record, policy, prompt_skip, epsilon)? {
        let out = policy.forward(&step.prompt, &step.history, step.goal)?;
        let att = out.attention.ok_or_else(|| Error::Unsupported("network returned no attention".into()))?;
        let n = step.prompt.len();
        let row = min_max_scale(&mean_prompt_attention(&att, n));
        let positions: Vec<Vec<f64>> = step.prompt.states.chunks(policy.cfg.high_dim).map(|s| s.to_vec()).collect();
        if let Some(cells) = map.cells.as_mut() {
            cells.push(bin_to_cells(&row, &positions));
        }
        map.steps.push(row);
        map.positions.push(positions);
    }
    Ok(map)
}

impl AttentionMap {
    /// Whitespace-separated grid: one row per step, one column per prompt
    /// position (rows padded with `nan` to the widest prompt).
    pub fn to_grid_string(&self) -> String {
        let width = self.steps.iter().map(Vec::len).max().unwrap_or(0);
        let mut s = String::new();
        for row in &self.steps {
            let cols: Vec<String> = (0..width)
                .map(|i| row.get(i).map_or_else(|| "nan".to_string(), |v| format!("{v:.6}")))
                .collect();
            s.push_str(&cols.join(" "));
            s.push('\n');
        }
        s
    }

    /// Binary PPM of the step × position grid; for couch episodes with a
    /// maze, the mean cell attention drawn over the maze with walls in grey.
    pub fn to_ppm(&self, maze: Option<&Maze>) -> Vec<u8> {
        match (maze, &self.cells) {
            (Some(m), Some(cells)) => {
                let mut sum: BTreeMap<[i32; 2], f64> = BTreeMap::new();
                for step in cells {
                    for (c, v) in step {
                        *sum.entry(*c).or_insert(0.0) += v / cells.len() as f64;
                    }
                }
                let scale = 8;
                let (w, h) = (m.width * scale, m.height * scale);
                let mut px = Vec::with_capacity(w * h);
                for y in (0..h).rev() {
                    for x in 0..w {
                        let c = [(x / scale) as i32, (y / scale) as i32];
                        px.push(if m.is_wall(c) {
                            [96, 96, 96]
                        } else {
                            heat(sum.get(&c).copied().unwrap_or(0.0))
                        });
                    }
                }
                ppm(w, h, &px)
            }
            _ => {
                let width = self.steps.iter().map(Vec::len).max().unwrap_or(0).max(1);
                let scale = 4;
                let (w, h) = (width * scale, self.steps.len().max(1) * scale);
                let mut px = Vec::with_capacity(w * h);
                for y in 0..h {
                    for x in 0..w {
                        let v = self.steps.get(y / scale).and_then(|r| r.get(x / scale)).copied();
                        px.push(v.map_or([0, 0, 0], heat));
                    }
                }
                ppm(w, h, &px)
            }
        }
    }
}

fn heat(v: f64) -> [u8; 3] {
    let v = v.clamp(0.0, 1.0);
    let r = (255.0 * (1.5 * v).min(1.0)) as u8;
    let g = (255.0 * (2.0 * v - 0.5).clamp(0.0, 1.0)) as u8;
    let b = (255.0 * (4.0 * v - 3.0).clamp(0.0, 1.0)) as u8;
    [r, g, b]
}

fn ppm(w: usize, h: usize, px: &[[u8; 3]]) -> Vec<u8> {
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    for p in px {
        out.extend_from_slice(p);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub p: usize,
    pub report: EvalReport,
}

/// Trains and evaluates one run per prompt skip `p`; only the prompt
/// changes, the reward still follows the full plan.
pub fn granularity_sweep(base: &RunConfig, p_values: &[usize], n_eval: usize, eval_seed: u64) -> Result<Vec<SweepRow>> {
    if p_values.is_empty() {
        return Err(Error::config("granularity sweep needs at least one p"));
    }
    p_values
        .iter()
        .map(|&p| {
            let mut cfg = base.clone();
            cfg.plan.p = p;
            if let Some(dir) = &base.out_dir {
                cfg.out_dir = Some(dir.join(format!("p{p}")));
            }
            let out = train(&cfg, |_| {})?;
            let env_cfg = cfg.env.with_max_episode_len(cfg.ppo.max_episode_len);
            let report = evaluate_policy(&out.policy, &env_cfg, p, n_eval, eval_seed, &EvalOptions::default())?;
            Ok(SweepRow { p, report })
        })
        .collect()
}

/// Box Pusher oracle episodes with the box teleported at `teleport_step`
/// (at least `min_offset` away from every planned box position), run with
/// and without a timeout-triggered replan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplanDifferential {
    pub episodes: usize,
    pub success_without: usize,
    pub success_with: usize,
}

impl ReplanDifferential {
    pub fn gap_points(&self) -> f64 {
        100.0 * (self.success_with as f64 - self.success_without as f64) / self.episodes as f64
    }
}

pub fn replan_differential(
    env_cfg: &EnvConfig,
    episodes: usize,
    seed: u64,
    teleport_step: usize,
    min_offset: f64,
    timeout: usize,
) -> Result<ReplanDifferential> {
    let run = |max_replans: usize, i: usize| -> Result<bool> {
        let mut rng = ChaCha8Rng::seed_from_u64(super::episode_seed(seed, i));
        let mut env = Env::reset(env_cfg, &mut rng)?;
        let mut iv = |t: usize, env: &mut Env, plan: &AbstractTrajectory, rng: &mut ChaCha8Rng| {
            if t == teleport_step {
                teleport_box(env, plan, min_offset, rng);
            }
        };
        let mut opts = RunOptions::new(env_cfg);
        opts.triggers = vec![ReplanTrigger::timeout(timeout)];
        opts.max_replans = max_replans;
        opts.intervention = Some(&mut iv);
        let mut c = BoxPusherOracle::default();
        Ok(run_with_replanning(&mut c, &mut env, &mut opts, &mut rng)?.success)
    };
    let mut out = ReplanDifferential {
        episodes,
        success_without: 0,
        success_with: 0,
    };
    for i in 0..episodes {
        out.success_without += run(0, i)? as usize;
        out.success_with += run(1, i)? as usize;
    }
    Ok(out)
}
