//! Closed-loop execution: episode runner with replanning, evaluation,
//! scripted oracles, attention maps and granularity sweeps.

mod learned;
mod oracle;

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{Env, EnvConfig, World};
use crate::error::Result;
use crate::io::{EpisodeRecord, PlanSegment};
use crate::plans::{chunk_periodic, should_replan, PlanConfig, ReplanTrigger};
use crate::reward::{combined_reward, MatchTracker, RewardParams};
use crate::state::{AbstractTrajectory, ActionVec, Dissimilarity};

pub use learned::{
    attention_heatmap, bin_to_cells, evaluate_policy, granularity_sweep, mean_prompt_attention, min_max_scale, replan_differential,
    replay_inputs, AttentionMap, PolicyController, ReplanDifferential, ReplayStep, SweepRow,
};
pub use oracle::{oracle_boxpusher, oracle_couch, oracle_couch_on, CouchRoute};

/// Anything that maps the current environment and plan progress to an action.
pub trait Controller {
    /// Called at episode start and whenever a new plan takes effect.
    fn on_plan(&mut self, env: &Env, plan: &Arc<AbstractTrajectory>) -> Result<()>;
    fn act(&mut self, env: &Env, tracker: &MatchTracker) -> Result<ActionVec>;
}

/// Plan-following Box Pusher oracle.
#[derive(Debug, Default, Clone)]
pub struct BoxPusherOracle {
    plan: Option<Arc<AbstractTrajectory>>,
}

impl Controller for BoxPusherOracle {
    fn on_plan(&mut self, _env: &Env, plan: &Arc<AbstractTrajectory>) -> Result<()> {
        self.plan = Some(plan.clone());
        Ok(())
    }

    fn act(&mut self, env: &Env, tracker: &MatchTracker) -> Result<ActionVec> {
        match (&env.world, &self.plan) {
            (World::BoxPusher(s), Some(plan)) => Ok(oracle_boxpusher(s, plan, tracker)),
            _ => Err(crate::Error::Unsupported("box pusher oracle needs a box pusher world and a plan".into())),
        }
    }
}

/// Maze-aware couch oracle; ignores the plan.
#[derive(Debug, Default, Clone)]
pub struct CouchOracle {
    route: Option<CouchRoute>,
}

impl Controller for CouchOracle {
    fn on_plan(&mut self, env: &Env, _plan: &Arc<AbstractTrajectory>) -> Result<()> {
        if let World::Couch { maze, .. } = &env.world {
            self.route = Some(CouchRoute::new(maze));
        }
        Ok(())
    }

    fn act(&mut self, env: &Env, _tracker: &MatchTracker) -> Result<ActionVec> {
        match (&env.world, &env.cfg, &self.route) {
            (World::Couch { state, .. }, EnvConfig::Couch(cfg), Some(route)) => Ok(oracle_couch_on(route, state, cfg)),
            _ => Err(crate::Error::Unsupported("couch oracle needs a couch world".into())),
        }
    }
}

/// Hook run before each action; may perturb the world (e.g. teleport the box).
pub type Intervention<'a> = &'a mut dyn FnMut(usize, &mut Env, &AbstractTrajectory, &mut ChaCha8Rng);

pub struct RunOptions<'a> {
    pub max_steps: usize,
    pub plan: PlanConfig,
    pub reward: RewardParams,
    pub triggers: Vec<ReplanTrigger>,
    pub max_replans: usize,
    pub intervention: Option<Intervention<'a>>,
    pub record: bool,
    /// End the episode at the first successful step; otherwise keep going
    /// until the plan is also complete.
    pub stop_on_success: bool,
}

impl RunOptions<'_> {
    pub fn new(env_cfg: &EnvConfig) -> Self {
        let kind = env_cfg.kind();
        RunOptions {
            max_steps: env_cfg.max_episode_len(),
            plan: PlanConfig::for_env(kind),
            reward: RewardParams::for_env(kind),
            triggers: Vec::new(),
            max_replans: 0,
            intervention: None,
            record: false,
            stop_on_success: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub steps: usize,
    pub j_final: usize,
    pub n_final: usize,
    pub success: bool,
    pub replans_used: usize,
    pub episode_return: f64,
    #[serde(skip)]
    pub record: Option<EpisodeRecord>,
}

/// Closed-loop episode. A plan is split into non-revisiting chunks that are
/// executed in turn; triggers regenerate the plan from the current state
/// until `max_replans` is used up. A failed replan ends the episode.
pub fn run_with_replanning<C: Controller + ?Sized>(
    controller: &mut C,
    env: &mut Env,
    opts: &mut RunOptions<'_>,
    rng: &mut ChaCha8Rng,
) -> Result<EpisodeResult> {
    let eps = opts.plan.epsilon_spacing;
    let d = Dissimilarity::for_env(env.kind());
    let first_plan = env.plan(eps, rng)?;
    let mut chunks: Vec<Arc<AbstractTrajectory>> = chunk_periodic(&first_plan, eps).into_iter().map(Arc::new).collect();
    chunks.reverse();
    let mut current = chunks.pop().expect("chunking keeps at least one chunk");
    let mut tracker = MatchTracker::new(current.clone(), d.clone(), eps)?;
    controller.on_plan(env, &current)?;

    let mut record = opts.record.then(|| EpisodeRecord {
        env: env.kind(),
        snapshot: env.to_snapshot(),
        plans: vec![segment(0, &first_plan)],
        observations: vec![env.observe().0],
        actions: Vec::new(),
        success: false,
        replans: 0,
    });

    let mut replans = 0;
    let mut since_plan = 0;
    let mut ret = 0.0;
    let mut success = false;
    let mut steps = 0;
    for t in 0..opts.max_steps {
        if let Some(iv) = opts.intervention.as_mut() {
            iv(t, env, &current, rng);
        }
        let action = controller.act(env, &tracker)?;
        env.step(&action);
        steps = t + 1;
        since_plan += 1;
        let obs = env.observe();
        let out = tracker.step(&obs, &opts.reward)?;
        ret += combined_reward(out.reward, env.task_reward(), &opts.reward);
        if let Some(r) = record.as_mut() {
            r.actions.push(action.0.clone());
            r.observations.push(obs.0.clone());
        }
        success |= env.success();
        if success && (opts.stop_on_success || tracker.is_complete()) {
            break;
        }
        if tracker.is_complete() {
            if let Some(next) = chunks.pop() {
                current = next;
                tracker = MatchTracker::new(current.clone(), d.clone(), eps)?;
                controller.on_plan(env, &current)?;
                since_plan = 0;
                continue;
            }
        }
        if replans < opts.max_replans && opts.triggers.iter().any(|trig| should_replan(&tracker, since_plan, trig)) {
            let Ok(plan) = env.plan(eps, rng) else {
                break;
            };
            replans += 1;
            since_plan = 0;
            if let Some(r) = record.as_mut() {
                r.plans.push(segment(t + 1, &plan));
            }
            chunks = chunk_periodic(&plan, eps).into_iter().map(Arc::new).collect();
            chunks.reverse();
            current = chunks.pop().expect("chunking keeps at least one chunk");
            tracker = MatchTracker::new(current.clone(), d.clone(), eps)?;
            controller.on_plan(env, &current)?;
        }
    }
    if let Some(r) = record.as_mut() {
        r.success = success;
        r.replans = replans;
    }
    Ok(EpisodeResult {
        steps,
        j_final: tracker.j_prev(),
        n_final: tracker.n(),
        success,
        replans_used: replans,
        episode_return: ret,
        record,
    })
}

fn segment(start_step: usize, plan: &AbstractTrajectory) -> PlanSegment {
    PlanSegment {
        start_step,
        states: plan.states().iter().map(|s| s.0.clone()).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_episodes: usize,
    pub success_rate: f64,
    pub stderr: f64,
    pub episodes: Vec<EpisodeResult>,
}

impl EvalReport {
    pub fn from_episodes(episodes: Vec<EpisodeResult>) -> Self {
        let n = episodes.len();
        let p = if n == 0 {
            0.0
        } else {
            episodes.iter().filter(|e| e.success).count() as f64 / n as f64
        };
        let stderr = if n == 0 { 0.0 } else { (p * (1.0 - p) / n as f64).sqrt() };
        EvalReport {
            n_episodes: n,
            success_rate: p,
            stderr,
            episodes,
        }
    }

    pub fn successes(&self) -> usize {
        self.episodes.iter().filter(|e| e.success).count()
    }
}

/// Episode settings for [`evaluate`].
#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub triggers: Vec<ReplanTrigger>,
    pub max_replans: usize,
    pub stop_on_success: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            triggers: Vec::new(),
            max_replans: 0,
            stop_on_success: true,
        }
    }
}

impl EvalOptions {
    /// Both triggers: final-state match and a timeout after `timeout` steps.
    pub fn replanning(timeout: usize, max_replans: usize) -> Self {
        EvalOptions {
            triggers: vec![ReplanTrigger::final_state(), ReplanTrigger::timeout(timeout)],
            max_replans,
            stop_on_success: true,
        }
    }
}

/// Seed for episode `i` of an evaluation.
pub fn episode_seed(seed: u64, i: usize) -> u64 {
    seed ^ (0x9E37_79B9_7F4A_7C15u64.wrapping_mul(i as u64 + 1))
}

/// Runs `n_episodes` fresh episodes; episode `i` is seeded from `(seed, i)`
/// alone, so results do not depend on thread count.
pub fn evaluate<C, F>(
    make_controller: F,
    env_cfg: &EnvConfig,
    n_episodes: usize,
    seed: u64,
    eval: &EvalOptions,
) -> Result<EvalReport>
where
    C: Controller,
    F: Fn() -> C + Sync,
{
    let episodes: Vec<Result<EpisodeResult>> = (0..n_episodes)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(episode_seed(seed, i));
            let mut env = Env::reset(env_cfg, &mut rng)?;
            let mut opts = RunOptions::new(env_cfg);
            opts.triggers = eval.triggers.clone();
            opts.max_replans = eval.max_replans;
            opts.stop_on_success = eval.stop_on_success;
            let mut c = make_controller();
            run_with_replanning(&mut c, &mut env, &mut opts, &mut rng)
        })
        .collect();
    Ok(EvalReport::from_episodes(episodes.into_iter().collect::<Result<_>>()?))
}

/// Moves the box to a random free spot at least `min_offset` away from every
/// box position in `plan`.
pub fn teleport_box(env: &mut Env, plan: &AbstractTrajectory, min_offset: f64, rng: &mut ChaCha8Rng) -> bool {
    let World::BoxPusher(s) = &mut env.world else {
        return false;
    };
    let half = crate::boxpusher::ARENA_WIDTHS * s.box_width / 2.0 - 2.0 * s.box_width;
    for _ in 0..1000 {
        let p = [rng.random_range(-half..=half), rng.random_range(-half..=half)];
        let far_from_plan = plan
            .states()
            .iter()
            .all(|h| crate::geometry::dist([h.0[2], h.0[3]], p) >= min_offset);
        let clear = crate::geometry::dist(p, s.agent) >= 2.0 * s.box_width
            && crate::geometry::dist(p, s.goal) >= 2.0 * s.box_width
            && s
                .obstacles
                .iter()
                .all(|o| !o.overlaps(&crate::geometry::Aabb::square(p, s.box_width)));
        if far_from_plan && clear {
            s.box_pos = p;
            return true;
        }
    }
    false
}

#[cfg(test)]
mod tests;
