//! On-policy training: batched rollouts over parallel environments,
//! generalized advantage estimation and clipped policy-gradient updates
//! with a KL stop.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{Env, EnvConfig};
use crate::error::{Error, Result};
use crate::io::{read_text, write_text};
use crate::nn::Adam;
use crate::plans::{chunk_periodic, PlanConfig};
use crate::policy::{
    fit_prompt, log_prob, scale_action, ActionDistribution, BackboneKind, Batch, ObsHistory, Policy, PolicyConfig,
    PreparedPrompt, PromptInput, PromptSlot, QueryInput,
};
use crate::reward::{combined_reward, MatchTracker, RewardParams};
use crate::state::{AbstractTrajectory, Dissimilarity, EnvKind, LowState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PPOConfig {
    pub policy_lr: f64,
    pub value_lr: f64,
    pub rollout_batch: usize,
    pub minibatch: usize,
    pub epochs: usize,
    pub grad_updates_per_epoch: usize,
    pub max_episode_len: usize,
    pub n_parallel_envs: usize,
    pub clip_ratio: f64,
    pub target_kl: f64,
    pub gae_lambda: f64,
    pub discount: f64,
    pub grad_accumulation: bool,
    pub seed: u64,
}

impl PPOConfig {
    pub fn for_env(kind: EnvKind) -> Self {
        PPOConfig {
            policy_lr: 3e-4,
            value_lr: 3e-4,
            rollout_batch: 20000,
            minibatch: 1024,
            epochs: 2000,
            grad_updates_per_epoch: 60,
            max_episode_len: match kind {
                EnvKind::BoxPusher => 200,
                EnvKind::Couch => 150,
            },
            n_parallel_envs: 20,
            clip_ratio: 0.2,
            target_kl: 0.15,
            gae_lambda: 0.95,
            discount: 0.99,
            grad_accumulation: false,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.policy_lr, self.value_lr, self.clip_ratio, self.target_kl, self.discount];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::config("ppo: learning rates, clip ratio, target KL and discount must be positive"));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) || self.discount > 1.0 {
            return Err(Error::config("ppo: gae_lambda and discount must lie in [0, 1]"));
        }
        if self.rollout_batch == 0 || self.minibatch == 0 || self.grad_updates_per_epoch == 0 || self.n_parallel_envs == 0 || self.max_episode_len == 0 {
            return Err(Error::config("ppo: batch sizes, update count, env count and episode length must be positive"));
        }
        if self.minibatch > self.rollout_batch {
            return Err(Error::config(format!(
                "ppo: minibatch {} exceeds rollout batch {}",
                self.minibatch, self.rollout_batch
            )));
        }
        if self.rollout_batch < self.n_parallel_envs {
            return Err(Error::config("ppo: rollout batch smaller than the number of environments"));
        }
        Ok(())
    }

    /// Optimizer steps per epoch and minibatches folded into each.
    pub fn update_schedule(&self) -> (usize, usize) {
        if self.grad_accumulation {
            let n = self.grad_updates_per_epoch.min(3);
            (n, self.grad_updates_per_epoch.div_ceil(n))
        } else {
            (self.grad_updates_per_epoch, 1)
        }
    }
}

/// Everything a training run needs, stored as TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    /// Directory for the run log and checkpoints; nothing is written if unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    /// Checkpoint period in epochs; 0 writes only the final checkpoint.
    pub checkpoint_every: usize,
    /// Worker threads for updates; 0 uses every core. Results do not depend
    /// on this value.
    pub threads: usize,
    pub env: EnvConfig,
    pub plan: PlanConfig,
    pub reward: RewardParams,
    pub policy: PolicyConfig,
    pub ppo: PPOConfig,
}

impl RunConfig {
    pub fn for_env(kind: EnvKind) -> Self {
        RunConfig {
            name: format!("{}-run", kind.tag()),
            out_dir: None,
            checkpoint_every: 50,
            threads: 0,
            env: EnvConfig::default_for(kind),
            plan: PlanConfig::for_env(kind),
            reward: RewardParams::for_env(kind),
            policy: PolicyConfig::for_env(kind),
            ppo: PPOConfig::for_env(kind),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.plan.validate()?;
        self.reward.validate()?;
        self.policy.validate()?;
        self.ppo.validate()?;
        let kind = self.env.kind();
        if self.policy.low_dim != kind.low_dim() || self.policy.high_dim != kind.high_dim() || self.policy.action_dim != kind.action_dim() {
            return Err(Error::config(format!(
                "policy dims ({}, {}, {}) do not fit the {} environment",
                self.policy.low_dim,
                self.policy.high_dim,
                self.policy.action_dim,
                kind.tag()
            )));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::parse("run config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&read_text(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configs serialize")
    }
}

/// How a transition ends for advantage estimation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Done {
    No,
    /// Episode over; nothing to bootstrap.
    Terminal,
    /// Sequence cut (time limit or end of collection); bootstrap from the
    /// stored next value.
    Truncated,
}

/// Generalized advantage estimation over one environment's transitions.
/// `next_values[t]` is the value of the state after step `t`; it is read
/// unless the step is terminal. Returns `(advantages, returns)`.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    next_values: &[f64],
    dones: &[Done],
    gamma: f64,
    lam: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut carry = 0.0;
    for t in (0..n).rev() {
        let boot = if dones[t] == Done::Terminal { 0.0 } else { next_values[t] };
        let delta = rewards[t] + gamma * boot - values[t];
        if dones[t] != Done::No {
            carry = 0.0;
        }
        carry = delta + gamma * lam * carry;
        adv[t] = carry;
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, ret)
}

/// Zero mean, unit variance (population); constant input maps to zeros.
pub fn normalize(v: &[f64]) -> Vec<f64> {
    let n = v.len().max(1) as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    v.iter().map(|x| if std > 1e-12 { (x - mean) / std } else { 0.0 }).collect()
}

/// One stored transition.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub env: usize,
    pub prompt: usize,
    pub lows: Vec<f64>,
    pub goal: Vec<f64>,
    /// Normalized, unclipped action.
    pub action: Vec<f64>,
    pub log_prob: f64,
    pub value: f64,
    pub reward: f64,
    pub traj_reward: f64,
    pub task_reward: f64,
    pub done: Done,
    pub next_value: f64,
    pub j_before: usize,
    pub j_after: usize,
    /// Observation after the action.
    pub next_low: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStats {
    pub episode_return: f64,
    pub length: usize,
    pub success: bool,
}

#[derive(Debug, Clone, Default)]
pub struct RolloutBuffer {
    pub n_envs: usize,
    /// Time-major: step `t` of env `e` sits at `t * n_envs + e`.
    pub steps: Vec<Step>,
    pub prompts: Vec<PromptInput>,
    /// Full plan chunk behind each prompt (the reward's trajectory).
    pub plans: Vec<Arc<AbstractTrajectory>>,
    pub episodes: Vec<EpisodeStats>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Fills `advantages` and `returns`, one pass per environment.
    pub fn compute_advantages(&mut self, gamma: f64, lam: f64) {
        let n = self.steps.len();
        self.advantages = vec![0.0; n];
        self.returns = vec![0.0; n];
        for e in 0..self.n_envs {
            let idx: Vec<usize> = (e..n).step_by(self.n_envs).collect();
            let r: Vec<f64> = idx.iter().map(|&i| self.steps[i].reward).collect();
            let v: Vec<f64> = idx.iter().map(|&i| self.steps[i].value).collect();
            let nv: Vec<f64> = idx.iter().map(|&i| self.steps[i].next_value).collect();
            let d: Vec<Done> = idx.iter().map(|&i| self.steps[i].done).collect();
            let (a, ret) = compute_gae(&r, &v, &nv, &d, gamma, lam);
            for (k, &i) in idx.iter().enumerate() {
                self.advantages[i] = a[k];
                self.returns[i] = ret[k];
            }
        }
    }

    pub fn clear(&mut self) {
        self.steps.clear();
        self.prompts.clear();
        self.plans.clear();
        self.episodes.clear();
        self.advantages.clear();
        self.returns.clear();
    }
}

struct Slot {
    env: Env,
    rng: ChaCha8Rng,
    chunks: Vec<Arc<AbstractTrajectory>>,
    tracker: MatchTracker,
    history: ObsHistory,
    prompt: PromptInput,
    prepared: Option<PreparedPrompt>,
    prompt_id: usize,
    ep_return: f64,
    ep_len: usize,
}

/// Persistent set of training environments.
pub struct Collector {
    env_cfg: EnvConfig,
    plan: PlanConfig,
    reward: RewardParams,
    k: usize,
    l_max: usize,
    task_only: bool,
    slots: Vec<Slot>,
}

/// Seed for a labelled sub-stream of a run.
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    let mut h = seed ^ 0x243F_6A88_85A3_08D3;
    for &p in parts {
        h = h.wrapping_add(p).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        h ^= h >> 31;
    }
    h
}

impl Collector {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        let env_cfg = cfg.env.with_max_episode_len(cfg.ppo.max_episode_len);
        let mut c = Collector {
            env_cfg,
            plan: cfg.plan,
            reward: cfg.reward,
            k: cfg.policy.k,
            l_max: cfg.policy.l_max,
            task_only: cfg.policy.backbone == BackboneKind::FeedforwardGc,
            slots: Vec::with_capacity(cfg.ppo.n_parallel_envs),
        };
        for e in 0..cfg.ppo.n_parallel_envs {
            let rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.ppo.seed, &[1, e as u64]));
            c.slots.push(c.fresh_slot(rng)?);
        }
        Ok(c)
    }

    fn fresh_slot(&self, mut rng: ChaCha8Rng) -> Result<Slot> {
        let env = Env::reset(&self.env_cfg, &mut rng)?;
        let plan = env.plan(self.plan.epsilon_spacing, &mut rng)?;
        let mut chunks: Vec<Arc<AbstractTrajectory>> =
            chunk_periodic(&plan, self.plan.epsilon_spacing).into_iter().map(Arc::new).collect();
        chunks.reverse();
        let first = chunks.pop().expect("at least one chunk");
        let tracker = MatchTracker::new(first.clone(), Dissimilarity::for_env(env.kind()), self.plan.epsilon_spacing)?;
        let prompt = self.prompt_for(&first)?;
        let history = ObsHistory::new(self.k, env.observe());
        Ok(Slot {
            env,
            rng,
            chunks,
            tracker,
            history,
            prompt,
            prepared: None,
            prompt_id: usize::MAX,
            ep_return: 0.0,
            ep_len: 0,
        })
    }

    fn prompt_for(&self, chunk: &AbstractTrajectory) -> Result<PromptInput> {
        let p = fit_prompt(chunk, self.plan.p, self.l_max)?;
        Ok(PromptInput {
            states: p.states.iter().flat_map(|s| s.0.iter().copied()).collect(),
            indices: p.indices,
        })
    }

    fn register(slot: &mut Slot, policy: &Policy, buf: &mut RolloutBuffer) {
        slot.prepared = Some(policy.prepare(slot.prompt.clone()));
        slot.prompt_id = buf.prompts.len();
        buf.prompts.push(slot.prompt.clone());
        buf.plans.push(slot.tracker.trajectory().clone());
    }

    /// Steps every environment `rollout_batch / n_envs` times with sampled
    /// actions.
    pub fn collect(&mut self, policy: &Policy, steps_per_env: usize, rng: &mut ChaCha8Rng) -> Result<RolloutBuffer> {
        let n = self.slots.len();
        let bounds = self.env_cfg.action_bounds();
        let max_len = self.env_cfg.max_episode_len();
        let log_std = policy.log_std().to_vec();
        let a_dim = policy.cfg.action_dim;
        let mut buf = RolloutBuffer {
            n_envs: n,
            ..Default::default()
        };
        for slot in &mut self.slots {
            Self::register(slot, policy, &mut buf);
        }
        for t in 0..steps_per_env {
            let queries = self
                .slots
                .iter()
                .enumerate()
                .map(|(e, s)| policy.query(e, &s.history.to_vec(), policy.goal_for(&s.tracker)))
                .collect::<Result<Vec<_>>>()?;
            let prepared: Vec<&PreparedPrompt> = self.slots.iter().map(|s| s.prepared.as_ref().expect("registered")).collect();
            let (means, values) = policy.infer(&prepared, queries.clone(), true);
            let mut cut: Vec<usize> = Vec::new();
            for (e, q) in queries.into_iter().enumerate() {
                let slot = &mut self.slots[e];
                let dist = ActionDistribution {
                    mean: means[e * a_dim..(e + 1) * a_dim].to_vec(),
                    log_std: log_std.clone(),
                };
                let action = dist.sample(rng);
                let lp = log_prob(&dist.mean, &log_std, &action);
                slot.env.step(&scale_action(&action, &bounds));
                let obs = slot.env.observe();
                let j_before = slot.tracker.j_prev();
                let out = slot.tracker.step(&obs, &self.reward)?;
                let task = slot.env.task_reward();
                let reward = if self.task_only { task } else { combined_reward(out.reward, task, &self.reward) };
                if !reward.is_finite() {
                    return Err(Error::NonFinite(format!("reward at step {t} of env {e}")));
                }
                slot.history.push(obs.clone());
                slot.ep_return += reward;
                slot.ep_len += 1;
                let success = slot.env.success();
                let done = if success {
                    Done::Terminal
                } else if slot.env.step_count() >= max_len {
                    Done::Truncated
                } else {
                    Done::No
                };
                buf.steps.push(Step {
                    env: e,
                    prompt: slot.prompt_id,
                    lows: q.lows,
                    goal: q.goal,
                    action,
                    log_prob: lp,
                    value: values[e],
                    reward,
                    traj_reward: out.reward,
                    task_reward: task,
                    done,
                    next_value: 0.0,
                    j_before,
                    j_after: out.j,
                    next_low: obs.0,
                });
                if done != Done::No {
                    buf.episodes.push(EpisodeStats {
                        episode_return: slot.ep_return,
                        length: slot.ep_len,
                        success,
                    });
                }
                if done == Done::Truncated || (done == Done::No && t + 1 == steps_per_env) {
                    cut.push(e);
                }
            }
            // Bootstrap values under the prompt that was in force.
            if !cut.is_empty() {
                let qs = cut
                    .iter()
                    .enumerate()
                    .map(|(i, &e)| {
                        let s = &self.slots[e];
                        policy.query(i, &s.history.to_vec(), policy.goal_for(&s.tracker))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let prepared: Vec<&PreparedPrompt> = cut.iter().map(|&e| self.slots[e].prepared.as_ref().expect("registered")).collect();
                let (_, v) = policy.infer(&prepared, qs, true);
                let base = t * n;
                for (i, &e) in cut.iter().enumerate() {
                    let st = &mut buf.steps[base + e];
                    st.next_value = v[i];
                    if st.done == Done::No {
                        st.done = Done::Truncated;
                    }
                }
            }
            for e in 0..n {
                let done = buf.steps[t * n + e].done;
                let episode_over = done == Done::Terminal || (done == Done::Truncated && self.slots[e].env.step_count() >= max_len);
                if episode_over {
                    let rng = self.slots[e].rng.clone();
                    let mut fresh = self.fresh_slot(rng)?;
                    Self::register(&mut fresh, policy, &mut buf);
                    self.slots[e] = fresh;
                } else if self.slots[e].tracker.is_complete() && !self.slots[e].chunks.is_empty() {
                    let next = self.slots[e].chunks.pop().expect("checked non-empty");
                    let prompt = self.prompt_for(&next)?;
                    let eps = self.plan.epsilon_spacing;
                    let slot = &mut self.slots[e];
                    slot.tracker = MatchTracker::new(next.clone(), slot.tracker.dissimilarity().clone(), eps)?;
                    slot.prompt = prompt;
                    Self::register(&mut self.slots[e], policy, &mut buf);
                }
            }
            if t > 0 {
                for e in 0..n {
                    if buf.steps[(t - 1) * n + e].done == Done::No {
                        buf.steps[(t - 1) * n + e].next_value = buf.steps[t * n + e].value;
                    }
                }
            }
        }
        Ok(buf)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UpdateStats {
    /// Optimizer steps applied.
    pub updates: usize,
    /// Mean KL estimate over the minibatches evaluated.
    pub kl: f64,
    pub clip_fraction: f64,
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub stopped_early: bool,
}

/// Queries per forward chunk inside a minibatch. Fixed so gradient sums do
/// not depend on the number of threads.
const CHUNK_QUERIES: usize = 128;

struct ChunkOut {
    g_actor: Vec<f64>,
    g_critic: Vec<f64>,
    kl: f64,
    clipped: usize,
    actor_loss: f64,
    critic_loss: f64,
}

/// Gradients of the clipped surrogate and value loss over `idx`, scaled by
/// `1 / denom`. `adv` holds the normalized advantage of each index.
#[allow(clippy::too_many_arguments)]
fn minibatch_grads(
    policy: &Policy,
    buf: &RolloutBuffer,
    idx: &[usize],
    adv: &[f64],
    clip: f64,
    denom: f64,
    dropout_seed: Option<u64>,
) -> Result<ChunkOut> {
    let mut order: Vec<usize> = (0..idx.len()).collect();
    order.sort_by_key(|&i| (buf.steps[idx[i]].prompt, idx[i]));
    let chunks: Vec<&[usize]> = order.chunks(CHUNK_QUERIES).collect();
    let outs: Vec<Result<ChunkOut>> = chunks
        .par_iter()
        .enumerate()
        .map(|(ci, ch)| {
            let mut slot_of: BTreeMap<usize, usize> = BTreeMap::new();
            let mut prompts = Vec::new();
            let mut queries = Vec::with_capacity(ch.len());
            for &i in ch.iter() {
                let st = &buf.steps[idx[i]];
                let s = *slot_of.entry(st.prompt).or_insert_with(|| {
                    prompts.push(PromptSlot::Input(&buf.prompts[st.prompt]));
                    prompts.len() - 1
                });
                queries.push(QueryInput {
                    prompt: s,
                    lows: st.lows.clone(),
                    goal: st.goal.clone(),
                });
            }
            let batch = Batch { prompts, queries };
            let mut drop_rng = dropout_seed.map(|s| ChaCha8Rng::seed_from_u64(derive_seed(s, &[ci as u64])));
            let a_dim = policy.cfg.action_dim;
            let actions: Vec<f64> = ch.iter().flat_map(|&i| buf.steps[idx[i]].action.iter().copied()).collect();
            let pass = policy.actor_pass(&batch, drop_rng.as_mut());
            let new_lp = policy.log_probs(&pass, &actions);
            let mut weights = Vec::with_capacity(ch.len());
            let mut out = ChunkOut {
                g_actor: policy.actor_params.zeros_like(),
                g_critic: policy.critic_params.zeros_like(),
                kl: 0.0,
                clipped: 0,
                actor_loss: 0.0,
                critic_loss: 0.0,
            };
            for (q, &i) in ch.iter().enumerate() {
                let st = &buf.steps[idx[i]];
                let ratio = (new_lp[q] - st.log_prob).exp();
                let a = adv[i];
                let s1 = ratio * a;
                let s2 = ratio.clamp(1.0 - clip, 1.0 + clip) * a;
                out.kl += st.log_prob - new_lp[q];
                out.actor_loss -= s1.min(s2);
                if (ratio - 1.0).abs() > clip {
                    out.clipped += 1;
                }
                weights.push(if s1 <= s2 { -ratio * a / denom } else { 0.0 });
            }
            debug_assert_eq!(actions.len(), ch.len() * a_dim);
            if !out.actor_loss.is_finite() {
                return Err(Error::NonFinite("actor loss".into()));
            }
            policy.actor_backward(&batch, &pass, &actions, &weights, &mut out.g_actor);
            let vpass = policy.critic_pass(&batch, drop_rng.as_mut());
            let mut dv = Vec::with_capacity(ch.len());
            for (q, &i) in ch.iter().enumerate() {
                let diff = vpass.out[q] - buf.returns[idx[i]];
                out.critic_loss += 0.5 * diff * diff;
                dv.push(diff / denom);
            }
            if !out.critic_loss.is_finite() {
                return Err(Error::NonFinite("critic loss".into()));
            }
            policy.critic_backward(&batch, &vpass, dv, &mut out.g_critic);
            Ok(out)
        })
        .collect();
    let mut total: Option<ChunkOut> = None;
    for o in outs {
        let o = o?;
        match total.as_mut() {
            None => total = Some(o),
            Some(t) => {
                add_into(&mut t.g_actor, &o.g_actor);
                add_into(&mut t.g_critic, &o.g_critic);
                t.kl += o.kl;
                t.clipped += o.clipped;
                t.actor_loss += o.actor_loss;
                t.critic_loss += o.critic_loss;
            }
        }
    }
    Ok(total.expect("non-empty minibatch"))
}

fn add_into(a: &mut [f64], b: &[f64]) {
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
}

/// Optimizer state carried across epochs.
pub struct Optimizers {
    pub actor: Adam,
    pub critic: Adam,
}

impl Optimizers {
    pub fn new(policy: &Policy, ppo: &PPOConfig) -> Self {
        Optimizers {
            actor: Adam::new(policy.actor_params.len(), ppo.policy_lr),
            critic: Adam::new(policy.critic_params.len(), ppo.value_lr),
        }
    }
}

/// Minibatch updates over a filled buffer (advantages computed). The first
/// update is always applied; after it, an update whose minibatch KL estimate
/// exceeds the target is dropped and the epoch's updates end.
pub fn ppo_update(
    buf: &RolloutBuffer,
    policy: &mut Policy,
    opt: &mut Optimizers,
    ppo: &PPOConfig,
    rng: &mut ChaCha8Rng,
) -> Result<UpdateStats> {
    if buf.advantages.len() != buf.len() {
        return Err(Error::config("advantages must be computed before updating"));
    }
    let (n_updates, accum) = ppo.update_schedule();
    let mb = ppo.minibatch.min(buf.len());
    let mut perm: Vec<usize> = (0..buf.len()).collect();
    perm.shuffle(rng);
    let mut cursor = 0;
    let mut stats = UpdateStats::default();
    let mut evaluated = 0usize;
    let mut samples = 0usize;
    let use_dropout = policy.cfg.dropout > 0.0;
    'outer: for u in 0..n_updates {
        let mut g_actor = policy.actor_params.zeros_like();
        let mut g_critic = policy.critic_params.zeros_like();
        for a in 0..accum {
            if cursor + mb > perm.len() {
                perm.shuffle(rng);
                cursor = 0;
            }
            let idx = &perm[cursor..cursor + mb];
            cursor += mb;
            let raw: Vec<f64> = idx.iter().map(|&i| buf.advantages[i]).collect();
            let adv = normalize(&raw);
            let seed = use_dropout.then(|| derive_seed(rng_seed_marker(rng), &[u as u64, a as u64]));
            let out = minibatch_grads(policy, buf, idx, &adv, ppo.clip_ratio, (mb * accum) as f64, seed)?;
            let kl = out.kl / mb as f64;
            evaluated += 1;
            samples += mb;
            stats.kl += kl;
            stats.clip_fraction += out.clipped as f64;
            stats.actor_loss += out.actor_loss;
            stats.critic_loss += out.critic_loss;
            if kl > ppo.target_kl {
                stats.stopped_early = true;
                if u > 0 {
                    break 'outer;
                }
            }
            add_into(&mut g_actor, &out.g_actor);
            add_into(&mut g_critic, &out.g_critic);
        }
        opt.actor.step(&mut policy.actor_params.data, &g_actor);
        opt.critic.step(&mut policy.critic_params.data, &g_critic);
        stats.updates += 1;
        if stats.stopped_early {
            break;
        }
    }
    if evaluated > 0 {
        stats.kl /= evaluated as f64;
        stats.clip_fraction /= samples as f64;
        stats.actor_loss /= samples as f64;
        stats.critic_loss /= samples as f64;
    }
    if !policy.actor_params.is_finite() || !policy.critic_params.is_finite() {
        return Err(Error::NonFinite("parameters after update".into()));
    }
    Ok(stats)
}

/// Draws a value from `rng` to seed per-minibatch dropout streams.
fn rng_seed_marker(rng: &mut ChaCha8Rng) -> u64 {
    use rand::Rng;
    rng.random()
}

/// One line of the run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub env_steps: usize,
    pub success_rate: f64,
    pub mean_return: f64,
    pub kl: f64,
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub updates: usize,
    pub clip_fraction: f64,
    pub episodes: usize,
}

impl EpochLog {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("log lines serialize")
    }
}

/// Training state: policy, optimizers and the persistent environments.
pub struct Trainer {
    pub cfg: RunConfig,
    pub policy: Policy,
    pub opt: Optimizers,
    collector: Collector,
    epoch: usize,
    env_steps: usize,
}

impl Trainer {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let policy = Policy::new(&cfg.policy, cfg.ppo.seed)?;
        let opt = Optimizers::new(&policy, &cfg.ppo);
        Ok(Trainer {
            collector: Collector::new(cfg)?,
            cfg: cfg.clone(),
            policy,
            opt,
            epoch: 0,
            env_steps: 0,
        })
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// Collect, estimate advantages, update.
    pub fn run_epoch(&mut self) -> Result<EpochLog> {
        let ppo = &self.cfg.ppo;
        let steps_per_env = ppo.rollout_batch / ppo.n_parallel_envs;
        let mut roll_rng = ChaCha8Rng::seed_from_u64(derive_seed(ppo.seed, &[2, self.epoch as u64]));
        let started = std::time::Instant::now();
        let mut buf = self.collector.collect(&self.policy, steps_per_env, &mut roll_rng)?;
        let collected = started.elapsed();
        buf.compute_advantages(ppo.discount, ppo.gae_lambda);
        let mut upd_rng = ChaCha8Rng::seed_from_u64(derive_seed(ppo.seed, &[3, self.epoch as u64]));
        let stats = ppo_update(&buf, &mut self.policy, &mut self.opt, ppo, &mut upd_rng)?;
        log::debug!(
            "epoch {}: collect {:.2?}, update {:.2?}",
            self.epoch + 1,
            collected,
            started.elapsed() - collected
        );
        self.env_steps += buf.len();
        let eps = &buf.episodes;
        let (success_rate, mean_return) = if eps.is_empty() {
            (0.0, 0.0)
        } else {
            (
                eps.iter().filter(|e| e.success).count() as f64 / eps.len() as f64,
                eps.iter().map(|e| e.episode_return).sum::<f64>() / eps.len() as f64,
            )
        };
        self.epoch += 1;
        Ok(EpochLog {
            epoch: self.epoch,
            env_steps: self.env_steps,
            success_rate,
            mean_return,
            kl: stats.kl,
            actor_loss: stats.actor_loss,
            critic_loss: stats.critic_loss,
            updates: stats.updates,
            clip_fraction: stats.clip_fraction,
            episodes: eps.len(),
        })
    }
}

pub struct TrainOutcome {
    pub policy: Policy,
    pub log: Vec<EpochLog>,
}

fn run_in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if threads == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Full training loop. With `out_dir` set, appends `runlog.jsonl`, writes
/// `config.toml`, periodic `ckpt_<epoch>.json` and `final.json`.
pub fn train(cfg: &RunConfig, mut on_epoch: impl FnMut(&EpochLog) + Send) -> Result<TrainOutcome> {
    run_in_pool(cfg.threads, move || {
        let mut trainer = Trainer::new(cfg)?;
        let mut log_file = match &cfg.out_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                write_text(&dir.join("config.toml"), &cfg.to_toml())?;
                let path = dir.join("runlog.jsonl");
                Some((std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?, path))
            }
            None => None,
        };
        let mut log = Vec::with_capacity(cfg.ppo.epochs);
        for _ in 0..cfg.ppo.epochs {
            let entry = trainer.run_epoch()?;
            if let Some((f, path)) = log_file.as_mut() {
                writeln!(f, "{}", entry.to_json_line()).map_err(|e| Error::io(path.clone(), e))?;
                f.flush().map_err(|e| Error::io(path.clone(), e))?;
            }
            if let Some(dir) = &cfg.out_dir {
                if cfg.checkpoint_every > 0 && entry.epoch % cfg.checkpoint_every == 0 {
                    trainer.policy.save(&dir.join(format!("ckpt_{:05}.json", entry.epoch)))?;
                }
            }
            on_epoch(&entry);
            log.push(entry);
        }
        if let Some(dir) = &cfg.out_dir {
            trainer.policy.save(&dir.join("final.json"))?;
        }
        Ok(TrainOutcome {
            policy: trainer.policy,
            log,
        })
    })?
}

/// Reads a run log written by [`train`].
pub fn read_run_log(path: &Path) -> Result<Vec<EpochLog>> {
    read_text(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::parse("run log", e.to_string())))
        .collect()
}

/// Low state after a stored step, for reward replays.
pub fn step_low(step: &Step) -> LowState {
    LowState(step.next_low.clone())
}
