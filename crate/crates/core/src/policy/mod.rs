//! Translation network: prompt of high states plus the last `k` low states
//! in, Gaussian action and value out. Backbones: causal attention, LSTM,
//! and goal-conditioned MLP baselines.

pub mod attention;
pub mod batch;
pub mod encoder;
pub mod feedforward;
pub mod recurrent;

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_text, write_text};
use crate::nn::{Activation, Init, Mlp, MlpTape, NamedArray, ParamBuilder, ParamStore};
use crate::plans::Prompt;
use crate::reward::MatchTracker;
use crate::state::{AbstractTrajectory, ActionVec, EnvKind, HighState, LowState};

pub use attention::AttnNet;
pub use batch::{Batch, PromptCache, PromptInput, PromptSlot, QueryAttention, QueryInput};
pub use encoder::Encoders;
pub use feedforward::FfNet;
pub use recurrent::LstmNet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackboneKind {
    CausalAttention,
    Recurrent,
    FeedforwardGc,
    FeedforwardSgc,
}

impl BackboneKind {
    pub fn is_sequence(self) -> bool {
        matches!(self, BackboneKind::CausalAttention | BackboneKind::Recurrent)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub backbone: BackboneKind,
    /// Low-state stack size.
    pub k: usize,
    /// Maximum prompt length.
    pub l_max: usize,
    pub embed_dim: usize,
    pub layer_dims: Vec<usize>,
    pub head_dims: Vec<usize>,
    pub dropout: f64,
    pub timestep_embeddings: bool,
    pub init_log_std: f64,
    pub action_dim: usize,
    pub sgc_lookahead: usize,
    pub n_heads: usize,
    /// Hidden width of the attention blocks' MLP, as a multiple of the width.
    pub ffn_mult: usize,
    /// Rows of the timestep table; larger indices share the last row.
    pub max_timestep: usize,
    pub low_dim: usize,
    pub high_dim: usize,
}

impl PolicyConfig {
    pub fn for_env(kind: EnvKind) -> Self {
        let (k, l_max, embed_dim) = match kind {
            EnvKind::BoxPusher => (2, 32, 32),
            EnvKind::Couch => (5, 50, 64),
        };
        PolicyConfig {
            backbone: BackboneKind::CausalAttention,
            k,
            l_max,
            embed_dim,
            layer_dims: vec![128; 4],
            head_dims: vec![128, 128],
            dropout: 0.1,
            timestep_embeddings: true,
            init_log_std: -0.5,
            action_dim: kind.action_dim(),
            sgc_lookahead: 5,
            n_heads: 4,
            ffn_mult: 2,
            max_timestep: 512,
            low_dim: kind.low_dim(),
            high_dim: kind.high_dim(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::config(format!("policy config: {m}")));
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.l_max == 0 || self.embed_dim == 0 || self.action_dim == 0 || self.low_dim == 0 || self.high_dim == 0 {
            return bad("dimensions must be positive".into());
        }
        if self.layer_dims.is_empty() || self.layer_dims.contains(&0) || self.head_dims.contains(&0) {
            return bad("layer and head dims must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if !self.init_log_std.is_finite() {
            return bad("init_log_std must be finite".into());
        }
        if self.backbone == BackboneKind::CausalAttention {
            let w = self.layer_dims[0];
            if self.layer_dims.iter().any(|&d| d != w) {
                return bad("attention blocks need equal layer dims".into());
            }
            if self.n_heads == 0 || w % self.n_heads != 0 {
                return bad(format!("width {w} is not divisible by {} heads", self.n_heads));
            }
            if self.ffn_mult == 0 {
                return bad("ffn_mult must be positive".into());
            }
        }
        if self.backbone == BackboneKind::FeedforwardSgc && self.sgc_lookahead == 0 {
            return bad("sgc_lookahead must be at least 1".into());
        }
        if self.timestep_embeddings && self.max_timestep == 0 {
            return bad("max_timestep must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Backbone {
    Attention(AttnNet),
    Recurrent(LstmNet),
    Feedforward(FfNet),
}

pub enum BackboneTape {
    Attention(attention::AttnTape),
    Recurrent(recurrent::LstmTape),
    Feedforward(feedforward::FfTape),
}

/// Backbone plus an MLP head reading the final embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub backbone: Backbone,
    pub head: Mlp,
    pub k: usize,
}

pub struct NetTape {
    pub backbone: BackboneTape,
    head: MlpTape,
}

impl Network {
    pub fn build(b: &mut ParamBuilder, cfg: &PolicyConfig, out_dim: usize, out_gain: f64) -> Self {
        let ts = cfg.timestep_embeddings.then_some(cfg.max_timestep);
        let backbone = match cfg.backbone {
            BackboneKind::CausalAttention => {
                let enc = Encoders::build(b, cfg.high_dim, cfg.low_dim, cfg.embed_dim, ts);
                let d = cfg.layer_dims[0];
                Backbone::Attention(AttnNet::build(b, enc, d, cfg.layer_dims.len(), cfg.n_heads, d * cfg.ffn_mult, cfg.dropout))
            }
            BackboneKind::Recurrent => {
                let enc = Encoders::build(b, cfg.high_dim, cfg.low_dim, cfg.embed_dim, ts);
                Backbone::Recurrent(LstmNet::build(b, enc, &cfg.layer_dims, cfg.dropout))
            }
            BackboneKind::FeedforwardGc | BackboneKind::FeedforwardSgc => {
                Backbone::Feedforward(FfNet::build(b, cfg.k * cfg.low_dim + cfg.high_dim, &cfg.layer_dims))
            }
        };
        let emb = match &backbone {
            Backbone::Attention(n) => n.out_dim(),
            Backbone::Recurrent(n) => n.out_dim(),
            Backbone::Feedforward(n) => n.out_dim(),
        };
        let mut dims = vec![emb];
        dims.extend_from_slice(&cfg.head_dims);
        dims.push(out_dim);
        let head = b.mlp("head", &dims, Activation::Tanh, out_gain);
        Network { backbone, head, k: cfg.k }
    }

    pub fn out_dim(&self) -> usize {
        self.head.output_dim()
    }

    /// Outputs `queries × out_dim`. `rng` turns dropout on.
    pub fn forward(&self, p: &[f64], batch: &Batch<'_>, rng: Option<&mut ChaCha8Rng>, record_attention: bool) -> (Vec<f64>, NetTape, Option<Vec<QueryAttention>>) {
        let nq = batch.queries.len();
        let (emb, tape, att) = match &self.backbone {
            Backbone::Attention(n) => {
                let (e, t, a) = n.forward(p, batch, self.k, rng, record_attention);
                (e, BackboneTape::Attention(t), a)
            }
            Backbone::Recurrent(n) => {
                let (e, t) = n.forward(p, batch, self.k, rng);
                (e, BackboneTape::Recurrent(t), None)
            }
            Backbone::Feedforward(n) => {
                let (e, t) = n.forward(p, batch);
                (e, BackboneTape::Feedforward(t), None)
            }
        };
        let (out, head) = self.head.forward(p, &emb, nq);
        (out, NetTape { backbone: tape, head }, att)
    }

    pub fn backward(&self, p: &[f64], g: &mut [f64], batch: &Batch<'_>, tape: &NetTape, d_out: Vec<f64>) {
        let d_emb = self.head.backward(p, g, &tape.head, d_out, true).expect("dx requested");
        match (&self.backbone, &tape.backbone) {
            (Backbone::Attention(n), BackboneTape::Attention(t)) => n.backward(p, g, batch, t, &d_emb),
            (Backbone::Recurrent(n), BackboneTape::Recurrent(t)) => n.backward(p, g, batch, t, &d_emb),
            (Backbone::Feedforward(n), BackboneTape::Feedforward(t)) => n.backward(p, g, t, &d_emb),
            _ => unreachable!("tape from a different backbone"),
        }
    }

    pub fn cache_prompt(&self, p: &[f64], prompt: &PromptInput) -> PromptCache {
        let batch = Batch {
            prompts: vec![PromptSlot::Input(prompt)],
            queries: Vec::new(),
        };
        match &self.backbone {
            Backbone::Attention(n) => n.cache_prompt(p, &batch, self.k),
            Backbone::Recurrent(n) => n.cache_prompt(p, &batch),
            Backbone::Feedforward(_) => PromptCache::None,
        }
    }

    pub fn encoders(&self) -> Option<&Encoders> {
        match &self.backbone {
            Backbone::Attention(n) => Some(&n.enc),
            Backbone::Recurrent(n) => Some(&n.enc),
            Backbone::Feedforward(_) => None,
        }
    }
}

/// Diagonal Gaussian over normalized actions.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionDistribution {
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
}

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

impl ActionDistribution {
    pub fn log_prob(&self, a: &[f64]) -> f64 {
        log_prob(&self.mean, &self.log_std, a)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.log_std)
            .map(|(m, s)| {
                let z: f64 = rng.sample(StandardNormal);
                let std = s.exp();
                if std == 0.0 {
                    *m
                } else {
                    m + std * z
                }
            })
            .collect()
    }
}

pub fn log_prob(mean: &[f64], log_std: &[f64], a: &[f64]) -> f64 {
    mean.iter()
        .zip(log_std)
        .zip(a)
        .map(|((m, s), x)| {
            let z = (x - m) / s.exp();
            -0.5 * z * z - s - HALF_LN_2PI
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActMode {
    Sample,
    Mean,
}

/// Single-query result of [`Policy::forward`].
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    pub dist: ActionDistribution,
    pub value: f64,
    pub attention: Option<QueryAttention>,
}

/// Network outputs with the tape needed for back-propagation.
pub struct Pass {
    pub out: Vec<f64>,
    tape: NetTape,
}

/// Prompt prepared for repeated inference.
#[derive(Debug, Clone)]
pub struct PreparedPrompt {
    pub input: PromptInput,
    pub actor: PromptCache,
    pub critic: PromptCache,
}

/// Actor and critic with independent parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub cfg: PolicyConfig,
    pub actor: Network,
    pub critic: Network,
    pub actor_params: ParamStore,
    pub critic_params: ParamStore,
    log_std: usize,
}

pub const CHECKPOINT_VERSION: u32 = 1;
const CHECKPOINT_FORMAT: &str = "trajlab-policy";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    seed: u64,
    config: PolicyConfig,
    actor: Vec<NamedArray>,
    critic: Vec<NamedArray>,
}

impl Policy {
    pub fn new(cfg: &PolicyConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut ab = ParamBuilder::new(seed);
        let actor = Network::build(&mut ab, cfg, cfg.action_dim, 0.01);
        let log_std = ab.add("log_std", &[cfg.action_dim], Init::Const(cfg.init_log_std));
        let mut cb = ParamBuilder::new(seed.wrapping_add(0x5EED));
        let critic = Network::build(&mut cb, cfg, 1, 1.0);
        let mut actor_params = ab.finish();
        actor_params.seed = seed;
        Ok(Policy {
            cfg: cfg.clone(),
            actor,
            critic,
            actor_params,
            critic_params: cb.finish(),
            log_std,
        })
    }

    pub fn log_std(&self) -> &[f64] {
        &self.actor_params.data[self.log_std..self.log_std + self.cfg.action_dim]
    }

    pub fn log_std_offset(&self) -> usize {
        self.log_std
    }

    pub fn seed(&self) -> u64 {
        self.actor_params.seed
    }

    /// Prompt states and indices in network layout; enforces `l_max`.
    pub fn prompt_input(&self, prompt: &Prompt) -> Result<PromptInput> {
        if prompt.len() > self.cfg.l_max {
            return Err(Error::config(format!(
                "prompt has {} states, limit is {}",
                prompt.len(),
                self.cfg.l_max
            )));
        }
        let mut states = Vec::with_capacity(prompt.len() * self.cfg.high_dim);
        for s in &prompt.states {
            if s.dim() != self.cfg.high_dim {
                return Err(Error::DimensionMismatch {
                    expected: self.cfg.high_dim,
                    got: s.dim(),
                });
            }
            states.extend_from_slice(s.as_slice());
        }
        Ok(PromptInput {
            states,
            indices: prompt.indices.clone(),
        })
    }

    /// Token sequence of a prompt (`n × embed_dim`, row-major).
    pub fn encode_prompt(&self, prompt: &Prompt) -> Result<Vec<f64>> {
        let input = self.prompt_input(prompt)?;
        let enc = self
            .actor
            .encoders()
            .ok_or_else(|| Error::Unsupported("feedforward backbones have no prompt encoder".into()))?;
        Ok(enc.encode_prompt(&self.actor_params.data, &input.states, &input.indices))
    }

    /// Goal fed to the feedforward baselines; empty for sequence backbones.
    pub fn goal_for(&self, tracker: &MatchTracker) -> Vec<f64> {
        match self.cfg.backbone {
            BackboneKind::FeedforwardGc => tracker.trajectory().last().0.clone(),
            BackboneKind::FeedforwardSgc => select_subgoal(tracker, tracker.trajectory(), self.cfg.sgc_lookahead).0,
            _ => Vec::new(),
        }
    }

    pub fn query(&self, prompt: usize, history: &[LowState], goal: Vec<f64>) -> Result<QueryInput> {
        if history.len() != self.cfg.k {
            return Err(Error::DimensionMismatch {
                expected: self.cfg.k,
                got: history.len(),
            });
        }
        let mut lows = Vec::with_capacity(self.cfg.k * self.cfg.low_dim);
        for s in history {
            if s.dim() != self.cfg.low_dim {
                return Err(Error::DimensionMismatch {
                    expected: self.cfg.low_dim,
                    got: s.dim(),
                });
            }
            lows.extend_from_slice(s.as_slice());
        }
        let want_goal = if self.cfg.backbone.is_sequence() { 0 } else { self.cfg.high_dim };
        if goal.len() != want_goal {
            return Err(Error::DimensionMismatch {
                expected: want_goal,
                got: goal.len(),
            });
        }
        Ok(QueryInput { prompt, lows, goal })
    }

    /// Full single-step evaluation without caching.
    pub fn forward(&self, prompt: &PromptInput, history: &[LowState], goal: Vec<f64>) -> Result<PolicyOutput> {
        let batch = Batch {
            prompts: vec![PromptSlot::Input(prompt)],
            queries: vec![self.query(0, history, goal)?],
        };
        let (mean, _, att) = self.actor.forward(&self.actor_params.data, &batch, None, true);
        let (value, _, _) = self.critic.forward(&self.critic_params.data, &batch, None, false);
        Ok(PolicyOutput {
            dist: ActionDistribution {
                mean,
                log_std: self.log_std().to_vec(),
            },
            value: value[0],
            attention: att.and_then(|mut a| a.pop()),
        })
    }

    pub fn prepare(&self, input: PromptInput) -> PreparedPrompt {
        PreparedPrompt {
            actor: self.actor.cache_prompt(&self.actor_params.data, &input),
            critic: self.critic.cache_prompt(&self.critic_params.data, &input),
            input,
        }
    }

    /// Batched cached inference: `queries[i].prompt` indexes `prompts`.
    /// Returns means (`queries × action_dim`) and values.
    pub fn infer(&self, prompts: &[&PreparedPrompt], queries: Vec<QueryInput>, want_value: bool) -> (Vec<f64>, Vec<f64>) {
        let mut batch = Batch {
            prompts: prompts.iter().map(|p| PromptSlot::Cached(&p.actor)).collect(),
            queries,
        };
        let (mean, _, _) = self.actor.forward(&self.actor_params.data, &batch, None, false);
        let values = if want_value {
            batch.prompts = prompts.iter().map(|p| PromptSlot::Cached(&p.critic)).collect();
            self.critic.forward(&self.critic_params.data, &batch, None, false).0
        } else {
            Vec::new()
        };
        (mean, values)
    }

    /// Action for one step; `history` holds exactly `k` low states.
    pub fn act<R: Rng + ?Sized>(
        &self,
        history: &[LowState],
        prompt: &Prompt,
        goal: Vec<f64>,
        mode: ActMode,
        rng: &mut R,
    ) -> Result<ActionVec> {
        let input = self.prompt_input(prompt)?;
        let out = self.forward(&input, history, goal)?;
        Ok(ActionVec(match mode {
            ActMode::Mean => out.dist.mean,
            ActMode::Sample => out.dist.sample(rng),
        }))
    }

    /// Actor forward kept for back-propagation; `rng` turns dropout on.
    pub fn actor_pass(&self, batch: &Batch<'_>, rng: Option<&mut ChaCha8Rng>) -> Pass {
        let (out, tape, _) = self.actor.forward(&self.actor_params.data, batch, rng, false);
        Pass { out, tape }
    }

    pub fn critic_pass(&self, batch: &Batch<'_>, rng: Option<&mut ChaCha8Rng>) -> Pass {
        let (out, tape, _) = self.critic.forward(&self.critic_params.data, batch, rng, false);
        Pass { out, tape }
    }

    /// Log-probabilities of `actions` (`queries × action_dim`) under a pass.
    pub fn log_probs(&self, pass: &Pass, actions: &[f64]) -> Vec<f64> {
        let a = self.cfg.action_dim;
        let ls = self.log_std();
        pass.out
            .chunks(a)
            .zip(actions.chunks(a))
            .map(|(m, x)| log_prob(m, ls, x))
            .collect()
    }

    /// Accumulates the gradient of `Σ weights[i] · log π(actions[i])` into
    /// `grad` (actor layout).
    pub fn actor_backward(&self, batch: &Batch<'_>, pass: &Pass, actions: &[f64], weights: &[f64], grad: &mut [f64]) {
        let a = self.cfg.action_dim;
        let ls = self.log_std().to_vec();
        let mut d_out = vec![0.0; pass.out.len()];
        for (q, w) in weights.iter().enumerate() {
            for i in 0..a {
                let var = (2.0 * ls[i]).exp();
                let diff = actions[q * a + i] - pass.out[q * a + i];
                d_out[q * a + i] = w * diff / var;
                grad[self.log_std + i] += w * (diff * diff / var - 1.0);
            }
        }
        self.actor.backward(&self.actor_params.data, grad, batch, &pass.tape, d_out);
    }

    /// Accumulates the gradient of `Σ d_values[i] · V(i)` into `grad`.
    pub fn critic_backward(&self, batch: &Batch<'_>, pass: &Pass, d_values: Vec<f64>, grad: &mut [f64]) {
        self.critic.backward(&self.critic_params.data, grad, batch, &pass.tape, d_values);
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_checkpoint_string())
    }

    pub fn to_checkpoint_string(&self) -> String {
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            seed: self.seed(),
            config: self.cfg.clone(),
            actor: self.actor_params.named(),
            critic: self.critic_params.named(),
        };
        serde_json::to_string(&file).expect("checkpoints serialize")
    }

    /// Loads a checkpoint; with `expected`, refuses a different config.
    pub fn load(path: &Path, expected: Option<&PolicyConfig>) -> Result<Self> {
        Self::from_checkpoint_str(&read_text(path)?, expected)
    }

    pub fn from_checkpoint_str(text: &str, expected: Option<&PolicyConfig>) -> Result<Self> {
        let file: CheckpointFile = serde_json::from_str(text).map_err(|e| Error::parse("checkpoint", e.to_string()))?;
        if file.format != CHECKPOINT_FORMAT {
            return Err(Error::config(format!("not a policy checkpoint (format `{}`)", file.format)));
        }
        if file.version != CHECKPOINT_VERSION {
            return Err(Error::config(format!(
                "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
                file.version
            )));
        }
        if let Some(want) = expected {
            if *want != file.config {
                return Err(Error::config("checkpoint policy config differs from the requested config"));
            }
        }
        let mut policy = Policy::new(&file.config, file.seed)?;
        policy.actor_params.load_named(&file.actor)?;
        policy.critic_params.load_named(&file.critic)?;
        Ok(policy)
    }
}

/// Sub-samples `traj` with skip `p`, widening the skip just enough to fit
/// `l_max` states when the plan is too long.
pub fn fit_prompt(traj: &AbstractTrajectory, p: usize, l_max: usize) -> Result<Prompt> {
    let n = traj.len();
    let mut skip = p.max(1);
    loop {
        match crate::plans::subsample(traj, skip, l_max) {
            Err(Error::PromptTooLong { .. }) if l_max >= 2 && skip < n => skip += 1,
            other => return other,
        }
    }
}

/// `s^H_{min(j_prev + lookahead, n)}`.
pub fn select_subgoal(tracker: &MatchTracker, traj: &AbstractTrajectory, lookahead: usize) -> HighState {
    let idx = (tracker.j_prev() + lookahead.max(1)).min(traj.len());
    traj.get1(idx).clone()
}

/// Rolling window of the last `k` low states; the first observation fills
/// the window at episode start.
#[derive(Debug, Clone, PartialEq)]
pub struct ObsHistory {
    k: usize,
    states: std::collections::VecDeque<LowState>,
}

impl ObsHistory {
    pub fn new(k: usize, first: LowState) -> Self {
        ObsHistory {
            k,
            states: std::iter::repeat_n(first, k).collect(),
        }
    }

    pub fn push(&mut self, s: LowState) {
        self.states.pop_front();
        self.states.push_back(s);
    }

    pub fn to_vec(&self) -> Vec<LowState> {
        self.states.iter().cloned().collect()
    }

    pub fn k(&self) -> usize {
        self.k
    }
}

/// Normalized action in `[-1, 1]` per dimension mapped onto env bounds.
pub fn scale_action(a: &[f64], bounds: &[f64]) -> ActionVec {
    ActionVec(a.iter().zip(bounds).map(|(v, b)| v.clamp(-1.0, 1.0) * b).collect())
}

#[cfg(test)]
mod tests;
