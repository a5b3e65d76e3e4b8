//! Environment-agnostic wrapper over the two executable worlds.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::boxpusher::{self, BoxPusherConfig, BoxPusherState};
use crate::couch::{self, CouchConfig, CouchState, Maze};
use crate::error::{Error, Result};
use crate::plans;
use crate::state::{AbstractTrajectory, ActionVec, EnvKind, HighState, LowState, StateMap};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EnvConfig {
    BoxPusher(BoxPusherConfig),
    Couch(CouchConfig),
}

impl EnvConfig {
    pub fn default_for(kind: EnvKind) -> Self {
        match kind {
            EnvKind::BoxPusher => EnvConfig::BoxPusher(BoxPusherConfig::default()),
            EnvKind::Couch => EnvConfig::Couch(CouchConfig::default()),
        }
    }

    pub fn kind(&self) -> EnvKind {
        match self {
            EnvConfig::BoxPusher(_) => EnvKind::BoxPusher,
            EnvConfig::Couch(_) => EnvKind::Couch,
        }
    }

    pub fn max_episode_len(&self) -> usize {
        match self {
            EnvConfig::BoxPusher(c) => c.max_episode_len,
            EnvConfig::Couch(c) => c.max_episode_len,
        }
    }

    pub fn with_max_episode_len(mut self, len: usize) -> Self {
        match &mut self {
            EnvConfig::BoxPusher(c) => c.max_episode_len = len,
            EnvConfig::Couch(c) => c.max_episode_len = len,
        }
        self
    }

    /// Per-coordinate action bounds.
    pub fn action_bounds(&self) -> Vec<f64> {
        match self {
            EnvConfig::BoxPusher(c) => vec![c.delta_max(); 2],
            EnvConfig::Couch(c) => vec![c.max_force, c.max_force, c.max_torque],
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            EnvConfig::BoxPusher(c) => c.validate(),
            EnvConfig::Couch(c) => c.validate(),
        }
    }

    /// Parses an environment tag with an optional couch variant suffix:
    /// `boxpusher`, `boxpusher-obstacles`, `couch`, `couch-short-3`, `couch-long-5`.
    pub fn from_tag(tag: &str) -> Result<Self> {
        let t = tag.trim().to_ascii_lowercase();
        if t == "boxpusher" {
            return Ok(EnvConfig::BoxPusher(BoxPusherConfig::default()));
        }
        if t == "boxpusher-obstacles" {
            return Ok(EnvConfig::BoxPusher(BoxPusherConfig::test_variant()));
        }
        if t == "couch" {
            return Ok(EnvConfig::Couch(CouchConfig::default()));
        }
        if let Some(rest) = t.strip_prefix("couch-") {
            let (variant, n) = rest
                .split_once('-')
                .ok_or_else(|| Error::config(format!("bad environment tag `{tag}`")))?;
            let n_corners: usize = n
                .parse()
                .map_err(|_| Error::config(format!("bad corner count in `{tag}`")))?;
            return Ok(EnvConfig::Couch(CouchConfig {
                variant: variant.parse()?,
                n_corners,
                ..CouchConfig::default()
            }));
        }
        Err(Error::config(format!("unknown environment tag `{tag}`")))
    }
}

#[derive(Debug, Clone)]
pub enum World {
    BoxPusher(BoxPusherState),
    Couch { maze: Arc<Maze>, state: CouchState },
}

/// One executable environment instance with its configuration.
#[derive(Debug, Clone)]
pub struct Env {
    pub cfg: EnvConfig,
    pub world: World,
}

impl Env {
    pub fn reset<R: Rng + ?Sized>(cfg: &EnvConfig, rng: &mut R) -> Result<Env> {
        let world = match cfg {
            EnvConfig::BoxPusher(c) => World::BoxPusher(boxpusher::reset(c, rng)?),
            EnvConfig::Couch(c) => {
                let (maze, state) = couch::reset(c, rng)?;
                World::Couch {
                    maze: Arc::new(maze),
                    state,
                }
            }
        };
        Ok(Env { cfg: *cfg, world })
    }

    pub fn kind(&self) -> EnvKind {
        self.cfg.kind()
    }

    pub fn observe(&self) -> LowState {
        match &self.world {
            World::BoxPusher(s) => boxpusher::observe(s),
            World::Couch { maze, state } => couch::observe(state, maze),
        }
    }

    pub fn high(&self) -> HighState {
        StateMap::new(self.kind())
            .apply(&self.observe())
            .expect("observation matches its own environment")
    }

    pub fn step(&mut self, action: &ActionVec) {
        match (&mut self.world, &self.cfg) {
            (World::BoxPusher(s), _) => boxpusher::step_mut(s, action),
            (World::Couch { maze, state }, EnvConfig::Couch(c)) => couch::step_mut(state, maze, action, c),
            _ => unreachable!("world and config kinds agree"),
        }
    }

    pub fn task_reward(&self) -> f64 {
        match (&self.world, &self.cfg) {
            (World::BoxPusher(s), _) => boxpusher::task_reward(s),
            (World::Couch { maze, state }, EnvConfig::Couch(c)) => couch::task_reward(state, maze, c),
            _ => unreachable!("world and config kinds agree"),
        }
    }

    pub fn success(&self) -> bool {
        match (&self.world, &self.cfg) {
            (World::BoxPusher(s), _) => boxpusher::success(s),
            (World::Couch { maze, state }, EnvConfig::Couch(c)) => couch::success(state, maze, c),
            _ => unreachable!("world and config kinds agree"),
        }
    }

    pub fn step_count(&self) -> usize {
        match &self.world {
            World::BoxPusher(s) => s.step_count,
            World::Couch { state, .. } => state.step_count,
        }
    }

    /// Heuristic abstract plan from the current state.
    pub fn plan<R: Rng + ?Sized>(&self, epsilon_spacing: f64, rng: &mut R) -> Result<AbstractTrajectory> {
        match &self.world {
            World::BoxPusher(s) => {
                plans::plan_boxpusher(&self.high(), s.goal, &s.obstacles, s.box_width, epsilon_spacing, rng)
            }
            World::Couch { maze, state } => {
                if state.step_count == 0 && state.pos == couch::cell_center(maze.start()) {
                    plans::plan_couch(maze, epsilon_spacing)
                } else {
                    plans::plan_couch_from(maze, state.pos, epsilon_spacing)
                }
            }
        }
    }

    pub fn to_snapshot(&self) -> String {
        match &self.world {
            World::BoxPusher(s) => s.to_snapshot(),
            World::Couch { maze, state } => couch::to_snapshot(state, maze),
        }
    }

    /// Reads a snapshot written by [`Env::to_snapshot`]. Dynamics constants
    /// are not part of snapshots and take their defaults.
    pub fn from_snapshot(text: &str) -> Result<Env> {
        let first = text
            .lines()
            .map(str::trim)
            .find(|l| !l.is_empty())
            .ok_or_else(|| Error::parse("snapshot", "empty"))?;
        if first.starts_with("env=couch") {
            let cfg = CouchConfig::default();
            let (maze, state) = couch::from_snapshot(text, &cfg)?;
            let cfg = CouchConfig {
                variant: maze.variant,
                n_corners: maze.n_corners,
                ..cfg
            };
            Ok(Env {
                cfg: EnvConfig::Couch(cfg),
                world: World::Couch {
                    maze: Arc::new(maze),
                    state,
                },
            })
        } else {
            let s = BoxPusherState::from_snapshot(text)?;
            let cfg = BoxPusherConfig {
                box_width: s.box_width,
                ..BoxPusherConfig::default()
            };
            Ok(Env {
                cfg: EnvConfig::BoxPusher(cfg),
                world: World::BoxPusher(s),
            })
        }
    }

    pub fn maze(&self) -> Option<&Arc<Maze>> {
        match &self.world {
            World::Couch { maze, .. } => Some(maze),
            _ => None,
        }
    }
}
