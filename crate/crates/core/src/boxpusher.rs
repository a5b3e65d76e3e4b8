//! Box Pusher: a square agent that can only push a square box towards a goal.
//!
//! Dynamics are kinematic. The clipped delta is applied one axis at a time
//! (x, then y); on each axis the agent sweeps until it touches an obstacle or
//! the arena wall, and if the box lies ahead it is pushed by the penetration
//! depth, itself stopping at obstacles. The box can therefore never move
//! against the agent's motion.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{clamp_inside, dist, sweep_axis, Aabb, Vec2};
use crate::plans::{boxpusher_variants, PlanVariant};
use crate::state::{ActionVec, EnvKind, LowState};

/// Arena side length in box widths.
pub const ARENA_WIDTHS: f64 = 20.0;
/// Max per-step displacement in box widths.
pub const STEP_WIDTHS: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoxPusherConfig {
    pub box_width: f64,
    /// Obstacle count range for the test variant; `(0, 0)` for training.
    pub min_obstacles: usize,
    pub max_obstacles: usize,
    /// Upper bound on `|agent-box|_1 + sqrt(2) |box-goal|_1` for sampled
    /// layouts so the abstract plan fits the prompt budget.
    pub max_route: f64,
    pub max_episode_len: usize,
}

impl Default for BoxPusherConfig {
    fn default() -> Self {
        BoxPusherConfig {
            box_width: 0.2,
            min_obstacles: 0,
            max_obstacles: 0,
            max_route: 11.0,
            max_episode_len: 200,
        }
    }
}

impl BoxPusherConfig {
    pub fn test_variant() -> Self {
        BoxPusherConfig {
            min_obstacles: 1,
            max_obstacles: 3,
            ..Default::default()
        }
    }

    pub fn delta_max(&self) -> f64 {
        STEP_WIDTHS * self.box_width
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.box_width > 0.0 && self.box_width.is_finite()) {
            return Err(Error::config("box_width must be positive"));
        }
        if self.min_obstacles > self.max_obstacles {
            return Err(Error::config("min_obstacles exceeds max_obstacles"));
        }
        if self.max_episode_len == 0 {
            return Err(Error::config("max_episode_len must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxPusherState {
    pub agent: Vec2,
    #[serde(rename = "box")]
    pub box_pos: Vec2,
    pub goal: Vec2,
    pub obstacles: Vec<Aabb>,
    pub box_width: f64,
    pub step_count: usize,
}

impl BoxPusherState {
    pub fn new(agent: Vec2, box_pos: Vec2, goal: Vec2, box_width: f64) -> Self {
        BoxPusherState {
            agent,
            box_pos,
            goal,
            obstacles: Vec::new(),
            box_width,
            step_count: 0,
        }
    }

    pub fn arena(&self) -> Aabb {
        arena(self.box_width)
    }

    pub fn agent_rect(&self) -> Aabb {
        Aabb::square(self.agent, self.box_width)
    }

    pub fn box_rect(&self) -> Aabb {
        Aabb::square(self.box_pos, self.box_width)
    }

    pub fn delta_max(&self) -> f64 {
        STEP_WIDTHS * self.box_width
    }

    /// High-level counterpart: agent xy then box xy.
    pub fn high(&self) -> [f64; 4] {
        [self.agent[0], self.agent[1], self.box_pos[0], self.box_pos[1]]
    }
}

pub fn arena(box_width: f64) -> Aabb {
    let h = ARENA_WIDTHS * box_width / 2.0;
    Aabb::new([-h, -h], [h, h])
}

/// Samples a fresh layout.
pub fn reset<R: Rng + ?Sized>(cfg: &BoxPusherConfig, rng: &mut R) -> Result<BoxPusherState> {
    cfg.validate()?;
    let bw = cfg.box_width;
    let half = ARENA_WIDTHS * bw / 2.0 - 2.0 * bw;
    let sample = |rng: &mut R| -> Vec2 { [rng.random_range(-half..=half), rng.random_range(-half..=half)] };
    for _ in 0..1000 {
        let agent = sample(rng);
        let box_pos = sample(rng);
        let goal = sample(rng);
        let min_sep = 2.0 * bw;
        if dist(agent, box_pos) < min_sep || dist(box_pos, goal) < min_sep || dist(agent, goal) < min_sep {
            continue;
        }
        let approach = (agent[0] - box_pos[0]).abs() + (agent[1] - box_pos[1]).abs();
        let carry = (box_pos[0] - goal[0]).abs() + (box_pos[1] - goal[1]).abs();
        if approach + std::f64::consts::SQRT_2 * carry > cfg.max_route {
            continue;
        }
        let mut state = BoxPusherState::new(agent, box_pos, goal, bw);
        if cfg.max_obstacles > 0 {
            let count = rng.random_range(cfg.min_obstacles..=cfg.max_obstacles);
            match place_obstacles(&state, count, rng) {
                Some(obs) => state.obstacles = obs,
                None => continue,
            }
        }
        return Ok(state);
    }
    Err(Error::config("box pusher sampler failed after 1000 attempts"))
}

/// Places obstacles on random plan-variant paths so that they matter, while
/// keeping start/goal footprints clear and at least one variant feasible.
fn place_obstacles<R: Rng + ?Sized>(state: &BoxPusherState, count: usize, rng: &mut R) -> Option<Vec<Aabb>> {
    let bw = state.box_width;
    let footprints = [
        Aabb::square(state.agent, bw).inflate(bw),
        Aabb::square(state.box_pos, bw).inflate(bw),
        Aabb::square(state.goal, bw).inflate(bw),
    ];
    let arena = state.arena();
    let mut obstacles = Vec::with_capacity(count);
    let mut attempts = 0;
    while obstacles.len() < count {
        attempts += 1;
        if attempts > 200 {
            return None;
        }
        let variant = PlanVariant::ALL[rng.random_range(0..4)];
        let pts = variant.waypoints(state.high(), state.goal);
        let k = rng.random_range(0..pts.len() - 1);
        let t: f64 = rng.random_range(0.0..1.0);
        let a = [pts[k][0], pts[k][1]];
        let b = [pts[k + 1][0], pts[k + 1][1]];
        // obstacle sits on the agent/box path of that variant
        let c = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
        let ob = Aabb::square(c, 2.0 * bw);
        if !arena.contains(&ob) || footprints.iter().any(|f| f.overlaps(&ob)) {
            continue;
        }
        obstacles.push(ob);
        if boxpusher_variants(state.high(), state.goal, &obstacles, bw).is_empty() {
            obstacles.pop();
        }
    }
    Some(obstacles)
}

/// Moves along one axis, pushing the box if it is ahead of the agent.
fn move_axis(state: &mut BoxPusherState, axis: usize, delta: f64) {
    if delta == 0.0 {
        return;
    }
    let arena = state.arena();
    let agent = state.agent_rect();
    let bx = state.box_rect();
    let mut free = sweep_axis(&agent, axis, delta, &state.obstacles);
    free = clamp_inside(&agent, axis, free, &arena);

    let other = 1 - axis;
    let ahead = bx.overlaps_axis(&agent, other)
        && if delta > 0.0 {
            bx.min[axis] >= agent.max[axis] - crate::geometry::CONTACT_TOL
        } else {
            bx.max[axis] <= agent.min[axis] + crate::geometry::CONTACT_TOL
        };
    if ahead {
        let gap = if delta > 0.0 {
            (bx.min[axis] - agent.max[axis]).max(0.0)
        } else {
            (bx.max[axis] - agent.min[axis]).min(0.0)
        };
        if free.abs() > gap.abs() {
            let push = free - gap;
            let mut box_free = sweep_axis(&bx, axis, push, &state.obstacles);
            box_free = clamp_inside(&bx, axis, box_free, &arena);
            state.box_pos[axis] += box_free;
            free = gap + box_free;
        }
    }
    state.agent[axis] += free;
}

/// Applies one clipped delta-position action.
pub fn step_mut(state: &mut BoxPusherState, action: &ActionVec) {
    let dm = state.delta_max();
    let a = action.clipped(&[dm, dm]);
    move_axis(state, 0, a.0[0]);
    move_axis(state, 1, a.0[1]);
    state.step_count += 1;
}

pub fn step(state: &BoxPusherState, action: &ActionVec) -> BoxPusherState {
    let mut next = state.clone();
    step_mut(&mut next, action);
    next
}

/// `(agent, box, goal)`; obstacles are never observable.
pub fn observe(state: &BoxPusherState) -> LowState {
    LowState(vec![
        state.agent[0],
        state.agent[1],
        state.box_pos[0],
        state.box_pos[1],
        state.goal[0],
        state.goal[1],
    ])
}

pub fn task_reward(state: &BoxPusherState) -> f64 {
    -(0.1 * dist(state.agent, state.box_pos) + 0.9 * dist(state.box_pos, state.goal))
}

pub fn success(state: &BoxPusherState) -> bool {
    dist(state.box_pos, state.goal) < state.box_width
}

fn fmt_pair(v: Vec2) -> String {
    format!("{},{}", v[0], v[1])
}

fn parse_floats(what: &str, s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| Error::parse(what, format!("`{t}`: {e}"))))
        .collect()
}

fn parse_pair(what: &str, s: &str) -> Result<Vec2> {
    let v = parse_floats(what, s)?;
    if v.len() != 2 {
        return Err(Error::parse(what, format!("expected 2 values, got {}", v.len())));
    }
    Ok([v[0], v[1]])
}

impl BoxPusherState {
    /// Line-oriented `key=value` snapshot.
    pub fn to_snapshot(&self) -> String {
        let mut out = format!(
            "env={}\nbox_width={}\nagent={}\nbox={}\ngoal={}\nstep_count={}\n",
            EnvKind::BoxPusher.tag(),
            self.box_width,
            fmt_pair(self.agent),
            fmt_pair(self.box_pos),
            fmt_pair(self.goal),
            self.step_count
        );
        for o in &self.obstacles {
            out.push_str(&format!("obstacle={},{},{},{}\n", o.min[0], o.min[1], o.max[0], o.max[1]));
        }
        out
    }

    pub fn from_snapshot(text: &str) -> Result<Self> {
        let mut env = None;
        let mut bw = None;
        let (mut agent, mut box_pos, mut goal) = (None, None, None);
        let mut step_count = 0;
        let mut obstacles = Vec::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse("snapshot", format!("expected key=value, got `{line}`")))?;
            match k.trim() {
                "env" => env = Some(v.parse::<EnvKind>()?),
                "box_width" => {
                    bw = Some(v.trim().parse::<f64>().map_err(|e| Error::parse("box_width", e.to_string()))?)
                }
                "agent" => agent = Some(parse_pair("agent", v)?),
                "box" => box_pos = Some(parse_pair("box", v)?),
                "goal" => goal = Some(parse_pair("goal", v)?),
                "step_count" => {
                    step_count = v.trim().parse().map_err(|e| Error::parse("step_count", format!("{e}")))?
                }
                "obstacle" => {
                    let r = parse_floats("obstacle", v)?;
                    if r.len() != 4 {
                        return Err(Error::parse("obstacle", "expected min_x,min_y,max_x,max_y"));
                    }
                    obstacles.push(Aabb::new([r[0], r[1]], [r[2], r[3]]));
                }
                other => return Err(Error::parse("snapshot", format!("unknown key `{other}`"))),
            }
        }
        if env != Some(EnvKind::BoxPusher) {
            return Err(Error::parse("snapshot", "not a boxpusher snapshot"));
        }
        let need = |x: Option<Vec2>, name: &str| x.ok_or_else(|| Error::parse("snapshot", format!("missing `{name}`")));
        let box_width = bw.ok_or_else(|| Error::parse("snapshot", "missing `box_width`"))?;
        if box_width <= 0.0 {
            return Err(Error::config("box_width must be positive"));
        }
        Ok(BoxPusherState {
            agent: need(agent, "agent")?,
            box_pos: need(box_pos, "box")?,
            goal: need(goal, "goal")?,
            obstacles,
            box_width,
            step_count,
        })
    }
}
