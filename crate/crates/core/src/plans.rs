//! Abstract planning: heuristic plan generators, trajectory preprocessing,
//! prompt sub-sampling, periodic chunking and replanning triggers.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::couch::Maze;
use crate::error::{Error, Result};
use crate::geometry::{Aabb, Vec2};
use crate::reward::MatchTracker;
use crate::state::{AbstractTrajectory, EnvKind, HighState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanConfig {
    /// Target distance between consecutive high states.
    pub epsilon_spacing: f64,
    /// Prompt skip step.
    pub p: usize,
    /// Maximum prompt length.
    pub l_max: usize,
    pub seed: u64,
}

impl PlanConfig {
    pub fn for_env(kind: EnvKind) -> Self {
        match kind {
            EnvKind::BoxPusher => PlanConfig {
                epsilon_spacing: 0.2,
                p: 2,
                l_max: 32,
                seed: 0,
            },
            EnvKind::Couch => PlanConfig {
                epsilon_spacing: 1.0,
                p: 10,
                l_max: 50,
                seed: 0,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon_spacing > 0.0 && self.epsilon_spacing.is_finite()) {
            return Err(Error::config("epsilon_spacing must be positive"));
        }
        if self.l_max < 2 {
            return Err(Error::config("l_max must be at least 2"));
        }
        Ok(())
    }
}

/// Drops states closer than `epsilon_spacing` to the previously kept state
/// and subdivides every remaining segment into `ceil(len / epsilon_spacing)`
/// equal pieces. The first and last input states are kept verbatim.
pub fn preprocess(traj: &AbstractTrajectory, epsilon_spacing: f64) -> AbstractTrajectory {
    let states = traj.states();
    let last_idx = states.len() - 1;
    let mut kept: Vec<&HighState> = vec![&states[0]];
    for (i, s) in states.iter().enumerate().skip(1) {
        let close = s.distance(kept.last().unwrap()) < epsilon_spacing;
        if i < last_idx {
            if !close {
                kept.push(s);
            }
        } else {
            // the final state always survives; kept interior states that
            // crowd it are removed instead
            while kept.len() > 1 && s.distance(kept.last().unwrap()) < epsilon_spacing {
                kept.pop();
            }
            kept.push(s);
        }
    }
    let mut out: Vec<HighState> = Vec::with_capacity(kept.len() * 2);
    out.push(kept[0].clone());
    for w in kept.windows(2) {
        let (a, b) = (w[0], w[1]);
        let len = a.distance(b);
        let pieces = ((len / epsilon_spacing) - 1e-9).ceil().max(1.0) as usize;
        for k in 1..pieces {
            out.push(a.lerp(b, k as f64 / pieces as f64));
        }
        out.push(b.clone());
    }
    AbstractTrajectory::new(out).expect("non-empty, uniform dimension")
}

/// Sub-sampled prompt: selected states plus their original 1-based indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    pub states: Vec<HighState>,
    pub indices: Vec<usize>,
}

impl Prompt {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Every state, unsampled.
    pub fn full(traj: &AbstractTrajectory) -> Self {
        Prompt {
            states: traj.states().to_vec(),
            indices: (1..=traj.len()).collect(),
        }
    }
}

/// Indices kept by sub-sampling a trajectory of length `n` with skip `p`.
pub fn subsample_indices(n: usize, p: usize) -> Vec<usize> {
    let step = p.max(1);
    let mut idx: Vec<usize> = (1..n).step_by(step).collect();
    idx.push(n);
    idx
}

/// Keeps states `1, p+1, 2p+1, ...` among the first `n - 1`, then the last.
pub fn subsample(traj: &AbstractTrajectory, p: usize, l_max: usize) -> Result<Prompt> {
    let n = traj.len();
    let indices = subsample_indices(n, p);
    if indices.len() > l_max {
        return Err(Error::PromptTooLong {
            n,
            p,
            len: indices.len(),
            l_max,
        });
    }
    Ok(Prompt {
        states: indices.iter().map(|&i| traj.get1(i).clone()).collect(),
        indices,
    })
}

/// Greedy split so no chunk holds two states closer than `epsilon / 2`.
pub fn chunk_periodic(traj: &AbstractTrajectory, epsilon: f64) -> Vec<AbstractTrajectory> {
    let mut chunks = Vec::new();
    let mut current: Vec<HighState> = Vec::new();
    for s in traj.states() {
        if current.iter().any(|c| c.distance(s) < epsilon / 2.0) {
            chunks.push(AbstractTrajectory::new(std::mem::take(&mut current)).expect("non-empty chunk"));
        }
        current.push(s.clone());
    }
    chunks.push(AbstractTrajectory::new(current).expect("non-empty chunk"));
    chunks
}

/// Axis order of a Box Pusher plan: which axis the agent approaches the box
/// along first, and which axis the box is carried along first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PlanVariant {
    pub approach_x_first: bool,
    pub carry_x_first: bool,
}

impl PlanVariant {
    pub const ALL: [PlanVariant; 4] = [
        PlanVariant {
            approach_x_first: true,
            carry_x_first: true,
        },
        PlanVariant {
            approach_x_first: true,
            carry_x_first: false,
        },
        PlanVariant {
            approach_x_first: false,
            carry_x_first: true,
        },
        PlanVariant {
            approach_x_first: false,
            carry_x_first: false,
        },
    ];

    /// Raw corner points `[agent xy, box xy]`: start, approach corner, grasp,
    /// carry corner, goal. Once grasped the box sits under the agent.
    pub fn waypoints(&self, high: [f64; 4], goal: Vec2) -> Vec<[f64; 4]> {
        let [ax, ay, bx, by] = high;
        let [gx, gy] = goal;
        let mid_approach = if self.approach_x_first {
            [bx, ay, bx, by]
        } else {
            [ax, by, bx, by]
        };
        let mid_carry = if self.carry_x_first {
            [gx, by, gx, by]
        } else {
            [bx, gy, bx, gy]
        };
        vec![high, mid_approach, [bx, by, bx, by], mid_carry, [gx, gy, gx, gy]]
    }

    /// Every path segment, swept by a box-width square and inflated by one
    /// more box width, must stay clear of all obstacles.
    pub fn is_feasible(&self, high: [f64; 4], goal: Vec2, obstacles: &[Aabb], box_width: f64) -> bool {
        let pts = self.waypoints(high, goal);
        pts.windows(2).all(|w| {
            let a = Aabb::square([w[0][0], w[0][1]], box_width);
            let b = Aabb::square([w[1][0], w[1][1]], box_width);
            let swept = a.union(&b).inflate(box_width);
            obstacles.iter().all(|o| !o.overlaps(&swept))
        })
    }
}

/// Variants whose paths keep clear of the obstacles.
pub fn boxpusher_variants(high: [f64; 4], goal: Vec2, obstacles: &[Aabb], box_width: f64) -> Vec<PlanVariant> {
    PlanVariant::ALL
        .into_iter()
        .filter(|v| v.is_feasible(high, goal, obstacles, box_width))
        .collect()
}

/// Axis-by-axis Box Pusher heuristic: approach the box, grasp, carry to the
/// goal. The variant is drawn uniformly among obstacle-free ones.
pub fn plan_boxpusher<R: Rng + ?Sized>(
    high: &HighState,
    goal: Vec2,
    obstacles: &[Aabb],
    box_width: f64,
    epsilon_spacing: f64,
    rng: &mut R,
) -> Result<AbstractTrajectory> {
    if high.dim() != 4 {
        return Err(Error::DimensionMismatch {
            expected: 4,
            got: high.dim(),
        });
    }
    let h = [high.0[0], high.0[1], high.0[2], high.0[3]];
    let variants = boxpusher_variants(h, goal, obstacles, box_width);
    if variants.is_empty() {
        return Err(Error::Planning("no obstacle-free plan variant".into()));
    }
    let v = variants[rng.random_range(0..variants.len())];
    plan_boxpusher_variant(h, goal, v, epsilon_spacing)
}

pub fn plan_boxpusher_variant(
    high: [f64; 4],
    goal: Vec2,
    variant: PlanVariant,
    epsilon_spacing: f64,
) -> Result<AbstractTrajectory> {
    let raw = AbstractTrajectory::new(
        variant
            .waypoints(high, goal)
            .into_iter()
            .map(|p| HighState(p.to_vec()))
            .collect(),
    )?;
    Ok(preprocess(&raw, epsilon_spacing))
}

/// The maze path itself, start to goal, as cell centers.
pub fn plan_couch(maze: &Maze, epsilon_spacing: f64) -> Result<AbstractTrajectory> {
    let raw = AbstractTrajectory::new(maze.path_centers().into_iter().map(|c| HighState(c.to_vec())).collect())?;
    Ok(preprocess(&raw, epsilon_spacing))
}

/// Replan from an arbitrary position: the current point followed by the rest
/// of the maze path after the nearest path cell.
pub fn plan_couch_from(maze: &Maze, position: Vec2, epsilon_spacing: f64) -> Result<AbstractTrajectory> {
    let centers = maze.path_centers();
    let nearest = maze.nearest_path_index(position);
    let mut states = vec![HighState(position.to_vec())];
    states.extend(centers[nearest + 1..].iter().map(|c| HighState(c.to_vec())));
    if states.len() == 1 {
        states.push(HighState(centers[centers.len() - 1].to_vec()));
    }
    Ok(preprocess(&AbstractTrajectory::new(states)?, epsilon_spacing))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerKind {
    /// Replan once the final high state is matched.
    FinalStateMatched,
    /// Replan when the plan is unfinished after `max_steps`.
    Timeout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplanTrigger {
    pub kind: TriggerKind,
    pub max_steps: usize,
}

impl ReplanTrigger {
    pub fn final_state() -> Self {
        ReplanTrigger {
            kind: TriggerKind::FinalStateMatched,
            max_steps: 1,
        }
    }

    pub fn timeout(max_steps: usize) -> Self {
        ReplanTrigger {
            kind: TriggerKind::Timeout,
            max_steps: max_steps.max(1),
        }
    }
}

/// `step` counts steps since the current plan was issued.
pub fn should_replan(tracker: &MatchTracker, step: usize, trigger: &ReplanTrigger) -> bool {
    match trigger.kind {
        TriggerKind::FinalStateMatched => tracker.j_prev() == tracker.n(),
        TriggerKind::Timeout => step >= trigger.max_steps && tracker.j_prev() < tracker.n(),
    }
}
