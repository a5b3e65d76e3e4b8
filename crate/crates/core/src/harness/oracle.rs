//! Scripted controllers with privileged knowledge, used to validate the
//! environments, the planners and the reward.

use crate::boxpusher::BoxPusherState;
use crate::couch::{cell_center, Cell, CouchConfig, CouchState, Maze};
use crate::geometry::{dist, wrap_angle, Vec2};
use crate::reward::MatchTracker;
use crate::state::{AbstractTrajectory, ActionVec};

/// Box displacement larger than this from every remaining plan box position
/// counts as off-plan; the oracle then waits for a new plan.
const OFF_PLAN_WIDTHS: f64 = 2.0;
/// Clearance kept from the box while walking around it.
const WALK_MARGIN: f64 = 0.05;

fn is_carry(s: &[f64]) -> bool {
    (s[0] - s[2]).abs() < 1e-9 && (s[1] - s[3]).abs() < 1e-9
}

fn axis_dir(from: Vec2, to: Vec2) -> Option<(usize, f64)> {
    let dx = to[0] - from[0];
    let dy = to[1] - from[1];
    if dx.abs().max(dy.abs()) < 1e-9 {
        None
    } else if dx.abs() >= dy.abs() {
        Some((0, dx.signum()))
    } else {
        Some((1, dy.signum()))
    }
}

/// Next box target along the plan: the last state of the straight carry run
/// that starts after the farthest matched index, with its push axis.
fn next_push(state: &BoxPusherState, traj: &AbstractTrajectory, j_prev: usize) -> Option<(Vec2, usize, f64)> {
    let states = traj.states();
    let start = j_prev.min(states.len() - 1);
    let mut from = state.box_pos;
    let mut chosen: Option<(Vec2, usize, f64)> = None;
    for s in &states[start..] {
        if !is_carry(&s.0) {
            continue;
        }
        let b = [s.0[2], s.0[3]];
        match (chosen, axis_dir(from, b)) {
            (None, None) => {}
            (None, Some((axis, sign))) => {
                chosen = Some((b, axis, sign));
                from = b;
            }
            (Some((_, axis, sign)), Some((a2, s2))) if a2 == axis && s2 == sign => {
                chosen = Some((b, axis, sign));
                from = b;
            }
            (Some(_), Some(_)) => break,
            (Some(_), None) => {}
        }
    }
    chosen
}

fn off_plan(state: &BoxPusherState, traj: &AbstractTrajectory, j_prev: usize) -> bool {
    let states = traj.states();
    let start = j_prev.saturating_sub(1).min(states.len() - 1);
    let nearest = states[start..]
        .iter()
        .map(|s| dist([s.0[2], s.0[3]], state.box_pos))
        .fold(f64::INFINITY, f64::min);
    nearest > OFF_PLAN_WIDTHS * state.box_width
}

fn clamp(v: f64, m: f64) -> f64 {
    v.clamp(-m, m)
}

/// Deterministic pusher: walks around the box to the face opposite the next
/// push direction, then pushes the box along the plan's carry runs. Holds
/// still once the real box has left the plan.
pub fn oracle_boxpusher(state: &BoxPusherState, traj: &AbstractTrajectory, tracker: &MatchTracker) -> ActionVec {
    let dm = state.delta_max();
    let bw = state.box_width;
    let j = tracker.j_prev();
    if off_plan(state, traj, j) {
        return ActionVec::zeros(2);
    }
    let Some((target, axis, sign)) = next_push(state, traj, j) else {
        // Nothing left to push: follow the final agent coordinates if any.
        let last = traj.last();
        if is_carry(&last.0) {
            return ActionVec::zeros(2);
        }
        return ActionVec(vec![clamp(last.0[0] - state.agent[0], dm), clamp(last.0[1] - state.agent[1], dm)]);
    };
    let perp = 1 - axis;
    let rel = [state.agent[0] - state.box_pos[0], state.agent[1] - state.box_pos[1]];
    let along = rel[axis] * sign;
    let side = rel[perp];
    let mut a = [0.0; 2];
    if along <= -bw + 1e-9 {
        if side.abs() > 0.25 * bw {
            // Behind the box: slide sideways into line, closing in if far back.
            a[perp] = clamp(-side, dm);
            if along < -bw - WALK_MARGIN {
                a[axis] = sign * clamp((-bw - WALK_MARGIN) - along, dm).max(0.0);
            }
        } else {
            let remaining = (target[axis] - state.box_pos[axis]) * sign;
            let gap = -bw - along;
            a[axis] = sign * (gap + remaining).clamp(0.0, dm);
            a[perp] = clamp(-side, dm);
        }
    } else if side.abs() < bw + WALK_MARGIN - 1e-9 {
        let s = if side >= 0.0 { 1.0 } else { -1.0 };
        a[perp] = s * clamp(bw + WALK_MARGIN - side.abs(), dm);
    } else {
        a[axis] = -sign * clamp(along + bw + WALK_MARGIN, dm);
    }
    ActionVec(a.to_vec())
}

/// Couch route through the maze as straight runs with the long-axis
/// direction to hold on each: for every corner, shift sideways in the
/// chamber, run down the two-lane corridor, then turn into the leg.
#[derive(Debug, Clone)]
pub struct CouchRoute {
    pub points: Vec<Vec2>,
    /// Long-axis direction for the run from `points[i]` to `points[i + 1]`.
    pub axes: Vec<Cell>,
}

impl CouchRoute {
    pub fn new(maze: &Maze) -> Self {
        let mut points = Vec::new();
        let mut axes = Vec::new();
        for (c, k) in maze.corners.iter().enumerate() {
            let ch = cell_center(maze.chambers[c]);
            let x = [k.exit[0] as f64, k.exit[1] as f64];
            let kc = cell_center(k.cell);
            points.push(ch);
            axes.push(k.exit);
            points.push([ch[0] + 0.5 * x[0], ch[1] + 0.5 * x[1]]);
            axes.push(k.exit);
            points.push([kc[0] + 0.5 * x[0], kc[1] + 0.5 * x[1]]);
            axes.push(k.exit);
        }
        points.push(maze.goal_center());
        CouchRoute { points, axes }
    }

    /// Index of the run the couch is on: the latest one within a small slack
    /// of the closest.
    pub fn segment(&self, p: Vec2) -> usize {
        let d: Vec<f64> = self
            .points
            .windows(2)
            .map(|w| point_segment_distance(p, w[0], w[1]))
            .collect();
        let best = d.iter().cloned().fold(f64::INFINITY, f64::min);
        d.iter().rposition(|v| *v <= best + 0.1).unwrap_or(0)
    }
}

fn point_segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    if len2 == 0.0 {
        return dist(p, a);
    }
    let t = (((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / len2).clamp(0.0, 1.0);
    dist(p, [a[0] + t * ab[0], a[1] + t * ab[1]])
}

/// Signed angle error to the nearest heading whose long axis lies along `axis`.
fn heading_error(theta: f64, axis: Cell) -> f64 {
    let phi = (axis[1] as f64).atan2(axis[0] as f64);
    let e1 = wrap_angle(phi - theta);
    let e2 = wrap_angle(phi + std::f64::consts::PI - theta);
    if e1.abs() <= e2.abs() {
        e1
    } else {
        e2
    }
}

const ALIGN_TOL: f64 = 0.03;
/// Deceleration budgets used to shape the approach profiles.
const LIN_DECEL: f64 = 5.0;
const ANG_DECEL: f64 = 8.0;
const MAX_SPEED: f64 = 4.0;
const LINEAR_GAIN: f64 = 4.0;

/// Force that holds velocity `v_des` against damping plus a correction term.
fn track(v_des: f64, v: f64, gain: f64, cfg: &CouchConfig, inertia: f64) -> f64 {
    let hold = v_des * (1.0 - cfg.damping) / (cfg.damping * cfg.dt) * inertia;
    hold + gain * inertia * (v_des - v)
}

/// Braking-limited speed towards a setpoint, linear close to it.
fn approach_speed(remaining: f64, decel: f64, cap: f64) -> f64 {
    let r = remaining.abs();
    remaining.signum() * (2.0 * decel * r).sqrt().min(LINEAR_GAIN * r).min(cap)
}

/// Maze-aware controller: rotates in place at chambers until aligned with
/// the coming corner's exit, then tracks the route's straight runs.
pub fn oracle_couch(state: &CouchState, maze: &Maze, cfg: &CouchConfig) -> ActionVec {
    oracle_couch_on(&CouchRoute::new(maze), state, cfg)
}

pub fn oracle_couch_on(route: &CouchRoute, state: &CouchState, cfg: &CouchConfig) -> ActionVec {
    let s = route.segment(state.pos);
    let (a, b) = (route.points[s], route.points[s + 1]);
    let err = heading_error(state.theta, route.axes[s]);
    let omega_des = approach_speed(err, ANG_DECEL, 4.0);
    let torque = track(omega_des, state.omega, 8.0, cfg, cfg.inertia());
    let m = cfg.mass;
    let force = if err.abs() > ALIGN_TOL && dist(state.pos, a) < 0.3 {
        // Hold position at the run's start while turning.
        [0, 1].map(|k| {
            let v_des = approach_speed(a[k] - state.pos[k], LIN_DECEL, 1.0);
            track(v_des, state.vel[k], 8.0, cfg, m)
        })
    } else {
        let len = dist(a, b).max(1e-12);
        let u = [(b[0] - a[0]) / len, (b[1] - a[1]) / len];
        let rel = [state.pos[0] - a[0], state.pos[1] - a[1]];
        let along = rel[0] * u[0] + rel[1] * u[1];
        let lat = [rel[0] - along * u[0], rel[1] - along * u[1]];
        let cap = if err.abs() > 4.0 * ALIGN_TOL { 0.5 } else { MAX_SPEED };
        let speed = approach_speed(len - along, LIN_DECEL, cap);
        [0, 1].map(|k| {
            let v_des = u[k] * speed + approach_speed(-lat[k], LIN_DECEL, 1.0);
            track(v_des, state.vel[k], 8.0, cfg, m)
        })
    };
    let f = [
        clamp(force[0], cfg.max_force),
        clamp(force[1], cfg.max_force),
        clamp(torque, cfg.max_torque),
    ];
    ActionVec(f.to_vec())
}
