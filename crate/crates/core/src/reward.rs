//! Trajectory-following reward.
//!
//! A low state *matches* the closest high state of the abstract trajectory
//! whose dissimilarity is below `epsilon`. The tracker keeps the farthest
//! matched (1-based) index `j`, and the per-step reward pays
//!
//! * `0` while no new state is matched and the plan is unfinished,
//! * `(1 + beta * j') * r_dist(d)` when a farther state `j'` is matched,
//! * `r_dist(d(low, last))` once the final state has been matched.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::state::{AbstractTrajectory, Dissimilarity, EnvKind, LowState};

/// Reward shaping constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardParams {
    /// Progress weight.
    pub beta: f64,
    /// Sharpness of the distance reward.
    pub w: f64,
    /// Scale applied to the environment's task reward.
    pub lambda_task: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        RewardParams {
            beta: 5.0,
            w: 30.0,
            lambda_task: 0.1,
        }
    }
}

impl RewardParams {
    pub fn for_env(kind: EnvKind) -> Self {
        let lambda_task = match kind {
            EnvKind::BoxPusher => 0.1,
            EnvKind::Couch => 0.5,
        };
        RewardParams {
            lambda_task,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0 && self.w > 0.0 && self.lambda_task >= 0.0) {
            return Err(Error::config(format!(
                "reward params need beta >= 0, w > 0, lambda_task >= 0 (got {self:?})"
            )));
        }
        Ok(())
    }
}

/// `1 - tanh(w * distance)`.
#[inline]
pub fn r_dist(distance: f64, w: f64) -> f64 {
    1.0 - (w * distance).tanh()
}

/// Trajectory reward plus the scaled task reward.
#[inline]
pub fn combined_reward(traj_reward: f64, task_reward: f64, params: &RewardParams) -> f64 {
    traj_reward + params.lambda_task * task_reward
}

/// Index (1-based) of the closest high state within `epsilon`, smallest index
/// on ties; `None` if nothing is close enough.
pub fn match_index(
    low: &LowState,
    traj: &AbstractTrajectory,
    d: &Dissimilarity,
    epsilon: f64,
) -> Result<Option<usize>> {
    let projected = d.map.project_slice(low.as_slice())?;
    if projected.len() != traj.dim() {
        return Err(Error::DimensionMismatch {
            expected: traj.dim(),
            got: projected.len(),
        });
    }
    Ok(match_projected(projected, traj, d, epsilon).map(|(i, _)| i))
}

fn match_projected(
    projected: &[f64],
    traj: &AbstractTrajectory,
    d: &Dissimilarity,
    epsilon: f64,
) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in traj.states().iter().enumerate() {
        let dist = d.between_unchecked(projected, s.as_slice());
        if dist < epsilon && best.is_none_or(|(_, b)| dist < b) {
            best = Some((i + 1, dist));
        }
    }
    best
}

/// Result of scoring one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    /// State matched at this step, if any.
    pub matched: Option<usize>,
    /// Farthest matched index after this step.
    pub j: usize,
}

/// Per-episode record of the farthest matched index.
///
/// Holds the full (never sub-sampled) trajectory; the policy prompt is a
/// separate object and never reaches this type.
#[derive(Debug, Clone)]
pub struct MatchTracker {
    traj: Arc<AbstractTrajectory>,
    d: Dissimilarity,
    epsilon: f64,
    j_prev: usize,
}

impl MatchTracker {
    /// Rejects trajectories with two states closer than `epsilon / 2`; such
    /// plans must be split with [`crate::plans::chunk_periodic`] first.
    pub fn new(traj: Arc<AbstractTrajectory>, d: Dissimilarity, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::config(format!("match threshold must be positive, got {epsilon}")));
        }
        if traj.dim() != d.weights.len() {
            return Err(Error::DimensionMismatch {
                expected: d.weights.len(),
                got: traj.dim(),
            });
        }
        let states = traj.states();
        for i in 0..states.len() {
            for j in (i + 1)..states.len() {
                if states[i].distance(&states[j]) < epsilon / 2.0 {
                    return Err(Error::config(format!(
                        "trajectory revisits a state (indices {} and {} closer than epsilon/2); chunk it first",
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
        Ok(MatchTracker {
            traj,
            d,
            epsilon,
            j_prev: 0,
        })
    }

    pub fn n(&self) -> usize {
        self.traj.len()
    }

    pub fn j_prev(&self) -> usize {
        self.j_prev
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn trajectory(&self) -> &Arc<AbstractTrajectory> {
        &self.traj
    }

    pub fn dissimilarity(&self) -> &Dissimilarity {
        &self.d
    }

    pub fn is_complete(&self) -> bool {
        self.j_prev == self.n()
    }

    /// Sets the farthest matched index directly (used to restore a tracker).
    pub fn with_j(mut self, j: usize) -> Result<Self> {
        if j > self.n() {
            return Err(Error::config(format!("j = {j} exceeds trajectory length {}", self.n())));
        }
        self.j_prev = j;
        Ok(self)
    }

    /// Scores `low` and advances the tracker.
    pub fn step(&mut self, low: &LowState, params: &RewardParams) -> Result<StepOutcome> {
        let projected = self.d.map.project_slice(low.as_slice())?;
        let n = self.n();
        let matched = match_projected(projected, &self.traj, &self.d, self.epsilon);
        let j_match = matched.map_or(0, |(i, _)| i);
        let j = self.j_prev.max(j_match);
        let reward = if j == n {
            let dist = self.d.between_unchecked(projected, self.traj.last().as_slice());
            r_dist(dist, params.w)
        } else {
            match matched {
                Some((i, dist)) if i > self.j_prev => (1.0 + params.beta * i as f64) * r_dist(dist, params.w),
                _ => 0.0,
            }
        };
        self.j_prev = j;
        Ok(StepOutcome {
            reward,
            matched: matched.map(|(i, _)| i),
            j,
        })
    }
}

/// Functional form of [`MatchTracker::step`].
pub fn step_reward(
    tracker: &MatchTracker,
    low: &LowState,
    params: &RewardParams,
) -> Result<(f64, MatchTracker)> {
    let mut next = tracker.clone();
    let out = next.step(low, params)?;
    Ok((out.reward, next))
}

/// One row of an episode's reward trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub j: usize,
    pub traj_reward: f64,
    pub running_sum: f64,
}

/// Folds [`MatchTracker::step`] over an episode.
pub fn reward_trace(
    episode: &[LowState],
    traj: Arc<AbstractTrajectory>,
    d: Dissimilarity,
    epsilon: f64,
    params: &RewardParams,
) -> Result<Vec<TraceRow>> {
    if episode.is_empty() {
        return Err(Error::config("reward trace needs a non-empty episode"));
    }
    let mut tracker = MatchTracker::new(traj, d, epsilon)?;
    let mut sum = 0.0;
    episode
        .iter()
        .enumerate()
        .map(|(step, low)| {
            let out = tracker.step(low, params)?;
            sum += out.reward;
            Ok(TraceRow {
                step,
                j: out.j,
                traj_reward: out.reward,
                running_sum: sum,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::{HighState, StateMap};

    fn unit2() -> Dissimilarity {
        Dissimilarity::unit(EnvKind::Couch)
    }

    fn couch_low(x: f64, y: f64) -> LowState {
        let mut f = vec![0.0; 13];
        f[11] = x;
        f[12] = y;
        LowState::new(f)
    }

    fn line3() -> Arc<AbstractTrajectory> {
        Arc::new(AbstractTrajectory::from_points(&[&[0.0, 0.0], &[1.0, 0.0], &[2.0, 0.0]]).unwrap())
    }

    #[test]
    fn match_index_examples() {
        let t = line3();
        assert_eq!(match_index(&couch_low(1.1, 0.0), &t, &unit2(), 0.3).unwrap(), Some(2));
        assert_eq!(match_index(&couch_low(0.5, 0.0), &t, &unit2(), 0.3).unwrap(), None);
        assert_eq!(match_index(&couch_low(0.0, 0.0), &t, &unit2(), 0.3).unwrap(), Some(1));
    }

    #[test]
    fn ties_pick_smallest_index() {
        let t = line3();
        assert_eq!(match_index(&couch_low(0.5, 0.0), &t, &unit2(), 0.6).unwrap(), Some(1));
    }

    #[test]
    fn r_dist_values() {
        assert_eq!(r_dist(0.0, 30.0), 1.0);
        assert!((r_dist(0.1, 30.0) - 0.004_945_246_313_269_536).abs() < 1e-12);
        assert!((r_dist(0.05, 30.0) - 0.094_851_746_355_133_6).abs() < 1e-12);
    }

    #[test]
    fn progress_stall_and_finish_branches() {
        let p = RewardParams {
            beta: 5.0,
            w: 30.0,
            lambda_task: 0.0,
        };
        let mut tr = MatchTracker::new(line3(), unit2(), 0.3).unwrap();
        let out = tr.step(&couch_low(0.05, 0.0), &p).unwrap();
        assert_eq!(out.j, 1);
        assert!((out.reward - 6.0 * (1.0 - 1.5f64.tanh())).abs() < 1e-12);
        assert!((out.reward - 0.5691).abs() < 1e-4);

        let mut tr = MatchTracker::new(line3(), unit2(), 0.3).unwrap().with_j(2).unwrap();
        let out = tr.step(&couch_low(1.05, 0.0), &p).unwrap();
        assert_eq!((out.reward, out.j), (0.0, 2));

        let out = tr.step(&couch_low(2.0, 0.0), &p).unwrap();
        assert_eq!((out.reward, out.j), (1.0, 3));
    }

    #[test]
    fn no_match_is_stall() {
        let p = RewardParams::default();
        let mut tr = MatchTracker::new(line3(), unit2(), 0.3).unwrap();
        let out = tr.step(&couch_low(5.0, 5.0), &p).unwrap();
        assert_eq!(out, StepOutcome { reward: 0.0, matched: None, j: 0 });
    }

    #[test]
    fn combined_examples() {
        let p = RewardParams {
            lambda_task: 0.1,
            ..Default::default()
        };
        assert!((combined_reward(1.0, -1.9, &p) - 0.81).abs() < 1e-12);
        assert_eq!(combined_reward(0.0, 0.0, &p), 0.0);
        let p5 = RewardParams {
            lambda_task: 0.5,
            ..Default::default()
        };
        assert_eq!(combined_reward(0.5691, 0.0, &p5), 0.5691);
    }

    #[test]
    fn tracker_rejects_revisits() {
        let t = Arc::new(
            AbstractTrajectory::from_points(&[&[0.0, 0.0], &[1.0, 0.0], &[0.05, 0.0]]).unwrap(),
        );
        assert!(MatchTracker::new(t, unit2(), 0.3).is_err());
    }

    #[test]
    fn trace_never_matching_is_zero() {
        let eps: Vec<_> = (0..5).map(|_| couch_low(10.0, 10.0)).collect();
        let rows = reward_trace(&eps, line3(), unit2(), 0.3, &RewardParams::default()).unwrap();
        assert!(rows.iter().all(|r| r.traj_reward == 0.0 && r.running_sum == 0.0));
    }

    #[test]
    fn trace_exact_matches_increase() {
        let eps: Vec<_> = (0..3).map(|i| couch_low(i as f64, 0.0)).collect();
        let rows = reward_trace(&eps, line3(), unit2(), 0.3, &RewardParams::default()).unwrap();
        assert!(rows.windows(2).all(|w| w[1].running_sum > w[0].running_sum));
        assert_eq!(rows.last().unwrap().j, 3);
    }

    #[test]
    fn projection_dimension_checked() {
        let t = line3();
        let d = Dissimilarity::for_env(EnvKind::BoxPusher);
        assert!(MatchTracker::new(t, d, 0.3).is_err());
        let _ = StateMap::new(EnvKind::Couch);
        let _ = HighState::new(vec![0.0, 0.0]);
    }
}
