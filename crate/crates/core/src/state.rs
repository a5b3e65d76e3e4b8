//! Shared domain types: low/high states, abstract trajectories, the
//! low-to-high state map and the weighted dissimilarity.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The two executable environments and their paired abstract spaces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    BoxPusher,
    Couch,
}

impl EnvKind {
    pub fn low_dim(self) -> usize {
        match self {
            EnvKind::BoxPusher => 6,
            EnvKind::Couch => 13,
        }
    }

    pub fn high_dim(self) -> usize {
        match self {
            EnvKind::BoxPusher => 4,
            EnvKind::Couch => 2,
        }
    }

    pub fn action_dim(self) -> usize {
        match self {
            EnvKind::BoxPusher => 2,
            EnvKind::Couch => 3,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            EnvKind::BoxPusher => "boxpusher",
            EnvKind::Couch => "couch",
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "boxpusher" | "box_pusher" | "box-pusher" => Ok(EnvKind::BoxPusher),
            "couch" | "couchmoving" | "couch_moving" | "couch-moving" => Ok(EnvKind::Couch),
            other => Err(Error::config(format!("unknown environment tag `{other}`"))),
        }
    }
}

fn check_finite(what: &str, v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{what} contains non-finite entries")))
    }
}

/// Executable-world observation vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LowState(pub Vec<f64>);

impl LowState {
    pub fn new(features: Vec<f64>) -> Self {
        LowState(features)
    }

    /// Build a low state and check it against an environment's declared shape.
    pub fn for_env(kind: EnvKind, features: Vec<f64>) -> Result<Self> {
        if features.len() != kind.low_dim() {
            return Err(Error::DimensionMismatch {
                expected: kind.low_dim(),
                got: features.len(),
            });
        }
        check_finite("low state", &features)?;
        Ok(LowState(features))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// Abstract (point-mass) state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HighState(pub Vec<f64>);

impl HighState {
    pub fn new(features: Vec<f64>) -> Self {
        HighState(features)
    }

    pub fn for_env(kind: EnvKind, features: Vec<f64>) -> Result<Self> {
        if features.len() != kind.high_dim() {
            return Err(Error::DimensionMismatch {
                expected: kind.high_dim(),
                got: features.len(),
            });
        }
        check_finite("high state", &features)?;
        Ok(HighState(features))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// Plain Euclidean distance between two high states.
    pub fn distance(&self, other: &HighState) -> f64 {
        euclid(&self.0, &other.0)
    }

    /// Linear interpolation `self + t * (other - self)`.
    pub fn lerp(&self, other: &HighState, t: f64) -> HighState {
        HighState(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| a + t * (b - a))
                .collect(),
        )
    }
}

pub(crate) fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Executable action, clipped by the environment before stepping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionVec(pub Vec<f64>);

impl ActionVec {
    pub fn zeros(dim: usize) -> Self {
        ActionVec(vec![0.0; dim])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Clip every entry to `[-bound[i], bound[i]]`. Non-finite entries become 0.
    pub fn clipped(&self, bounds: &[f64]) -> ActionVec {
        ActionVec(
            self.0
                .iter()
                .zip(bounds)
                .map(|(&a, &b)| if a.is_finite() { a.clamp(-b, b) } else { 0.0 })
                .collect(),
        )
    }
}

/// Ordered sequence of high states produced by an abstract planner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbstractTrajectory {
    states: Vec<HighState>,
}

impl AbstractTrajectory {
    pub fn new(states: Vec<HighState>) -> Result<Self> {
        let Some(first) = states.first() else {
            return Err(Error::config("abstract trajectory must hold at least one state"));
        };
        let dim = first.dim();
        for s in &states {
            if s.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: s.dim(),
                });
            }
            check_finite("trajectory state", s.as_slice())?;
        }
        Ok(AbstractTrajectory { states })
    }

    pub fn from_points(points: &[&[f64]]) -> Result<Self> {
        Self::new(points.iter().map(|p| HighState(p.to_vec())).collect())
    }

    pub fn states(&self) -> &[HighState] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states[0].dim()
    }

    pub fn first(&self) -> &HighState {
        &self.states[0]
    }

    pub fn last(&self) -> &HighState {
        self.states.last().expect("non-empty by construction")
    }

    /// 1-based access, matching the indexing used by the matching rule.
    pub fn get1(&self, index: usize) -> &HighState {
        &self.states[index - 1]
    }

    pub fn into_states(self) -> Vec<HighState> {
        self.states
    }
}

/// Projection `f` from a low state to its high-level counterpart.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateMap {
    pub kind: EnvKind,
}

impl StateMap {
    pub fn new(kind: EnvKind) -> Self {
        StateMap { kind }
    }

    fn range(&self) -> std::ops::Range<usize> {
        match self.kind {
            // agent xy, box xy
            EnvKind::BoxPusher => 0..4,
            // trailing position entries after the 3x3 patch and forward direction
            EnvKind::Couch => 11..13,
        }
    }

    pub fn project_slice<'a>(&self, low: &'a [f64]) -> Result<&'a [f64]> {
        if low.len() != self.kind.low_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.kind.low_dim(),
                got: low.len(),
            });
        }
        Ok(&low[self.range()])
    }

    pub fn apply(&self, low: &LowState) -> Result<HighState> {
        Ok(HighState(self.project_slice(low.as_slice())?.to_vec()))
    }
}

/// Weighted Euclidean dissimilarity between a projected low state and a
/// high state. Weights multiply coordinate differences before the norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dissimilarity {
    pub map: StateMap,
    pub weights: Vec<f64>,
}

pub const AGENT_WEIGHT: f64 = 0.1;
pub const OBJECT_WEIGHT: f64 = 0.9;

impl Dissimilarity {
    /// Default weighting: agent coordinates 0.1, object coordinates 0.9;
    /// environments without a manipulated object use unit weights.
    pub fn for_env(kind: EnvKind) -> Self {
        let weights = match kind {
            EnvKind::BoxPusher => vec![AGENT_WEIGHT, AGENT_WEIGHT, OBJECT_WEIGHT, OBJECT_WEIGHT],
            EnvKind::Couch => vec![1.0; 2],
        };
        Dissimilarity {
            map: StateMap::new(kind),
            weights,
        }
    }

    pub fn unit(kind: EnvKind) -> Self {
        Dissimilarity {
            map: StateMap::new(kind),
            weights: vec![1.0; kind.high_dim()],
        }
    }

    pub fn with_weights(kind: EnvKind, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != kind.high_dim() {
            return Err(Error::DimensionMismatch {
                expected: kind.high_dim(),
                got: weights.len(),
            });
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::config("dissimilarity weights must be finite and nonnegative"));
        }
        Ok(Dissimilarity {
            map: StateMap::new(kind),
            weights,
        })
    }

    /// Weighted distance between two vectors already in high space.
    pub fn between(&self, projected: &[f64], high: &[f64]) -> Result<f64> {
        if projected.len() != high.len() || high.len() != self.weights.len() {
            return Err(Error::DimensionMismatch {
                expected: self.weights.len(),
                got: high.len(),
            });
        }
        Ok(self.between_unchecked(projected, high))
    }

    #[inline]
    pub(crate) fn between_unchecked(&self, projected: &[f64], high: &[f64]) -> f64 {
        projected
            .iter()
            .zip(high)
            .zip(&self.weights)
            .map(|((a, b), w)| {
                let d = w * (a - b);
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }

    /// `d(low, high) = || W (f(low) - high) ||`.
    pub fn eval(&self, low: &LowState, high: &HighState) -> Result<f64> {
        let projected = self.map.project_slice(low.as_slice())?;
        self.between(projected, high.as_slice())
    }
}
