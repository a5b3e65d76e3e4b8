//! Text formats shared by the command-line tools: trajectory files and
//! recorded episodes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::state::{AbstractTrajectory, EnvKind, HighState, LowState};

/// `dim=<D> env=<tag>` header followed by one comma-separated state per line.
pub fn trajectory_to_string(traj: &AbstractTrajectory, kind: EnvKind) -> String {
    let mut out = format!("dim={} env={}\n", traj.dim(), kind.tag());
    for s in traj.states() {
        let row: Vec<String> = s.0.iter().map(|v| format!("{v}")).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn trajectory_from_str(text: &str) -> Result<(EnvKind, AbstractTrajectory)> {
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    let header = lines.next().ok_or_else(|| Error::parse("trajectory file", "empty"))?;
    let mut dim = None;
    let mut kind = None;
    for tok in header.split_whitespace() {
        match tok.split_once('=') {
            Some(("dim", v)) => dim = Some(v.parse::<usize>().map_err(|e| Error::parse("dim", e.to_string()))?),
            Some(("env", v)) => kind = Some(v.parse::<EnvKind>()?),
            _ => return Err(Error::parse("trajectory header", format!("unexpected token `{tok}`"))),
        }
    }
    let (Some(dim), Some(kind)) = (dim, kind) else {
        return Err(Error::parse("trajectory header", "need dim=<D> env=<tag>"));
    };
    if dim != kind.high_dim() {
        return Err(Error::DimensionMismatch {
            expected: kind.high_dim(),
            got: dim,
        });
    }
    let mut states = Vec::new();
    for (i, line) in lines.enumerate() {
        let v: Vec<f64> = line
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::parse("trajectory file", format!("line {}: {e}", i + 2)))
            })
            .collect::<Result<_>>()?;
        if v.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: v.len(),
            });
        }
        states.push(HighState(v));
    }
    Ok((kind, AbstractTrajectory::new(states)?))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// A plan issued during an episode, effective from `start_step` on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSegment {
    pub start_step: usize,
    pub states: Vec<Vec<f64>>,
}

/// Everything needed to replay, trace or visualise one episode.
///
/// `observations[t]` is the low state seen before action `t`; the final
/// entry is the state after the last action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub env: EnvKind,
    pub snapshot: String,
    pub plans: Vec<PlanSegment>,
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub success: bool,
    pub replans: usize,
}

impl EpisodeRecord {
    pub fn low_states(&self) -> Vec<LowState> {
        self.observations.iter().map(|o| LowState(o.clone())).collect()
    }

    /// Plan in force at step `t`.
    pub fn plan_at(&self, t: usize) -> Result<AbstractTrajectory> {
        let seg = self
            .plans
            .iter()
            .rev()
            .find(|p| p.start_step <= t)
            .ok_or_else(|| Error::config("episode record has no plan"))?;
        AbstractTrajectory::new(seg.states.iter().map(|s| HighState(s.clone())).collect())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("episode records serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::parse("episode file", e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&read_text(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_json())
    }
}
