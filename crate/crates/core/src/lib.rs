//! Abstract-to-executable trajectory translation.
//!
//! Two executable worlds (Box Pusher, Couch Moving) are paired with
//! point-mass abstractions whose heuristic plans condition a low-level
//! policy. The policy is trained with a trajectory-following reward that
//! pays for matching plan states in order.

pub mod boxpusher;
pub mod couch;
pub mod env;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod io;
pub mod nn;
pub mod plans;
pub mod policy;
pub mod reward;
pub mod state;
pub mod trainer;

pub use error::{Error, Result};
pub use state::{AbstractTrajectory, ActionVec, Dissimilarity, EnvKind, HighState, LowState, StateMap};
