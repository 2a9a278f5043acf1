//! Trajectory ingestion and preprocessing.
//!
//! Raw files become [`AgentTrack`]s, tracks are windowed into fixed-length
//! [`Scene`]s, and scenes are turned into model inputs: per-frame
//! displacements, raw and scaled speeds, and one-hot agent labels.

mod features;
mod folds;
mod neighbors;
mod parse;
mod scaler;
mod scene;
mod synthetic;

pub use features::{derive_speeds, from_displacements, one_hot_label, to_displacements, AgentFeatures, SceneFeatures};
pub use folds::{fold_of, mean_scaled_speed, split_speed_folds, FoldSplit, SpeedFold};
pub use neighbors::{nearest_neighbors, nearest_neighbors_at};
pub use parse::{load_dir, parse_trajectory_file, parse_trajectory_str, write_labeled_csv, TrajectoryFormat};
pub use scaler::SpeedScaler;
pub use scene::{build_scenes, Scene, DEFAULT_FRAME_INTERVAL};
pub use synthetic::{generate_synthetic, RegimeConfig, SyntheticConfig};

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Point = [f64; 2];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: duplicate observation of agent {agent} in frame {frame}")]
    Duplicate { line: usize, frame: i64, agent: u64 },
    #[error("unknown agent type {value:?}; allowed: {allowed}")]
    UnknownAgentType { value: String, allowed: String },
    #[error("speed range is degenerate (min {min}, max {max})")]
    DegenerateRange { min: f64, max: f64 },
    #[error("no speeds to fit")]
    NoSpeeds,
    #[error("invalid synthetic config: {0}")]
    Config(String),
    #[error("scene needs {needed} frames, has {actual}")]
    SceneLength { needed: usize, actual: usize },
}

/// Agent category, one-hot encoded as a model condition.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentType {
    Pedestrian,
    Vehicle,
    Other,
}

impl AgentType {
    pub const ALL: [AgentType; 3] = [AgentType::Pedestrian, AgentType::Vehicle, AgentType::Other];

    pub fn as_str(self) -> &'static str {
        match self {
            AgentType::Pedestrian => "pedestrian",
            AgentType::Vehicle => "vehicle",
            AgentType::Other => "other",
        }
    }
}

impl fmt::Display for AgentType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AgentType {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AgentType::ALL
            .into_iter()
            .find(|t| t.as_str() == s.trim())
            .ok_or_else(|| DataError::UnknownAgentType {
                value: s.to_string(),
                allowed: AgentType::ALL.map(AgentType::as_str).join(", "),
            })
    }
}

/// One agent's observations, sorted by frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentTrack {
    pub agent_id: u64,
    pub agent_type: AgentType,
    pub frames: Vec<i64>,
    pub positions: Vec<Point>,
}

impl AgentTrack {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Same track shifted by `offset`.
    pub fn translated(&self, offset: Point) -> Self {
        Self {
            positions: self
                .positions
                .iter()
                .map(|p| [p[0] + offset[0], p[1] + offset[1]])
                .collect(),
            ..self.clone()
        }
    }
}

#[inline]
pub fn distance(a: Point, b: Point) -> f64 {
    let (dx, dy) = (a[0] - b[0], a[1] - b[1]);
    (dx * dx + dy * dy).sqrt()
}
