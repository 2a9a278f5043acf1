use super::{distance, AgentType, DataError, Point, Scene, SpeedScaler};

/// Per-frame displacement; the first frame's displacement is `(0, 0)`.
pub fn to_displacements(positions: &[Point]) -> Vec<Point> {
    let mut out = Vec::with_capacity(positions.len());
    if let Some(&first) = positions.first() {
        out.push([0.0, 0.0]);
        let mut prev = first;
        for &p in &positions[1..] {
            out.push([p[0] - prev[0], p[1] - prev[1]]);
            prev = p;
        }
    }
    out
}

/// Cumulative sum of `displacements` starting at `origin`. The first
/// displacement is applied too, so feeding `to_displacements(p)` with
/// `origin = p[0]` reproduces `p`.
pub fn from_displacements(origin: Point, displacements: &[Point]) -> Vec<Point> {
    let mut pos = origin;
    displacements
        .iter()
        .map(|d| {
            pos = [pos[0] + d[0], pos[1] + d[1]];
            pos
        })
        .collect()
}

/// Euclidean step length between consecutive frames, in metres per
/// frame; `speed[0] = 0`.
pub fn derive_speeds(positions: &[Point]) -> Vec<f64> {
    let mut out = Vec::with_capacity(positions.len());
    if !positions.is_empty() {
        out.push(0.0);
        out.extend(positions.windows(2).map(|w| distance(w[0], w[1])));
    }
    out
}

pub fn one_hot_label(agent_type: AgentType, vocabulary: &[AgentType]) -> Result<Vec<f64>, DataError> {
    let idx = vocabulary
        .iter()
        .position(|&t| t == agent_type)
        .ok_or_else(|| DataError::UnknownAgentType {
            value: agent_type.to_string(),
            allowed: vocabulary.iter().map(|t| t.as_str()).collect::<Vec<_>>().join(", "),
        })?;
    let mut v = vec![0.0; vocabulary.len()];
    v[idx] = 1.0;
    Ok(v)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentFeatures {
    pub agent_id: u64,
    pub positions: Vec<Point>,
    pub displacements: Vec<Point>,
    pub raw_speeds: Vec<f64>,
    /// Speeds mapped to `[0, 1]` by the fitted scaler (clamped).
    pub scaled_speeds: Vec<f64>,
    pub label: Vec<f64>,
}

/// Model-ready view of a scene.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneFeatures {
    pub obs_len: usize,
    pub pred_len: usize,
    pub agents: Vec<AgentFeatures>,
}

impl SceneFeatures {
    pub fn new(scene: &Scene, scaler: &SpeedScaler, vocabulary: &[AgentType]) -> Result<Self, DataError> {
        if scene.len() < scene.obs_len {
            return Err(DataError::SceneLength {
                needed: scene.obs_len,
                actual: scene.len(),
            });
        }
        let agents = scene
            .tracks
            .iter()
            .map(|t| {
                let raw_speeds = derive_speeds(&t.positions);
                Ok(AgentFeatures {
                    agent_id: t.agent_id,
                    displacements: to_displacements(&t.positions),
                    scaled_speeds: raw_speeds.iter().map(|&s| scaler.apply(s)).collect(),
                    raw_speeds,
                    label: one_hot_label(t.agent_type, vocabulary)?,
                    positions: t.positions.clone(),
                })
            })
            .collect::<Result<_, DataError>>()?;
        Ok(Self {
            obs_len: scene.obs_len,
            pred_len: scene.pred_len,
            agents,
        })
    }

    pub fn num_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn has_future(&self) -> bool {
        self.agents
            .iter()
            .all(|a| a.positions.len() >= self.obs_len + self.pred_len)
    }

    pub fn last_observed(&self, i: usize) -> Point {
        self.agents[i].positions[self.obs_len - 1]
    }

    /// Positions of every agent at frame `t`.
    pub fn positions_at(&self, t: usize) -> Vec<Point> {
        self.agents.iter().map(|a| a.positions[t]).collect()
    }

    pub fn agent_ids(&self) -> Vec<u64> {
        self.agents.iter().map(|a| a.agent_id).collect()
    }

    /// Ground-truth scaled speeds of agent `i` over the prediction window.
    pub fn future_scaled_speeds(&self, i: usize) -> &[f64] {
        &self.agents[i].scaled_speeds[self.obs_len..self.obs_len + self.pred_len]
    }
}
