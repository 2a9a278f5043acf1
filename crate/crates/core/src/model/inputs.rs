use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::data::{Point, SceneFeatures};
use crate::tensor::{Real, Tensor};

/// Per-frame model inputs of one scene, agents as rows.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneTensors<T: Real> {
    pub obs_len: usize,
    pub pred_len: usize,
    /// `[n × 2]` displacement per frame.
    pub deltas: Vec<Tensor<T>>,
    /// `[n × 1]` scaled speed per frame.
    pub speeds: Vec<Tensor<T>>,
    /// `[n × L]` one-hot labels.
    pub labels: Tensor<T>,
    pub last_positions: Vec<Point>,
    pub agent_ids: Vec<u64>,
}

impl<T: Real> SceneTensors<T> {
    pub fn new(features: &SceneFeatures) -> Result<Self, ModelError> {
        let n = features.num_agents();
        if n == 0 {
            return Err(ModelError::EmptyScene);
        }
        let frames = features.agents.iter().map(|a| a.positions.len()).min().unwrap_or(0);
        if frames < features.obs_len {
            return Err(ModelError::SceneLength {
                needed: features.obs_len,
                actual: frames,
            });
        }
        let frame_tensor = |width: usize, get: &dyn Fn(usize) -> Vec<f64>| {
            let data = (0..n).flat_map(get).map(T::lit).collect();
            Tensor::new(vec![n, width], data).expect("row width is fixed")
        };
        let deltas = (0..frames)
            .map(|t| frame_tensor(2, &|i| features.agents[i].displacements[t].to_vec()))
            .collect();
        let speeds = (0..frames)
            .map(|t| frame_tensor(1, &|i| vec![features.agents[i].scaled_speeds[t]]))
            .collect();
        let width = features.agents[0].label.len();
        let labels = Tensor::from_rows(
            &features
                .agents
                .iter()
                .map(|a| a.label.iter().map(|&v| T::lit(v)).collect())
                .collect::<Vec<_>>(),
        )?;
        debug_assert_eq!(labels.shape()[1], width);
        Ok(Self {
            obs_len: features.obs_len,
            pred_len: features.pred_len,
            deltas,
            speeds,
            labels,
            last_positions: (0..n).map(|i| features.last_observed(i)).collect(),
            agent_ids: features.agent_ids(),
        })
    }

    pub fn num_agents(&self) -> usize {
        self.labels.shape()[0]
    }

    pub fn num_frames(&self) -> usize {
        self.deltas.len()
    }

    pub fn has_future(&self) -> bool {
        self.num_frames() >= self.obs_len + self.pred_len
    }

    /// Ground-truth future displacements, `[agent][step]`.
    pub fn future_deltas(&self) -> Vec<Vec<Point>> {
        let n = self.num_agents();
        (0..n)
            .map(|i| {
                self.deltas[self.obs_len..self.obs_len + self.pred_len]
                    .iter()
                    .map(|d| [d.at(i, 0).as_f64(), d.at(i, 1).as_f64()])
                    .collect()
            })
            .collect()
    }
}

/// Target scaled speed for every agent and prediction step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedCondition {
    /// `[agent][step]`, each value in `[0, 1]`.
    pub speeds: Vec<Vec<f64>>,
}

impl SpeedCondition {
    pub fn constant(agents: usize, steps: usize, value: f64) -> Self {
        Self {
            speeds: vec![vec![value; steps]; agents],
        }
    }

    pub fn validate(&self, agents: usize, steps: usize) -> Result<(), ModelError> {
        let bad_shape = self.speeds.len() != agents || self.speeds.iter().any(|r| r.len() != steps);
        if bad_shape {
            return Err(ModelError::ConditionShape {
                expected_agents: agents,
                expected_steps: steps,
                agents: self.speeds.len(),
                steps: self.speeds.first().map_or(0, Vec::len),
            });
        }
        for (agent, row) in self.speeds.iter().enumerate() {
            for (step, &value) in row.iter().enumerate() {
                if !(0.0..=1.0).contains(&value) {
                    return Err(ModelError::ConditionRange { agent, step, value });
                }
            }
        }
        Ok(())
    }

    /// `[n × 1]` column for prediction step `k`.
    pub(crate) fn column<T: Real>(&self, k: usize) -> Tensor<T> {
        Tensor::new(
            vec![self.speeds.len(), 1],
            self.speeds.iter().map(|r| T::lit(r[k])).collect(),
        )
        .expect("one value per agent")
    }
}
