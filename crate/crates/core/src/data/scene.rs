use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::{AgentTrack, Point};

/// Seconds between frames when a dataset does not say otherwise
/// (12 predicted steps cover 4.8 s).
pub const DEFAULT_FRAME_INTERVAL: f64 = 0.4;

/// A window of synchronised tracks: `obs_len` observed frames followed by
/// up to `pred_len` future frames. Scenes built for simulation from inline
/// observations carry only the observed part.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    /// Dataset file or synthetic regime the scene came from.
    pub source: String,
    pub obs_len: usize,
    pub pred_len: usize,
    pub frame_interval: f64,
    pub tracks: Vec<AgentTrack>,
}

impl Scene {
    pub fn num_agents(&self) -> usize {
        self.tracks.len()
    }

    /// Frames present in every track.
    pub fn len(&self) -> usize {
        self.tracks.first().map_or(0, AgentTrack::len)
    }

    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }

    pub fn total_len(&self) -> usize {
        self.obs_len + self.pred_len
    }

    /// True when ground truth for the whole prediction window is present.
    pub fn has_future(&self) -> bool {
        self.len() >= self.total_len()
    }

    /// Ground-truth future positions of agent `i`.
    pub fn future(&self, i: usize) -> &[Point] {
        &self.tracks[i].positions[self.obs_len..self.total_len()]
    }

    pub fn last_observed(&self, i: usize) -> Point {
        self.tracks[i].positions[self.obs_len - 1]
    }

    pub fn translated(&self, offset: Point) -> Self {
        Self {
            tracks: self.tracks.iter().map(|t| t.translated(offset)).collect(),
            ..self.clone()
        }
    }

    /// Same scene with only the observed frames.
    pub fn observed_only(&self) -> Self {
        Self {
            tracks: self
                .tracks
                .iter()
                .map(|t| AgentTrack {
                    frames: t.frames[..self.obs_len].to_vec(),
                    positions: t.positions[..self.obs_len].to_vec(),
                    ..t.clone()
                })
                .collect(),
            ..self.clone()
        }
    }
}

/// Slides a window of `obs_len + pred_len` consecutive distinct frames
/// over the recording. An agent joins a window only if it is observed in
/// every frame of it; windows with no such agent are dropped.
pub fn build_scenes(source: &str, tracks: &[AgentTrack], obs_len: usize, pred_len: usize, stride: usize) -> Vec<Scene> {
    assert!(
        obs_len >= 2 && pred_len >= 1 && stride >= 1,
        "obs_len >= 2, pred_len >= 1, stride >= 1"
    );
    let window = obs_len + pred_len;
    let frames: Vec<i64> = tracks
        .iter()
        .flat_map(|t| t.frames.iter().copied())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if frames.len() < window {
        return Vec::new();
    }
    let lookup: Vec<HashMap<i64, usize>> = tracks
        .iter()
        .map(|t| t.frames.iter().enumerate().map(|(i, &f)| (f, i)).collect())
        .collect();

    let mut scenes = Vec::new();
    for start in (0..=frames.len() - window).step_by(stride) {
        let span = &frames[start..start + window];
        let members: Vec<AgentTrack> = tracks
            .iter()
            .zip(&lookup)
            .filter_map(|(t, idx)| {
                let rows: Option<Vec<usize>> = span.iter().map(|f| idx.get(f).copied()).collect();
                rows.map(|rows| AgentTrack {
                    agent_id: t.agent_id,
                    agent_type: t.agent_type,
                    frames: span.to_vec(),
                    positions: rows.iter().map(|&r| t.positions[r]).collect(),
                })
            })
            .collect();
        if !members.is_empty() {
            scenes.push(Scene {
                source: source.to_string(),
                obs_len,
                pred_len,
                frame_interval: DEFAULT_FRAME_INTERVAL,
                tracks: members,
            });
        }
    }
    scenes
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::AgentType;

    fn track(id: u64, frames: impl IntoIterator<Item = i64>) -> AgentTrack {
        let frames: Vec<i64> = frames.into_iter().collect();
        AgentTrack {
            agent_id: id,
            agent_type: AgentType::Pedestrian,
            positions: frames.iter().map(|&f| [f as f64, id as f64]).collect(),
            frames,
        }
    }

    #[test]
    fn window_count_single_agent() {
        assert_eq!(build_scenes("t", &[track(1, 0..20)], 8, 12, 1).len(), 1);
        assert_eq!(build_scenes("t", &[track(1, 0..25)], 8, 12, 1).len(), 6);
        assert_eq!(build_scenes("t", &[track(1, 0..25)], 8, 12, 5).len(), 2);
        assert!(build_scenes("t", &[track(1, 0..19)], 8, 12, 1).is_empty());
    }

    #[test]
    fn agent_with_gap_is_excluded() {
        let gappy = track(2, (0..20).filter(|&f| f != 7));
        let scenes = build_scenes("t", &[track(1, 0..20), gappy], 8, 12, 1);
        assert_eq!(scenes.len(), 1);
        assert_eq!(scenes[0].num_agents(), 1);
        assert_eq!(scenes[0].tracks[0].agent_id, 1);
    }

    #[test]
    fn overlapping_agents_share_a_scene() {
        let scenes = build_scenes("t", &[track(1, 0..20), track(2, 0..20)], 8, 12, 1);
        assert_eq!(scenes.len(), 1);
        assert_eq!(scenes[0].num_agents(), 2);
        assert_eq!(scenes[0].len(), 20);
    }

    #[test]
    fn windows_without_agents_are_dropped() {
        // Two agents that never overlap for a full window.
        let scenes = build_scenes("t", &[track(1, 0..10), track(2, 10..20)], 4, 2, 1);
        assert!(scenes.iter().all(|s| s.num_agents() == 1));
        assert_eq!(scenes.len(), 5 + 5);
    }

    #[test]
    fn eth_frame_spacing() {
        let t = track(1, (0..20).map(|f| f * 10));
        assert_eq!(build_scenes("t", &[t], 8, 12, 1).len(), 1);
    }
}
