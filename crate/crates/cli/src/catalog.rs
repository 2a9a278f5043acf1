use std::path::Path;

use csg_core::data::Scene;
use serde::Serialize;

use crate::config::load_datasets;
use crate::CliError;

/// Scenes addressable by id, `{file stem}-{window index}`.
#[derive(Clone, Debug, Default)]
pub struct SceneCatalog {
    scenes: Vec<(String, Scene)>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SceneSummary {
    pub id: String,
    pub source: String,
    pub agents: usize,
    pub frames: usize,
}

impl SceneCatalog {
    pub fn load(dir: &Path, obs_len: usize, pred_len: usize, stride: usize) -> Result<Self, CliError> {
        let scenes = load_datasets(dir, obs_len, pred_len, stride)?
            .into_iter()
            .flat_map(|(name, scenes)| {
                scenes
                    .into_iter()
                    .enumerate()
                    .map(move |(i, s)| (format!("{name}-{i}"), s))
            })
            .collect();
        Ok(Self { scenes })
    }

    pub fn from_scenes(scenes: impl IntoIterator<Item = (String, Scene)>) -> Self {
        Self {
            scenes: scenes.into_iter().collect(),
        }
    }

    pub fn get(&self, id: &str) -> Option<&Scene> {
        self.scenes.iter().find(|(k, _)| k == id).map(|(_, s)| s)
    }

    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }

    pub fn summaries(&self) -> Vec<SceneSummary> {
        self.scenes
            .iter()
            .map(|(id, s)| SceneSummary {
                id: id.clone(),
                source: s.source.clone(),
                agents: s.num_agents(),
                frames: s.len(),
            })
            .collect()
    }
}
