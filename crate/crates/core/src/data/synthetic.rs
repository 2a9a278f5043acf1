//! Constant-heading scenes with per-regime speeds.
//!
//! A stand-in for recorded pedestrian data that is cheap to generate and
//! has a known speed structure, which is what the speed-control experiments
//! need.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{AgentTrack, AgentType, DataError, Scene, DEFAULT_FRAME_INTERVAL};

fn default_spread() -> f64 {
    6.0
}

fn default_obs_len() -> usize {
    8
}

fn default_pred_len() -> usize {
    12
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimeConfig {
    /// Mean step length in metres per frame.
    pub speed: f64,
    /// Standard deviation of per-step Gaussian noise on the step length.
    pub jitter_sd: f64,
    pub n_agents: usize,
    /// Per-agent spread of the base speed around `speed`.
    #[serde(default)]
    pub speed_sd: f64,
    /// Fixed heading in radians; uniform random when absent.
    #[serde(default)]
    pub heading: Option<f64>,
    /// Half-width of the square start area.
    #[serde(default = "default_spread")]
    pub spread: f64,
    /// Place the first two agents on perpendicular paths that meet
    /// mid-window.
    #[serde(default)]
    pub crossing: bool,
    #[serde(default = "default_agent_type")]
    pub agent_type: AgentType,
}

fn default_agent_type() -> AgentType {
    AgentType::Pedestrian
}

impl RegimeConfig {
    pub fn new(speed: f64, jitter_sd: f64, n_agents: usize) -> Self {
        Self {
            speed,
            jitter_sd,
            n_agents,
            speed_sd: 0.0,
            heading: None,
            spread: default_spread(),
            crossing: false,
            agent_type: AgentType::Pedestrian,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    #[serde(default = "default_obs_len")]
    pub obs_len: usize,
    #[serde(default = "default_pred_len")]
    pub pred_len: usize,
    pub regimes: BTreeMap<String, RegimeConfig>,
}

impl SyntheticConfig {
    pub fn from_toml(text: &str) -> Result<Self, DataError> {
        let cfg: Self = toml::from_str(text).map_err(|e| DataError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.regimes.is_empty() {
            return Err(DataError::Config("no regimes".into()));
        }
        if self.obs_len < 2 || self.pred_len < 1 {
            return Err(DataError::Config("obs_len must be >= 2 and pred_len >= 1".into()));
        }
        for (name, r) in &self.regimes {
            let ok = r.speed >= 0.0 && r.jitter_sd >= 0.0 && r.speed_sd >= 0.0 && r.n_agents >= 1 && r.spread >= 0.0;
            if !ok {
                return Err(DataError::Config(format!(
                    "regime {name}: speed, jitter_sd, speed_sd and spread must be >= 0 and n_agents >= 1"
                )));
            }
            if r.crossing && r.n_agents < 2 {
                return Err(DataError::Config(format!(
                    "regime {name}: crossing needs n_agents >= 2"
                )));
            }
        }
        Ok(())
    }

    /// Copy restricted to the named regimes.
    pub fn only(&self, names: &[&str]) -> Result<Self, DataError> {
        let mut regimes = BTreeMap::new();
        for &n in names {
            let r = self
                .regimes
                .get(n)
                .ok_or_else(|| DataError::Config(format!("unknown regime {n}")))?;
            regimes.insert(n.to_string(), r.clone());
        }
        Ok(Self {
            regimes,
            ..self.clone()
        })
    }
}

/// Generates `n_scenes` scenes, cycling through the regimes in name order.
/// Deterministic in `seed`.
pub fn generate_synthetic(config: &SyntheticConfig, n_scenes: usize, seed: u64) -> Result<Vec<Scene>, DataError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let regimes: Vec<(&String, &RegimeConfig)> = config.regimes.iter().collect();
    let len = config.obs_len + config.pred_len;
    let mut scenes = Vec::with_capacity(n_scenes);
    for s in 0..n_scenes {
        let (name, regime) = regimes[s % regimes.len()];
        let tracks = (0..regime.n_agents)
            .map(|a| agent_track(regime, a, len, &mut rng))
            .collect::<Result<_, _>>()?;
        scenes.push(Scene {
            source: name.clone(),
            obs_len: config.obs_len,
            pred_len: config.pred_len,
            frame_interval: DEFAULT_FRAME_INTERVAL,
            tracks,
        });
    }
    Ok(scenes)
}

fn normal(sd: f64) -> Result<Normal<f64>, DataError> {
    Normal::new(0.0, sd).map_err(|e| DataError::Config(e.to_string()))
}

fn agent_track<R: Rng>(regime: &RegimeConfig, index: usize, len: usize, rng: &mut R) -> Result<AgentTrack, DataError> {
    let base = (regime.speed + normal(regime.speed_sd)?.sample(rng)).max(0.0);
    let jitter = normal(regime.jitter_sd)?;
    let mut heading = regime.heading.unwrap_or_else(|| rng.random_range(-PI..PI));
    let mut start = if regime.spread > 0.0 {
        [
            rng.random_range(-regime.spread..=regime.spread),
            rng.random_range(-regime.spread..=regime.spread),
        ]
    } else {
        [0.0, 0.0]
    };
    if regime.crossing && index < 2 {
        // Perpendicular paths through a shared point reached mid-window.
        let half = base * (len as f64 - 1.0) / 2.0;
        let h0 = regime.heading.unwrap_or(0.0);
        heading = h0 + index as f64 * PI / 2.0;
        start = [-half * heading.cos(), -half * heading.sin()];
    }
    let (dx, dy) = (heading.cos(), heading.sin());
    let mut positions = Vec::with_capacity(len);
    let mut p = start;
    positions.push(p);
    for _ in 1..len {
        let step = (base + jitter.sample(rng)).max(0.0);
        p = [p[0] + step * dx, p[1] + step * dy];
        positions.push(p);
    }
    Ok(AgentTrack {
        agent_id: index as u64,
        agent_type: regime.agent_type,
        frames: (0..len as i64).collect(),
        positions,
    })
}
