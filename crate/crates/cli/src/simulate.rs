//! Simulation requests, shared by `csg simulate` and `POST /simulate`.

use std::fmt;
use std::time::Instant;

use csg_core::data::{AgentTrack, AgentType, Point, Scene, SceneFeatures, DEFAULT_FRAME_INTERVAL};
use csg_core::eval::{frame_collision_fraction, scene_errors, speed_compliance, COLLISION_THRESHOLD};
use csg_core::model::{Mode, SceneTensors, SpeedCondition};
use csg_core::tensor::{derive_seed, Real};
use csg_core::train::{future_positions, Checkpoint};
use csg_core::Execution;
use serde::{Deserialize, Serialize};

use crate::catalog::SceneCatalog;
use crate::model::{with_checkpoint, LoadedModel};

/// Upper bound on samples per request.
pub const MAX_K: usize = 100;

fn default_k() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationRequest {
    /// Scene from the mounted dataset. Exactly one of `scene_id` and
    /// `tracks` must be set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene_id: Option<String>,
    /// Inline observed tracks, `obs_len` positions each.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tracks: Option<Vec<InlineTrack>>,
    /// Scaled target speeds. Without one the model forecasts its own.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition: Option<ConditionSpec>,
    /// Per-agent label overrides.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<AgentType>>,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineTrack {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent_id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent_type: Option<AgentType>,
    pub positions: Vec<Point>,
    /// Frame numbers; `0..obs_len` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frames: Option<Vec<i64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ConditionSpec {
    Global(f64),
    PerAgent(Vec<f64>),
    PerStep(Vec<Vec<f64>>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    /// Body is not valid JSON or does not match the schema.
    MalformedRequest,
    /// Well-formed but semantically invalid.
    InvalidRequest,
    NotFound,
    Internal,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RequestError {
    pub code: ErrorCode,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
}

impl RequestError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
            field: None,
        }
    }

    pub fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            code: ErrorCode::InvalidRequest,
            message: message.into(),
            field: Some(field.into()),
        }
    }
}

impl fmt::Display for RequestError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.field {
            Some(field) => write!(f, "{field}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationResult {
    pub samples: Vec<Sample>,
    /// Observed positions per agent.
    pub observed: Vec<AgentPath>,
    /// Future positions per agent, when the scene has them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<Vec<AgentPath>>,
    pub meta: SimulationMeta,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentPath {
    pub agent_id: u64,
    pub agent_type: AgentType,
    pub frames: Vec<i64>,
    pub positions: Vec<Point>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub k: usize,
    pub seed: u64,
    pub agents: Vec<AgentSample>,
    /// Percentage of agent pairs closer than the collision threshold, per
    /// predicted frame.
    pub collision_pct: Vec<f64>,
    /// Mean |scaled step length − used speed|.
    pub speed_compliance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ade: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fde: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentSample {
    pub agent_id: u64,
    pub agent_type: AgentType,
    pub frames: Vec<i64>,
    pub positions: Vec<Point>,
    /// The speed forecaster's output, scaled.
    pub forecast_speeds: Vec<f64>,
    /// Speeds the decoder was conditioned on, scaled.
    pub used_speeds: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationMeta {
    pub checkpoint_id: String,
    pub seed: u64,
    pub k: usize,
    /// `"simulate"` with a condition, `"predict"` without.
    pub mode: String,
    pub obs_len: usize,
    pub pred_len: usize,
    pub frame_interval: f64,
    pub elapsed_ms: f64,
}

/// Seed of sample `k` of a request.
pub fn request_sample_seed(seed: u64, k: usize) -> u64 {
    derive_seed(seed, &[k as u64])
}

impl SimulationResult {
    /// Predicted frames of every sample as labeled CSV with a `sample_k`
    /// column.
    pub fn to_csv(&self) -> String {
        let tracks: Vec<Vec<AgentTrack>> = self
            .samples
            .iter()
            .map(|s| {
                s.agents
                    .iter()
                    .map(|a| AgentTrack {
                        agent_id: a.agent_id,
                        agent_type: a.agent_type,
                        frames: a.frames.clone(),
                        positions: a.positions.clone(),
                    })
                    .collect()
            })
            .collect();
        let blocks: Vec<(Option<usize>, &[AgentTrack])> = self
            .samples
            .iter()
            .zip(&tracks)
            .map(|(s, t)| (Some(s.k), t.as_slice()))
            .collect();
        csg_core::data::write_labeled_csv(&blocks)
    }
}

/// Validates and runs a request.
pub fn simulate(
    model: &LoadedModel,
    catalog: Option<&SceneCatalog>,
    request: &SimulationRequest,
) -> Result<SimulationResult, RequestError> {
    let start = Instant::now();
    let config = model.config();
    let (obs_len, pred_len) = (config.obs_len, config.pred_len);
    if request.k == 0 || request.k > MAX_K {
        return Err(RequestError::invalid("k", format!("k must be between 1 and {MAX_K}")));
    }
    let mut scene = resolve_scene(request, catalog, obs_len, pred_len)?;
    if let Some(labels) = &request.labels {
        if labels.len() != scene.num_agents() {
            return Err(RequestError::invalid(
                "labels",
                format!("expected {} labels, got {}", scene.num_agents(), labels.len()),
            ));
        }
        for (t, &l) in scene.tracks.iter_mut().zip(labels) {
            t.agent_type = l;
        }
    }
    for (i, t) in scene.tracks.iter().enumerate() {
        if !config.vocabulary.contains(&t.agent_type) {
            let field = if request.labels.is_some() {
                format!("labels[{i}]")
            } else if request.tracks.is_some() {
                format!("tracks[{i}].agent_type")
            } else {
                "scene_id".to_string()
            };
            let allowed: Vec<&str> = config.vocabulary.iter().map(|t| t.as_str()).collect();
            return Err(RequestError::invalid(
                field,
                format!(
                    "agent type {} is not in the model vocabulary ({})",
                    t.agent_type,
                    allowed.join(", ")
                ),
            ));
        }
    }
    let condition = request
        .condition
        .as_ref()
        .map(|c| expand_condition(c, scene.num_agents(), pred_len))
        .transpose()?;

    let mut result = with_checkpoint!(model, c => run(c, model.id(), &scene, condition.as_ref(), request))?;
    result.meta.elapsed_ms = start.elapsed().as_secs_f64() * 1000.0;
    Ok(result)
}

fn resolve_scene(
    request: &SimulationRequest,
    catalog: Option<&SceneCatalog>,
    obs_len: usize,
    pred_len: usize,
) -> Result<Scene, RequestError> {
    match (&request.scene_id, &request.tracks) {
        (Some(_), Some(_)) => Err(RequestError::invalid(
            "scene_id",
            "set either scene_id or tracks, not both",
        )),
        (None, None) => Err(RequestError::invalid("scene_id", "set scene_id or tracks")),
        (Some(id), None) => {
            let catalog = catalog.ok_or_else(|| RequestError::new(ErrorCode::NotFound, "no dataset is mounted"))?;
            let scene = catalog
                .get(id)
                .ok_or_else(|| RequestError::new(ErrorCode::NotFound, format!("unknown scene {id:?}")))?;
            if scene.obs_len != obs_len || scene.pred_len != pred_len {
                return Err(RequestError::invalid(
                    "scene_id",
                    format!(
                        "scene windows are {}+{} frames, the model expects {obs_len}+{pred_len}",
                        scene.obs_len, scene.pred_len
                    ),
                ));
            }
            Ok(scene.clone())
        }
        (None, Some(tracks)) => inline_scene(tracks, obs_len, pred_len),
    }
}

fn inline_scene(tracks: &[InlineTrack], obs_len: usize, pred_len: usize) -> Result<Scene, RequestError> {
    if tracks.is_empty() {
        return Err(RequestError::invalid("tracks", "at least one track is required"));
    }
    let mut out = Vec::with_capacity(tracks.len());
    for (i, t) in tracks.iter().enumerate() {
        if t.positions.len() != obs_len {
            return Err(RequestError::invalid(
                format!("tracks[{i}].positions"),
                format!("expected {obs_len} observed positions, got {}", t.positions.len()),
            ));
        }
        if t.positions.iter().flatten().any(|v| !v.is_finite()) {
            return Err(RequestError::invalid(
                format!("tracks[{i}].positions"),
                "positions must be finite",
            ));
        }
        let frames = match &t.frames {
            Some(f) if f.len() != obs_len => {
                return Err(RequestError::invalid(
                    format!("tracks[{i}].frames"),
                    format!("expected {obs_len} frames, got {}", f.len()),
                ))
            }
            Some(f) if f.windows(2).any(|w| w[0] >= w[1]) => {
                return Err(RequestError::invalid(
                    format!("tracks[{i}].frames"),
                    "frames must increase",
                ))
            }
            Some(f) => f.clone(),
            None => (0..obs_len as i64).collect(),
        };
        out.push(AgentTrack {
            agent_id: t.agent_id.unwrap_or(i as u64 + 1),
            agent_type: t.agent_type.unwrap_or(AgentType::Pedestrian),
            frames,
            positions: t.positions.clone(),
        });
    }
    let mut ids: Vec<u64> = out.iter().map(|t| t.agent_id).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(RequestError::invalid("tracks", "agent ids must be unique"));
    }
    Ok(Scene {
        source: "inline".into(),
        obs_len,
        pred_len,
        frame_interval: DEFAULT_FRAME_INTERVAL,
        tracks: out,
    })
}

/// Broadcasts a condition to `[agent][step]`, naming the first offending
/// element on error.
pub fn expand_condition(c: &ConditionSpec, agents: usize, steps: usize) -> Result<SpeedCondition, RequestError> {
    let check = |v: f64, field: String| {
        if (0.0..=1.0).contains(&v) {
            Ok(v)
        } else {
            Err(RequestError::invalid(field, format!("speed {v} is outside [0, 1]")))
        }
    };
    let speeds = match c {
        ConditionSpec::Global(v) => {
            let v = check(*v, "condition".into())?;
            vec![vec![v; steps]; agents]
        }
        ConditionSpec::PerAgent(vs) => {
            if vs.len() != agents {
                return Err(RequestError::invalid(
                    "condition",
                    format!("expected one speed per agent ({agents}), got {}", vs.len()),
                ));
            }
            vs.iter()
                .enumerate()
                .map(|(i, &v)| check(v, format!("condition[{i}]")).map(|v| vec![v; steps]))
                .collect::<Result<_, _>>()?
        }
        ConditionSpec::PerStep(rows) => {
            if rows.len() != agents {
                return Err(RequestError::invalid(
                    "condition",
                    format!("expected one row per agent ({agents}), got {}", rows.len()),
                ));
            }
            let mut speeds = Vec::with_capacity(agents);
            for (i, row) in rows.iter().enumerate() {
                if row.len() != steps {
                    return Err(RequestError::invalid(
                        format!("condition[{i}]"),
                        format!("expected {steps} speeds, got {}", row.len()),
                    ));
                }
                let row = row
                    .iter()
                    .enumerate()
                    .map(|(j, &v)| check(v, format!("condition[{i}][{j}]")))
                    .collect::<Result<Vec<_>, _>>()?;
                speeds.push(row);
            }
            speeds
        }
    };
    Ok(SpeedCondition { speeds })
}

fn internal(e: impl fmt::Display) -> RequestError {
    RequestError::new(ErrorCode::Internal, e.to_string())
}

fn run<T: Real>(
    ckpt: &Checkpoint<T>,
    checkpoint_id: &str,
    scene: &Scene,
    condition: Option<&SpeedCondition>,
    request: &SimulationRequest,
) -> Result<SimulationResult, RequestError> {
    let config = &ckpt.model.config;
    let features = SceneFeatures::new(scene, &ckpt.scaler, &config.vocabulary).map_err(internal)?;
    let x = SceneTensors::<T>::new(&features).map_err(internal)?;
    let mode = match condition {
        Some(c) => Mode::Simulate(c),
        None => Mode::Predict,
    };
    let truth = x.has_future().then(|| future_positions(&x));
    let future_frames: Vec<Vec<i64>> = scene
        .tracks
        .iter()
        .map(|t| {
            let obs = &t.frames[..scene.obs_len];
            let step = (obs[obs.len() - 1] - obs[obs.len() - 2]).max(1);
            (1..=scene.pred_len as i64)
                .map(|s| obs[obs.len() - 1] + s * step)
                .collect()
        })
        .collect();

    let rollouts = Execution::Parallel.map_range(request.k, |k| {
        let seed = request_sample_seed(request.seed, k);
        ckpt.model.generator.sample(&x, mode, seed).map(|r| (seed, r))
    });
    let mut samples = Vec::with_capacity(request.k);
    for (k, r) in rollouts.into_iter().enumerate() {
        let (seed, r) = r.map_err(internal)?;
        let (ade, fde) = match &truth {
            Some(t) => scene_errors(t, &r.positions)
                .map(|(a, f)| (Some(a), Some(f)))
                .map_err(internal)?,
            None => (None, None),
        };
        let collision_pct = (0..scene.pred_len)
            .map(|s| {
                let frame: Vec<Point> = r.positions.iter().map(|p| p[s]).collect();
                100.0 * frame_collision_fraction(&frame, COLLISION_THRESHOLD)
            })
            .collect();
        let agents = scene
            .tracks
            .iter()
            .enumerate()
            .map(|(i, t)| AgentSample {
                agent_id: t.agent_id,
                agent_type: t.agent_type,
                frames: future_frames[i].clone(),
                positions: r.positions[i].clone(),
                forecast_speeds: r.forecast[i].clone(),
                used_speeds: r.conditions[i].clone(),
            })
            .collect();
        samples.push(Sample {
            k,
            seed,
            agents,
            collision_pct,
            speed_compliance: speed_compliance(std::slice::from_ref(&r), &ckpt.scaler),
            ade,
            fde,
        });
    }

    let path = |t: &AgentTrack, range: std::ops::Range<usize>| AgentPath {
        agent_id: t.agent_id,
        agent_type: t.agent_type,
        frames: t.frames[range.clone()].to_vec(),
        positions: t.positions[range].to_vec(),
    };
    Ok(SimulationResult {
        samples,
        observed: scene.tracks.iter().map(|t| path(t, 0..scene.obs_len)).collect(),
        ground_truth: truth.map(|_| {
            scene
                .tracks
                .iter()
                .map(|t| path(t, scene.obs_len..scene.total_len()))
                .collect()
        }),
        meta: SimulationMeta {
            checkpoint_id: checkpoint_id.to_string(),
            seed: request.seed,
            k: request.k,
            mode: if condition.is_some() { "simulate" } else { "predict" }.into(),
            obs_len: scene.obs_len,
            pred_len: scene.pred_len,
            frame_interval: scene.frame_interval,
            elapsed_ms: 0.0,
        },
    })
}
