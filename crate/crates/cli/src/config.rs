//! The `csg train` run file.
//!
//! ```toml
//! output_dir = "runs/demo"
//! dtype = "f32"
//!
//! [data]
//! train = "datasets/train"   # directory of trajectory files
//! val = "datasets/val"       # optional
//! stride = 1
//!
//! [model]                    # architecture, all keys optional
//! aggregation = "concat"
//!
//! [train]                    # optimisation, all keys optional
//! epochs = 20
//! ```
//!
//! Instead of `data.train`, a `[data.synthetic]` table generates scenes;
//! see [`SyntheticSection`].

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use csg_core::data::{build_scenes, generate_synthetic, load_dir, AgentType, RegimeConfig, Scene, SyntheticConfig};
use csg_core::model::CsgConfig;
use csg_core::tensor::Dtype;
use csg_core::train::TrainConfig;
use serde::{Deserialize, Serialize};
use toml::Value;

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    #[serde(default = "default_dtype")]
    pub dtype: String,
    pub data: DataSection,
    #[serde(default)]
    pub model: CsgConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

fn default_dtype() -> String {
    "f32".into()
}

fn default_stride() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataSection {
    pub train: Option<PathBuf>,
    pub val: Option<PathBuf>,
    #[serde(default = "default_stride")]
    pub stride: usize,
    pub synthetic: Option<SyntheticSection>,
}

/// Generated data. Window lengths come from `[model]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSection {
    pub train_scenes: usize,
    #[serde(default)]
    pub val_scenes: usize,
    #[serde(default)]
    pub seed: u64,
    /// Regimes used for training and validation; all when absent.
    pub train_regimes: Option<Vec<String>>,
    pub regimes: BTreeMap<String, RegimeConfig>,
}

impl RunConfig {
    /// Parses and validates a run file. Every unknown key is reported,
    /// not just the first.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let value: Value = toml::from_str(text).map_err(|e| CliError::usage(format!("invalid config: {e}")))?;
        let unknown = unknown_keys(&value, &template(), "");
        if !unknown.is_empty() {
            return Err(CliError::usage(format!("unknown config keys: {}", unknown.join(", "))));
        }
        let config: RunConfig = value
            .try_into()
            .map_err(|e: toml::de::Error| CliError::usage(format!("invalid config: {}", e.message())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn dtype(&self) -> Result<Dtype, CliError> {
        match self.dtype.as_str() {
            "f32" => Ok(Dtype::F32),
            "f64" => Ok(Dtype::F64),
            other => Err(CliError::usage(format!(
                "dtype must be \"f32\" or \"f64\", got {other:?}"
            ))),
        }
    }

    fn validate(&self) -> Result<(), CliError> {
        self.dtype()?;
        self.model.validate().map_err(CliError::usage)?;
        self.train.validate().map_err(CliError::usage)?;
        let d = &self.data;
        if d.stride == 0 {
            return Err(CliError::usage("data.stride must be at least 1"));
        }
        match (&d.train, &d.synthetic) {
            (Some(_), Some(_)) => Err(CliError::usage("set either data.train or [data.synthetic], not both")),
            (None, None) => Err(CliError::usage("missing dataset: set data.train or [data.synthetic]")),
            (None, Some(_)) if d.val.is_some() => Err(CliError::usage("data.val needs data.train")),
            _ => Ok(()),
        }
    }

    /// Train and validation scenes.
    pub fn scenes(&self) -> Result<(Vec<Scene>, Vec<Scene>), CliError> {
        let (obs, pred) = (self.model.obs_len, self.model.pred_len);
        if let Some(s) = &self.data.synthetic {
            let all = SyntheticConfig {
                obs_len: obs,
                pred_len: pred,
                regimes: s.regimes.clone(),
            };
            let used = match &s.train_regimes {
                Some(names) => {
                    let names: Vec<&str> = names.iter().map(String::as_str).collect();
                    all.only(&names).map_err(CliError::usage)?
                }
                None => all,
            };
            let train = generate_synthetic(&used, s.train_scenes, s.seed).map_err(CliError::usage)?;
            let val = if s.val_scenes > 0 {
                generate_synthetic(&used, s.val_scenes, s.seed.wrapping_add(1)).map_err(CliError::usage)?
            } else {
                Vec::new()
            };
            return Ok((train, val));
        }
        let train_dir = self.data.train.as_deref().expect("validated");
        let train = load_scenes(train_dir, obs, pred, self.data.stride)?;
        let val = match &self.data.val {
            Some(dir) => load_scenes(dir, obs, pred, self.data.stride)?,
            None => Vec::new(),
        };
        Ok((train, val))
    }
}

/// Every trajectory file under `dir`, windowed into scenes. Scene sources
/// are the file stems.
pub fn load_scenes(dir: &Path, obs_len: usize, pred_len: usize, stride: usize) -> Result<Vec<Scene>, CliError> {
    Ok(load_datasets(dir, obs_len, pred_len, stride)?
        .into_iter()
        .flat_map(|(_, s)| s)
        .collect())
}

/// Scenes grouped per file, in file-name order.
pub fn load_datasets(
    dir: &Path,
    obs_len: usize,
    pred_len: usize,
    stride: usize,
) -> Result<Vec<(String, Vec<Scene>)>, CliError> {
    if !dir.is_dir() {
        return Err(CliError::usage(format!(
            "dataset directory {} does not exist",
            dir.display()
        )));
    }
    let files = load_dir(dir).map_err(|e| CliError::usage(format!("{}: {e}", dir.display())))?;
    Ok(files
        .into_iter()
        .map(|(name, tracks)| {
            let scenes = build_scenes(&name, &tracks, obs_len, pred_len, stride);
            (name, scenes)
        })
        .collect())
}

/// Skeleton with every accepted key. A table holding only `"*"` accepts
/// any key, checking each value against the `"*"` entry.
fn template() -> Value {
    fn keys_of<T: Serialize>(v: &T) -> Value {
        Value::try_from(v).expect("config serialises to a table")
    }
    let regime = RegimeConfig {
        heading: Some(0.0),
        agent_type: AgentType::Pedestrian,
        ..RegimeConfig::new(1.0, 0.0, 1)
    };
    let synthetic = toml::toml! {
        train_scenes = 0
        val_scenes = 0
        seed = 0
        train_regimes = []
    };
    let mut synthetic = Value::Table(synthetic);
    let mut any = toml::Table::new();
    any.insert("*".into(), keys_of(&regime));
    synthetic
        .as_table_mut()
        .unwrap()
        .insert("regimes".into(), Value::Table(any));
    let mut data = toml::Table::new();
    for k in ["train", "val", "stride"] {
        data.insert(k.into(), Value::Integer(0));
    }
    data.insert("synthetic".into(), synthetic);
    let mut root = toml::Table::new();
    root.insert("output_dir".into(), Value::Integer(0));
    root.insert("dtype".into(), Value::Integer(0));
    root.insert("data".into(), Value::Table(data));
    root.insert("model".into(), keys_of(&CsgConfig::default()));
    root.insert("train".into(), keys_of(&TrainConfig::default()));
    Value::Table(root)
}

fn unknown_keys(value: &Value, template: &Value, prefix: &str) -> Vec<String> {
    let (Value::Table(v), Value::Table(t)) = (value, template) else {
        return Vec::new();
    };
    let mut out = Vec::new();
    for (k, child) in v {
        let path = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match t.get(k).or_else(|| t.get("*")) {
            Some(sub) => out.extend(unknown_keys(child, sub, &path)),
            None => out.push(path),
        }
    }
    out
}
