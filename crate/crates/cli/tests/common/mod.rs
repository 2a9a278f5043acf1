#![allow(dead_code)]

use std::path::{Path, PathBuf};

use csg_cli::catalog::SceneCatalog;
use csg_cli::commands::cmd_generate;
use csg_core::data::{generate_synthetic, RegimeConfig, SyntheticConfig};
use csg_core::model::{AggregationKind, CsgConfig};
use csg_core::train::{train, TrainConfig};
use csg_core::Execution;
use tempfile::TempDir;

pub const OBS: usize = 3;
pub const PRED: usize = 2;

pub const REGIMES: &str = r#"
obs_len = 3
pred_len = 2
[regimes.walk]
speed = 0.5
jitter_sd = 0.05
n_agents = 3
[regimes.run]
speed = 0.9
jitter_sd = 0.05
n_agents = 2
"#;

/// A run file for a two-epoch model on tiny synthetic data.
pub fn smoke_config(output_dir: &str) -> String {
    format!(
        r#"
output_dir = "{output_dir}"
dtype = "f64"
[data.synthetic]
train_scenes = 16
val_scenes = 4
seed = 5
[data.synthetic.regimes.walk]
speed = 0.5
jitter_sd = 0.05
n_agents = 3
[model]
obs_len = 3
pred_len = 2
embedding_dim = 4
encoder_hidden = 6
decoder_hidden = 6
speed_hidden = 4
noise_dim = 2
aggregation_dim = 3
social_dim = 3
mlp_hidden = 5
discriminator_embedding = 4
discriminator_hidden = 5
[train]
epochs = 2
batch_size = 4
seed = 11
execution = "sequential"
"#
    )
}

pub struct Fixture {
    pub dir: TempDir,
    pub checkpoint: PathBuf,
    pub data: PathBuf,
}

/// Trains a tiny model (`epochs` epochs, model seed `seed`) and writes a
/// generated dataset directory next to it.
pub fn fixture_with(dtype_f64: bool, seed: u64, obs: usize, pred: usize) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let synthetic = SyntheticConfig {
        obs_len: obs,
        pred_len: pred,
        regimes: [("walk".to_string(), RegimeConfig::new(0.5, 0.05, 3))].into(),
    };
    let scenes = generate_synthetic(&synthetic, 8, seed).unwrap();
    let model = CsgConfig {
        obs_len: obs,
        pred_len: pred,
        ..CsgConfig::tiny(AggregationKind::Attention)
    };
    let config = TrainConfig {
        epochs: 1,
        batch_size: 4,
        seed,
        execution: Execution::Sequential,
        ..TrainConfig::default()
    };
    let out = dir.path().join("run");
    if dtype_f64 {
        train::<f64>(&scenes, &[], model, &config, Some(&out), |_| {}).unwrap();
    } else {
        train::<f32>(&scenes, &[], model, &config, Some(&out), |_| {}).unwrap();
    }
    let regimes = dir.path().join("regimes.toml");
    std::fs::write(
        &regimes,
        REGIMES
            .replace("obs_len = 3", &format!("obs_len = {obs}"))
            .replace("pred_len = 2", &format!("pred_len = {pred}")),
    )
    .unwrap();
    let data = dir.path().join("data");
    cmd_generate(&regimes, 6, 2, &data).unwrap();
    Fixture {
        checkpoint: out.join("model.ckpt"),
        data,
        dir,
    }
}

pub fn fixture() -> Fixture {
    fixture_with(false, 1, OBS, PRED)
}

pub fn catalog(data: &Path) -> SceneCatalog {
    SceneCatalog::load(data, OBS, PRED, 1).unwrap()
}
