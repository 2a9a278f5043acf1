//! Alternating adversarial optimisation and checkpoints.
//!
//! Each batch runs `d_steps` discriminator updates followed by one
//! generator update. Within a step every scene gets its own tape, so the
//! per-scene passes fan out through [`Execution`]; their gradients are
//! summed in scene order and averaged before a single Adam update. All
//! randomness (shuffling, noise) is derived from the run seed and the
//! loop position, which makes a run a pure function of seed, data and
//! config.

mod checkpoint;
mod losses;
mod metrics;

pub use checkpoint::{config_diff, Checkpoint, CheckpointError, CHECKPOINT_MAGIC, FORMAT_VERSION};
pub use losses::{
    bce_with_logits, discriminator_loss, generator_loss, AdversarialLoss, GeneratorLossVars, LossWeights,
};
pub use metrics::{EpochMetrics, MetricsLog};

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{AgentType, DataError, Scene, SceneFeatures, SpeedScaler};
use crate::eval::ade;
use crate::exec::Execution;
use crate::model::{CsgConfig, CsgModel, Mode, ModelError, SceneTensors};
use crate::nn::{Adam, AdamConfig, Grads, Module, NnError};
use crate::tensor::{derive_seed, Real, Tape, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("no training scenes")]
    EmptyDataset,
    #[error("training diverged at epoch {epoch}, step {step}: {what} is not finite")]
    Diverged { epoch: usize, step: u64, what: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Scenes per optimiser step.
    pub batch_size: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    pub lambda_adv: f64,
    pub lambda_l2: f64,
    pub lambda_l1: f64,
    /// Discriminator updates per generator update.
    pub d_steps: usize,
    pub seed: u64,
    /// Write a checkpoint every this many epochs; 0 writes only the final
    /// one.
    pub checkpoint_every: usize,
    pub adversarial_loss: AdversarialLoss,
    pub execution: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 16,
            lr_g: 1e-3,
            lr_d: 1e-3,
            lambda_adv: 1.0,
            lambda_l2: 1.0,
            lambda_l1: 1.0,
            d_steps: 1,
            seed: 0,
            checkpoint_every: 0,
            adversarial_loss: AdversarialLoss::NonSaturating,
            execution: Execution::Parallel,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let err = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.epochs == 0 || self.batch_size == 0 || self.d_steps == 0 {
            return err("epochs, batch_size and d_steps must be positive");
        }
        if !(self.lr_g > 0.0 && self.lr_d > 0.0 && self.lr_g.is_finite() && self.lr_d.is_finite()) {
            return err("learning rates must be positive and finite");
        }
        let w = [self.lambda_adv, self.lambda_l2, self.lambda_l1];
        if w.iter().any(|&x| !(x.is_finite() && x >= 0.0)) {
            return err("loss weights must be finite and non-negative");
        }
        Ok(())
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            adv: self.lambda_adv,
            l2: self.lambda_l2,
            l1: self.lambda_l1,
        }
    }
}

/// Batch means of the generator terms.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GeneratorLosses {
    pub adv: f64,
    pub l2: f64,
    pub l1: f64,
    pub total: f64,
}

// Domain tags that keep the seed streams of different loop parts apart.
const TAG_SHUFFLE: u64 = 1;
const TAG_D: u64 = 2;
const TAG_G: u64 = 3;
const TAG_VAL: u64 = 4;

/// Turns scenes into model inputs; the scaler must come from the training
/// split.
pub fn prepare_scenes<T: Real>(
    scenes: &[Scene],
    scaler: &SpeedScaler,
    vocabulary: &[AgentType],
    execution: Execution,
) -> Result<Vec<SceneTensors<T>>, TrainError> {
    execution
        .map(scenes, |_, s| {
            let f = SceneFeatures::new(s, scaler, vocabulary)?;
            Ok(SceneTensors::new(&f)?)
        })
        .into_iter()
        .collect()
}

#[derive(Clone, Debug)]
pub struct Trainer<T: Real> {
    pub model: CsgModel<T>,
    pub scaler: SpeedScaler,
    pub config: TrainConfig,
    opt_g: Adam<T>,
    opt_d: Adam<T>,
    /// Generator updates so far.
    pub step: u64,
    /// Completed epochs.
    pub epoch: usize,
}

impl<T: Real> Trainer<T> {
    pub fn new(model: CsgModel<T>, scaler: SpeedScaler, config: TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let adam = |lr| {
            Adam::new(AdamConfig {
                lr,
                ..AdamConfig::default()
            })
        };
        Ok(Self {
            opt_g: adam(config.lr_g),
            opt_d: adam(config.lr_d),
            model,
            scaler,
            config,
            step: 0,
            epoch: 0,
        })
    }

    fn diverged(&self, what: &str) -> TrainError {
        TrainError::Diverged {
            epoch: self.epoch,
            step: self.step,
            what: what.to_string(),
        }
    }

    /// Non-finite values caught inside the graph are divergence too.
    fn classify(&self, e: TrainError) -> TrainError {
        match e {
            TrainError::Model(ModelError::Tensor(TensorError::NonFinite { op })) => {
                self.diverged(&format!("{op} output"))
            }
            other => other,
        }
    }

    /// One discriminator update on `batch`; returns the mean loss.
    pub fn discriminator_step(&mut self, batch: &[&SceneTensors<T>], seed: u64) -> Result<f64, TrainError> {
        let model = &self.model;
        let results = self.config.execution.map(batch, |i, x| -> Result<_, TrainError> {
            let tape = Tape::new();
            let noise = model.generator.noise(x.num_agents(), derive_seed(seed, &[i as u64]));
            let loss = discriminator_loss(&tape, model, x, &noise)?;
            let value = loss.item().expect("scalar").as_f64();
            loss.backward().map_err(ModelError::from)?;
            Ok((value, model.discriminator.collect_grads(&tape)))
        });
        let (loss, grads) =
            reduce(results, Grads::zeros_like(&self.model.discriminator)).map_err(|e| self.classify(e))?;
        if !loss.is_finite() {
            return Err(self.diverged("discriminator loss"));
        }
        if !grads.all_finite() {
            return Err(self.diverged("discriminator gradient"));
        }
        self.opt_d.step(self.model.discriminator.params_mut(), &grads)?;
        Ok(loss)
    }

    /// One generator update on `batch`.
    pub fn generator_step(&mut self, batch: &[&SceneTensors<T>], seed: u64) -> Result<GeneratorLosses, TrainError> {
        let model = &self.model;
        let weights = self.config.weights();
        let form = self.config.adversarial_loss;
        let results = self.config.execution.map(batch, |i, x| -> Result<_, TrainError> {
            let tape = Tape::new();
            let noise = model.generator.noise(x.num_agents(), derive_seed(seed, &[i as u64]));
            let l = generator_loss(&tape, model, x, &noise, weights, form)?;
            let v = |var: crate::tensor::Var<'_, T>| var.item().expect("scalar").as_f64();
            let parts = [v(l.adv), v(l.l2), v(l.l1), v(l.total)];
            l.total.backward().map_err(ModelError::from)?;
            Ok((parts, model.generator.collect_grads(&tape)))
        });
        let n = batch.len() as f64;
        let mut sums = [0.0; 4];
        let mut grads = Grads::zeros_like(&self.model.generator);
        for r in results {
            let (parts, g): ([f64; 4], Grads<T>) = r.map_err(|e| self.classify(e))?;
            for (s, p) in sums.iter_mut().zip(parts) {
                *s += p;
            }
            grads.accumulate(&g);
        }
        grads.scale(T::lit(1.0 / n));
        let losses = GeneratorLosses {
            adv: sums[0] / n,
            l2: sums[1] / n,
            l1: sums[2] / n,
            total: sums[3] / n,
        };
        if ![losses.adv, losses.l2, losses.l1, losses.total]
            .iter()
            .all(|x| x.is_finite())
        {
            return Err(self.diverged("generator loss"));
        }
        if !grads.all_finite() {
            return Err(self.diverged("generator gradient"));
        }
        self.opt_g.step(self.model.generator.params_mut(), &grads)?;
        self.step += 1;
        Ok(losses)
    }

    /// One pass over `scenes` in a seed-determined order. `val_ade` is left
    /// empty.
    pub fn train_epoch(&mut self, scenes: &[SceneTensors<T>]) -> Result<EpochMetrics, TrainError> {
        if scenes.is_empty() {
            return Err(TrainError::EmptyDataset);
        }
        let seed = self.config.seed;
        let epoch = self.epoch as u64;
        let mut order: Vec<usize> = (0..scenes.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[TAG_SHUFFLE, epoch])));
        let (mut d_sum, mut g_sum, mut count) = (0.0, GeneratorLosses::default(), 0.0);
        for (b, chunk) in order.chunks(self.config.batch_size).enumerate() {
            let batch: Vec<&SceneTensors<T>> = chunk.iter().map(|&i| &scenes[i]).collect();
            let w = batch.len() as f64;
            let mut d = 0.0;
            for k in 0..self.config.d_steps {
                d = self.discriminator_step(&batch, derive_seed(seed, &[TAG_D, epoch, b as u64, k as u64]))?;
            }
            let g = self.generator_step(&batch, derive_seed(seed, &[TAG_G, epoch, b as u64]))?;
            d_sum += w * d;
            g_sum.adv += w * g.adv;
            g_sum.l2 += w * g.l2;
            g_sum.l1 += w * g.l1;
            count += w;
        }
        self.epoch += 1;
        Ok(EpochMetrics {
            epoch: self.epoch,
            d_loss: d_sum / count,
            g_adv: g_sum.adv / count,
            l2: g_sum.l2 / count,
            l1: g_sum.l1 / count,
            val_ade: None,
        })
    }

    /// Mean single-sample ADE in prediction mode, in metres.
    pub fn validation_ade(&self, scenes: &[SceneTensors<T>]) -> Result<f64, TrainError> {
        let generator = &self.model.generator;
        let seed = self.config.seed;
        let per_scene = self.config.execution.map(scenes, |i, x| -> Result<f64, TrainError> {
            let r = generator.sample(x, Mode::Predict, derive_seed(seed, &[TAG_VAL, i as u64]))?;
            let truth = future_positions(x);
            let n = truth.len() as f64;
            Ok(truth
                .iter()
                .zip(&r.positions)
                .map(|(t, p)| ade(t, p).expect("equal lengths"))
                .sum::<f64>()
                / n)
        });
        let vals = per_scene.into_iter().collect::<Result<Vec<_>, _>>()?;
        Ok(vals.iter().sum::<f64>() / vals.len().max(1) as f64)
    }

    /// Runs the configured number of epochs, calling `on_epoch` after each.
    pub fn fit(
        &mut self,
        train: &[SceneTensors<T>],
        val: &[SceneTensors<T>],
        mut on_epoch: impl FnMut(&Self, &EpochMetrics) -> Result<(), TrainError>,
    ) -> Result<Vec<EpochMetrics>, TrainError> {
        let mut log = Vec::with_capacity(self.config.epochs);
        while self.epoch < self.config.epochs {
            let mut m = self.train_epoch(train)?;
            if !val.is_empty() {
                m.val_ade = Some(self.validation_ade(val)?);
            }
            on_epoch(self, &m)?;
            log.push(m);
        }
        Ok(log)
    }

    pub fn checkpoint(&self) -> Checkpoint<T> {
        Checkpoint {
            model: self.model.clone(),
            scaler: self.scaler,
            step: self.step,
            epoch: self.epoch,
            seed: self.config.seed,
        }
    }
}

fn reduce<T: Real>(
    results: Vec<Result<(f64, Grads<T>), TrainError>>,
    mut grads: Grads<T>,
) -> Result<(f64, Grads<T>), TrainError> {
    let n = results.len() as f64;
    let mut loss = 0.0;
    for r in results {
        let (l, g) = r?;
        loss += l;
        grads.accumulate(&g);
    }
    grads.scale(T::lit(1.0 / n));
    Ok((loss / n, grads))
}

/// Ground-truth future positions per agent.
pub fn future_positions<T: Real>(x: &SceneTensors<T>) -> Vec<Vec<crate::data::Point>> {
    x.future_deltas()
        .iter()
        .zip(&x.last_positions)
        .map(|(d, &o)| crate::data::from_displacements(o, d))
        .collect()
}

/// Result of [`train`].
#[derive(Clone, Debug)]
pub struct TrainOutcome<T: Real> {
    pub checkpoint: Checkpoint<T>,
    pub metrics: Vec<EpochMetrics>,
}

/// End-to-end run: fits the scaler on `train_scenes`, trains, and when
/// `out_dir` is given writes `metrics.csv`, periodic
/// `epoch_<n>.ckpt` files and the final `model.ckpt` there.
pub fn train<T: Real>(
    train_scenes: &[Scene],
    val_scenes: &[Scene],
    model_config: CsgConfig,
    config: &TrainConfig,
    out_dir: Option<&Path>,
    mut progress: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome<T>, TrainError> {
    config.validate()?;
    if train_scenes.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let scaler = SpeedScaler::fit_scenes(train_scenes)?;
    let vocab = model_config.vocabulary.clone();
    let train_x = prepare_scenes::<T>(train_scenes, &scaler, &vocab, config.execution)?;
    let val_x = prepare_scenes::<T>(val_scenes, &scaler, &vocab, config.execution)?;
    let model = CsgModel::new(model_config, config.seed)?;
    let mut trainer = Trainer::new(model, scaler, config.clone())?;

    let mut log = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|source| TrainError::Io {
                path: dir.to_path_buf(),
                source,
            })?;
            Some(MetricsLog::create(&dir.join("metrics.csv"))?)
        }
        None => None,
    };
    let every = config.checkpoint_every;
    let metrics = trainer.fit(&train_x, &val_x, |t, m| {
        progress(m);
        if let Some(log) = log.as_mut() {
            log.append(m)?;
        }
        if let (Some(dir), true) = (out_dir, every > 0 && m.epoch % every == 0) {
            t.checkpoint().save(&dir.join(format!("epoch_{}.ckpt", m.epoch)))?;
        }
        Ok(())
    })?;
    let checkpoint = trainer.checkpoint();
    if let Some(dir) = out_dir {
        checkpoint.save(&dir.join("model.ckpt"))?;
    }
    Ok(TrainOutcome { checkpoint, metrics })
}
