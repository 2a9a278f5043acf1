//! The conditional generator and the sequence discriminator.
//!
//! Agents of one scene are the rows of every matrix, so a scene is one
//! forward pass on one tape. The generator encodes observed displacements,
//! speeds and labels, summarises neighbours, mixes in noise and decodes
//! the future one step at a time, conditioned on a per-step speed: the
//! ground truth while training, its own forecast when predicting, or an
//! externally supplied target when simulating.

mod aggregation;
mod config;
mod discriminator;
mod generator;
mod inputs;

pub use aggregation::{concat_layout, AggregationTrace, Aggregator};
pub use config::{AggregationKind, CsgConfig};
pub use discriminator::{fake_steps, real_steps, Discriminator};
pub use generator::{Generator, Mode, Rollout, RolloutResult};
pub use inputs::{SceneTensors, SpeedCondition};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::nn::{Module, NnError};
use crate::tensor::{Param, Real, TensorError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("scene has no agents")]
    EmptyScene,
    #[error("label width {actual} does not match vocabulary size {expected}")]
    LabelWidth { expected: usize, actual: usize },
    #[error("scene needs {needed} frames, has {actual}")]
    SceneLength { needed: usize, actual: usize },
    #[error("speed condition must be {expected_agents} agents × {expected_steps} steps, got {agents} × {steps}")]
    ConditionShape {
        expected_agents: usize,
        expected_steps: usize,
        agents: usize,
        steps: usize,
    },
    #[error("speed condition for agent {agent}, step {step} is {value}; must lie in [0, 1]")]
    ConditionRange { agent: usize, step: usize, value: f64 },
    #[error("discriminator expects {expected} steps, got {actual}")]
    SequenceLength { expected: usize, actual: usize },
    #[error("noise must be {expected:?}, got {actual:?}")]
    NoiseShape { expected: Vec<usize>, actual: Vec<usize> },
}

/// Generator and discriminator built from one config.
#[derive(Clone, Debug)]
pub struct CsgModel<T: Real> {
    pub config: CsgConfig,
    pub generator: Generator<T>,
    pub discriminator: Discriminator<T>,
}

impl<T: Real> CsgModel<T> {
    pub fn new(config: CsgConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let generator = Generator::new(&config, &mut rng)?;
        let discriminator = Discriminator::new(&config, &mut rng)?;
        Ok(Self {
            config,
            generator,
            discriminator,
        })
    }

    /// Generator parameters followed by discriminator parameters.
    pub fn params(&self) -> Vec<&Param<T>> {
        let mut p = self.generator.params();
        p.extend(self.discriminator.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut p = self.generator.params_mut();
        p.extend(self.discriminator.params_mut());
        p
    }
}
