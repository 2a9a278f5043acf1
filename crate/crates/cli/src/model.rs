use std::path::Path;

use csg_core::data::{AgentType, SpeedScaler};
use csg_core::model::CsgConfig;
use csg_core::tensor::Dtype;
use csg_core::train::{Checkpoint, CheckpointError};

use crate::CliError;

/// A checkpoint of either precision.
#[derive(Clone, Debug)]
pub enum Weights {
    F32(Checkpoint<f32>),
    F64(Checkpoint<f64>),
}

/// A loaded checkpoint and its id.
#[derive(Clone, Debug)]
pub struct LoadedModel {
    pub weights: Weights,
    id: String,
}

/// Applies one generic body to whichever checkpoint is loaded.
macro_rules! with_checkpoint {
    ($model:expr, $c:ident => $body:expr) => {
        match &$model.weights {
            $crate::model::Weights::F32($c) => $body,
            $crate::model::Weights::F64($c) => $body,
        }
    };
}
pub(crate) use with_checkpoint;

impl From<Weights> for LoadedModel {
    fn from(weights: Weights) -> Self {
        let id = match &weights {
            Weights::F32(c) => c.id(),
            Weights::F64(c) => c.id(),
        };
        Self { weights, id }
    }
}

impl LoadedModel {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let weights = match Checkpoint::<f32>::from_bytes(bytes) {
            Ok(c) => Weights::F32(c),
            Err(CheckpointError::DtypeMismatch { .. }) => Weights::F64(Checkpoint::from_bytes(bytes)?),
            Err(e) => return Err(e),
        };
        Ok(weights.into())
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let bytes = std::fs::read(path)
            .map_err(|e| CliError::usage(format!("cannot read checkpoint {}: {e}", path.display())))?;
        Self::from_bytes(&bytes).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
    }

    pub fn dtype(&self) -> Dtype {
        match self.weights {
            Weights::F32(_) => Dtype::F32,
            Weights::F64(_) => Dtype::F64,
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn config(&self) -> &CsgConfig {
        with_checkpoint!(self, c => &c.model.config)
    }

    pub fn scaler(&self) -> SpeedScaler {
        with_checkpoint!(self, c => c.scaler)
    }

    pub fn vocabulary(&self) -> &[AgentType] {
        &self.config().vocabulary
    }
}
