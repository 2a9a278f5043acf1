//! Trainable building blocks on top of the tape.
//!
//! Layers own their [`Param`]s. To run a forward pass a layer is *bound*
//! to a tape once, which registers its parameters (and precomputes
//! transposes); the bound form is then applied any number of times, e.g.
//! once per unrolled LSTM step.

mod adam;
mod linear;
mod lstm;

pub use adam::{Adam, AdamConfig};
pub use linear::{BoundLinear, BoundMlp, LinearLayer, MlpStack};
pub use lstm::{BoundLstm, LstmCell, LstmState};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Param, ParamId, Real, Tape, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum NnError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("layer {layer}: dimensions must be positive, got {dims:?}")]
    NonPositiveDim { layer: String, dims: Vec<usize> },
    #[error("no gradient for parameter {0}")]
    MissingGradient(String),
    #[error("gradient for {name} has {actual} elements, parameter has {expected}")]
    GradientShape {
        name: String,
        expected: usize,
        actual: usize,
    },
    #[error("optimizer tracks {expected} parameters, got {actual}")]
    ParamCount { expected: usize, actual: usize },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    None,
    Relu,
    Sigmoid,
    Tanh,
}

impl Activation {
    pub fn apply<'t, T: Real>(self, x: Var<'t, T>) -> Result<Var<'t, T>, TensorError> {
        match self {
            Activation::None => Ok(x),
            Activation::Relu => x.relu(),
            Activation::Sigmoid => x.sigmoid(),
            Activation::Tanh => x.tanh(),
        }
    }
}

/// Anything that owns parameters.
pub trait Module<T: Real> {
    fn params(&self) -> Vec<&Param<T>>;

    fn params_mut(&mut self) -> Vec<&mut Param<T>>;

    fn param_ids(&self) -> Vec<ParamId> {
        self.params().iter().map(|p| p.id()).collect()
    }

    fn num_parameters(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    /// Gradients from a finished backward pass, in [`Module::params`]
    /// order. Parameters the graph never reached get zeros.
    fn collect_grads(&self, tape: &Tape<T>) -> Grads<T> {
        Grads {
            slots: self
                .params()
                .iter()
                .map(|p| {
                    Some(
                        tape.param_grad(p)
                            .map(Tensor::into_data)
                            .unwrap_or_else(|| vec![T::zero(); p.value.len()]),
                    )
                })
                .collect(),
        }
    }
}

/// Per-parameter gradient buffers, aligned with [`Module::params`].
#[derive(Clone, Debug, PartialEq)]
pub struct Grads<T> {
    pub slots: Vec<Option<Vec<T>>>,
}

impl<T: Real> Grads<T> {
    pub fn zeros_like<M: Module<T> + ?Sized>(module: &M) -> Self {
        Self {
            slots: module
                .params()
                .iter()
                .map(|p| Some(vec![T::zero(); p.value.len()]))
                .collect(),
        }
    }

    /// Adds `other` slot by slot; a missing slot on either side stays
    /// missing only if both are missing.
    pub fn accumulate(&mut self, other: &Grads<T>) {
        for (dst, src) in self.slots.iter_mut().zip(&other.slots) {
            match (dst.as_mut(), src) {
                (Some(d), Some(s)) => {
                    for (x, &y) in d.iter_mut().zip(s) {
                        *x += y;
                    }
                }
                (None, Some(s)) => *dst = Some(s.clone()),
                _ => {}
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for slot in self.slots.iter_mut().flatten() {
            for x in slot.iter_mut() {
                *x *= s;
            }
        }
    }

    pub fn zero(&mut self) {
        for slot in self.slots.iter_mut().flatten() {
            slot.iter_mut().for_each(|x| *x = T::zero());
        }
    }

    pub fn all_finite(&self) -> bool {
        self.slots.iter().flatten().flatten().all(|x| x.is_finite())
    }
}

/// Xavier-uniform `[rows × cols]` weight with fan-in `cols`, fan-out `rows`.
pub(crate) fn xavier_uniform<T: Real, R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor<T> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| T::lit(rng.random_range(-limit..=limit)))
        .collect();
    Tensor::new(vec![rows, cols], data).expect("length matches shape")
}

pub(crate) fn check_dims(layer: &str, dims: &[usize]) -> Result<(), NnError> {
    if dims.contains(&0) {
        return Err(NnError::NonPositiveDim {
            layer: layer.to_string(),
            dims: dims.to_vec(),
        });
    }
    Ok(())
}
