use rand::Rng;

use super::{CsgConfig, ModelError, Rollout, SceneTensors};
use crate::nn::{Activation, LinearLayer, LstmCell, LstmState, MlpStack, Module};
use crate::tensor::{concat, Param, Real, Tape, Var};

/// Scores whole sequences of `(displacement, speed, label)` steps. Returns
/// logits; the probability of "real" is their sigmoid.
#[derive(Clone, Debug)]
pub struct Discriminator<T: Real> {
    seq_len: usize,
    pub embed: LinearLayer<T>,
    pub encoder: LstmCell<T>,
    pub classifier: MlpStack<T>,
}

impl<T: Real> Discriminator<T> {
    pub fn new<R: Rng + ?Sized>(config: &CsgConfig, rng: &mut R) -> Result<Self, ModelError> {
        Ok(Self {
            seq_len: config.total_len(),
            embed: LinearLayer::new(
                "discriminator.embed",
                config.step_input_dim(),
                config.discriminator_embedding,
                Activation::None,
                rng,
            )?,
            encoder: LstmCell::new(
                "discriminator.encoder",
                config.discriminator_embedding,
                config.discriminator_hidden,
                rng,
            )?,
            classifier: MlpStack::new(
                "discriminator.classifier",
                &[config.discriminator_hidden, config.mlp_hidden, 1],
                Activation::None,
                rng,
            )?,
        })
    }

    /// `steps[t]` is `[rows × step_input_dim]` for each of the `obs + pred`
    /// frames; returns `[rows × 1]` logits.
    pub fn forward<'t>(&self, tape: &'t Tape<T>, steps: &[Var<'t, T>]) -> Result<Var<'t, T>, ModelError> {
        if steps.len() != self.seq_len {
            return Err(ModelError::SequenceLength {
                expected: self.seq_len,
                actual: steps.len(),
            });
        }
        let rows = steps.first().map_or(0, |s| s.shape()[0]);
        let embed = self.embed.bind(tape)?;
        let lstm = self.encoder.bind(tape)?;
        let mut state = LstmState::zeros(tape, rows, lstm.hidden_dim());
        for &s in steps {
            state = lstm.step(embed.apply(s)?, state)?;
        }
        Ok(self.classifier.forward(tape, state.h)?)
    }

    /// Probability of "real", `[rows × 1]`.
    pub fn score<'t>(&self, tape: &'t Tape<T>, steps: &[Var<'t, T>]) -> Result<Var<'t, T>, ModelError> {
        Ok(self.forward(tape, steps)?.sigmoid()?)
    }
}

/// Observed plus ground-truth future steps.
pub fn real_steps<'t, T: Real>(tape: &'t Tape<T>, x: &SceneTensors<T>) -> Result<Vec<Var<'t, T>>, ModelError> {
    if !x.has_future() {
        return Err(ModelError::SceneLength {
            needed: x.obs_len + x.pred_len,
            actual: x.num_frames(),
        });
    }
    let labels = tape.constant(x.labels.clone());
    (0..x.obs_len + x.pred_len)
        .map(|t| {
            Ok(concat(
                &[
                    tape.constant(x.deltas[t].clone()),
                    tape.constant(x.speeds[t].clone()),
                    labels,
                ],
                1,
            )?)
        })
        .collect()
}

/// Observed steps followed by the generated future, conditioned speeds in
/// the speed column.
pub fn fake_steps<'t, T: Real>(
    tape: &'t Tape<T>,
    x: &SceneTensors<T>,
    rollout: &Rollout<'t, T>,
) -> Result<Vec<Var<'t, T>>, ModelError> {
    let labels = tape.constant(x.labels.clone());
    let mut steps = Vec::with_capacity(x.obs_len + x.pred_len);
    for t in 0..x.obs_len {
        steps.push(concat(
            &[
                tape.constant(x.deltas[t].clone()),
                tape.constant(x.speeds[t].clone()),
                labels,
            ],
            1,
        )?);
    }
    for (&d, &s) in rollout.deltas.iter().zip(&rollout.conditions) {
        steps.push(concat(&[d, s, labels], 1)?);
    }
    Ok(steps)
}

impl<T: Real> Module<T> for Discriminator<T> {
    fn params(&self) -> Vec<&Param<T>> {
        let mut p = self.embed.params();
        p.extend(self.encoder.params());
        p.extend(self.classifier.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut p = self.embed.params_mut();
        p.extend(self.encoder.params_mut());
        p.extend(self.classifier.params_mut());
        p
    }
}
