use rand::Rng;

use super::{Aggregator, CsgConfig, ModelError, SceneTensors, SpeedCondition};
use crate::data::{from_displacements, Point};
use crate::nn::{Activation, LinearLayer, LstmCell, LstmState, MlpStack, Module};
use crate::tensor::{concat, sample_gaussian, Param, Real, Tape, Tensor, Var};

/// Which speed the decoder is conditioned on at each prediction step.
#[derive(Clone, Copy, Debug)]
pub enum Mode<'a> {
    /// Ground-truth future speeds; the forecaster is teacher-forced too.
    Train,
    /// The forecaster's own autoregressive speed predictions.
    Predict,
    /// User-supplied target speeds.
    Simulate(&'a SpeedCondition),
}

/// Tape handles of one generator pass, one entry per prediction step.
#[derive(Clone, Debug)]
pub struct Rollout<'t, T: Real> {
    /// `[n × 2]` predicted displacements.
    pub deltas: Vec<Var<'t, T>>,
    /// `[n × 1]` forecast scaled speeds.
    pub forecast: Vec<Var<'t, T>>,
    /// `[n × 1]` speeds the decoder was conditioned on.
    pub conditions: Vec<Var<'t, T>>,
}

/// Plain-value copy of a [`Rollout`], `[agent][step]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutResult {
    pub deltas: Vec<Vec<Point>>,
    /// Absolute positions, the running sum of `deltas` from each agent's
    /// last observed position.
    pub positions: Vec<Vec<Point>>,
    pub forecast: Vec<Vec<f64>>,
    pub conditions: Vec<Vec<f64>>,
}

impl<'t, T: Real> Rollout<'t, T> {
    pub fn to_result(&self, inputs: &SceneTensors<T>) -> RolloutResult {
        let n = inputs.num_agents();
        let per_agent = |steps: &[Var<'t, T>], width: usize| -> Vec<Vec<Vec<f64>>> {
            let values: Vec<Tensor<T>> = steps.iter().map(|v| v.value()).collect();
            (0..n)
                .map(|i| {
                    values
                        .iter()
                        .map(|v| (0..width).map(|c| v.at(i, c).as_f64()).collect())
                        .collect()
                })
                .collect()
        };
        let deltas: Vec<Vec<Point>> = per_agent(&self.deltas, 2)
            .into_iter()
            .map(|a| a.into_iter().map(|d| [d[0], d[1]]).collect())
            .collect();
        let scalar = |steps: &[Var<'t, T>]| -> Vec<Vec<f64>> {
            per_agent(steps, 1)
                .into_iter()
                .map(|a| a.into_iter().map(|s| s[0]).collect())
                .collect()
        };
        RolloutResult {
            positions: deltas
                .iter()
                .zip(&inputs.last_positions)
                .map(|(d, &origin)| from_displacements(origin, d))
                .collect(),
            forecast: scalar(&self.forecast),
            conditions: scalar(&self.conditions),
            deltas,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Generator<T: Real> {
    config: CsgConfig,
    pub input_embed: LinearLayer<T>,
    pub encoder: LstmCell<T>,
    pub aggregator: Aggregator<T>,
    pub latent: MlpStack<T>,
    /// Projects the decoder-sized initial state when the forecaster is
    /// narrower or wider than the decoder.
    pub speed_init: Option<LinearLayer<T>>,
    pub speed_lstm: LstmCell<T>,
    pub speed_head: LinearLayer<T>,
    pub decoder_embed: LinearLayer<T>,
    pub decoder: LstmCell<T>,
    pub decoder_head: LinearLayer<T>,
}

impl<T: Real> Generator<T> {
    pub fn new<R: Rng + ?Sized>(config: &CsgConfig, rng: &mut R) -> Result<Self, ModelError> {
        config.validate()?;
        let step = config.step_input_dim();
        let aggregator = Aggregator::new(config, rng)?;
        let joint = config.encoder_hidden + aggregator.output_dim();
        let speed_init = if config.speed_hidden == config.decoder_hidden {
            None
        } else {
            Some(LinearLayer::new(
                "generator.speed_init",
                config.decoder_hidden,
                config.speed_hidden,
                Activation::Tanh,
                rng,
            )?)
        };
        Ok(Self {
            config: config.clone(),
            input_embed: LinearLayer::new(
                "generator.input_embed",
                step,
                config.embedding_dim,
                Activation::None,
                rng,
            )?,
            encoder: LstmCell::new("generator.encoder", config.embedding_dim, config.encoder_hidden, rng)?,
            aggregator,
            latent: MlpStack::new(
                "generator.latent",
                &[joint, config.mlp_hidden, config.latent_dim()],
                Activation::None,
                rng,
            )?,
            speed_init,
            speed_lstm: LstmCell::new("generator.speed_lstm", 1, config.speed_hidden, rng)?,
            speed_head: LinearLayer::new("generator.speed_head", config.speed_hidden, 1, Activation::Sigmoid, rng)?,
            decoder_embed: LinearLayer::new(
                "generator.decoder_embed",
                step,
                config.embedding_dim,
                Activation::None,
                rng,
            )?,
            decoder: LstmCell::new("generator.decoder", config.embedding_dim, config.decoder_hidden, rng)?,
            decoder_head: LinearLayer::new(
                "generator.decoder_head",
                config.decoder_hidden,
                2,
                Activation::None,
                rng,
            )?,
        })
    }

    pub fn config(&self) -> &CsgConfig {
        &self.config
    }

    fn check(&self, x: &SceneTensors<T>, mode: Mode<'_>, noise: &Tensor<T>) -> Result<(), ModelError> {
        let c = &self.config;
        let n = x.num_agents();
        if n == 0 {
            return Err(ModelError::EmptyScene);
        }
        if x.labels.shape()[1] != c.vocabulary.len() {
            return Err(ModelError::LabelWidth {
                expected: c.vocabulary.len(),
                actual: x.labels.shape()[1],
            });
        }
        if x.obs_len != c.obs_len {
            return Err(ModelError::Config(format!(
                "scene observes {} frames, model expects {}",
                x.obs_len, c.obs_len
            )));
        }
        let needed = match mode {
            Mode::Train => c.total_len(),
            _ => c.obs_len,
        };
        if x.num_frames() < needed {
            return Err(ModelError::SceneLength {
                needed,
                actual: x.num_frames(),
            });
        }
        if let Mode::Simulate(cond) = mode {
            cond.validate(n, c.pred_len)?;
        }
        let expected = vec![n, c.noise_dim];
        if noise.shape() != expected.as_slice() {
            return Err(ModelError::NoiseShape {
                expected,
                actual: noise.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Encoder state `[n × encoder_hidden]` after the observed frames.
    pub fn encode<'t>(&self, tape: &'t Tape<T>, x: &SceneTensors<T>) -> Result<Var<'t, T>, ModelError> {
        let n = x.num_agents();
        let labels = tape.constant(x.labels.clone());
        let embed = self.input_embed.bind(tape)?;
        let lstm = self.encoder.bind(tape)?;
        let mut state = LstmState::zeros(tape, n, self.config.encoder_hidden);
        for t in 0..self.config.obs_len {
            let step = concat(
                &[
                    tape.constant(x.deltas[t].clone()),
                    tape.constant(x.speeds[t].clone()),
                    labels,
                ],
                1,
            )?;
            state = lstm.step(embed.apply(step)?, state)?;
        }
        Ok(state.h)
    }

    /// Decoder initial state: compressed encoder and neighbour summary,
    /// followed by the noise columns.
    pub fn initial_hidden<'t>(
        &self,
        tape: &'t Tape<T>,
        x: &SceneTensors<T>,
        encoded: Var<'t, T>,
        noise: &Tensor<T>,
    ) -> Result<Var<'t, T>, ModelError> {
        let joint = match self.aggregator.aggregate(encoded, &x.last_positions, &x.agent_ids)? {
            Some(a) => concat(&[encoded, a], 1)?,
            None => encoded,
        };
        let latent = self.latent.forward(tape, joint)?;
        Ok(concat(&[latent, tape.constant(noise.clone())], 1)?)
    }

    /// Forecast of the scaled speed for every prediction step. The LSTM is
    /// warmed up on the observed speeds, then fed either the ground truth
    /// (`teacher_forced`) or its own previous output.
    pub fn forecast_speeds<'t>(
        &self,
        tape: &'t Tape<T>,
        x: &SceneTensors<T>,
        initial: Var<'t, T>,
        teacher_forced: bool,
    ) -> Result<Vec<Var<'t, T>>, ModelError> {
        let c = &self.config;
        let h0 = match &self.speed_init {
            Some(layer) => layer.forward(tape, initial)?,
            None => initial,
        };
        let lstm = self.speed_lstm.bind(tape)?;
        let head = self.speed_head.bind(tape)?;
        let mut state = LstmState::from_hidden(h0);
        for t in 0..c.obs_len {
            state = lstm.step(tape.constant(x.speeds[t].clone()), state)?;
        }
        let mut out = Vec::with_capacity(c.pred_len);
        out.push(head.apply(state.h)?);
        for k in 1..c.pred_len {
            let input = if teacher_forced {
                tape.constant(x.speeds[c.obs_len + k - 1].clone())
            } else {
                out[k - 1]
            };
            state = lstm.step(input, state)?;
            out.push(head.apply(state.h)?);
        }
        Ok(out)
    }

    /// One prediction per step, each conditioned on `conditions[k]` and fed
    /// the previous predicted displacement.
    pub fn decode<'t>(
        &self,
        tape: &'t Tape<T>,
        x: &SceneTensors<T>,
        initial: Var<'t, T>,
        conditions: &[Var<'t, T>],
    ) -> Result<Vec<Var<'t, T>>, ModelError> {
        let labels = tape.constant(x.labels.clone());
        let embed = self.decoder_embed.bind(tape)?;
        let lstm = self.decoder.bind(tape)?;
        let head = self.decoder_head.bind(tape)?;
        let mut state = LstmState::from_hidden(initial);
        let mut prev = tape.constant(x.deltas[self.config.obs_len - 1].clone());
        let mut out = Vec::with_capacity(conditions.len());
        for &speed in conditions {
            let input = embed.apply(concat(&[prev, speed, labels], 1)?)?;
            state = lstm.step(input, state)?;
            prev = head.apply(state.h)?;
            out.push(prev);
        }
        Ok(out)
    }

    /// Full generator pass with explicit noise `[n × noise_dim]`.
    pub fn forward<'t>(
        &self,
        tape: &'t Tape<T>,
        x: &SceneTensors<T>,
        mode: Mode<'_>,
        noise: &Tensor<T>,
    ) -> Result<Rollout<'t, T>, ModelError> {
        self.check(x, mode, noise)?;
        let c = &self.config;
        let encoded = self.encode(tape, x)?;
        let initial = self.initial_hidden(tape, x, encoded, noise)?;
        let forecast = self.forecast_speeds(tape, x, initial, matches!(mode, Mode::Train))?;
        let conditions: Vec<Var<'t, T>> = match mode {
            Mode::Train => (0..c.pred_len)
                .map(|k| tape.constant(x.speeds[c.obs_len + k].clone()))
                .collect(),
            Mode::Predict => forecast.clone(),
            Mode::Simulate(cond) => (0..c.pred_len).map(|k| tape.constant(cond.column(k))).collect(),
        };
        let deltas = self.decode(tape, x, initial, &conditions)?;
        Ok(Rollout {
            deltas,
            forecast,
            conditions,
        })
    }

    /// Standard-normal noise for `n` agents, deterministic in `seed`.
    pub fn noise(&self, n: usize, seed: u64) -> Tensor<T> {
        sample_gaussian(&[n, self.config.noise_dim], seed)
    }

    /// Forward pass on a private tape with noise drawn from `seed`.
    pub fn sample(&self, x: &SceneTensors<T>, mode: Mode<'_>, seed: u64) -> Result<RolloutResult, ModelError> {
        let tape = Tape::new();
        let noise = self.noise(x.num_agents(), seed);
        Ok(self.forward(&tape, x, mode, &noise)?.to_result(x))
    }
}

impl<T: Real> Module<T> for Generator<T> {
    fn params(&self) -> Vec<&Param<T>> {
        let mut p = self.input_embed.params();
        p.extend(self.encoder.params());
        p.extend(self.aggregator.params());
        p.extend(self.latent.params());
        if let Some(l) = &self.speed_init {
            p.extend(l.params());
        }
        p.extend(self.speed_lstm.params());
        p.extend(self.speed_head.params());
        p.extend(self.decoder_embed.params());
        p.extend(self.decoder.params());
        p.extend(self.decoder_head.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut p = self.input_embed.params_mut();
        p.extend(self.encoder.params_mut());
        p.extend(self.aggregator.params_mut());
        p.extend(self.latent.params_mut());
        if let Some(l) = &mut self.speed_init {
            p.extend(l.params_mut());
        }
        p.extend(self.speed_lstm.params_mut());
        p.extend(self.speed_head.params_mut());
        p.extend(self.decoder_embed.params_mut());
        p.extend(self.decoder.params_mut());
        p.extend(self.decoder_head.params_mut());
        p
    }
}
