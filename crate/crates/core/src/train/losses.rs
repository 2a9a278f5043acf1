use serde::{Deserialize, Serialize};

use crate::model::{fake_steps, real_steps, CsgModel, Mode, ModelError, SceneTensors};
use crate::nn::Module;
use crate::tensor::{concat, Real, Tape, Tensor, Var};

/// Form of the generator's adversarial term. `C` is the discriminator's
/// probability that a generated sequence is real.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversarialLoss {
    /// `-log C`: strong gradients while the discriminator still wins.
    #[default]
    NonSaturating,
    /// `-log(1 - C)` taken literally. Minimising it pushes `C` toward 0,
    /// i.e. helps the discriminator; kept only for comparison runs.
    Literal,
}

/// Loss weights of the generator objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub adv: f64,
    pub l2: f64,
    pub l1: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            adv: 1.0,
            l2: 1.0,
            l1: 1.0,
        }
    }
}

/// Binary cross-entropy of logits against a constant target, averaged:
/// `-log σ(x)` for real, `-log(1 - σ(x)) = softplus(x)` for fake.
pub fn bce_with_logits<'t, T: Real>(logits: Var<'t, T>, real: bool) -> Result<Var<'t, T>, ModelError> {
    let x = if real { logits.neg()? } else { logits };
    Ok(x.softplus()?.mean()?)
}

/// Discriminator loss of one scene: the mean of the real and fake BCE
/// terms, so an undecided discriminator scores `ln 2`. The generator runs
/// on the same tape with its parameters frozen.
pub fn discriminator_loss<'t, T: Real>(
    tape: &'t Tape<T>,
    model: &CsgModel<T>,
    x: &SceneTensors<T>,
    noise: &Tensor<T>,
) -> Result<Var<'t, T>, ModelError> {
    tape.freeze(model.generator.param_ids());
    let rollout = model.generator.forward(tape, x, Mode::Train, noise)?;
    let real = real_steps(tape, x)?;
    let fake = fake_steps(tape, x, &rollout)?;
    let n = x.num_agents();
    // Real and fake rows share one discriminator pass.
    let both: Vec<Var<'t, T>> = real
        .iter()
        .zip(&fake)
        .map(|(&r, &f)| concat(&[r, f], 0))
        .collect::<Result<_, _>>()?;
    let logits = model.discriminator.forward(tape, &both)?;
    let l_real = bce_with_logits(logits.narrow(0, 0, n)?, true)?;
    let l_fake = bce_with_logits(logits.narrow(0, n, n)?, false)?;
    Ok(l_real.add(l_fake)?.scale(T::lit(0.5))?)
}

/// The three logged generator terms and their weighted sum.
#[derive(Clone, Copy, Debug)]
pub struct GeneratorLossVars<'t, T: Real> {
    pub adv: Var<'t, T>,
    pub l2: Var<'t, T>,
    pub l1: Var<'t, T>,
    pub total: Var<'t, T>,
}

/// Generator objective of one scene with the discriminator frozen.
pub fn generator_loss<'t, T: Real>(
    tape: &'t Tape<T>,
    model: &CsgModel<T>,
    x: &SceneTensors<T>,
    noise: &Tensor<T>,
    weights: LossWeights,
    form: AdversarialLoss,
) -> Result<GeneratorLossVars<'t, T>, ModelError> {
    tape.freeze(model.discriminator.param_ids());
    let rollout = model.generator.forward(tape, x, Mode::Train, noise)?;
    let logits = model.discriminator.forward(tape, &fake_steps(tape, x, &rollout)?)?;
    let adv = bce_with_logits(logits, form == AdversarialLoss::NonSaturating)?;

    let obs = x.obs_len;
    let pred = concat(&rollout.deltas, 0)?;
    let truth = tape.constant(stack(&x.deltas[obs..obs + x.pred_len])?);
    let l2 = pred.sub(truth)?.square()?.mean()?;

    let forecast = concat(&rollout.forecast, 0)?;
    let speeds = tape.constant(stack(&x.speeds[obs..obs + x.pred_len])?);
    let l1 = forecast.sub(speeds)?.abs()?.mean()?;

    let total = adv
        .scale(T::lit(weights.adv))?
        .add(l2.scale(T::lit(weights.l2))?)?
        .add(l1.scale(T::lit(weights.l1))?)?;
    Ok(GeneratorLossVars { adv, l2, l1, total })
}

/// Row-wise stack of equally wide matrices.
fn stack<T: Real>(parts: &[Tensor<T>]) -> Result<Tensor<T>, ModelError> {
    let cols = parts[0].shape()[1];
    let data: Vec<T> = parts.iter().flat_map(|p| p.data().iter().copied()).collect();
    Ok(Tensor::new(vec![data.len() / cols, cols], data)?)
}
