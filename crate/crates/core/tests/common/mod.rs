//! Fixtures and finite-difference checkers shared by the integration tests
//! and the acceptance runner.

#![allow(dead_code)]

use csg_core::data::{generate_synthetic, RegimeConfig, Scene, SpeedScaler, SyntheticConfig};
use csg_core::model::{AggregationKind, CsgConfig, CsgModel, SceneTensors};
use csg_core::nn::{Activation, LinearLayer, LstmCell, LstmState, MlpStack, Module};
use csg_core::tensor::{concat, sample_gaussian, Tape, Tensor, TensorError, Var};
use csg_core::train::{discriminator_loss, generator_loss, prepare_scenes, AdversarialLoss, LossWeights};
use csg_core::Execution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

/// `|a - n| / max(|a|, |n|, floor)`. The floor keeps gradients that are
/// zero up to rounding from producing huge ratios.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

pub const EPS: f64 = 1e-6;

/// Largest relative error between the tape gradient and central
/// differences for `f`, reduced to a scalar through a fixed random
/// weighting so every output element matters.
pub fn check_op<F>(inputs: &[Tensor<f64>], f: F) -> f64
where
    F: for<'t> Fn(&[Var<'t, f64>]) -> Result<Var<'t, f64>, TensorError>,
{
    let weights = {
        let tape = Tape::new();
        let leaves: Vec<_> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let shape = f(&leaves).expect("op runs").shape();
        sample_gaussian::<f64>(&shape, 99)
    };
    let value = |xs: &[Tensor<f64>]| -> f64 {
        let tape = Tape::new();
        let leaves: Vec<_> = xs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&leaves).unwrap();
        out.mul(tape.constant(weights.clone()))
            .unwrap()
            .sum()
            .unwrap()
            .item()
            .unwrap()
    };
    let tape = Tape::new();
    let leaves: Vec<_> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&leaves).unwrap();
    out.mul(tape.constant(weights.clone()))
        .unwrap()
        .sum()
        .unwrap()
        .backward()
        .unwrap();
    let mut worst: f64 = 0.0;
    for (k, leaf) in leaves.iter().enumerate() {
        let g = tape.grad(*leaf).unwrap_or_else(|| Tensor::zeros(inputs[k].shape()));
        for e in 0..inputs[k].len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[e] += EPS;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[e] -= EPS;
            let numeric = (value(&plus) - value(&minus)) / (2.0 * EPS);
            worst = worst.max(rel_err(g.data()[e], numeric));
        }
    }
    worst
}

/// Same as [`check_op`] but differentiating a scalar loss with respect to
/// a layer's own parameters; every element is checked.
pub fn check_module<M, F>(module: &M, loss: F) -> f64
where
    M: Module<f64> + Clone,
    F: for<'t> Fn(&M, &'t Tape<f64>) -> Var<'t, f64>,
{
    let tape = Tape::new();
    loss(module, &tape).backward().unwrap();
    let grads = module.collect_grads(&tape);
    let value = |m: &M| {
        let tape = Tape::new();
        loss(m, &tape).item().unwrap()
    };
    let mut worst: f64 = 0.0;
    for (p, param) in module.params().iter().enumerate() {
        for e in 0..param.value.len() {
            let nudged = |delta: f64| {
                let mut m = module.clone();
                m.params_mut()[p].value.data_mut()[e] += delta;
                value(&m)
            };
            let numeric = (nudged(EPS) - nudged(-EPS)) / (2.0 * EPS);
            worst = worst.max(rel_err(grads.slots[p].as_ref().unwrap()[e], numeric));
        }
    }
    worst
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Objective {
    Generator,
    Discriminator,
}

/// Checks the gradient of a whole-model loss with respect to a random
/// `fraction` of the trained player's parameter elements.
pub fn check_model(
    model: &CsgModel<f64>,
    x: &SceneTensors<f64>,
    objective: Objective,
    fraction: f64,
    seed: u64,
) -> (f64, usize) {
    let noise = model.generator.noise(x.num_agents(), seed);
    let loss_value = |m: &CsgModel<f64>| -> f64 {
        let tape = Tape::new();
        match objective {
            Objective::Generator => generator_loss(
                &tape,
                m,
                x,
                &noise,
                LossWeights::default(),
                AdversarialLoss::NonSaturating,
            )
            .unwrap()
            .total
            .item()
            .unwrap(),
            Objective::Discriminator => discriminator_loss(&tape, m, x, &noise).unwrap().item().unwrap(),
        }
    };
    let tape = Tape::new();
    match objective {
        Objective::Generator => {
            generator_loss(
                &tape,
                model,
                x,
                &noise,
                LossWeights::default(),
                AdversarialLoss::NonSaturating,
            )
            .unwrap()
            .total
            .backward()
            .unwrap();
        }
        Objective::Discriminator => discriminator_loss(&tape, model, x, &noise).unwrap().backward().unwrap(),
    }
    let grads = match objective {
        Objective::Generator => model.generator.collect_grads(&tape),
        Objective::Discriminator => model.discriminator.collect_grads(&tape),
    };
    let sizes: Vec<usize> = match objective {
        Objective::Generator => model.generator.params().iter().map(|p| p.value.len()).collect(),
        Objective::Discriminator => model.discriminator.params().iter().map(|p| p.value.len()).collect(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for (p, &len) in sizes.iter().enumerate() {
        for e in 0..len {
            if rng.random::<f64>() >= fraction {
                continue;
            }
            let perturbed = |delta: f64| {
                let mut m = model.clone();
                match objective {
                    Objective::Generator => m.generator.params_mut()[p].value.data_mut()[e] += delta,
                    Objective::Discriminator => m.discriminator.params_mut()[p].value.data_mut()[e] += delta,
                }
                loss_value(&m)
            };
            let numeric = (perturbed(EPS) - perturbed(-EPS)) / (2.0 * EPS);
            let analytic = grads.slots[p].as_ref().unwrap()[e];
            worst = worst.max(rel_err(analytic, numeric));
            checked += 1;
        }
    }
    (worst, checked)
}

/// Three constant-heading regimes; `speed` is metres per frame.
pub fn regimes() -> SyntheticConfig {
    let regime = |speed| RegimeConfig {
        speed_sd: 0.05,
        ..RegimeConfig::new(speed, 0.08, 3)
    };
    SyntheticConfig {
        obs_len: 8,
        pred_len: 12,
        regimes: BTreeMap::from([
            ("slow".to_string(), regime(0.3)),
            ("medium".to_string(), regime(0.65)),
            ("fast".to_string(), regime(1.0)),
        ]),
    }
}

/// Short scenes for fast model tests.
pub fn small_scenes(n: usize, obs: usize, pred: usize, agents: usize, seed: u64) -> Vec<Scene> {
    let cfg = SyntheticConfig {
        obs_len: obs,
        pred_len: pred,
        regimes: BTreeMap::from([("walk".to_string(), RegimeConfig::new(0.5, 0.1, agents))]),
    };
    generate_synthetic(&cfg, n, seed).unwrap()
}

pub fn tensors(scenes: &[Scene], scaler: &SpeedScaler, config: &CsgConfig) -> Vec<SceneTensors<f64>> {
    prepare_scenes(scenes, scaler, &config.vocabulary, Execution::Sequential).unwrap()
}

/// Tiny model and matching scenes.
pub fn tiny_setup(
    kind: AggregationKind,
    agents: usize,
    seed: u64,
) -> (CsgModel<f64>, Vec<SceneTensors<f64>>, SpeedScaler) {
    let config = CsgConfig::tiny(kind);
    let scenes = small_scenes(4, config.obs_len, config.pred_len, agents, seed);
    let scaler = SpeedScaler::fit_scenes(&scenes).unwrap();
    let x = tensors(&scenes, &scaler, &config);
    (CsgModel::new(config, seed).unwrap(), x, scaler)
}

fn gaussian(shape: &[usize], seed: u64) -> Tensor<f64> {
    sample_gaussian(shape, seed)
}

/// Inputs kept away from zero so `relu` and `abs` are differentiable at
/// every perturbed point.
fn off_zero(shape: &[usize], seed: u64) -> Tensor<f64> {
    gaussian(shape, seed).map(|v| if v.abs() < 0.1 { v.signum() * 0.1 + v } else { v })
}

/// Worst relative error for every primitive op of the tape.
pub fn op_errors(seed: u64) -> Vec<(&'static str, f64)> {
    let a = || gaussian(&[3, 4], seed);
    let b = || gaussian(&[3, 4], seed + 1);
    let m = || gaussian(&[4, 2], seed + 2);
    let row = || gaussian(&[1, 4], seed + 3);
    let k = off_zero(&[3, 4], seed + 4);
    vec![
        ("matmul", check_op(&[a(), m()], |v| v[0].matmul(v[1]))),
        ("transpose", check_op(&[a()], |v| v[0].transpose())),
        ("add", check_op(&[a(), b()], |v| v[0].add(v[1]))),
        ("sub", check_op(&[a(), b()], |v| v[0].sub(v[1]))),
        ("mul", check_op(&[a(), b()], |v| v[0].mul(v[1]))),
        ("scale", check_op(&[a()], |v| v[0].scale(-1.7))),
        ("add_scalar", check_op(&[a()], |v| v[0].add_scalar(0.3))),
        ("neg", check_op(&[a()], |v| v[0].neg())),
        ("square", check_op(&[a()], |v| v[0].square())),
        ("sigmoid", check_op(&[a()], |v| v[0].sigmoid())),
        ("tanh", check_op(&[a()], |v| v[0].tanh())),
        ("relu", check_op(std::slice::from_ref(&k), |v| v[0].relu())),
        ("softplus", check_op(&[a()], |v| v[0].softplus())),
        ("abs", check_op(std::slice::from_ref(&k), |v| v[0].abs())),
        ("narrow", check_op(&[a()], |v| v[0].narrow(1, 1, 2))),
        ("softmax", check_op(&[a()], |v| v[0].softmax(1))),
        ("reduce_max", check_op(&[a()], |v| v[0].reduce_max(0))),
        ("sum", check_op(&[a()], |v| v[0].sum())),
        ("mean", check_op(&[a()], |v| v[0].mean())),
        ("reshape", check_op(&[a()], |v| v[0].reshape(&[2, 6]))),
        ("select_rows", check_op(&[a()], |v| v[0].select_rows(&[2, 0, 2, 1]))),
        ("expand_rows", check_op(&[row()], |v| v[0].expand_rows(3))),
        ("concat", check_op(&[a(), b()], |v| concat(&[v[0], v[1]], 1))),
    ]
}

fn weighted<'t>(y: Var<'t, f64>, w: &Tensor<f64>) -> Var<'t, f64> {
    y.mul(y.tape().constant(w.clone())).unwrap().sum().unwrap()
}

/// Linear, MLP and a multi-step LSTM, checked through their parameters.
pub fn composed_errors(seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = gaussian(&[3, 4], seed + 10);
    let w = gaussian(&[3, 2], seed + 11);
    let linear = LinearLayer::<f64>::new("linear", 4, 2, Activation::Tanh, &mut rng).unwrap();
    let mlp = MlpStack::<f64>::new("mlp", &[4, 6, 2], Activation::Sigmoid, &mut rng).unwrap();
    let lstm = LstmCell::<f64>::new("lstm", 4, 2, &mut rng).unwrap();
    let w = &w;
    let xs: Vec<Tensor<f64>> = (0..4).map(|t| gaussian(&[3, 4], seed + 20 + t)).collect();
    vec![
        (
            "linear",
            check_module(&linear, |l, tape| {
                let y = l.forward(tape, tape.constant(x.clone())).unwrap();
                weighted(y, w)
            }),
        ),
        (
            "mlp",
            check_module(&mlp, |m, tape| {
                let y = m.forward(tape, tape.constant(x.clone())).unwrap();
                weighted(y, w)
            }),
        ),
        (
            "lstm",
            check_module(&lstm, |cell, tape| {
                let bound = cell.bind(tape).unwrap();
                let inputs: Vec<_> = xs.iter().map(|t| tape.constant(t.clone())).collect();
                let s = bound.run(&inputs, LstmState::zeros(tape, 3, 2)).unwrap();
                weighted(s.h.add(s.c).unwrap(), w)
            }),
        ),
    ]
}

/// Generator and discriminator losses of the tiny model for every
/// aggregation kind.
pub fn model_errors(fraction: f64, seed: u64) -> Vec<(String, f64, usize)> {
    let mut out = Vec::new();
    for kind in AggregationKind::ALL {
        let (model, x, _) = tiny_setup(kind, 3, seed);
        for objective in [Objective::Generator, Objective::Discriminator] {
            let (err, n) = check_model(&model, &x[0], objective, fraction, seed);
            out.push((format!("{objective:?}/{}", kind.as_str()), err, n));
        }
    }
    out
}
