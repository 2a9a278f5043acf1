mod common;

use common::{small_scenes, tiny_setup};
use csg_core::data::SpeedScaler;
use csg_core::model::{AggregationKind, CsgConfig, CsgModel, Mode};
use csg_core::nn::Module;
use csg_core::tensor::{Tape, Tensor};
use csg_core::train::{
    bce_with_logits, config_diff, generator_loss, train, AdversarialLoss, Checkpoint, CheckpointError, EpochMetrics,
    LossWeights, TrainConfig, TrainError, Trainer,
};
use csg_core::Execution;
use proptest::prelude::*;

fn bits(values: Vec<&csg_core::tensor::Param<f64>>) -> Vec<u64> {
    values
        .iter()
        .flat_map(|p| p.value.data().iter().map(|v| v.to_bits()))
        .collect()
}

fn trainer(kind: AggregationKind, seed: u64) -> (Trainer<f64>, Vec<csg_core::model::SceneTensors<f64>>) {
    let (model, xs, scaler) = tiny_setup(kind, 3, seed);
    let config = TrainConfig {
        execution: Execution::Sequential,
        ..TrainConfig::default()
    };
    (Trainer::new(model, scaler, config).unwrap(), xs)
}

#[test]
fn each_update_touches_only_its_player() {
    let (mut t, xs) = trainer(AggregationKind::Pool, 1);
    let batch: Vec<_> = xs.iter().collect();
    let (g0, d0) = (bits(t.model.generator.params()), bits(t.model.discriminator.params()));
    t.discriminator_step(&batch, 5).unwrap();
    let (g1, d1) = (bits(t.model.generator.params()), bits(t.model.discriminator.params()));
    assert_eq!(g0, g1);
    assert_ne!(d0, d1);
    t.generator_step(&batch, 6).unwrap();
    let (g2, d2) = (bits(t.model.generator.params()), bits(t.model.discriminator.params()));
    assert_eq!(d1, d2);
    assert_ne!(g1, g2);
    assert_eq!(t.step, 1);
}

#[test]
fn frozen_player_gets_no_gradient() {
    let (model, xs, _) = tiny_setup(AggregationKind::Concat, 3, 2);
    let noise = model.generator.noise(3, 0);
    let tape = Tape::new();
    let l = generator_loss(
        &tape,
        &model,
        &xs[0],
        &noise,
        LossWeights::default(),
        AdversarialLoss::NonSaturating,
    )
    .unwrap();
    l.total.backward().unwrap();
    assert!(model
        .discriminator
        .params()
        .iter()
        .all(|p| tape.param_grad(p).is_none()));
    assert!(model.generator.params().iter().any(|p| tape.param_grad(p).is_some()));
}

#[test]
fn generator_loss_decomposes() {
    let (model, xs, _) = tiny_setup(AggregationKind::Attention, 3, 3);
    let x = &xs[1];
    let noise = model.generator.noise(3, 1);
    let weights = LossWeights {
        adv: 0.3,
        l2: 2.5,
        l1: 0.7,
    };
    let tape = Tape::new();
    let l = generator_loss(&tape, &model, x, &noise, weights, AdversarialLoss::NonSaturating).unwrap();
    let v = |var: csg_core::tensor::Var<'_, f64>| var.item().unwrap();
    let expect = 0.3 * v(l.adv) + 2.5 * v(l.l2) + 0.7 * v(l.l1);
    assert!((v(l.total) - expect).abs() < 1e-9);

    // The reconstruction term is the mean squared displacement error.
    let tape = Tape::new();
    let r = model
        .generator
        .forward(&tape, x, Mode::Train, &noise)
        .unwrap()
        .to_result(x);
    let truth = x.future_deltas();
    let (mut sum, mut count) = (0.0, 0.0);
    for (p, t) in r.deltas.iter().flatten().zip(truth.iter().flatten()) {
        sum += (p[0] - t[0]).powi(2) + (p[1] - t[1]).powi(2);
        count += 2.0;
    }
    assert!((v(l.l2) - sum / count).abs() < 1e-12);
}

#[test]
fn literal_and_non_saturating_forms_differ_in_sign_of_logit() {
    let tape = Tape::<f64>::new();
    let logits = tape.constant(Tensor::new(vec![2, 1], vec![1.5, -0.5]).unwrap());
    let ns = bce_with_logits(logits, true).unwrap().item().unwrap();
    let lit = bce_with_logits(logits, false).unwrap().item().unwrap();
    let sp = |z: f64| (1.0 + z.exp()).ln();
    assert!((ns - (sp(-1.5) + sp(0.5)) / 2.0).abs() < 1e-12);
    assert!((lit - (sp(1.5) + sp(-0.5)) / 2.0).abs() < 1e-12);
}

proptest! {
    #[test]
    fn bce_is_stable_for_large_logits(z in -800.0f64..800.0) {
        let tape = Tape::<f64>::new();
        let l = bce_with_logits(tape.constant(Tensor::new(vec![1, 1], vec![z]).unwrap()), true).unwrap();
        let v = l.item().unwrap();
        prop_assert!(v.is_finite() && v >= 0.0);
        let oracle = if z > 0.0 { (-z).exp().ln_1p() } else { -z + z.exp().ln_1p() };
        prop_assert!((v - oracle).abs() <= 1e-12 * oracle.max(1.0));
    }
}

fn checkpoint_bytes() -> (Checkpoint<f64>, Vec<u8>) {
    let (model, _, scaler) = tiny_setup(AggregationKind::Concat, 3, 4);
    let ck = Checkpoint {
        model,
        scaler,
        step: 12,
        epoch: 3,
        seed: 99,
    };
    let bytes = ck.to_bytes();
    (ck, bytes)
}

#[test]
fn checkpoint_roundtrip_is_exact() {
    let (ck, bytes) = checkpoint_bytes();
    let back = Checkpoint::<f64>::from_bytes(&bytes).unwrap();
    assert_eq!(back.to_bytes(), bytes);
    assert_eq!((back.step, back.epoch, back.seed), (12, 3, 99));
    assert_eq!(back.scaler, ck.scaler);
    assert_eq!(bits(back.model.params()), bits(ck.model.params()));
    assert_eq!(ck.id().len(), 12);
    assert!(ck.checksum().starts_with(&ck.id()));
}

#[test]
fn corrupted_checkpoints_are_rejected() {
    let (_, bytes) = checkpoint_bytes();
    let header_end = bytes.iter().enumerate().filter(|(_, &b)| b == b'\n').nth(2).unwrap().0;

    let mut flipped = bytes.clone();
    *flipped.last_mut().unwrap() ^= 0x01;
    assert!(matches!(
        Checkpoint::<f64>::from_bytes(&flipped),
        Err(CheckpointError::ChecksumMismatch { .. })
    ));

    let mut header = bytes.clone();
    let pos = bytes.windows(6).position(|w| w == b"\"step\"").unwrap() + 7;
    header[pos] = if header[pos] == b'1' { b'2' } else { b'1' };
    assert!(matches!(
        Checkpoint::<f64>::from_bytes(&header),
        Err(CheckpointError::ChecksumMismatch { .. })
    ));

    for cut in [bytes.len() - 1, header_end + 9, 10] {
        assert!(
            matches!(
                Checkpoint::<f64>::from_bytes(&bytes[..cut]),
                Err(CheckpointError::Truncated)
            ),
            "cut at {cut}"
        );
    }

    let mut version = bytes.clone();
    let v = bytes.iter().position(|&b| b == b'\n').unwrap() - 1;
    version[v] = b'2';
    assert!(matches!(
        Checkpoint::<f64>::from_bytes(&version),
        Err(CheckpointError::VersionMismatch { found: 2, expected: 1 })
    ));

    assert!(matches!(
        Checkpoint::<f32>::from_bytes(&bytes),
        Err(CheckpointError::DtypeMismatch { .. })
    ));
    assert!(matches!(
        Checkpoint::<f64>::from_bytes(b"hello\nworld\n"),
        Err(CheckpointError::Malformed(_))
    ));
}

#[test]
fn config_mismatch_names_the_fields() {
    let (ck, _) = checkpoint_bytes();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let sum = ck.save(&path).unwrap();
    assert_eq!(sum, ck.checksum());
    assert!(!dir.path().join("m.ckpt.tmp").exists());
    let expected = ck.model.config.clone();
    assert!(Checkpoint::<f64>::load_expecting(&path, &expected).is_ok());
    let other = CsgConfig {
        noise_dim: expected.noise_dim + 1,
        aggregation: AggregationKind::Pool,
        ..expected.clone()
    };
    match Checkpoint::<f64>::load_expecting(&path, &other) {
        Err(CheckpointError::ConfigMismatch(msg)) => {
            assert!(msg.contains("noise_dim") && msg.contains("aggregation"), "{msg}");
        }
        other => panic!("{other:?}"),
    }
    assert_eq!(config_diff(&expected, &other).len(), 2);
    assert!(matches!(
        Checkpoint::<f64>::load(&dir.path().join("missing.ckpt")),
        Err(CheckpointError::Io { .. })
    ));
}

#[test]
fn one_epoch_smoke_run() {
    let config = CsgConfig::tiny(AggregationKind::Concat);
    let scenes = small_scenes(10, config.obs_len, config.pred_len, 3, 5);
    let val = small_scenes(3, config.obs_len, config.pred_len, 3, 6);
    let tc = TrainConfig {
        epochs: 1,
        batch_size: 4,
        checkpoint_every: 1,
        execution: Execution::Sequential,
        ..TrainConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let mut seen = Vec::new();
    let out = train::<f64>(&scenes, &val, config.clone(), &tc, Some(dir.path()), |m| seen.push(*m)).unwrap();
    assert_eq!(seen, out.metrics);
    let m = out.metrics[0];
    assert_eq!(m.epoch, 1);
    assert!([m.d_loss, m.g_adv, m.l2, m.l1, m.val_ade.unwrap()]
        .iter()
        .all(|v| v.is_finite()));
    // ceil(10 / 4) generator updates.
    assert_eq!(out.checkpoint.step, 3);
    let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines, [EpochMetrics::CSV_HEADER, m.csv_row().as_str()]);
    assert!(dir.path().join("epoch_1.ckpt").exists());
    let loaded = Checkpoint::<f64>::load_expecting(&dir.path().join("model.ckpt"), &config).unwrap();
    assert_eq!(loaded.scaler, SpeedScaler::fit_scenes(&scenes).unwrap());
}

#[test]
fn invalid_training_setups() {
    let config = CsgConfig::tiny(AggregationKind::None);
    let scenes = small_scenes(2, config.obs_len, config.pred_len, 2, 7);
    let bad = [
        TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        },
        TrainConfig {
            lr_g: 0.0,
            ..TrainConfig::default()
        },
        TrainConfig {
            lambda_l1: f64::NAN,
            ..TrainConfig::default()
        },
    ];
    for tc in &bad {
        assert!(matches!(
            train::<f64>(&scenes, &[], config.clone(), tc, None, |_| {}),
            Err(TrainError::Config(_))
        ));
    }
    assert!(matches!(
        train::<f64>(&[], &[], config, &TrainConfig::default(), None, |_| {}),
        Err(TrainError::EmptyDataset)
    ));
    assert!(toml::from_str::<TrainConfig>("epochs = 3\nlearning_rate = 0.1\n").is_err());
    let tc: TrainConfig =
        toml::from_str("epochs = 3\nadversarial_loss = \"literal\"\nexecution = \"sequential\"\n").unwrap();
    assert_eq!(tc.adversarial_loss, AdversarialLoss::Literal);
    assert_eq!(tc.execution, Execution::Sequential);
}

#[test]
fn exploding_learning_rate_reports_divergence() {
    let config = CsgConfig::tiny(AggregationKind::Concat);
    let scenes = small_scenes(8, config.obs_len, config.pred_len, 3, 8);
    let tc = TrainConfig {
        epochs: 50,
        batch_size: 8,
        lr_g: 1e300,
        lr_d: 1e300,
        execution: Execution::Sequential,
        ..TrainConfig::default()
    };
    match train::<f64>(&scenes, &[], config, &tc, None, |_| {}) {
        Err(TrainError::Diverged { .. }) => {}
        other => panic!("expected divergence, got {:?}", other.map(|o| o.metrics)),
    }
}

#[test]
fn same_seed_same_model() {
    let config = CsgConfig::tiny(AggregationKind::Attention);
    let scenes = small_scenes(6, config.obs_len, config.pred_len, 3, 9);
    let tc = TrainConfig {
        epochs: 2,
        batch_size: 3,
        execution: Execution::Sequential,
        seed: 4,
        ..TrainConfig::default()
    };
    let a = train::<f64>(&scenes, &[], config.clone(), &tc, None, |_| {}).unwrap();
    let b = train::<f64>(&scenes, &[], config.clone(), &tc, None, |_| {}).unwrap();
    assert_eq!(a.checkpoint.to_bytes(), b.checkpoint.to_bytes());
    let c = train::<f64>(&scenes, &[], config, &TrainConfig { seed: 5, ..tc }, None, |_| {}).unwrap();
    assert_ne!(a.checkpoint.to_bytes(), c.checkpoint.to_bytes());
    let _ = CsgModel::<f64>::new(CsgConfig::tiny(AggregationKind::None), 0).unwrap();
}
