//! Displacement errors, best-of-K sampling, collisions and speed compliance.
//!
//! Every metric works on plain positions in metres, so it applies equally
//! to model output and to ground truth.

mod report;

pub use report::{evaluate, extrapolation_report, EvalReport, EvalRow, ExtrapolationReport, ExtrapolationRow};

use thiserror::Error;

use crate::data::{distance, Point, SpeedFold, SpeedScaler};
use crate::exec::Execution;
use crate::model::{Generator, Mode, ModelError, RolloutResult, SceneTensors};
use crate::tensor::{derive_seed, Real};
use crate::train::future_positions;

/// Agents closer than this many metres collide.
pub const COLLISION_THRESHOLD: f64 = 0.10;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("trajectory lengths differ: truth {truth}, prediction {pred}")]
    LengthMismatch { truth: usize, pred: usize },
    #[error("empty trajectory")]
    Empty,
    #[error("no scenes to evaluate")]
    EmptyDataset,
    #[error("the {0} fold has no test scenes")]
    EmptyFold(SpeedFold),
    #[error("K must be at least 1")]
    ZeroK,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
}

/// Mean Euclidean distance over matching steps.
pub fn ade(truth: &[Point], pred: &[Point]) -> Result<f64, EvalError> {
    if truth.len() != pred.len() {
        return Err(EvalError::LengthMismatch {
            truth: truth.len(),
            pred: pred.len(),
        });
    }
    if truth.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(truth.iter().zip(pred).map(|(&a, &b)| distance(a, b)).sum::<f64>() / truth.len() as f64)
}

/// Distance between the final points.
pub fn fde(truth: &[Point], pred: &[Point]) -> Result<f64, EvalError> {
    match (truth.last(), pred.last()) {
        (Some(&a), Some(&b)) => Ok(distance(a, b)),
        _ => Err(EvalError::Empty),
    }
}

/// ADE and FDE averaged over the agents of a scene.
pub fn scene_errors(truth: &[Vec<Point>], pred: &[Vec<Point>]) -> Result<(f64, f64), EvalError> {
    if truth.len() != pred.len() {
        return Err(EvalError::LengthMismatch {
            truth: truth.len(),
            pred: pred.len(),
        });
    }
    if truth.is_empty() {
        return Err(EvalError::Empty);
    }
    let (mut a, mut f) = (0.0, 0.0);
    for (t, p) in truth.iter().zip(pred) {
        a += ade(t, p)?;
        f += fde(t, p)?;
    }
    let n = truth.len() as f64;
    Ok((a / n, f / n))
}

/// The ADE-minimising sample of a best-of-K draw.
#[derive(Clone, Debug, PartialEq)]
pub struct BestOfK {
    /// Index into the seed list; the first wins ties.
    pub index: usize,
    pub ade: f64,
    /// FDE of the same sample, not minimised separately.
    pub fde: f64,
    pub sample: RolloutResult,
}

/// Seed of sample `k` for scene `scene` in run `run_seed`. Lists for
/// increasing K are prefixes of each other.
pub fn sample_seed(run_seed: u64, scene: usize, k: usize) -> u64 {
    derive_seed(run_seed, &[scene as u64, k as u64])
}

/// Draws one rollout per seed and keeps the one with the lowest scene ADE.
pub fn best_of_k<T: Real>(
    generator: &Generator<T>,
    x: &SceneTensors<T>,
    mode: Mode<'_>,
    seeds: &[u64],
    execution: Execution,
) -> Result<BestOfK, EvalError> {
    if seeds.is_empty() {
        return Err(EvalError::ZeroK);
    }
    let truth = future_positions(x);
    let samples = execution.map(seeds, |_, &s| -> Result<_, EvalError> {
        let r = generator.sample(x, mode, s)?;
        let (a, f) = scene_errors(&truth, &r.positions)?;
        Ok((a, f, r))
    });
    let mut best: Option<BestOfK> = None;
    for (index, s) in samples.into_iter().enumerate() {
        let (ade, fde, sample) = s?;
        if best.as_ref().is_none_or(|b| ade < b.ade) {
            best = Some(BestOfK {
                index,
                ade,
                fde,
                sample,
            });
        }
    }
    Ok(best.expect("at least one seed"))
}

/// Fraction of unordered agent pairs closer than `threshold` in one frame.
pub fn frame_collision_fraction(positions: &[Point], threshold: f64) -> f64 {
    let n = positions.len();
    if n < 2 {
        return 0.0;
    }
    let mut hits = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            if distance(positions[i], positions[j]) < threshold {
                hits += 1;
            }
        }
    }
    hits as f64 / (n * (n - 1) / 2) as f64
}

/// Percentage of colliding agent pairs per frame, averaged over every
/// frame of every scene. Each scene is `[agent][frame]`.
pub fn collision_rate(scenes: &[Vec<Vec<Point>>], threshold: f64) -> f64 {
    let (mut sum, mut frames) = (0.0, 0usize);
    for scene in scenes {
        let len = scene.iter().map(Vec::len).min().unwrap_or(0);
        for t in 0..len {
            let at: Vec<Point> = scene.iter().map(|a| a[t]).collect();
            sum += frame_collision_fraction(&at, threshold);
            frames += 1;
        }
    }
    if frames == 0 {
        0.0
    } else {
        100.0 * sum / frames as f64
    }
}

/// Step lengths of `deltas` in scaled units. Not clamped, so motion
/// outside the fitted range is penalised in full.
fn scaled_step(delta: Point, scaler: &SpeedScaler) -> f64 {
    ((delta[0] * delta[0] + delta[1] * delta[1]).sqrt() - scaler.min_speed) / scaler.range()
}

/// Mean absolute gap between generated scaled step length and the speed
/// each step was conditioned on, over every agent and step of every
/// rollout.
pub fn speed_compliance(rollouts: &[RolloutResult], scaler: &SpeedScaler) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for r in rollouts {
        for (deltas, cond) in r.deltas.iter().zip(&r.conditions) {
            for (&d, &c) in deltas.iter().zip(cond) {
                sum += (scaled_step(d, scaler) - c).abs();
                n += 1;
            }
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Mean generated step length in metres per frame.
pub fn mean_step_length(r: &RolloutResult) -> f64 {
    let steps: Vec<f64> = r
        .deltas
        .iter()
        .flatten()
        .map(|d| (d[0] * d[0] + d[1] * d[1]).sqrt())
        .collect();
    steps.iter().sum::<f64>() / steps.len().max(1) as f64
}

/// Spearman rank correlation with average ranks for ties. `NaN` when
/// either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "spearman needs paired samples");
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

/// Mean and population variance.
pub fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n)
}
