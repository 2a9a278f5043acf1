use std::fmt;

use super::{best_of_k, collision_rate, mean_var, sample_seed, speed_compliance, EvalError, COLLISION_THRESHOLD};
use crate::data::{split_speed_folds, Scene, SceneFeatures, SpeedFold, SpeedScaler};
use crate::exec::Execution;
use crate::model::{Generator, Mode, SceneTensors, SpeedCondition};
use crate::tensor::{derive_seed, Real};
use crate::train::future_positions;

/// Best-of-K metrics of one dataset, as mean and variance across runs.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub dataset: String,
    pub scenes: usize,
    pub k: usize,
    pub seeds: Vec<u64>,
    pub ade_mean: f64,
    pub ade_var: f64,
    pub fde_mean: f64,
    pub fde_var: f64,
    /// Collision percentage of the selected samples, averaged over runs.
    pub collision_pct: f64,
    /// Only for simulation-mode evaluations.
    pub compliance: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str =
        "dataset,scenes,k,runs,ade_mean,ade_var,fde_mean,fde_var,collision_pct,speed_compliance,seeds";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for r in &self.rows {
            let seeds: Vec<String> = r.seeds.iter().map(u64::to_string).collect();
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                r.dataset,
                r.scenes,
                r.k,
                r.seeds.len(),
                r.ade_mean,
                r.ade_var,
                r.fde_mean,
                r.fde_var,
                r.collision_pct,
                r.compliance.map(|c| c.to_string()).unwrap_or_default(),
                seeds.join(" "),
            ));
        }
        out
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<16} {:>6} {:>4} {:>5} {:>17} {:>17} {:>8}",
            "dataset", "scenes", "K", "runs", "ADE (m)", "FDE (m)", "coll %"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<16} {:>6} {:>4} {:>5} {:>8.3} ± {:<6.3} {:>8.3} ± {:<6.3} {:>8.2}",
                r.dataset,
                r.scenes,
                r.k,
                r.seeds.len(),
                r.ade_mean,
                r.ade_var,
                r.fde_mean,
                r.fde_var,
                r.collision_pct
            )?;
        }
        Ok(())
    }
}

/// Prediction-mode best-of-K over every scene, once per run seed.
pub fn evaluate<T: Real>(
    generator: &Generator<T>,
    dataset: &str,
    scenes: &[SceneTensors<T>],
    k: usize,
    seeds: &[u64],
    execution: Execution,
) -> Result<EvalRow, EvalError> {
    if scenes.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    if k == 0 || seeds.is_empty() {
        return Err(EvalError::ZeroK);
    }
    let (mut ades, mut fdes, mut colls) = (Vec::new(), Vec::new(), Vec::new());
    for &run in seeds {
        let best = execution.map(scenes, |i, x| {
            let sample_seeds: Vec<u64> = (0..k).map(|j| sample_seed(run, i, j)).collect();
            best_of_k(generator, x, Mode::Predict, &sample_seeds, Execution::Sequential)
        });
        let best = best.into_iter().collect::<Result<Vec<_>, _>>()?;
        let n = best.len() as f64;
        ades.push(best.iter().map(|b| b.ade).sum::<f64>() / n);
        fdes.push(best.iter().map(|b| b.fde).sum::<f64>() / n);
        let positions: Vec<_> = best.into_iter().map(|b| b.sample.positions).collect();
        colls.push(collision_rate(&positions, COLLISION_THRESHOLD));
    }
    let (ade_mean, ade_var) = mean_var(&ades);
    let (fde_mean, fde_var) = mean_var(&fdes);
    Ok(EvalRow {
        dataset: dataset.to_string(),
        scenes: scenes.len(),
        k,
        seeds: seeds.to_vec(),
        ade_mean,
        ade_var,
        fde_mean,
        fde_var,
        collision_pct: mean_var(&colls).0,
        compliance: None,
    })
}

/// One fold of an extrapolation report. Metric fields are `None` for a
/// fold without test scenes.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtrapolationRow {
    pub fold: SpeedFold,
    pub held_out: bool,
    pub scenes: usize,
    pub compliance: Option<f64>,
    pub collision_pct: Option<f64>,
    pub gt_collision_pct: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExtrapolationReport {
    /// Slow, medium, fast, in that order.
    pub rows: Vec<ExtrapolationRow>,
}

impl ExtrapolationReport {
    pub const CSV_HEADER: &'static str = "fold,held_out,scenes,speed_compliance,collision_pct,gt_collision_pct";

    pub fn held_out(&self) -> &ExtrapolationRow {
        self.rows.iter().find(|r| r.held_out).expect("one held-out row")
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.fold,
                r.held_out,
                r.scenes,
                opt(r.compliance),
                opt(r.collision_pct),
                opt(r.gt_collision_pct)
            ));
        }
        out
    }
}

impl fmt::Display for ExtrapolationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let opt = |v: Option<f64>, p: usize| v.map_or("-".to_string(), |x| format!("{x:.p$}"));
        writeln!(
            f,
            "{:<8} {:>8} {:>6} {:>10} {:>8} {:>8}",
            "fold", "held-out", "scenes", "compliance", "coll %", "GT coll %"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<8} {:>8} {:>6} {:>10} {:>8} {:>8}",
                r.fold,
                if r.held_out { "yes" } else { "" },
                r.scenes,
                opt(r.compliance, 4),
                opt(r.collision_pct, 2),
                opt(r.gt_collision_pct, 2)
            )?;
        }
        Ok(())
    }
}

/// Simulates every test scene at its own ground-truth future speeds and
/// reports, per speed fold, how closely the generated motion follows the
/// condition next to predicted and ground-truth collision rates.
pub fn extrapolation_report<T: Real>(
    generator: &Generator<T>,
    scenes: &[Scene],
    scaler: &SpeedScaler,
    held_out: SpeedFold,
    seed: u64,
    execution: Execution,
) -> Result<ExtrapolationReport, EvalError> {
    let split = split_speed_folds(scenes, scaler);
    if split.get(held_out).is_empty() {
        return Err(EvalError::EmptyFold(held_out));
    }
    let vocab = &generator.config().vocabulary;
    let mut rows = Vec::with_capacity(3);
    for fold in SpeedFold::ALL {
        let idx = split.get(fold);
        let mut row = ExtrapolationRow {
            fold,
            held_out: fold == held_out,
            scenes: idx.len(),
            compliance: None,
            collision_pct: None,
            gt_collision_pct: None,
        };
        if !idx.is_empty() {
            let sims = execution.map(idx, |_, &i| -> Result<_, EvalError> {
                let f = SceneFeatures::new(&scenes[i], scaler, vocab)?;
                let x = SceneTensors::<T>::new(&f)?;
                let cond = SpeedCondition {
                    speeds: (0..x.num_agents())
                        .map(|a| f.future_scaled_speeds(a).to_vec())
                        .collect(),
                };
                let r = generator.sample(&x, Mode::Simulate(&cond), derive_seed(seed, &[i as u64]))?;
                Ok((r, future_positions(&x)))
            });
            let sims = sims.into_iter().collect::<Result<Vec<_>, _>>()?;
            let (rollouts, truths): (Vec<_>, Vec<_>) = sims.into_iter().unzip();
            let predicted: Vec<_> = rollouts.iter().map(|r| r.positions.clone()).collect();
            row.compliance = Some(speed_compliance(&rollouts, scaler));
            row.collision_pct = Some(collision_rate(&predicted, COLLISION_THRESHOLD));
            row.gt_collision_pct = Some(collision_rate(&truths, COLLISION_THRESHOLD));
        }
        rows.push(row);
    }
    Ok(ExtrapolationReport { rows })
}
