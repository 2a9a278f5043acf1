use std::fmt;

use serde::{Deserialize, Serialize};

use super::{derive_speeds, Scene, SpeedScaler};

/// Speed partitions on mean scaled speed: `[0, 0.33)`, `[0.33, 0.66)`,
/// `[0.66, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpeedFold {
    Slow,
    Medium,
    Fast,
}

impl SpeedFold {
    pub const ALL: [SpeedFold; 3] = [SpeedFold::Slow, SpeedFold::Medium, SpeedFold::Fast];
    pub const SLOW_UPPER: f64 = 0.33;
    pub const MEDIUM_UPPER: f64 = 0.66;

    pub fn as_str(self) -> &'static str {
        match self {
            SpeedFold::Slow => "slow",
            SpeedFold::Medium => "medium",
            SpeedFold::Fast => "fast",
        }
    }
}

impl fmt::Display for SpeedFold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub fn fold_of(mean_scaled: f64) -> SpeedFold {
    if mean_scaled < SpeedFold::SLOW_UPPER {
        SpeedFold::Slow
    } else if mean_scaled < SpeedFold::MEDIUM_UPPER {
        SpeedFold::Medium
    } else {
        SpeedFold::Fast
    }
}

/// Mean scaled speed over every agent and every measured step (frames
/// `1..len`) of the scene.
pub fn mean_scaled_speed(scene: &Scene, scaler: &SpeedScaler) -> f64 {
    let (sum, n) = scene
        .tracks
        .iter()
        .flat_map(|t| derive_speeds(&t.positions).into_iter().skip(1))
        .fold((0.0, 0usize), |(s, n), v| (s + scaler.apply(v), n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Scene indices per fold. Every input index appears in exactly one fold.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FoldSplit {
    pub slow: Vec<usize>,
    pub medium: Vec<usize>,
    pub fast: Vec<usize>,
}

impl FoldSplit {
    pub fn get(&self, fold: SpeedFold) -> &[usize] {
        match fold {
            SpeedFold::Slow => &self.slow,
            SpeedFold::Medium => &self.medium,
            SpeedFold::Fast => &self.fast,
        }
    }
}

pub fn split_speed_folds(scenes: &[Scene], scaler: &SpeedScaler) -> FoldSplit {
    let mut split = FoldSplit::default();
    for (i, s) in scenes.iter().enumerate() {
        match fold_of(mean_scaled_speed(s, scaler)) {
            SpeedFold::Slow => split.slow.push(i),
            SpeedFold::Medium => split.medium.push(i),
            SpeedFold::Fast => split.fast.push(i),
        }
    }
    split
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thresholds() {
        assert_eq!(fold_of(0.0), SpeedFold::Slow);
        assert_eq!(fold_of(0.3299), SpeedFold::Slow);
        assert_eq!(fold_of(0.33), SpeedFold::Medium);
        assert_eq!(fold_of(0.5), SpeedFold::Medium);
        assert_eq!(fold_of(0.66), SpeedFold::Fast);
        assert_eq!(fold_of(1.0), SpeedFold::Fast);
    }
}
