use serde::{Deserialize, Serialize};

use super::{derive_speeds, DataError, Scene};

/// Min-max transform of raw speeds (metres per frame) into `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedScaler {
    pub min_speed: f64,
    pub max_speed: f64,
}

impl SpeedScaler {
    pub fn new(min_speed: f64, max_speed: f64) -> Result<Self, DataError> {
        if !(min_speed.is_finite() && max_speed.is_finite() && max_speed > min_speed) {
            return Err(DataError::DegenerateRange {
                min: min_speed,
                max: max_speed,
            });
        }
        Ok(Self { min_speed, max_speed })
    }

    pub fn fit(speeds: impl IntoIterator<Item = f64>) -> Result<Self, DataError> {
        let (min, max) = speeds
            .into_iter()
            .fold(None, |acc: Option<(f64, f64)>, s| match acc {
                None => Some((s, s)),
                Some((lo, hi)) => Some((lo.min(s), hi.max(s))),
            })
            .ok_or(DataError::NoSpeeds)?;
        Self::new(min, max)
    }

    /// Fits on every measured step of every track. The `speed[0] = 0`
    /// boundary value is not a measurement and is left out.
    pub fn fit_scenes(scenes: &[Scene]) -> Result<Self, DataError> {
        Self::fit(
            scenes
                .iter()
                .flat_map(|s| s.tracks.iter())
                .flat_map(|t| derive_speeds(&t.positions).into_iter().skip(1)),
        )
    }

    pub fn range(&self) -> f64 {
        self.max_speed - self.min_speed
    }

    /// Scaled speed, clamped to `[0, 1]` for inputs outside the fitted range.
    pub fn apply(&self, speed: f64) -> f64 {
        ((speed - self.min_speed) / self.range()).clamp(0.0, 1.0)
    }

    pub fn invert(&self, scaled: f64) -> f64 {
        self.min_speed + scaled * self.range()
    }

    /// Metres per second for a scaled speed at the given frame interval.
    pub fn to_metres_per_second(&self, scaled: f64, frame_interval: f64) -> f64 {
        self.invert(scaled) / frame_interval
    }
}
