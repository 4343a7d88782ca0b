use rand::Rng;
use serde::{Deserialize, Serialize};

use super::RtcError;
use crate::flow::FlowSample;

/// Training-time delay masking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RtcTrainRule {
    pub d_max: usize,
    pub horizon: usize,
    /// Execution horizon: steps consumed per chunk before the next one is needed.
    pub exec_horizon: usize,
    /// Draw `d` from `{0..d_max}`; when false, from `{1..d_max}`.
    pub include_zero_delay: bool,
}

impl Default for RtcTrainRule {
    fn default() -> Self {
        Self { d_max: 6, horizon: 16, exec_horizon: 8, include_zero_delay: true }
    }
}

impl RtcTrainRule {
    /// Hard errors for `d_max >= H`; returns a warning when `d_max >= H - s`.
    pub fn validate(&self) -> Result<Option<String>, RtcError> {
        if self.d_max >= self.horizon {
            return Err(RtcError::Config(format!("d_max {} must be below horizon {}", self.d_max, self.horizon)));
        }
        if self.exec_horizon == 0 || self.exec_horizon > self.horizon {
            return Err(RtcError::Config("execution horizon must be in 1..=H".into()));
        }
        if self.d_max >= self.horizon - self.exec_horizon {
            return Ok(Some(format!(
                "d_max {} is outside [0, H - s) = [0, {})",
                self.d_max,
                self.horizon - self.exec_horizon
            )));
        }
        Ok(None)
    }

    pub fn sample(&self, rng: &mut impl Rng) -> usize {
        if self.include_zero_delay || self.d_max == 0 {
            sample_delay(rng, self.d_max)
        } else {
            rng.random_range(1..=self.d_max)
        }
    }
}

/// Uniform draw from `{0, ..., d_max}`.
pub fn sample_delay(rng: &mut impl Rng, d_max: usize) -> usize {
    rng.random_range(0..=d_max)
}

/// Makes the first `d` steps clean and excludes them from the loss.
pub fn apply_rtc_mask(mut sample: FlowSample, d: usize) -> Result<FlowSample, RtcError> {
    let h = sample.a.nrows();
    if d >= h {
        return Err(RtcError::DelayTooLong { d, horizon: h });
    }
    for r in 0..d {
        sample.a_tau.row_mut(r).assign(&sample.a.row(r));
        sample.mask[r] = true;
    }
    Ok(sample)
}
