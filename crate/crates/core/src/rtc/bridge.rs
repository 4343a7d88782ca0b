use crate::actions::{layout, JointAction};
use crate::plant::{lower_body_map, step_plant, PlantError, PlantState, WHOLE_BODY_DOF};

use super::RtcError;

/// 43-DoF whole-body command: the 28 upper joints unchanged, then the 15
/// lower-body joints the stand-in controller produces for the 8 command channels.
pub fn lowlevel_bridge(action: &JointAction) -> [f64; WHOLE_BODY_DOF] {
    let mut out = [0.0; WHOLE_BODY_DOF];
    out[..layout::UPPER_DIM].copy_from_slice(action.upper());
    out[layout::UPPER_DIM..].copy_from_slice(&lower_body_map(action.base_height(), action.torso_rpy()));
    out
}

/// Runs the plant at the low-level rate, holding the latest control-rate action.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LowlevelBridge {
    pub control_rate: f64,
    pub lowlevel_rate: f64,
    substeps: usize,
}

impl LowlevelBridge {
    /// The low-level rate must be an integer multiple of the control rate.
    pub fn new(control_rate: f64, lowlevel_rate: f64) -> Result<Self, RtcError> {
        if !(control_rate > 0.0 && control_rate.is_finite()) || lowlevel_rate < control_rate {
            return Err(RtcError::Config(format!("rates {control_rate} / {lowlevel_rate} Hz")));
        }
        let ratio = lowlevel_rate / control_rate;
        if (ratio - ratio.round()).abs() > 1e-9 {
            return Err(RtcError::Config(format!("low-level rate {lowlevel_rate} is not a multiple of {control_rate}")));
        }
        Ok(Self { control_rate, lowlevel_rate, substeps: ratio.round() as usize })
    }

    pub fn substeps(&self) -> usize {
        self.substeps
    }

    /// Advances one control tick; returns the new state and the command sent at each substep.
    pub fn run_tick(&self, state: &PlantState, action: &JointAction) -> Result<(PlantState, Vec<[f64; WHOLE_BODY_DOF]>), PlantError> {
        let dt = 1.0 / self.lowlevel_rate;
        let command = lowlevel_bridge(action);
        let mut s = *state;
        for _ in 0..self.substeps {
            s = step_plant(&s, action, dt)?;
        }
        Ok((s, vec![command; self.substeps]))
    }
}
