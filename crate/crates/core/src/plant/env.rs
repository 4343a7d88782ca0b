use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::task::{render_context, TaskInstance, Tracker};
use super::{wrap_angle, PlantError, PlantState};
use crate::actions::{JointAction, Observation, ProprioState};
use crate::rtc::LowlevelBridge;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutResult {
    pub success: bool,
    pub subgoal_flags: Vec<bool>,
    /// RMSE between commanded and reached values per channel group.
    pub tracking_rmse: BTreeMap<String, f64>,
    /// Control ticks executed.
    pub length: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub subgoal_completed: bool,
    pub done: bool,
}

/// One rollout of a task instance on the plant, stepped at the control rate.
#[derive(Debug, Clone)]
pub struct SimEnv {
    pub instance: TaskInstance,
    pub state: PlantState,
    pub tracker: Tracker,
    pub tick: usize,
    bridge: LowlevelBridge,
    sq_err: BTreeMap<&'static str, (f64, usize)>,
}

impl SimEnv {
    pub fn new(instance: TaskInstance, control_rate: f64, lowlevel_rate: f64) -> Result<Self, PlantError> {
        let bridge = LowlevelBridge::new(control_rate, lowlevel_rate).map_err(|e| PlantError::Rollout(e.to_string()))?;
        let state = PlantState::neutral();
        let tracker = Tracker::new(&instance, &state);
        Ok(Self { instance, state, tracker, tick: 0, bridge, sq_err: BTreeMap::new() })
    }

    pub fn control_rate(&self) -> f64 {
        self.bridge.control_rate
    }

    pub fn context(&self) -> Vec<f64> {
        render_context(&self.instance, &self.state, &self.tracker, self.tick, self.bridge.control_rate)
    }

    pub fn observation(&self) -> Observation {
        Observation {
            proprio: ProprioState::from_upper(&self.state.upper).expect("plant joints are finite"),
            context: self.context(),
            task_id: self.instance.task_id,
        }
    }

    pub fn success(&self) -> bool {
        self.tracker.done()
    }

    pub fn done(&self) -> bool {
        self.success() || self.tick >= self.instance.time_limit
    }

    fn record(&mut self, channel: &'static str, err: f64) {
        let e = self.sq_err.entry(channel).or_insert((0.0, 0));
        e.0 += err * err;
        e.1 += 1;
    }

    /// Executes one control tick.
    pub fn apply(&mut self, action: &JointAction) -> Result<StepInfo, PlantError> {
        let (next, _) = self.bridge.run_tick(&self.state, action)?;
        self.state = next;
        self.tick += 1;
        let upper: Vec<f64> = self.state.upper.iter().zip(action.upper()).map(|(q, t)| t - q).collect();
        for e in upper {
            self.record("upper", e);
        }
        self.record("height", action.base_height() - self.state.height);
        self.record("yaw", wrap_angle(action.p_yaw() - self.state.yaw));
        let completed = self.tracker.update(&self.instance, &self.state, self.tick);
        Ok(StepInfo { subgoal_completed: completed, done: self.done() })
    }

    pub fn result(&self) -> RolloutResult {
        RolloutResult {
            success: self.success(),
            subgoal_flags: self.tracker.flags.clone(),
            tracking_rmse: self.sq_err.iter().map(|(k, (s, n))| (k.to_string(), (s / *n as f64).sqrt())).collect(),
            length: self.tick,
        }
    }
}

impl RolloutResult {
    /// Success is the conjunction of subgoal flags.
    pub fn consistent(&self) -> bool {
        self.success == self.subgoal_flags.iter().all(|f| *f)
    }
}
