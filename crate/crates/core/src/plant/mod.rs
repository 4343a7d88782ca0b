//! Kinematic humanoid stand-in: rate-limited upper joints, a unicycle base,
//! first-order height and torso tracking, and a fixed squat map producing the
//! 15 lower-body joints. Also the synthetic tasks, demonstrations and rollouts.

mod demo;
mod env;
mod eval;
mod kinematics;
mod task;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actions::{layout, JointAction, DEFAULT_STANDING_HEIGHT};

pub use demo::{
    generate_demos, segment_ticks, trial_rng, verify_replay, ScriptedController, CRUISE_SPEED, DEFAULT_CONTROL_RATE, DEFAULT_LOWLEVEL_RATE, HOLD_FRAMES,
};
pub use env::{RolloutResult, SimEnv, StepInfo};
pub use kinematics::{task_space, task_space_episode, FOREARM, UPPER_ARM};
pub use eval::{evaluate, DemoReplayPolicy, EvalConfig, EvalReport, Policy, PolicyRequest, ZerosPolicy};
pub use task::{builtin_tasks, render_context, Subgoal, SubgoalSpec, TaskInstance, TaskSpec, Tracker, CONTEXT_DIM, MAX_SUBGOALS};

pub const UPPER_RATE_LIMIT: f64 = 2.0;
pub const YAW_RATE_LIMIT: f64 = 1.0;
pub const TRACKING_TIME_CONSTANT: f64 = 0.2;
pub const UPPER_JOINT_LIMIT: f64 = 2.0;
pub const HEIGHT_LIMITS: (f64, f64) = (0.45, 0.8);
pub const TORSO_LIMIT: f64 = 0.5;
pub const LEG_LINK: f64 = 0.4;
pub const LOWER_DOF: usize = 15;
pub const WHOLE_BODY_DOF: usize = layout::UPPER_DIM + LOWER_DOF;

#[derive(Debug, Error)]
pub enum PlantError {
    #[error("time step must be positive and finite, got {0}")]
    BadTimeStep(f64),
    #[error("non-finite action")]
    NonFiniteAction,
    #[error("infeasible task: {0}")]
    InfeasibleTask(String),
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("rollout: {0}")]
    Rollout(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    pub upper: [f64; layout::UPPER_DIM],
    /// Waist yaw/roll/pitch, then left and right legs (hip yaw, hip roll, hip pitch,
    /// knee, ankle pitch, ankle roll).
    pub lower: [f64; LOWER_DOF],
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    pub height: f64,
    pub torso_rpy: [f64; 3],
    pub time: f64,
}

impl PlantState {
    pub fn neutral() -> Self {
        Self {
            upper: [0.0; layout::UPPER_DIM],
            lower: lower_body_map(DEFAULT_STANDING_HEIGHT, [0.0; 3]),
            x: 0.0,
            y: 0.0,
            yaw: 0.0,
            height: DEFAULT_STANDING_HEIGHT,
            torso_rpy: [0.0; 3],
            time: 0.0,
        }
    }

    /// The 43 controlled joint values: 28 upper then 15 lower.
    pub fn whole_body(&self) -> [f64; WHOLE_BODY_DOF] {
        let mut out = [0.0; WHOLE_BODY_DOF];
        out[..layout::UPPER_DIM].copy_from_slice(&self.upper);
        out[layout::UPPER_DIM..].copy_from_slice(&self.lower);
        out
    }
}

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut r = a.rem_euclid(two_pi);
    if r > std::f64::consts::PI {
        r -= two_pi;
    }
    r
}

/// Squat kinematics: waist joints copy the torso angles, each leg is two links of
/// `LEG_LINK` with hip pitch = ankle pitch = -theta and knee = 2 theta, where
/// `height = 2 L cos(theta)`.
pub fn lower_body_map(height: f64, torso_rpy: [f64; 3]) -> [f64; LOWER_DOF] {
    let h = height.clamp(HEIGHT_LIMITS.0, HEIGHT_LIMITS.1);
    let theta = (h / (2.0 * LEG_LINK)).clamp(-1.0, 1.0).acos();
    let [roll, pitch, yaw] = torso_rpy;
    let mut q = [0.0; LOWER_DOF];
    q[0] = yaw;
    q[1] = roll;
    q[2] = pitch;
    for leg in 0..2 {
        let o = 3 + 6 * leg;
        q[o + 2] = -theta;
        q[o + 3] = 2.0 * theta;
        q[o + 4] = -theta;
    }
    q
}

fn rate_limited(current: f64, target: f64, max_step: f64) -> f64 {
    current + (target - current).clamp(-max_step, max_step)
}

/// Advances the plant by `dt` seconds under `action`.
pub fn step_plant(state: &PlantState, action: &JointAction, dt: f64) -> Result<PlantState, PlantError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(PlantError::BadTimeStep(dt));
    }
    if action.0.iter().any(|v| !v.is_finite()) {
        return Err(PlantError::NonFiniteAction);
    }
    let mut next = *state;
    let step = UPPER_RATE_LIMIT * dt;
    for (q, &target) in next.upper.iter_mut().zip(action.upper()) {
        let target = target.clamp(-UPPER_JOINT_LIMIT, UPPER_JOINT_LIMIT);
        *q = rate_limited(*q, target, step);
    }

    let theta = state.yaw;
    let (vx, vy) = (action.v_x(), action.v_y());
    next.x += (vx * theta.cos() - vy * theta.sin()) * dt;
    next.y += (vx * theta.sin() + vy * theta.cos()) * dt;
    let yaw_err = wrap_angle(action.p_yaw() - theta);
    next.yaw = wrap_angle(theta + yaw_err.clamp(-YAW_RATE_LIMIT * dt, YAW_RATE_LIMIT * dt) + action.v_yaw() * dt);

    let alpha = 1.0 - (-dt / TRACKING_TIME_CONSTANT).exp();
    let h_target = action.base_height().clamp(HEIGHT_LIMITS.0, HEIGHT_LIMITS.1);
    next.height += (h_target - state.height) * alpha;
    let torso = action.torso_rpy();
    for (v, t) in next.torso_rpy.iter_mut().zip(torso) {
        *v += (t.clamp(-TORSO_LIMIT, TORSO_LIMIT) - *v) * alpha;
    }
    next.lower = lower_body_map(next.height, next.torso_rpy);
    next.time = state.time + dt;
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn action_with(f: impl FnOnce(&mut [f64; 36])) -> JointAction {
        let mut a = JointAction::neutral(DEFAULT_STANDING_HEIGHT);
        f(&mut a.0);
        a
    }

    #[test]
    fn neutral_action_is_fixed_point() {
        let s = PlantState::neutral();
        let n = step_plant(&s, &JointAction::neutral(DEFAULT_STANDING_HEIGHT), 1.0 / 30.0).unwrap();
        assert_eq!(PlantState { time: s.time, ..n }, s);
        assert_eq!(n.time, 1.0 / 30.0);
    }

    #[test]
    fn straight_line_unicycle() {
        let a = action_with(|v| v[layout::VEL_X] = 0.3);
        let mut s = PlantState::neutral();
        for _ in 0..30 {
            s = step_plant(&s, &a, 1.0 / 30.0).unwrap();
        }
        assert!((s.x - 0.3).abs() < 1e-12);
        assert_eq!(s.y, 0.0);
    }

    #[test]
    fn rate_limit_arithmetic() {
        let a = action_with(|v| v[3] = 1.0);
        let s = step_plant(&PlantState::neutral(), &a, 1.0 / 30.0).unwrap();
        assert!((s.upper[3] - 1.0 / 15.0).abs() < 1e-15);
        assert!(s.upper.iter().enumerate().all(|(i, q)| i == 3 || *q == 0.0));
    }

    #[test]
    fn rotated_unicycle_uses_pre_step_heading() {
        let mut s = PlantState::neutral();
        s.yaw = std::f64::consts::FRAC_PI_2;
        let a = action_with(|v| {
            v[layout::VEL_X] = 1.0;
            v[layout::TARGET_YAW] = std::f64::consts::FRAC_PI_2;
        });
        let n = step_plant(&s, &a, 0.1).unwrap();
        assert!(n.x.abs() < 1e-15 && (n.y - 0.1).abs() < 1e-15);
    }

    #[test]
    fn errors() {
        let s = PlantState::neutral();
        let a = JointAction::neutral(DEFAULT_STANDING_HEIGHT);
        assert!(matches!(step_plant(&s, &a, 0.0), Err(PlantError::BadTimeStep(_))));
        let bad = action_with(|v| v[0] = f64::NAN);
        assert!(matches!(step_plant(&s, &bad, 0.1), Err(PlantError::NonFiniteAction)));
    }

    #[test]
    fn lower_map_neutral_and_squat() {
        let q = lower_body_map(0.8, [0.0; 3]);
        assert!(q.iter().all(|v| v.abs() < 1e-7));
        let q = lower_body_map(0.5, [0.1, 0.2, 0.3]);
        assert_eq!(&q[..3], &[0.3, 0.1, 0.2]);
        let theta: f64 = (0.5f64 / 0.8).acos();
        // two links at +-theta reach the commanded height
        assert!((2.0 * LEG_LINK * q[5].abs().cos() - 0.5).abs() < 1e-12);
        assert!((q[6] - 2.0 * theta).abs() < 1e-12 && q[6] == q[12]);
    }

    proptest! {
        #[test]
        fn halved_steps_agree(
            vx in -0.5f64..0.5, vy in -0.5f64..0.5, h in 0.45f64..0.8, roll in -0.4f64..0.4,
            q in -1.9f64..1.9, q0 in -1.9f64..1.9, dt in 0.001f64..0.1,
        ) {
            let a = action_with(|v| {
                v[layout::VEL_X] = vx;
                v[layout::VEL_Y] = vy;
                v[layout::BASE_HEIGHT] = h;
                v[layout::TORSO_RPY.start] = roll;
                v[5] = q;
            });
            let mut s = PlantState::neutral();
            s.upper[5] = q0;
            let one = step_plant(&s, &a, dt).unwrap();
            let two = step_plant(&step_plant(&s, &a, dt / 2.0).unwrap(), &a, dt / 2.0).unwrap();
            // linear channels (heading stays 0)
            prop_assert!((one.x - two.x).abs() < 1e-9 && (one.y - two.y).abs() < 1e-9);
            prop_assert!((one.height - two.height).abs() < 1e-9);
            prop_assert!((one.torso_rpy[0] - two.torso_rpy[0]).abs() < 1e-9);
            // rate-limited channel: saturation formula q0 + clamp(q - q0, +-r t)
            let expected = q0 + (q - q0).clamp(-UPPER_RATE_LIMIT * dt, UPPER_RATE_LIMIT * dt);
            prop_assert!((one.upper[5] - expected).abs() < 1e-12);
            prop_assert!((two.upper[5] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn wrap_angle_range() {
        for a in [-10.0, -3.2, 0.0, 3.1, 3.2, 7.0] {
            let w = wrap_angle(a);
            assert!(w > -std::f64::consts::PI && w <= std::f64::consts::PI);
            assert!(((a - w) / (2.0 * std::f64::consts::PI)).fract().abs() < 1e-12 || ((a - w) / (2.0 * std::f64::consts::PI)).fract().abs() > 1.0 - 1e-12);
        }
    }
}
