//! Toy arm kinematics mapping the upper-body joints to the 48-dim task space
//! (per side: wrist position, wrist 6D rotation, five fingertip positions), all
//! in the torso frame. Used to give demonstrations a task-space view.

use nalgebra::{Matrix3, Rotation3, Vector3};

use crate::actions::rot6d_from_matrix;
use crate::actions::{layout, ActionSeq, Episode, TaskAction};

pub const UPPER_ARM: f64 = 0.28;
pub const FOREARM: f64 = 0.25;
const SHOULDER_Y: f64 = 0.18;
const SHOULDER_Z: f64 = 0.35;
const PALM: f64 = 0.08;
const FINGER: f64 = 0.05;
const FINGER_SPACING: f64 = 0.02;

fn rzyx(a: f64, b: f64, c: f64) -> Matrix3<f64> {
    (Rotation3::from_axis_angle(&Vector3::z_axis(), a)
        * Rotation3::from_axis_angle(&Vector3::y_axis(), b)
        * Rotation3::from_axis_angle(&Vector3::x_axis(), c))
    .into_inner()
}

fn ry(a: f64) -> Matrix3<f64> {
    Rotation3::from_axis_angle(&Vector3::y_axis(), a).into_inner()
}

/// One side: shoulder yaw/pitch/roll, elbow pitch, wrist yaw/pitch/roll; the
/// first five hand joints curl the fingers.
fn side(arm: &[f64], hand: &[f64], sign: f64) -> [f64; layout::TASK_SIDE] {
    let shoulder = Vector3::new(0.0, sign * SHOULDER_Y, SHOULDER_Z);
    let r_shoulder = rzyx(arm[0], arm[1], arm[2]);
    let down = Vector3::new(0.0, 0.0, -1.0);
    let elbow = shoulder + r_shoulder * down * UPPER_ARM;
    let r_elbow = r_shoulder * ry(arm[3]);
    let wrist = elbow + r_elbow * down * FOREARM;
    let r_wrist = r_elbow * rzyx(arm[4], arm[5], arm[6]);
    let mut out = [0.0; layout::TASK_SIDE];
    out[layout::WRIST_POS].copy_from_slice(wrist.as_slice());
    out[layout::WRIST_ROT6D].copy_from_slice(&rot6d_from_matrix(&r_wrist).expect("rotation matrices are orthonormal"));
    for f in 0..5 {
        let base = Vector3::new(FINGER_SPACING * (f as f64 - 2.0), 0.0, -PALM);
        let tip = wrist + r_wrist * (base + ry(hand[f]) * down * FINGER);
        let o = layout::FINGERTIPS.start + 3 * f;
        out[o..o + 3].copy_from_slice(tip.as_slice());
    }
    out
}

/// Task-space pose of the upper-body configuration `upper` (28 joints).
pub fn task_space(upper: &[f64]) -> TaskAction {
    assert_eq!(upper.len(), layout::UPPER_DIM);
    let (hand, arm) = (&upper[layout::HAND], &upper[layout::ARM]);
    let mut v = [0.0; layout::TASK_DIM];
    v[..layout::TASK_SIDE].copy_from_slice(&side(&arm[..7], &hand[..7], 1.0));
    v[layout::TASK_SIDE..].copy_from_slice(&side(&arm[7..], &hand[7..], -1.0));
    TaskAction::from_slice(&v).expect("valid task action")
}

/// The same episode with each commanded upper-body pose mapped to task space.
/// Task-space episodes carry the same states and contexts.
pub fn task_space_episode(ep: &Episode) -> Episode {
    let actions = match &ep.actions {
        ActionSeq::Joint(a) => ActionSeq::Task(a.iter().map(|a| task_space(a.upper())).collect()),
        ActionSeq::Task(a) => ActionSeq::Task(a.clone()),
    };
    Episode { actions, ..ep.clone() }
}
