//! Action, state and observation representations.
//!
//! Two action spaces are supported:
//!
//! ```text
//! joint space (36):  hand[0..14] arm[14..28] torso_rpy[28..31] h_b[31]
//!                    v_x[32] v_y[33] v_yaw[34] p_yaw[35]
//! task space (48):   left[0..24] right[24..48], each side =
//!                    wrist pos (3) | wrist rot6d (6) | thumb index middle ring pinky (5 x 3)
//! ```
//!
//! Proprioceptive state is 28 upper-body joint positions followed by 4 pad slots.

mod dataset;
mod norm;
mod resample;
mod rotation;

pub use dataset::{
    decode_dataset, encode_dataset, read_dataset, read_headers, write_dataset, ActionKind, DatasetError, EpisodeHeader,
    DATASET_MAGIC, DATASET_VERSION,
};
pub use norm::{fit_quantile_stats, quantile_linear, NormError, NormStats};
pub use resample::{resample_episode, ResampleError};
pub use rotation::{matrix_from_rot6d, rot6d_from_matrix, RotationError};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Index map of the 36-dim joint-space action.
pub mod layout {
    use std::ops::Range;

    pub const HAND: Range<usize> = 0..14;
    pub const ARM: Range<usize> = 14..28;
    pub const UPPER: Range<usize> = 0..28;
    pub const TORSO_RPY: Range<usize> = 28..31;
    pub const BASE_HEIGHT: usize = 31;
    pub const VEL_X: usize = 32;
    pub const VEL_Y: usize = 33;
    pub const VEL_YAW: usize = 34;
    pub const TARGET_YAW: usize = 35;
    pub const LOWER_COMMAND: Range<usize> = 28..36;

    pub const JOINT_DIM: usize = 36;
    pub const TASK_DIM: usize = 48;
    pub const UPPER_DIM: usize = 28;
    pub const STATE_DIM: usize = 32;

    /// Per-hand block of the task-space action.
    pub const TASK_SIDE: usize = 24;
    pub const WRIST_POS: Range<usize> = 0..3;
    pub const WRIST_ROT6D: Range<usize> = 3..9;
    pub const FINGERTIPS: Range<usize> = 9..24;
}

/// Default standing height used for the neutral lower-body command.
pub const DEFAULT_STANDING_HEIGHT: f64 = 0.75;

#[derive(Debug, Error, PartialEq)]
pub enum ActionError {
    #[error("expected {expected} values, got {got}")]
    WrongLength { expected: usize, got: usize },
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("degenerate 6D rotation block on side {0}")]
    DegenerateRotation(usize),
    #[error("context has {got} features, encoder expects {expected}")]
    ContextWidth { expected: usize, got: usize },
}

fn check_finite(values: &[f64]) -> Result<(), ActionError> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(ActionError::NonFinite(i)),
        None => Ok(()),
    }
}

fn to_array<const N: usize>(values: &[f64]) -> Result<[f64; N], ActionError> {
    let arr: [f64; N] = values
        .try_into()
        .map_err(|_| ActionError::WrongLength { expected: N, got: values.len() })?;
    check_finite(&arr)?;
    Ok(arr)
}

/// Whole-body joint-space action.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct JointAction(pub [f64; layout::JOINT_DIM]);

impl JointAction {
    pub fn from_slice(values: &[f64]) -> Result<Self, ActionError> {
        to_array(values).map(Self)
    }

    /// Zero upper body, standing still at `standing_height`.
    pub fn neutral(standing_height: f64) -> Self {
        let mut a = [0.0; layout::JOINT_DIM];
        a[layout::BASE_HEIGHT] = standing_height;
        Self(a)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn q_hand(&self) -> &[f64] {
        &self.0[layout::HAND]
    }

    pub fn q_arm(&self) -> &[f64] {
        &self.0[layout::ARM]
    }

    pub fn upper(&self) -> &[f64] {
        &self.0[layout::UPPER]
    }

    pub fn torso_rpy(&self) -> [f64; 3] {
        [self.0[28], self.0[29], self.0[30]]
    }

    pub fn base_height(&self) -> f64 {
        self.0[layout::BASE_HEIGHT]
    }

    pub fn v_x(&self) -> f64 {
        self.0[layout::VEL_X]
    }

    pub fn v_y(&self) -> f64 {
        self.0[layout::VEL_Y]
    }

    pub fn v_yaw(&self) -> f64 {
        self.0[layout::VEL_YAW]
    }

    pub fn p_yaw(&self) -> f64 {
        self.0[layout::TARGET_YAW]
    }
}

impl TryFrom<Vec<f64>> for JointAction {
    type Error = ActionError;
    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        Self::from_slice(&v)
    }
}

impl From<JointAction> for Vec<f64> {
    fn from(a: JointAction) -> Self {
        a.0.to_vec()
    }
}

/// Bimanual task-space action: wrist pose and fingertips per hand, head-camera frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskAction(pub [f64; layout::TASK_DIM]);

impl TaskAction {
    pub fn from_slice(values: &[f64]) -> Result<Self, ActionError> {
        let arr: [f64; layout::TASK_DIM] = to_array(values)?;
        for side in 0..2 {
            let rot = &arr[side * layout::TASK_SIDE..][layout::WRIST_ROT6D];
            let (a1, a2) = rot.split_at(3);
            let zero = |v: &[f64]| v.iter().all(|x| *x == 0.0);
            if zero(a1) && zero(a2) {
                return Err(ActionError::DegenerateRotation(side));
            }
        }
        Ok(Self(arr))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// The 24 values of one hand; `0` is left, `1` is right.
    pub fn side(&self, side: usize) -> &[f64] {
        &self.0[side * layout::TASK_SIDE..(side + 1) * layout::TASK_SIDE]
    }

    /// Wrist pose of one hand: 3 position values then the 6D rotation.
    pub fn wrist_pose(&self, side: usize) -> &[f64] {
        &self.side(side)[0..9]
    }

    /// Fingertip position `finger` (0 = thumb .. 4 = pinky) of one hand.
    pub fn fingertip(&self, side: usize, finger: usize) -> [f64; 3] {
        let start = layout::FINGERTIPS.start + 3 * finger;
        let s = self.side(side);
        [s[start], s[start + 1], s[start + 2]]
    }
}

/// Proprioceptive state: 28 upper-body joint positions plus 4 pad slots.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProprioState(pub [f64; layout::STATE_DIM]);

impl ProprioState {
    pub fn from_slice(values: &[f64]) -> Result<Self, ActionError> {
        to_array(values).map(Self)
    }

    pub fn from_upper(upper: &[f64]) -> Result<Self, ActionError> {
        if upper.len() != layout::UPPER_DIM {
            return Err(ActionError::WrongLength { expected: layout::UPPER_DIM, got: upper.len() });
        }
        let mut s = [0.0; layout::STATE_DIM];
        s[..layout::UPPER_DIM].copy_from_slice(upper);
        check_finite(&s)?;
        Ok(Self(s))
    }

    pub fn joints(&self) -> &[f64] {
        &self.0[..layout::UPPER_DIM]
    }

    pub fn pad(&self) -> &[f64] {
        &self.0[layout::UPPER_DIM..]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl Default for ProprioState {
    fn default() -> Self {
        Self([0.0; layout::STATE_DIM])
    }
}

/// Policy input at one control tick. `context` stands in for the head-camera image.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub proprio: ProprioState,
    pub context: Vec<f64>,
    pub task_id: u32,
}

impl Observation {
    pub fn validate(&self, context_dim: usize) -> Result<(), ActionError> {
        if self.context.len() != context_dim {
            return Err(ActionError::ContextWidth { expected: context_dim, got: self.context.len() });
        }
        check_finite(&self.context)
    }
}

/// Copies a 28-dim upper-body action into a joint-space action with a neutral lower body.
pub fn pad_to_joint36(upper: &[f64], standing_height: f64) -> Result<JointAction, ActionError> {
    if upper.len() != layout::UPPER_DIM {
        return Err(ActionError::WrongLength { expected: layout::UPPER_DIM, got: upper.len() });
    }
    let mut a = JointAction::neutral(standing_height);
    a.0[layout::UPPER].copy_from_slice(upper);
    check_finite(&a.0)?;
    Ok(a)
}

pub fn strip_to_upper(action: &JointAction) -> [f64; layout::UPPER_DIM] {
    let mut out = [0.0; layout::UPPER_DIM];
    out.copy_from_slice(action.upper());
    out
}

/// Action channel of an episode.
#[derive(Debug, Clone, PartialEq)]
pub enum ActionSeq {
    Joint(Vec<JointAction>),
    Task(Vec<TaskAction>),
}

impl ActionSeq {
    pub fn len(&self) -> usize {
        match self {
            ActionSeq::Joint(v) => v.len(),
            ActionSeq::Task(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        match self {
            ActionSeq::Joint(_) => layout::JOINT_DIM,
            ActionSeq::Task(_) => layout::TASK_DIM,
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        match self {
            ActionSeq::Joint(v) => v[i].as_slice(),
            ActionSeq::Task(v) => v[i].as_slice(),
        }
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        (0..self.len()).map(move |i| self.row(i))
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum EpisodeError {
    #[error("episode sequences disagree in length (actions {actions}, states {states}, contexts {contexts})")]
    LengthMismatch { actions: usize, states: usize, contexts: usize },
    #[error("episode has no frames")]
    Empty,
    #[error("frame rate must be positive, got {0}")]
    FrameRate(f64),
    #[error("context rows have inconsistent widths")]
    ContextWidth,
    #[error("non-finite value in frame {0}")]
    NonFinite(usize),
}

/// One demonstration: synchronized actions, states and context features.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub task_id: u32,
    pub frame_rate: f64,
    pub actions: ActionSeq,
    pub states: Vec<ProprioState>,
    pub contexts: Vec<Vec<f64>>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn context_dim(&self) -> usize {
        self.contexts.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<(), EpisodeError> {
        let (a, s, c) = (self.actions.len(), self.states.len(), self.contexts.len());
        if a != s || a != c {
            return Err(EpisodeError::LengthMismatch { actions: a, states: s, contexts: c });
        }
        if a == 0 {
            return Err(EpisodeError::Empty);
        }
        if !(self.frame_rate > 0.0 && self.frame_rate.is_finite()) {
            return Err(EpisodeError::FrameRate(self.frame_rate));
        }
        let width = self.context_dim();
        if self.contexts.iter().any(|c| c.len() != width) {
            return Err(EpisodeError::ContextWidth);
        }
        for i in 0..a {
            let finite = self.actions.row(i).iter().all(|v| v.is_finite())
                && self.states[i].0.iter().all(|v| v.is_finite())
                && self.contexts[i].iter().all(|v| v.is_finite());
            if !finite {
                return Err(EpisodeError::NonFinite(i));
            }
        }
        Ok(())
    }

    pub fn observation(&self, frame: usize) -> Observation {
        Observation {
            proprio: self.states[frame],
            context: self.contexts[frame].clone(),
            task_id: self.task_id,
        }
    }
}
