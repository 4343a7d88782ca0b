//! Synthetic tasks: sequential subgoals, per-trial instantiation, progress
//! tracking and the context vector the policy observes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{wrap_angle, PlantError, PlantState, HEIGHT_LIMITS, UPPER_JOINT_LIMIT};
use crate::actions::{layout, DEFAULT_STANDING_HEIGHT};

pub const CONTEXT_DIM: usize = 32;
pub const MAX_SUBGOALS: usize = 5;
const HEIGHT_UNIT: f64 = 0.1;
const ARM_DOF: usize = 14;

/// Subgoal template; targets are jittered per trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SubgoalSpec {
    /// Arm joints to `arm`, every hand joint to `hand`; tolerance is max-abs in radians.
    Reach { arm: [f64; ARM_DOF], hand: f64, jitter: f64, tol: f64 },
    /// World-frame displacement from where the subgoal starts.
    BaseDisplacement { dx: f64, dy: f64, jitter: f64, tol: f64 },
    BaseHeight { height: f64, jitter: f64, tol: f64 },
    Yaw { yaw: f64, jitter: f64, tol: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Subgoal {
    Reach { arm: [f64; ARM_DOF], hand: f64, tol: f64 },
    BaseDisplacement { dx: f64, dy: f64, tol: f64 },
    BaseHeight { height: f64, tol: f64 },
    Yaw { yaw: f64, tol: f64 },
}

impl Subgoal {
    fn kind_index(&self) -> usize {
        match self {
            Subgoal::Reach { .. } => 0,
            Subgoal::BaseDisplacement { .. } => 1,
            Subgoal::BaseHeight { .. } => 2,
            Subgoal::Yaw { .. } => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: u32,
    pub name: String,
    pub subgoals: Vec<SubgoalSpec>,
    /// Control ticks before the rollout is declared failed.
    pub time_limit: usize,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<(), PlantError> {
        let bad = |m: String| Err(PlantError::InvalidTask(m));
        if self.subgoals.is_empty() || self.subgoals.len() > MAX_SUBGOALS {
            return bad(format!("{} subgoals, expected 1..={MAX_SUBGOALS}", self.subgoals.len()));
        }
        if self.time_limit == 0 {
            return bad("time limit must be at least one tick".into());
        }
        for (i, g) in self.subgoals.iter().enumerate() {
            let (tol, jitter) = match g {
                SubgoalSpec::Reach { tol, jitter, .. }
                | SubgoalSpec::BaseDisplacement { tol, jitter, .. }
                | SubgoalSpec::BaseHeight { tol, jitter, .. }
                | SubgoalSpec::Yaw { tol, jitter, .. } => (*tol, *jitter),
            };
            if !(tol > 0.0) {
                return bad(format!("subgoal {i}: tolerance must be positive"));
            }
            if !(jitter >= 0.0) {
                return bad(format!("subgoal {i}: jitter must be non-negative"));
            }
        }
        Ok(())
    }

    /// Draws jittered targets; the jitter is uniform in `[-jitter, jitter]`.
    pub fn instantiate(&self, rng: &mut impl Rng) -> Result<TaskInstance, PlantError> {
        self.validate()?;
        let mut u = |j: f64| if j > 0.0 { rng.random_range(-j..=j) } else { 0.0 };
        let subgoals = self
            .subgoals
            .iter()
            .map(|g| match g {
                SubgoalSpec::Reach { arm, hand, jitter, tol } => {
                    // one shared offset moves the whole arm pose
                    let shift = u(*jitter);
                    Subgoal::Reach { arm: arm.map(|q| q + shift), hand: hand + u(*jitter), tol: *tol }
                }
                SubgoalSpec::BaseDisplacement { dx, dy, jitter, tol } => {
                    Subgoal::BaseDisplacement { dx: dx + u(*jitter), dy: dy + u(*jitter), tol: *tol }
                }
                SubgoalSpec::BaseHeight { height, jitter, tol } => Subgoal::BaseHeight { height: height + u(*jitter), tol: *tol },
                SubgoalSpec::Yaw { yaw, jitter, tol } => Subgoal::Yaw { yaw: yaw + u(*jitter), tol: *tol },
            })
            .collect();
        Ok(TaskInstance { task_id: self.task_id, subgoals, time_limit: self.time_limit })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub task_id: u32,
    pub subgoals: Vec<Subgoal>,
    pub time_limit: usize,
}

impl TaskInstance {
    /// Targets the plant cannot hold.
    pub fn check_reachable(&self) -> Result<(), PlantError> {
        for (i, g) in self.subgoals.iter().enumerate() {
            match g {
                Subgoal::Reach { arm, hand, tol } => {
                    let worst = arm.iter().chain(std::iter::once(hand)).fold(0.0f64, |m, v| m.max(v.abs()));
                    if worst > UPPER_JOINT_LIMIT + tol {
                        return Err(PlantError::InfeasibleTask(format!("subgoal {i}: joint target {worst:.3} beyond limit")));
                    }
                }
                Subgoal::BaseHeight { height, tol } => {
                    if *height < HEIGHT_LIMITS.0 - tol || *height > HEIGHT_LIMITS.1 + tol {
                        return Err(PlantError::InfeasibleTask(format!("subgoal {i}: height {height:.3} outside limits")));
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Sequential subgoal progress.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tracker {
    pub flags: Vec<bool>,
    pub active: usize,
    /// Tick at which the active subgoal started.
    pub phase_start: usize,
    /// Base position when the active subgoal started.
    pub phase_origin: (f64, f64),
}

impl Tracker {
    pub fn new(instance: &TaskInstance, state: &PlantState) -> Self {
        Self { flags: vec![false; instance.subgoals.len()], active: 0, phase_start: 0, phase_origin: (state.x, state.y) }
    }

    pub fn done(&self) -> bool {
        self.active >= self.flags.len()
    }

    /// Flags the active subgoal if `state` satisfies it; at most one subgoal advances per tick.
    pub fn update(&mut self, instance: &TaskInstance, state: &PlantState, tick: usize) -> bool {
        let Some(goal) = instance.subgoals.get(self.active) else { return false };
        if satisfied(goal, state, self.phase_origin) {
            self.flags[self.active] = true;
            self.active += 1;
            self.phase_start = tick;
            self.phase_origin = (state.x, state.y);
            return true;
        }
        false
    }
}

fn hand_error(hand: f64, state: &PlantState) -> f64 {
    state.upper[layout::HAND].iter().fold(0.0f64, |m, q| m.max((hand - q).abs()))
}

fn arm_error(arm: &[f64; ARM_DOF], state: &PlantState) -> f64 {
    state.upper[layout::ARM].iter().zip(arm).fold(0.0f64, |m, (q, t)| m.max((t - q).abs()))
}

/// World-frame displacement still to go.
pub(crate) fn remaining_displacement(dx: f64, dy: f64, state: &PlantState, origin: (f64, f64)) -> (f64, f64) {
    (origin.0 + dx - state.x, origin.1 + dy - state.y)
}

fn satisfied(goal: &Subgoal, state: &PlantState, origin: (f64, f64)) -> bool {
    match goal {
        Subgoal::Reach { arm, hand, tol } => arm_error(arm, state) <= *tol && hand_error(*hand, state) <= *tol,
        Subgoal::BaseDisplacement { dx, dy, tol } => {
            let (rx, ry) = remaining_displacement(*dx, *dy, state, origin);
            rx.hypot(ry) <= *tol
        }
        Subgoal::BaseHeight { height, tol } => (height - state.height).abs() <= *tol,
        Subgoal::Yaw { yaw, tol } => wrap_angle(yaw - state.yaw).abs() <= *tol,
    }
}

/// Height and yaw references in force: the target of the latest started subgoal
/// of that kind, else standing height and zero yaw.
pub(crate) fn references(instance: &TaskInstance, tracker: &Tracker) -> (f64, f64) {
    let mut height = DEFAULT_STANDING_HEIGHT;
    let mut yaw = 0.0;
    let started = (tracker.active + 1).min(instance.subgoals.len());
    for g in &instance.subgoals[..started] {
        match g {
            Subgoal::BaseHeight { height: h, .. } => height = *h,
            Subgoal::Yaw { yaw: y, .. } => yaw = *y,
            _ => {}
        }
    }
    (height, yaw)
}

/// Upper-body reference in force: the target of the latest started reach, if any.
pub(crate) fn upper_reference(instance: &TaskInstance, tracker: &Tracker) -> Option<([f64; ARM_DOF], f64)> {
    let started = (tracker.active + 1).min(instance.subgoals.len());
    instance.subgoals[..started].iter().rev().find_map(|g| match g {
        Subgoal::Reach { arm, hand, .. } => Some((*arm, *hand)),
        _ => None,
    })
}

/// The 32-dim context vector.
///
/// ```text
/// [0..6)   active subgoal one-hot (index 5: all done)
/// [6]      seconds since the active subgoal started (capped at 5)
/// [7..11)  active subgoal kind one-hot: reach, displacement, height, yaw
/// [11..25) arm reference (latest started reach target, else 0)
/// [25]     hand reference
/// [26..28) remaining displacement in the body frame (displacement only)
/// [28]     height reference - standing height, in decimetres
/// [29]     yaw reference
/// [30]     height - standing height, in decimetres
/// [31]     yaw
/// ```
pub fn render_context(instance: &TaskInstance, state: &PlantState, tracker: &Tracker, tick: usize, control_rate: f64) -> Vec<f64> {
    let mut c = vec![0.0; CONTEXT_DIM];
    c[tracker.active.min(MAX_SUBGOALS)] = 1.0;
    c[6] = ((tick.saturating_sub(tracker.phase_start)) as f64 / control_rate).min(5.0);
    if let Some(goal) = instance.subgoals.get(tracker.active) {
        c[7 + goal.kind_index()] = 1.0;
        match goal {
            Subgoal::BaseDisplacement { dx, dy, .. } => {
                let (rx, ry) = remaining_displacement(*dx, *dy, state, tracker.phase_origin);
                let (s, co) = state.yaw.sin_cos();
                c[26] = co * rx + s * ry;
                c[27] = -s * rx + co * ry;
            }
            _ => {}
        }
    }
    if let Some((arm, hand)) = upper_reference(instance, tracker) {
        c[11..25].copy_from_slice(&arm);
        c[25] = hand;
    }
    let (h_ref, yaw_ref) = references(instance, tracker);
    c[28] = (h_ref - DEFAULT_STANDING_HEIGHT) / HEIGHT_UNIT;
    c[29] = yaw_ref;
    c[30] = (state.height - DEFAULT_STANDING_HEIGHT) / HEIGHT_UNIT;
    c[31] = state.yaw;
    c
}

fn arm_pose(values: [f64; 7]) -> [f64; ARM_DOF] {
    // mirrored left/right arms
    std::array::from_fn(|i| if i < 7 { values[i] } else { -values[i - 7] })
}

/// The committed task suite. Task 0 is the reach task used for acceptance.
pub fn builtin_tasks() -> Vec<TaskSpec> {
    let reach_a = arm_pose([0.6, 0.3, -0.2, 0.8, 0.1, 0.0, 0.2]);
    let reach_b = arm_pose([-0.3, 0.5, 0.3, 0.4, -0.2, 0.3, 0.0]);
    let reach_c = arm_pose([0.2, -0.4, 0.5, 1.0, 0.0, -0.3, 0.1]);
    vec![
        TaskSpec {
            task_id: 0,
            name: "reach_squat_reach".into(),
            subgoals: vec![
                SubgoalSpec::Reach { arm: reach_a, hand: 0.5, jitter: 0.2, tol: 0.1 },
                SubgoalSpec::BaseHeight { height: 0.62, jitter: 0.04, tol: 0.02 },
                SubgoalSpec::Reach { arm: reach_b, hand: 0.1, jitter: 0.2, tol: 0.1 },
            ],
            time_limit: 300,
        },
        TaskSpec {
            task_id: 1,
            name: "walk_turn_reach".into(),
            subgoals: vec![
                SubgoalSpec::BaseDisplacement { dx: 0.6, dy: 0.0, jitter: 0.15, tol: 0.05 },
                SubgoalSpec::Yaw { yaw: 0.8, jitter: 0.2, tol: 0.05 },
                SubgoalSpec::Reach { arm: reach_c, hand: 0.7, jitter: 0.2, tol: 0.1 },
                SubgoalSpec::BaseHeight { height: 0.68, jitter: 0.03, tol: 0.02 },
            ],
            time_limit: 450,
        },
        TaskSpec {
            task_id: 2,
            name: "fetch_and_place".into(),
            subgoals: vec![
                SubgoalSpec::Reach { arm: reach_a, hand: 0.0, jitter: 0.15, tol: 0.1 },
                SubgoalSpec::BaseDisplacement { dx: 0.3, dy: 0.3, jitter: 0.1, tol: 0.05 },
                SubgoalSpec::Reach { arm: reach_a, hand: 0.9, jitter: 0.1, tol: 0.1 },
                SubgoalSpec::Yaw { yaw: -0.6, jitter: 0.2, tol: 0.05 },
                SubgoalSpec::Reach { arm: reach_b, hand: 0.0, jitter: 0.15, tol: 0.1 },
            ],
            time_limit: 600,
        },
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn builtin_tasks_validate_with_three_to_five_subgoals() {
        for t in builtin_tasks() {
            t.validate().unwrap();
            assert!((3..=5).contains(&t.subgoals.len()));
        }
    }

    #[test]
    fn validation_errors() {
        let mut t = builtin_tasks().remove(0);
        t.time_limit = 0;
        assert!(t.validate().is_err());
        let mut t = builtin_tasks().remove(0);
        t.subgoals[1] = SubgoalSpec::BaseHeight { height: 0.6, jitter: 0.0, tol: 0.0 };
        assert!(t.validate().is_err());
        let mut t = builtin_tasks().remove(0);
        t.subgoals.clear();
        assert!(t.validate().is_err());
    }

    #[test]
    fn instantiation_is_seeded_and_bounded() {
        let spec = builtin_tasks().remove(0);
        let a = spec.instantiate(&mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = spec.instantiate(&mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
        let (Subgoal::Reach { arm, .. }, SubgoalSpec::Reach { arm: nominal, jitter, .. }) = (&a.subgoals[0], &spec.subgoals[0]) else {
            panic!("reach expected")
        };
        assert!(arm.iter().zip(nominal).all(|(x, n)| (x - n).abs() <= *jitter));
        assert_ne!(arm, nominal);
    }

    #[test]
    fn tracker_is_sequential() {
        let instance = TaskInstance {
            task_id: 0,
            subgoals: vec![Subgoal::BaseHeight { height: 0.75, tol: 0.01 }, Subgoal::Yaw { yaw: 0.0, tol: 0.01 }],
            time_limit: 10,
        };
        let s = PlantState::neutral();
        let mut t = Tracker::new(&instance, &s);
        // both hold at the neutral state, but only one advances per tick
        assert!(t.update(&instance, &s, 1));
        assert_eq!(t.flags, vec![true, false]);
        assert!(t.update(&instance, &s, 2));
        assert!(t.done());
        assert!(!t.update(&instance, &s, 3));
    }

    #[test]
    fn context_layout() {
        let instance = builtin_tasks()[1].instantiate(&mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut s = PlantState::neutral();
        s.yaw = std::f64::consts::FRAC_PI_2;
        let t = Tracker::new(&instance, &s);
        let c = render_context(&instance, &s, &t, 15, 30.0);
        assert_eq!(c.len(), CONTEXT_DIM);
        assert_eq!(c[0], 1.0);
        assert_eq!(c[6], 0.5);
        assert_eq!(c[8], 1.0);
        let Subgoal::BaseDisplacement { dx, dy, .. } = instance.subgoals[0] else { panic!() };
        // facing +y: world +x is body -y
        assert!((c[26] - dy).abs() < 1e-12 && (c[27] + dx).abs() < 1e-12);
        assert!((c[31] - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        // neutral posture stands at the default height; no height goal started yet
        assert_eq!((c[28], c[30]), (0.0, 0.0));
        let Subgoal::Yaw { yaw, .. } = instance.subgoals[1] else { panic!() };
        let mut t = t;
        t.active = 1;
        assert_eq!(render_context(&instance, &s, &t, 15, 30.0)[29], yaw);
    }

    #[test]
    fn unreachable_targets_are_infeasible() {
        let instance = TaskInstance {
            task_id: 0,
            subgoals: vec![Subgoal::Reach { arm: [3.0; ARM_DOF], hand: 0.0, tol: 0.1 }],
            time_limit: 10,
        };
        assert!(matches!(instance.check_reachable(), Err(PlantError::InfeasibleTask(_))));
    }
}
