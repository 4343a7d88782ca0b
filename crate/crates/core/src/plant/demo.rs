//! Scripted demonstrations: minimum-jerk joint segments, step commands for
//! height and yaw, and constant-speed base motion, executed closed-loop
//! against the plant and verified by open-loop replay.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::env::SimEnv;
use super::task::{references, remaining_displacement, Subgoal, TaskInstance, TaskSpec};
use super::{PlantError, UPPER_RATE_LIMIT};
use crate::actions::{layout, ActionSeq, Episode, JointAction, ProprioState, DEFAULT_STANDING_HEIGHT};

pub const DEFAULT_CONTROL_RATE: f64 = 30.0;
pub const DEFAULT_LOWLEVEL_RATE: f64 = 60.0;
/// Base cruise speed, m/s.
pub const CRUISE_SPEED: f64 = 0.25;
/// Frames recorded after the last subgoal completes.
pub const HOLD_FRAMES: usize = 8;
/// Fraction of the joint rate limit a minimum-jerk segment may use at its peak.
const RATE_MARGIN: f64 = 0.8;
const MIN_SEGMENT_SECONDS: f64 = 0.6;

/// RNG for trial `k` of a run seeded with `seed`; demo `k` and evaluation trial `k`
/// share it, so they see the same task instance.
pub fn trial_rng(seed: u64, k: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k as u64);
    rng
}

fn min_jerk(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * u * (10.0 - 15.0 * u + 6.0 * u * u)
}

fn round_f32(a: &mut JointAction) {
    for v in a.0.iter_mut() {
        *v = *v as f32 as f64;
    }
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    start_tick: usize,
    start: [f64; layout::UPPER_DIM],
    target: [f64; layout::UPPER_DIM],
    ticks: usize,
}

/// Closed-loop scripted controller that produces demonstration actions. Each
/// reach starts a minimum-jerk segment from the current joints that runs to its
/// end even after the tracker has moved on; height and yaw are commanded at the
/// references in force; displacement phases drive the base at cruise speed.
#[derive(Debug, Clone, Default)]
pub struct ScriptedController {
    phase: Option<usize>,
    reach: Option<Segment>,
}

/// Ticks a minimum-jerk move of `delta` radians takes at the control rate.
pub fn segment_ticks(delta: f64, control_rate: f64) -> usize {
    let seconds = (1.875 * delta / (RATE_MARGIN * UPPER_RATE_LIMIT)).max(MIN_SEGMENT_SECONDS);
    (seconds * control_rate).ceil() as usize
}

impl ScriptedController {
    pub fn act(&mut self, env: &SimEnv) -> JointAction {
        let rate = env.control_rate();
        let tracker = &env.tracker;
        let state = &env.state;
        let active = env.instance.subgoals.get(tracker.active);
        if self.phase != Some(tracker.active) {
            self.phase = Some(tracker.active);
            if let Some(Subgoal::Reach { arm, hand, .. }) = active {
                let mut target = [*hand; layout::UPPER_DIM];
                target[layout::ARM].copy_from_slice(arm);
                let dmax = target.iter().zip(&state.upper).fold(0.0f64, |m, (t, s)| m.max((t - s).abs()));
                self.reach = Some(Segment { start_tick: env.tick, start: state.upper, target, ticks: segment_ticks(dmax, rate) });
            }
        }
        let mut cmd = JointAction::neutral(DEFAULT_STANDING_HEIGHT);
        if let Some(seg) = &self.reach {
            let s = min_jerk((env.tick - seg.start_tick + 1) as f64 / seg.ticks as f64);
            for i in 0..layout::UPPER_DIM {
                cmd.0[i] = seg.start[i] + (seg.target[i] - seg.start[i]) * s;
            }
        }
        let (height, yaw) = references(&env.instance, tracker);
        cmd.0[layout::BASE_HEIGHT] = height;
        cmd.0[layout::TARGET_YAW] = yaw;
        if let Some(Subgoal::BaseDisplacement { dx, dy, .. }) = active {
            let (rx, ry) = remaining_displacement(*dx, *dy, state, tracker.phase_origin);
            let dist = rx.hypot(ry);
            if dist > 0.0 {
                let speed = CRUISE_SPEED.min(dist * rate);
                let (s, c) = state.yaw.sin_cos();
                cmd.0[layout::VEL_X] = (c * rx + s * ry) / dist * speed;
                cmd.0[layout::VEL_Y] = (-s * rx + c * ry) / dist * speed;
            }
        }
        round_f32(&mut cmd);
        cmd
    }
}

fn record_episode(instance: &TaskInstance) -> Result<Episode, PlantError> {
    instance.check_reachable()?;
    let mut env = SimEnv::new(instance.clone(), DEFAULT_CONTROL_RATE, DEFAULT_LOWLEVEL_RATE)?;
    let mut ctrl = ScriptedController::default();
    let mut actions = Vec::new();
    let mut states = Vec::new();
    let mut contexts = Vec::new();
    let mut hold = 0;
    while hold < HOLD_FRAMES {
        if env.success() {
            hold += 1;
        } else if env.tick >= instance.time_limit {
            return Err(PlantError::InfeasibleTask(format!(
                "subgoal {} not reached within {} ticks",
                env.tracker.active, instance.time_limit
            )));
        }
        let f32_vec = |v: &[f64]| v.iter().map(|x| *x as f32 as f64).collect::<Vec<f64>>();
        states.push(ProprioState::from_upper(&f32_vec(&env.state.upper)).expect("finite joints"));
        contexts.push(f32_vec(&env.context()));
        let action = ctrl.act(&env);
        env.apply(&action)?;
        actions.push(action);
    }
    verify_replay(instance, &actions)?;
    Ok(Episode {
        task_id: instance.task_id,
        frame_rate: DEFAULT_CONTROL_RATE,
        actions: ActionSeq::Joint(actions),
        states,
        contexts,
    })
}

/// Replays `actions` open-loop and checks the task succeeds.
pub fn verify_replay(instance: &TaskInstance, actions: &[JointAction]) -> Result<(), PlantError> {
    let mut env = SimEnv::new(instance.clone(), DEFAULT_CONTROL_RATE, DEFAULT_LOWLEVEL_RATE)?;
    for a in actions {
        env.apply(a)?;
    }
    if env.success() {
        Ok(())
    } else {
        Err(PlantError::Rollout(format!("replay failed at subgoal {}", env.tracker.active)))
    }
}

/// `n` demonstrations of `task`; episode `k` uses the instance drawn from `trial_rng(seed, k)`.
pub fn generate_demos(task: &TaskSpec, n: usize, seed: u64) -> Result<Vec<Episode>, PlantError> {
    task.validate()?;
    (0..n)
        .map(|k| {
            let instance = task.instantiate(&mut trial_rng(seed, k))?;
            record_episode(&instance)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actions::encode_dataset;
    use crate::plant::task::{builtin_tasks, SubgoalSpec};

    #[test]
    fn zero_demos_is_empty() {
        assert!(generate_demos(&builtin_tasks()[0], 0, 1).unwrap().is_empty());
    }

    #[test]
    fn every_builtin_demo_replays_to_success() {
        for task in builtin_tasks() {
            let demos = generate_demos(&task, 4, 7).unwrap();
            for (k, ep) in demos.iter().enumerate() {
                ep.validate().unwrap();
                let ActionSeq::Joint(actions) = &ep.actions else { panic!() };
                let instance = task.instantiate(&mut trial_rng(7, k)).unwrap();
                verify_replay(&instance, actions).unwrap();
                assert!(ep.len() < task.time_limit + HOLD_FRAMES, "{} {}", task.name, ep.len());
            }
        }
    }

    #[test]
    fn demos_are_deterministic_and_f32_exact() {
        let task = &builtin_tasks()[1];
        let a = generate_demos(task, 2, 3).unwrap();
        let b = generate_demos(task, 2, 3).unwrap();
        assert_eq!(encode_dataset(&a).unwrap(), encode_dataset(&b).unwrap());
        for ep in &a {
            for row in ep.actions.rows() {
                assert!(row.iter().all(|v| (*v as f32 as f64) == *v));
            }
        }
    }

    #[test]
    fn min_jerk_respects_rate_limit() {
        for delta in [0.1, 0.5, 1.0, 2.0, 3.5] {
            let ticks = segment_ticks(delta, 30.0);
            let max_step = (0..ticks).map(|i| delta * (min_jerk((i + 1) as f64 / ticks as f64) - min_jerk(i as f64 / ticks as f64))).fold(0.0, f64::max);
            assert!(max_step <= UPPER_RATE_LIMIT / 30.0, "{delta}: {max_step}");
        }
    }

    #[test]
    fn impossible_time_limit_is_infeasible() {
        let mut task = builtin_tasks().remove(1);
        task.time_limit = 20;
        let err = generate_demos(&task, 1, 0).unwrap_err();
        assert!(matches!(err, PlantError::InfeasibleTask(_)), "{err}");
        assert!(err.to_string().contains("infeasible task"));
    }

    #[test]
    fn unreachable_target_is_infeasible() {
        let mut task = builtin_tasks().remove(0);
        task.subgoals[1] = SubgoalSpec::BaseHeight { height: 0.2, jitter: 0.0, tol: 0.02 };
        assert!(matches!(generate_demos(&task, 1, 0), Err(PlantError::InfeasibleTask(_))));
    }
}
