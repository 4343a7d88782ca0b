use std::sync::mpsc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::buffer::chunk_buffer;
use super::trace::{RtcTrace, SwitchRecord, TickRecord};
use super::RtcError;
use crate::actions::{JointAction, Observation};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LatencyModel {
    Fixed { ms: f64 },
    /// Uniform on `[min_ms, max_ms]`, drawn from the scheduler seed.
    Uniform { min_ms: f64, max_ms: f64 },
}

impl LatencyModel {
    pub fn sample_ms(&self, rng: &mut impl Rng) -> f64 {
        match *self {
            LatencyModel::Fixed { ms } => ms,
            LatencyModel::Uniform { min_ms, max_ms } if max_ms > min_ms => rng.random_range(min_ms..=max_ms),
            LatencyModel::Uniform { min_ms, .. } => min_ms,
        }
    }

    pub fn max_ms(&self) -> f64 {
        match *self {
            LatencyModel::Fixed { ms } => ms,
            LatencyModel::Uniform { max_ms, .. } => max_ms,
        }
    }

    fn validate(&self) -> Result<(), RtcError> {
        let ok = match *self {
            LatencyModel::Fixed { ms } => ms >= 0.0 && ms.is_finite(),
            LatencyModel::Uniform { min_ms, max_ms } => min_ms >= 0.0 && max_ms >= min_ms && max_ms.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(RtcError::Config(format!("bad latency model {self:?}")))
        }
    }
}

/// Control ticks an inference of `ms` milliseconds spans: the switch happens at the
/// first tick boundary at or after completion.
pub fn latency_ticks(ms: f64, control_rate: f64) -> usize {
    (ms * control_rate / 1000.0 - 1e-9).ceil().max(0.0) as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockMode {
    Virtual,
    Realtime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Trigger at `s_min` and keep executing while inference runs.
    Async,
    /// Run each chunk to its end, then block on inference.
    Sync,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SchedulerConfig {
    pub control_rate: f64,
    pub lowlevel_rate: f64,
    pub horizon: usize,
    pub s_min: usize,
    pub latency: LatencyModel,
    pub mode: ClockMode,
    pub strategy: Strategy,
    /// Pass the actions executed during inference to the policy as a fixed prefix.
    pub inpaint: bool,
    pub seed: u64,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            control_rate: 30.0,
            lowlevel_rate: 60.0,
            horizon: 16,
            s_min: 8,
            latency: LatencyModel::Fixed { ms: 160.0 },
            mode: ClockMode::Virtual,
            strategy: Strategy::Async,
            inpaint: true,
            seed: 0,
        }
    }
}

impl SchedulerConfig {
    pub fn validate(&self) -> Result<(), RtcError> {
        if !(self.control_rate > 0.0 && self.control_rate.is_finite()) {
            return Err(RtcError::Config(format!("control_rate {}", self.control_rate)));
        }
        if self.lowlevel_rate < self.control_rate {
            return Err(RtcError::Config(format!("lowlevel_rate {} below control_rate {}", self.lowlevel_rate, self.control_rate)));
        }
        if !(0 < self.s_min && self.s_min < self.horizon) {
            return Err(RtcError::Config(format!("need 0 < s_min < H, got s_min {} H {}", self.s_min, self.horizon)));
        }
        self.latency.validate()
    }

    /// Latency bound in ticks above which the old chunk runs out before the new one arrives.
    pub fn overrun_threshold(&self) -> usize {
        self.horizon - self.s_min
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionChunk {
    pub id: usize,
    pub actions: Vec<JointAction>,
    /// Tick at which index 0 executes (or would have).
    pub origin_tick: usize,
    /// Leading rows fixed to the previous chunk's executed actions.
    pub committed_len: usize,
    pub trigger_tick: usize,
    pub ready_tick: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyRequest {
    /// Tick the request is made at.
    pub tick: usize,
    /// Tick at which row 0 of the returned chunk executes.
    pub origin_tick: usize,
    pub observation: Observation,
    /// Actions that will have executed by the time the chunk is deployed; the
    /// returned chunk starts with them.
    pub prefix: Vec<JointAction>,
    pub horizon: usize,
}

pub trait Policy {
    fn chunk(&mut self, request: &PolicyRequest) -> Result<Vec<JointAction>, RtcError>;

    /// Called before each evaluation episode.
    fn reset(&mut self, _episode: usize) {}
}

impl<P: Policy + ?Sized> Policy for &mut P {
    fn chunk(&mut self, request: &PolicyRequest) -> Result<Vec<JointAction>, RtcError> {
        (**self).chunk(request)
    }

    fn reset(&mut self, episode: usize) {
        (**self).reset(episode)
    }
}

impl<P: Policy + ?Sized> Policy for Box<P> {
    fn chunk(&mut self, request: &PolicyRequest) -> Result<Vec<JointAction>, RtcError> {
        (**self).chunk(request)
    }

    fn reset(&mut self, episode: usize) {
        (**self).reset(episode)
    }
}

/// The plant side of the control loop.
pub trait PlantHook {
    fn observe(&mut self, tick: usize) -> Observation;
    /// Executes `action`; returning `false` ends the run after this tick.
    fn execute(&mut self, tick: usize, action: &JointAction) -> Result<bool, RtcError>;
}

/// Plant that ignores actions and always reports the same observation.
#[derive(Debug, Clone)]
pub struct OpenLoopPlant {
    pub observation: Observation,
}

impl PlantHook for OpenLoopPlant {
    fn observe(&mut self, _tick: usize) -> Observation {
        self.observation.clone()
    }

    fn execute(&mut self, _tick: usize, _action: &JointAction) -> Result<bool, RtcError> {
        Ok(true)
    }
}

/// Emits the same chunk every time, ignoring the prefix.
#[derive(Debug, Clone)]
pub struct ConstantPolicy(pub JointAction);

impl Policy for ConstantPolicy {
    fn chunk(&mut self, request: &PolicyRequest) -> Result<Vec<JointAction>, RtcError> {
        Ok(vec![self.0; request.horizon])
    }
}

/// Bounded random walk per dimension. Without a prefix each chunk starts from a
/// fresh random point; with one it continues from the prefix's last row.
#[derive(Debug, Clone)]
pub struct RandomWalkPolicy {
    rng: ChaCha8Rng,
    pub step: f64,
    pub spread: f64,
}

impl RandomWalkPolicy {
    pub fn new(seed: u64, step: f64, spread: f64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed), step, spread }
    }
}

impl Policy for RandomWalkPolicy {
    fn chunk(&mut self, request: &PolicyRequest) -> Result<Vec<JointAction>, RtcError> {
        let mut out = request.prefix.clone();
        let mut cur = match request.prefix.last() {
            Some(a) => *a,
            None => {
                let mut a = JointAction([0.0; 36]);
                for v in a.0.iter_mut() {
                    *v = self.rng.random_range(-self.spread..=self.spread);
                }
                out.push(a);
                a
            }
        };
        while out.len() < request.horizon {
            for v in cur.0.iter_mut() {
                *v = (*v + self.rng.random_range(-self.step..=self.step)).clamp(-self.spread, self.spread);
            }
            out.push(cur);
        }
        out.truncate(request.horizon);
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchedulerOutput {
    pub trace: RtcTrace,
    /// Every chunk produced, in emission order; `chunks[i].id == i`.
    pub chunks: Vec<ActionChunk>,
}

struct Plan {
    trigger_tick: usize,
    origin_tick: usize,
    prefix: Vec<JointAction>,
    overrun: bool,
}

/// Execution state shared by both clock modes.
struct Loop {
    config: SchedulerConfig,
    chunks: Vec<ActionChunk>,
    current: usize,
    last: Option<JointAction>,
    ticks: Vec<TickRecord>,
    switches: Vec<SwitchRecord>,
}

impl Loop {
    fn new(config: SchedulerConfig, first: Vec<JointAction>) -> Result<Self, RtcError> {
        check_chunk(&first, config.horizon)?;
        let chunk = ActionChunk { id: 0, actions: first, origin_tick: 0, committed_len: 0, trigger_tick: 0, ready_tick: 0 };
        Ok(Self { config, chunks: vec![chunk], current: 0, last: None, ticks: Vec::new(), switches: Vec::new() })
    }

    fn local_index(&self, t: usize) -> usize {
        t - self.chunks[self.current].origin_tick
    }

    fn should_trigger(&self, t: usize) -> bool {
        let i = self.local_index(t);
        match self.config.strategy {
            Strategy::Async => i >= self.config.s_min,
            Strategy::Sync => i >= self.config.horizon,
        }
    }

    /// Action the loop will execute at tick `tau` if no switch happens first.
    fn predicted(&self, tau: usize) -> JointAction {
        let c = &self.chunks[self.current];
        let h = self.config.horizon;
        c.actions[(tau - c.origin_tick).min(h - 1)]
    }

    /// Plans a request triggered at `t` whose chunk is expected at `t + lambda`.
    fn plan(&self, t: usize, lambda: usize) -> Plan {
        let h = self.config.horizon;
        let ready = t + lambda;
        let remaining = h.saturating_sub(self.local_index(t));
        let (origin_tick, prefix) = match self.config.strategy {
            Strategy::Sync => (ready, Vec::new()),
            Strategy::Async if self.config.inpaint => {
                let origin = ready - lambda.min(h - 1);
                (origin, (origin..ready).map(|tau| self.predicted(tau)).collect())
            }
            Strategy::Async => (if lambda < h { t } else { ready - (h - 1) }, Vec::new()),
        };
        let overrun = self.config.strategy == Strategy::Async && lambda > remaining;
        Plan { trigger_tick: t, origin_tick, prefix, overrun }
    }

    fn push_chunk(&mut self, plan: &Plan, mut actions: Vec<JointAction>, ready_tick: usize) -> Result<usize, RtcError> {
        check_chunk(&actions, self.config.horizon)?;
        actions[..plan.prefix.len()].copy_from_slice(&plan.prefix);
        let id = self.chunks.len();
        self.chunks.push(ActionChunk {
            id,
            actions,
            origin_tick: plan.origin_tick,
            committed_len: plan.prefix.len(),
            trigger_tick: plan.trigger_tick,
            ready_tick,
        });
        Ok(id)
    }

    fn switch(&mut self, t: usize, id: usize, overrun: bool) {
        let c = &self.chunks[id];
        self.switches.push(SwitchRecord {
            tick: t,
            chunk_id: id,
            trigger_tick: c.trigger_tick,
            latency_ticks: t - c.trigger_tick,
            origin_tick: c.origin_tick,
            prefix_len: c.committed_len,
            overrun,
        });
        self.current = id;
    }

    fn switch_if_ready(&mut self, t: usize, pending: &mut Option<(usize, bool)>) {
        if let Some((id, overrun)) = *pending {
            if self.chunks[id].ready_tick <= t {
                self.switch(t, id, overrun);
                *pending = None;
            }
        }
    }

    fn execute(&mut self, t: usize, hook: &mut impl PlantHook) -> Result<bool, RtcError> {
        let i = self.local_index(t);
        let c = &self.chunks[self.current];
        let (action, index) = if i < self.config.horizon {
            (c.actions[i], Some(i))
        } else {
            (self.last.unwrap_or(c.actions[self.config.horizon - 1]), None)
        };
        self.ticks.push(TickRecord { tick: t, chunk_id: c.id, index, gap: index.is_none(), action: action.0.to_vec() });
        self.last = Some(action);
        hook.execute(t, &action)
    }

    fn finish(self) -> SchedulerOutput {
        let emitted = self.chunks.len();
        SchedulerOutput { trace: RtcTrace::summarize(self.config, self.ticks, self.switches, emitted), chunks: self.chunks }
    }
}

fn check_chunk(actions: &[JointAction], horizon: usize) -> Result<(), RtcError> {
    if actions.len() != horizon {
        return Err(RtcError::Policy(format!("chunk has {} actions, expected {horizon}", actions.len())));
    }
    if actions.iter().any(|a| a.0.iter().any(|v| !v.is_finite())) {
        return Err(RtcError::Policy("non-finite action in chunk".into()));
    }
    Ok(())
}

fn initial_chunk(config: &SchedulerConfig, policy: &mut impl Policy, observation: Observation) -> Result<Vec<JointAction>, RtcError> {
    policy.chunk(&PolicyRequest { tick: 0, origin_tick: 0, observation, prefix: Vec::new(), horizon: config.horizon })
}

/// Runs the control loop for up to `ticks` control ticks. The first chunk is
/// requested at tick 0 and deployed immediately.
pub fn run_scheduler<P, H>(config: &SchedulerConfig, policy: &mut P, hook: &mut H, ticks: usize) -> Result<SchedulerOutput, RtcError>
where
    P: Policy + Send,
    H: PlantHook,
{
    config.validate()?;
    if ticks < config.horizon {
        return Err(RtcError::Config(format!("ticks {ticks} shorter than horizon {}", config.horizon)));
    }
    match config.mode {
        ClockMode::Virtual => run_virtual(config, policy, hook, ticks),
        ClockMode::Realtime => run_realtime(config, policy, hook, ticks),
    }
}

fn run_virtual(config: &SchedulerConfig, policy: &mut impl Policy, hook: &mut impl PlantHook, ticks: usize) -> Result<SchedulerOutput, RtcError> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut obs = Some(hook.observe(0));
    let first = initial_chunk(config, policy, obs.clone().expect("observed"))?;
    let mut lp = Loop::new(config.clone(), first)?;
    let mut pending: Option<(usize, bool)> = None;
    for t in 0..ticks {
        let observation = match obs.take() {
            Some(o) => o,
            None => hook.observe(t),
        };
        lp.switch_if_ready(t, &mut pending);
        if pending.is_none() && lp.should_trigger(t) {
            let lambda = latency_ticks(config.latency.sample_ms(&mut rng), config.control_rate);
            let plan = lp.plan(t, lambda);
            let request = PolicyRequest { tick: t, origin_tick: plan.origin_tick, observation, prefix: plan.prefix.clone(), horizon: config.horizon };
            let actions = policy.chunk(&request)?;
            let id = lp.push_chunk(&plan, actions, t + lambda)?;
            pending = Some((id, plan.overrun));
            // zero latency deploys within the same tick
            lp.switch_if_ready(t, &mut pending);
        }
        if !lp.execute(t, hook)? {
            break;
        }
    }
    Ok(lp.finish())
}

struct Job {
    request: PolicyRequest,
    latency: Duration,
}

/// Wall-clock mode: the control loop owns the tick counter and never blocks on
/// inference; a worker thread serves requests and publishes finished chunks
/// through the triple buffer. The prefix is planned with the latency bound of
/// the model, so the committed rows match execution whenever actual latency
/// stays within it.
fn run_realtime<P: Policy + Send>(config: &SchedulerConfig, policy: &mut P, hook: &mut impl PlantHook, ticks: usize) -> Result<SchedulerOutput, RtcError> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let first_obs = hook.observe(0);
    let first = initial_chunk(config, policy, first_obs.clone())?;
    let mut lp = Loop::new(config.clone(), first)?;
    let hint = latency_ticks(config.latency.max_ms(), config.control_rate);
    let period = Duration::from_secs_f64(1.0 / config.control_rate);

    std::thread::scope(|s| {
        let (tx, rx) = mpsc::channel::<Job>();
        let (mut writer, mut reader) = chunk_buffer::<Result<Vec<JointAction>, RtcError>>();
        s.spawn(move || {
            for job in rx {
                let start = Instant::now();
                let result = policy.chunk(&job.request);
                if let Some(rest) = job.latency.checked_sub(start.elapsed()) {
                    std::thread::sleep(rest);
                }
                writer.publish(result);
            }
        });

        let start = Instant::now();
        let mut in_flight: Option<Plan> = None;
        let mut first_obs = Some(first_obs);
        for t in 0..ticks {
            if let Some(rest) = (period * t as u32).checked_sub(start.elapsed()) {
                std::thread::sleep(rest);
            }
            let observation = match first_obs.take() {
                Some(o) => o,
                None => hook.observe(t),
            };
            if let Some(result) = reader.take_fresh() {
                let plan = in_flight.take().expect("chunk without request");
                let remaining = config.horizon.saturating_sub(lp.local_index(plan.trigger_tick));
                let id = lp.push_chunk(&plan, result?, t)?;
                lp.switch(t, id, t - plan.trigger_tick > remaining);
            }
            if in_flight.is_none() && lp.should_trigger(t) {
                let plan = lp.plan(t, hint);
                let latency = Duration::from_secs_f64(config.latency.sample_ms(&mut rng) / 1000.0);
                let request = PolicyRequest { tick: t, origin_tick: plan.origin_tick, observation, prefix: plan.prefix.clone(), horizon: config.horizon };
                tx.send(Job { request, latency }).map_err(|_| RtcError::Policy("inference worker stopped".into()))?;
                in_flight = Some(plan);
            }
            if !lp.execute(t, hook)? {
                break;
            }
        }
        drop(tx);
        Ok::<(), RtcError>(())
    })?;
    Ok(lp.finish())
}
