//! Real-time chunking: the training-time delay mask and the asynchronous
//! chunk scheduler with its shared buffer, traces and continuity metrics.

mod bridge;
mod buffer;
mod mask;
mod scheduler;
mod trace;

use thiserror::Error;

pub use bridge::{lowlevel_bridge, LowlevelBridge};
pub use buffer::{chunk_buffer, ChunkReader, ChunkWriter};
pub use mask::{apply_rtc_mask, sample_delay, RtcTrainRule};
pub use scheduler::{
    latency_ticks, run_scheduler, ActionChunk, ClockMode, ConstantPolicy, LatencyModel, OpenLoopPlant, PlantHook, Policy, PolicyRequest, RandomWalkPolicy,
    SchedulerConfig, SchedulerOutput, Strategy,
};
pub use trace::{action_distance, continuity_metrics, switch_divergences, ContinuityMetrics, RtcTrace, SwitchRecord, TickRecord, TraceRecord, TraceSummary, TRACE_SCHEMA_VERSION};

#[derive(Debug, Error)]
pub enum RtcError {
    #[error("delay {d} must be below horizon {horizon}")]
    DelayTooLong { d: usize, horizon: usize },
    #[error("invalid scheduler config: {0}")]
    Config(String),
    #[error("no chunk boundary")]
    NoChunkBoundary,
    #[error("policy failed: {0}")]
    Policy(String),
    #[error("trace: {0}")]
    Trace(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
