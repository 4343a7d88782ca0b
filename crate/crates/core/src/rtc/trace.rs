use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::scheduler::{ActionChunk, SchedulerConfig};
use super::RtcError;
use crate::actions::JointAction;

pub const TRACE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub tick: usize,
    pub chunk_id: usize,
    /// Local index into the chunk, absent on gap ticks.
    pub index: Option<usize>,
    pub gap: bool,
    pub action: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchRecord {
    pub tick: usize,
    pub chunk_id: usize,
    pub trigger_tick: usize,
    pub latency_ticks: usize,
    pub origin_tick: usize,
    pub prefix_len: usize,
    pub overrun: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub ticks: usize,
    pub gap_ticks: usize,
    pub chunks_emitted: usize,
    pub switches: usize,
    pub overruns: usize,
    pub mean_divergence: Option<f64>,
    pub max_divergence: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TraceRecord {
    Header { schema_version: u32, config: SchedulerConfig },
    Tick(TickRecord),
    Switch(SwitchRecord),
    Summary(TraceSummary),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RtcTrace {
    pub config: SchedulerConfig,
    pub ticks: Vec<TickRecord>,
    pub switches: Vec<SwitchRecord>,
    pub summary: TraceSummary,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContinuityMetrics {
    pub mean: f64,
    pub max: f64,
    pub switches: usize,
    /// Largest step between consecutive rows inside any deployed chunk.
    pub internal_max_step: f64,
}

/// Per-dimension normalized L2 distance (root mean square difference).
pub fn action_distance(a: &JointAction, b: &JointAction) -> f64 {
    let n = a.0.len() as f64;
    (a.0.iter().zip(&b.0).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n).sqrt()
}

fn tick_action(t: &TickRecord) -> Result<JointAction, RtcError> {
    JointAction::from_slice(&t.action).map_err(|e| RtcError::Trace(e.to_string()))
}

/// Divergence at each switch between the last action executed before it and the
/// first action executed after it, recomputed from the per-tick records.
pub fn switch_divergences(trace: &RtcTrace) -> Result<Vec<f64>, RtcError> {
    let first = trace.ticks.first().map(|t| t.tick).unwrap_or(0);
    let at = |tick: usize| trace.ticks.get(tick.wrapping_sub(first)).filter(|r| r.tick == tick);
    let mut out = Vec::new();
    for s in &trace.switches {
        let (Some(prev), Some(next)) = (s.tick.checked_sub(1).and_then(at), at(s.tick)) else {
            continue;
        };
        out.push(action_distance(&tick_action(prev)?, &tick_action(next)?));
    }
    Ok(out)
}

pub fn continuity_metrics(trace: &RtcTrace, chunks: &[ActionChunk]) -> Result<ContinuityMetrics, RtcError> {
    let d = switch_divergences(trace)?;
    if d.is_empty() {
        return Err(RtcError::NoChunkBoundary);
    }
    let internal_max_step = chunks
        .iter()
        .flat_map(|c| c.actions.windows(2).map(|w| action_distance(&w[0], &w[1])))
        .fold(0.0, f64::max);
    Ok(ContinuityMetrics {
        mean: d.iter().sum::<f64>() / d.len() as f64,
        max: d.iter().cloned().fold(0.0, f64::max),
        switches: d.len(),
        internal_max_step,
    })
}

impl RtcTrace {
    pub(crate) fn summarize(config: SchedulerConfig, ticks: Vec<TickRecord>, switches: Vec<SwitchRecord>, chunks_emitted: usize) -> Self {
        let mut trace = Self {
            config,
            summary: TraceSummary {
                ticks: ticks.len(),
                gap_ticks: ticks.iter().filter(|t| t.gap).count(),
                chunks_emitted,
                switches: switches.len(),
                overruns: switches.iter().filter(|s| s.overrun).count(),
                mean_divergence: None,
                max_divergence: None,
            },
            ticks,
            switches,
        };
        if let Ok(d) = switch_divergences(&trace) {
            if !d.is_empty() {
                trace.summary.mean_divergence = Some(d.iter().sum::<f64>() / d.len() as f64);
                trace.summary.max_divergence = Some(d.iter().cloned().fold(0.0, f64::max));
            }
        }
        trace
    }

    /// Tick and switch records interleaved in time order; a switch precedes the tick it happens in.
    pub fn records(&self) -> Vec<TraceRecord> {
        let mut out = vec![TraceRecord::Header { schema_version: TRACE_SCHEMA_VERSION, config: self.config.clone() }];
        let mut sw = self.switches.iter().peekable();
        for t in &self.ticks {
            while let Some(s) = sw.next_if(|s| s.tick <= t.tick) {
                out.push(TraceRecord::Switch(s.clone()));
            }
            out.push(TraceRecord::Tick(t.clone()));
        }
        out.extend(sw.map(|s| TraceRecord::Switch(s.clone())));
        out.push(TraceRecord::Summary(self.summary.clone()));
        out
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<(), RtcError> {
        for r in self.records() {
            serde_json::to_writer(&mut w, &r).map_err(|e| RtcError::Trace(e.to_string()))?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        buf
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self, RtcError> {
        let mut config = None;
        let mut ticks = Vec::new();
        let mut switches = Vec::new();
        let mut summary = None;
        for line in r.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str(&line).map_err(|e| RtcError::Trace(e.to_string()))? {
                TraceRecord::Header { schema_version, config: c } => {
                    if schema_version != TRACE_SCHEMA_VERSION {
                        return Err(RtcError::Trace(format!("unsupported schema version {schema_version}")));
                    }
                    config = Some(c);
                }
                TraceRecord::Tick(t) => ticks.push(t),
                TraceRecord::Switch(s) => switches.push(s),
                TraceRecord::Summary(s) => summary = Some(s),
            }
        }
        let config = config.ok_or_else(|| RtcError::Trace("missing header".into()))?;
        let summary = summary.ok_or_else(|| RtcError::Trace("missing summary".into()))?;
        if ticks.windows(2).any(|w| w[1].tick <= w[0].tick) {
            return Err(RtcError::Trace("ticks not strictly increasing".into()));
        }
        Ok(Self { config, ticks, switches, summary })
    }
}
