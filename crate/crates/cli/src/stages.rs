use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use hvla_core::actions::{
    decode_dataset, encode_dataset, read_headers, resample_episode, ActionSeq, Episode, NormStats, Observation, ProprioState, DATASET_MAGIC,
};
use hvla_core::fasttok::{fit_tokenizer, TokenizerModel};
use hvla_core::flow::{
    fit_action_norm, flow_examples, pretrain, read_checkpoint, train, write_checkpoint, ExpertConfig, ExpertParams, FlowError, FlowExample,
    FlowPolicy, MarkovGrammar, PretrainExample, PretrainHeadConfig, TrainConfig, CHECKPOINT_MAGIC,
};
use hvla_core::plant::{evaluate, generate_demos, task_space_episode, DemoReplayPolicy, EvalConfig, PlantError, SimEnv, ZerosPolicy};
use hvla_core::rtc::{
    continuity_metrics, latency_ticks, run_scheduler, ClockMode, LatencyModel, OpenLoopPlant, Policy, RandomWalkPolicy, SchedulerConfig,
    SchedulerOutput, Strategy,
};
use num_rational::Ratio;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{BenchPolicy, NormSource, PipelineConfig, PretrainSource};
use crate::manifest::{sha256_file, write_atomic, Layout, RunLock, RunManifest, REPORT_SCHEMA_VERSION};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalPolicy {
    /// The finetuned checkpoint.
    Expert,
    /// Freshly initialized parameters.
    Untrained,
    /// Replays the scripted demonstration of each trial.
    Oracle,
    Zeros,
}

impl EvalPolicy {
    pub fn name(self) -> &'static str {
        match self {
            Self::Expert => "expert",
            Self::Untrained => "untrained",
            Self::Oracle => "oracle",
            Self::Zeros => "zeros",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Command {
    Gendata,
    FitTokenizer,
    Pretrain,
    Posttrain,
    Finetune,
    BenchRtc,
    Eval { policy: EvalPolicy, task: Option<u32> },
}

impl Command {
    pub fn name(&self) -> String {
        match self {
            Self::Gendata => "gendata".into(),
            Self::FitTokenizer => "fit-tokenizer".into(),
            Self::Pretrain => "pretrain".into(),
            Self::Posttrain => "posttrain".into(),
            Self::Finetune => "finetune".into(),
            Self::BenchRtc => "bench-rtc".into(),
            Self::Eval { policy, .. } => format!("eval-{}", policy.name()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct StageOutcome {
    /// Human-readable lines for standard output.
    pub summary: Vec<String>,
    pub manifest: RunManifest,
    pub report: Value,
}

fn user(e: impl std::fmt::Display) -> CliError {
    CliError::user(e.to_string())
}

fn flow_err(e: FlowError) -> CliError {
    match e {
        FlowError::Config(_) | FlowError::Io(_) | FlowError::PrefixTooLong { .. } => CliError::user(e.to_string()),
        other => CliError::internal(other),
    }
}

fn plant_err(e: PlantError) -> CliError {
    match e {
        PlantError::InfeasibleTask(_) | PlantError::InvalidTask(_) | PlantError::BadTimeStep(_) => CliError::user(e.to_string()),
        other => CliError::internal(other),
    }
}

struct Ctx<'a> {
    config: &'a PipelineConfig,
    layout: Layout,
    manifest: RunManifest,
}

impl Ctx<'_> {
    /// Reads an input artifact, recording its hash and checking it against the
    /// manifest of the stage that produced it.
    fn input(&mut self, path: &Path, what: &str, producer: &str) -> Result<Vec<u8>, CliError> {
        if !path.exists() {
            return Err(CliError::user(format!("missing {what} ({}); run `hvla {producer}` first", path.display())));
        }
        let bytes = fs::read(path).map_err(|e| CliError::user(format!("reading {}: {e}", path.display())))?;
        let hash = sha256_file(path).map_err(user)?;
        let rel = self.layout.relative(path);
        let producer_manifest = self.layout.manifest(producer);
        if producer_manifest.exists() {
            let m = RunManifest::load(&producer_manifest)?;
            if let Some(recorded) = m.outputs.get(&rel) {
                if *recorded != hash {
                    return Err(CliError::internal(format!("{rel} does not match the hash recorded by `{producer}`")));
                }
            }
        }
        self.manifest.inputs.insert(rel, hash);
        Ok(bytes)
    }

    fn output(&mut self, path: &Path, bytes: &[u8]) -> Result<(), CliError> {
        write_atomic(path, bytes)?;
        let hash = sha256_file(path).map_err(user)?;
        self.manifest.outputs.insert(self.layout.relative(path), hash);
        Ok(())
    }

    fn output_json(&mut self, path: &Path, value: &impl Serialize) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(CliError::internal)?;
        text.push('\n');
        self.output(path, text.as_bytes())
    }

    fn report(&mut self, mut body: Value) -> Result<Value, CliError> {
        let obj = body.as_object_mut().expect("reports are objects");
        obj.insert("schema_version".into(), json!(REPORT_SCHEMA_VERSION));
        obj.insert("command".into(), json!(self.manifest.command));
        let path = self.layout.report(&self.manifest.command);
        self.output_json(&path, &body)?;
        Ok(body)
    }

    fn episodes(&mut self, path: &Path, what: &str) -> Result<Vec<Episode>, CliError> {
        let bytes = self.input(path, what, "gendata")?;
        decode_dataset(&bytes).map_err(|e| CliError::user(format!("{}: {e}", path.display())))
    }

    fn norm(&mut self, path: &Path, what: &str) -> Result<NormStats, CliError> {
        let bytes = self.input(path, what, "gendata")?;
        serde_json::from_slice(&bytes).map_err(|e| CliError::user(format!("{}: {e}", path.display())))
    }

    fn checkpoint(&mut self, stage: &str) -> Result<ExpertParams, CliError> {
        let path = self.layout.checkpoint(stage);
        let bytes = self.input(&path, &format!("{stage} checkpoint"), stage)?;
        let (params, _) = read_checkpoint(&mut bytes.as_slice()).map_err(|e| CliError::user(format!("{}: {e}", path.display())))?;
        let want = &self.config.flowexpert.model;
        let strip = |c: &ExpertConfig| ExpertConfig { pretrain: PretrainHeadConfig::default(), ..c.clone() };
        if strip(&params.config) != strip(want) {
            return Err(CliError::user(format!("{stage} checkpoint was trained with a different flowexpert.model; rerun `hvla {stage}`")));
        }
        Ok(params)
    }

    fn save_checkpoint(&mut self, stage: &str, params: &ExpertParams, seed: u64, step: usize) -> Result<(), CliError> {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, params, seed, step, stage).map_err(flow_err)?;
        let path = self.layout.checkpoint(stage);
        self.output(&path, &buf)
    }
}

/// Runs one pipeline stage in `out`, holding the directory lock for its duration.
pub fn run(command: &Command, config: &PipelineConfig, out: &Path) -> Result<StageOutcome, CliError> {
    config.validate()?;
    let _lock = RunLock::acquire(out)?;
    let start = Instant::now();
    let mut ctx = Ctx { config, layout: Layout::new(out, config), manifest: RunManifest::new(&command.name(), config) };
    let (report, summary) = match command {
        Command::Gendata => gendata(&mut ctx)?,
        Command::FitTokenizer => fit_tok(&mut ctx)?,
        Command::Pretrain => pretrain_stage(&mut ctx)?,
        Command::Posttrain => posttrain_stage(&mut ctx)?,
        Command::Finetune => finetune_stage(&mut ctx)?,
        Command::BenchRtc => bench_rtc(&mut ctx)?,
        Command::Eval { policy, task } => eval_stage(&mut ctx, *policy, *task)?,
    };
    ctx.manifest.wall_time_s = start.elapsed().as_secs_f64();
    let path = ctx.layout.manifest(&ctx.manifest.command);
    ctx.manifest.save(&path)?;
    Ok(StageOutcome { summary, manifest: ctx.manifest, report })
}

type Staged = (Value, Vec<String>);

fn stage_seed(config: &PipelineConfig, local: u64) -> u64 {
    local.wrapping_add(config.seed)
}

fn gendata(ctx: &mut Ctx) -> Result<Staged, CliError> {
    let c = ctx.config;
    let factor = c.actioncore.factor()?;
    let mut episodes = Vec::new();
    let mut per_task = BTreeMap::new();
    for &id in &c.simplant.tasks {
        let task = c.simplant.task(id)?;
        let demos = generate_demos(&task, c.simplant.demos_per_task, c.seed.wrapping_add(u64::from(id))).map_err(plant_err)?;
        per_task.insert(id.to_string(), demos.len());
        for ep in demos {
            episodes.push(if factor == Ratio::from_integer(1) { ep } else { resample_episode(&ep, factor).map_err(user)? });
        }
    }
    let bytes = encode_dataset(&episodes).map_err(CliError::internal)?;
    if decode_dataset(&bytes).map_err(CliError::internal)? != episodes {
        return Err(CliError::internal("dataset does not round-trip"));
    }
    let path = ctx.layout.demos();
    ctx.output(&path, &bytes)?;

    let task_eps: Vec<Episode> = episodes.iter().map(task_space_episode).collect();
    let path = ctx.layout.task_space();
    ctx.output(&path, &encode_dataset(&task_eps).map_err(CliError::internal)?)?;

    let norm_eps: Vec<Episode> = match c.actioncore.norm_source {
        NormSource::Corpus => episodes.clone(),
        NormSource::FinetuneTask => episodes.iter().filter(|e| e.task_id == c.simplant.finetune_task).cloned().collect(),
    };
    let action_norm = fit_action_norm(&norm_eps).map_err(flow_err)?;
    let rows: Vec<&[f64]> = task_eps.iter().flat_map(|e| e.actions.rows()).collect();
    let task_norm = NormStats::fit_rows(rows, hvla_core::actions::layout::TASK_DIM).map_err(user)?.with_degenerate_as_pad();
    let path = ctx.layout.action_norm();
    ctx.output_json(&path, &action_norm)?;
    let path = ctx.layout.task_norm();
    ctx.output_json(&path, &task_norm)?;

    let frames: usize = episodes.iter().map(Episode::len).sum();
    let report = ctx.report(json!({
        "episodes": episodes.len(),
        "demos_per_task": c.simplant.demos_per_task,
        "episodes_per_task": per_task,
        "frames": frames,
        "resample_factor": factor.to_string(),
        "action_pad_dims": action_norm.pad_dims,
        "task_space_pad_dims": task_norm.pad_dims,
    }))?;
    Ok((report, vec![format!("gendata: {} episodes ({} frames) over {} tasks", episodes.len(), frames, c.simplant.tasks.len())]))
}

/// Normalized task-space windows of `action_horizon` frames, one per frame
/// start that fits.
fn task_windows(episodes: &[Episode], norm: &NormStats, horizon: usize) -> Result<Vec<(usize, usize, Vec<f64>)>, CliError> {
    let mut out = Vec::new();
    for (e, ep) in episodes.iter().enumerate() {
        let ActionSeq::Task(actions) = &ep.actions else {
            return Err(CliError::user("task-space dataset holds joint-space episodes"));
        };
        let normed = actions.iter().map(|a| norm.normalize(&a.0)).collect::<Result<Vec<_>, _>>().map_err(user)?;
        for t in 0..normed.len().saturating_sub(horizon - 1) {
            out.push((e, t, normed[t..t + horizon].concat()));
        }
    }
    Ok(out)
}

fn fit_tok(ctx: &mut Ctx) -> Result<Staged, CliError> {
    let c = ctx.config;
    let eps = ctx.episodes(&ctx.layout.task_space(), "task-space dataset")?;
    let norm = ctx.norm(&ctx.layout.task_norm(), "task-space normalization")?;
    let windows = task_windows(&eps, &norm, c.fasttok.action_horizon)?;
    if windows.is_empty() {
        return Err(CliError::user("task-space dataset is empty"));
    }
    let stride = windows.len().div_ceil(c.fasttok.fit_frames);
    let corpus: Vec<Vec<f64>> = windows.into_iter().step_by(stride).map(|w| w.2).collect();
    let model = fit_tokenizer(&corpus, c.fasttok.tokenizer()).map_err(user)?;
    let rep = model.reconstruction_report(&corpus).map_err(CliError::internal)?;
    let path = ctx.layout.tokenizer();
    ctx.output(&path, model.to_json().as_bytes())?;
    let report = ctx.report(json!({
        "fit_frames": corpus.len(),
        "merges": model.merges.len(),
        "vocab_len": model.vocab_len(),
        "max_abs_error": rep.max_abs_error,
        "mean_token_length": rep.mean_token_length,
        "raw_symbol_length": rep.raw_symbol_length,
    }))?;
    Ok((
        report,
        vec![format!(
            "fit-tokenizer: {} merges, max error {:.5}, {:.1} tokens per action (raw {})",
            model.merges.len(),
            rep.max_abs_error,
            rep.mean_token_length,
            rep.raw_symbol_length
        )],
    ))
}

fn zero_observation(config: &ExpertConfig) -> Observation {
    Observation { proprio: ProprioState::default(), context: vec![0.0; config.context_dim], task_id: 0 }
}

fn tail_mean(curve: &[f64]) -> f64 {
    let n = (curve.len() / 10).max(1).min(curve.len());
    curve[curve.len() - n..].iter().sum::<f64>() / n as f64
}

fn pretrain_stage(ctx: &mut Ctx) -> Result<Staged, CliError> {
    let c = ctx.config;
    let f = &c.flowexpert;
    let mut model = f.model.clone();
    let data: Vec<PretrainExample> = match f.pretrain_source {
        PretrainSource::Grammar => {
            let g = MarkovGrammar::three_symbol();
            model.pretrain = PretrainHeadConfig { vocab: g.symbols(), max_tokens: f.grammar.length, ..model.pretrain };
            let mut rng = ChaCha8Rng::seed_from_u64(stage_seed(c, f.pretrain.seed));
            let obs = zero_observation(&model);
            (0..f.grammar.sequences).map(|_| PretrainExample { obs: obs.clone(), tokens: g.sample(f.grammar.length, &mut rng) }).collect()
        }
        PretrainSource::TaskSpace => {
            let bytes = ctx.input(&ctx.layout.tokenizer(), "tokenizer", "fit-tokenizer")?;
            let tok = TokenizerModel::from_json(std::str::from_utf8(&bytes).map_err(user)?).map_err(user)?;
            if tok.vocab_len() > model.pretrain.vocab {
                return Err(CliError::user(format!(
                    "tokenizer vocabulary {} exceeds flowexpert.model.pretrain.vocab {}",
                    tok.vocab_len(),
                    model.pretrain.vocab
                )));
            }
            let eps = ctx.episodes(&ctx.layout.task_space(), "task-space dataset")?;
            let norm = ctx.norm(&ctx.layout.task_norm(), "task-space normalization")?;
            let mut out = Vec::new();
            for (e, t, window) in task_windows(&eps, &norm, tok.config.action_horizon)? {
                let tokens = tok.encode(&window).map_err(CliError::internal)?;
                if tokens.len() > model.pretrain.max_tokens {
                    return Err(CliError::user(format!(
                        "an action encodes to {} tokens; raise flowexpert.model.pretrain.max_tokens ({})",
                        tokens.len(),
                        model.pretrain.max_tokens
                    )));
                }
                let ep = &eps[e];
                out.push(PretrainExample {
                    obs: Observation { proprio: ep.states[t], context: ep.contexts[t].clone(), task_id: ep.task_id },
                    tokens,
                });
            }
            out
        }
    };
    let params = ExpertParams::init(model, c.seed).map_err(flow_err)?;
    let cfg = hvla_core::flow::PretrainConfig { seed: stage_seed(c, f.pretrain.seed), ..f.pretrain.clone() };
    let (params, curve) = pretrain(params, &cfg, &data).map_err(flow_err)?;
    ctx.save_checkpoint("pretrain", &params, cfg.seed, cfg.steps)?;
    let source = serde_json::to_value(f.pretrain_source).map_err(CliError::internal)?;
    let final_loss = if curve.is_empty() { None } else { Some(tail_mean(&curve)) };
    let report = ctx.report(json!({
        "source": source,
        "examples": data.len(),
        "steps": cfg.steps,
        "final_loss": final_loss,
        "loss_curve": curve,
    }))?;
    let line = match final_loss {
        Some(l) => format!("pretrain: {} examples, final next-token loss {l:.4} nats", data.len()),
        None => format!("pretrain: {} examples, no steps", data.len()),
    };
    Ok((report, vec![line]))
}

/// Splits each task's episodes: the last `fraction` (at least one when a task
/// has two or more) go to validation.
fn split<'a>(episodes: &'a [Episode], fraction: f64, task: Option<u32>) -> (Vec<Episode>, Vec<Episode>) {
    let mut by_task: BTreeMap<u32, Vec<&'a Episode>> = BTreeMap::new();
    for ep in episodes.iter().filter(|e| task.is_none_or(|t| e.task_id == t)) {
        by_task.entry(ep.task_id).or_default().push(ep);
    }
    let (mut tr, mut va) = (Vec::new(), Vec::new());
    for eps in by_task.values() {
        let n_val = if eps.len() < 2 { 0 } else { ((eps.len() as f64 * fraction).ceil() as usize).clamp(1, eps.len() - 1) };
        let cut = eps.len() - n_val;
        tr.extend(eps[..cut].iter().map(|e| (*e).clone()));
        va.extend(eps[cut..].iter().map(|e| (*e).clone()));
    }
    (tr, va)
}

fn train_on(ctx: &mut Ctx, stage: &str, params: ExpertParams, cfg: &TrainConfig, task: Option<u32>) -> Result<Staged, CliError> {
    let c = ctx.config;
    let eps = ctx.episodes(&ctx.layout.demos(), "demonstration dataset")?;
    let norm = ctx.norm(&ctx.layout.action_norm(), "action normalization")?;
    let (tr, va) = split(&eps, c.flowexpert.validation_fraction, task);
    if tr.is_empty() {
        return Err(CliError::user(format!("{stage}: no training episodes")));
    }
    let h = cfg.horizon;
    let data: Vec<FlowExample> = flow_examples(&tr, &norm, h).map_err(flow_err)?;
    let val: Vec<FlowExample> = if va.is_empty() { data.clone() } else { flow_examples(&va, &norm, h).map_err(flow_err)? };
    let cfg = TrainConfig { seed: stage_seed(c, cfg.seed), ..cfg.clone() };
    let out = train(params, &cfg, &data, &val).map_err(flow_err)?;
    ctx.save_checkpoint(stage, &out.params, cfg.seed, cfg.steps)?;
    let (init, fin) = (out.initial_validation(), out.final_validation());
    let report = ctx.report(json!({
        "train_episodes": tr.len(),
        "validation_episodes": va.len(),
        "examples": data.len(),
        "steps": cfg.steps,
        "freeze_encoder": cfg.freeze_encoder,
        "initial_validation_loss": init,
        "final_validation_loss": fin,
        "validation_ratio": fin / init,
        "validation_curve": out.validation_curve,
        "loss_curve": out.loss_curve,
    }))?;
    Ok((report, vec![format!("{stage}: {} examples, validation fm loss {init:.4} -> {fin:.4} ({:.3}x)", data.len(), fin / init)]))
}

fn posttrain_stage(ctx: &mut Ctx) -> Result<Staged, CliError> {
    let params = ctx.checkpoint("pretrain")?;
    let cfg = ctx.config.flowexpert.posttrain.clone();
    train_on(ctx, "posttrain", params, &cfg, None)
}

fn finetune_stage(ctx: &mut Ctx) -> Result<Staged, CliError> {
    let params = ctx.checkpoint("posttrain")?;
    let cfg = ctx.config.flowexpert.finetune.clone();
    let task = ctx.config.simplant.finetune_task;
    train_on(ctx, "finetune", params, &cfg, Some(task))
}

fn expert_policy(ctx: &mut Ctx, trained: bool) -> Result<FlowPolicy, CliError> {
    let c = ctx.config;
    let params = if trained { ctx.checkpoint("finetune")? } else { ExpertParams::init(c.flowexpert.model.clone(), c.seed).map_err(flow_err)? };
    let norm = ctx.norm(&ctx.layout.action_norm(), "action normalization")?;
    if norm.dim() != params.config.action_dim {
        return Err(CliError::user("action normalization does not match the expert's action dimension"));
    }
    Ok(FlowPolicy::new(params, norm, c.flowexpert.sample_steps, c.seed))
}

fn eval_stage(ctx: &mut Ctx, which: EvalPolicy, task: Option<u32>) -> Result<Staged, CliError> {
    let c = ctx.config;
    let task = c.simplant.task(task.unwrap_or(c.simplant.finetune_task))?;
    let cfg = EvalConfig { trials: c.simplant.eval.trials, seed: c.simplant.eval.seed, scheduler: c.rtcsched.scheduler.clone() };
    let report = match which {
        EvalPolicy::Expert | EvalPolicy::Untrained => {
            let mut p = expert_policy(ctx, which == EvalPolicy::Expert)?;
            evaluate(&mut p, &task, &cfg)
        }
        EvalPolicy::Oracle => {
            let mut p = DemoReplayPolicy::new(&task, cfg.trials, cfg.seed).map_err(plant_err)?;
            evaluate(&mut p, &task, &cfg)
        }
        EvalPolicy::Zeros => evaluate(&mut ZerosPolicy, &task, &cfg),
    }
    .map_err(plant_err)?;
    let mut lines = vec![format!("eval ({}) on {} [task {}]: {}", which.name(), report.task_name, report.task_id, report.success_rate)];
    for (i, r) in report.subgoal_rates.iter().enumerate() {
        lines.push(format!("  subgoal {}: {:.0}%", i + 1, r * 100.0));
    }
    let mut body = serde_json::to_value(&report).map_err(CliError::internal)?;
    body["policy"] = json!(which.name());
    body["eval_seed"] = json!(cfg.seed);
    Ok((ctx.report(body)?, lines))
}

#[derive(Debug, Serialize)]
struct RunMetrics {
    gap_ticks: usize,
    switches: usize,
    overruns: usize,
    mean_divergence: Option<f64>,
    max_divergence: Option<f64>,
}

#[derive(Debug, Serialize)]
struct SweepPoint {
    latency_ms: f64,
    latency_ticks: usize,
    s_min: usize,
    horizon: usize,
    /// Latency fits in the remaining chunk after the trigger.
    feasible: bool,
    inpaint: RunMetrics,
    fresh: RunMetrics,
    sync: RunMetrics,
    sync_gaps_per_boundary: Option<f64>,
}

fn metrics(out: &SchedulerOutput) -> RunMetrics {
    let s = &out.trace.summary;
    let cont = continuity_metrics(&out.trace, &out.chunks).ok();
    RunMetrics {
        gap_ticks: s.gap_ticks,
        switches: s.switches,
        overruns: s.overruns,
        mean_divergence: cont.as_ref().map(|m| m.mean),
        max_divergence: cont.as_ref().map(|m| m.max),
    }
}

fn bench_rtc(ctx: &mut Ctx) -> Result<Staged, CliError> {
    let c = ctx.config;
    let r = &c.rtcsched;
    let base = SchedulerConfig { mode: ClockMode::Virtual, ..r.scheduler.clone() };
    let task = c.simplant.task(c.simplant.finetune_task)?;
    let mut expert = match r.bench_policy {
        BenchPolicy::Expert => Some(expert_policy(ctx, true)?),
        BenchPolicy::RandomWalk => None,
    };
    let observation = {
        let instance = task.instantiate(&mut hvla_core::plant::trial_rng(c.simplant.eval.seed, 0)).map_err(plant_err)?;
        SimEnv::new(instance, base.control_rate, base.lowlevel_rate).map_err(plant_err)?.observation()
    };
    let mut points = Vec::new();
    let mut lines = Vec::new();
    for &h in &r.sweep.horizons {
        for &s_min in &r.sweep.s_min {
            for &ms in &r.sweep.latencies_ms {
                let point = SchedulerConfig { horizon: h, s_min, latency: LatencyModel::Fixed { ms }, ..base.clone() };
                point.validate().map_err(|e| CliError::user(format!("sweep point ({ms} ms, s_min={s_min}, H={h}): {e}")))?;
                if r.bench_ticks < h {
                    return Err(CliError::user(format!("rtcsched.bench_ticks must be at least H = {h}")));
                }
                let variants = [
                    ("inpaint", SchedulerConfig { strategy: Strategy::Async, inpaint: true, ..point.clone() }),
                    ("fresh", SchedulerConfig { strategy: Strategy::Async, inpaint: false, ..point.clone() }),
                    ("sync", SchedulerConfig { strategy: Strategy::Sync, ..point.clone() }),
                ];
                let mut runs = Vec::new();
                for (name, cfg) in variants {
                    let mut plant = OpenLoopPlant { observation: observation.clone() };
                    let out = match expert.as_mut() {
                        Some(p) if p.params.config.horizon == h => {
                            p.reset(0);
                            run_scheduler(&cfg, p, &mut plant, r.bench_ticks)
                        }
                        Some(_) => return Err(CliError::user(format!("the expert has horizon {}; sweep uses H = {h}", c.flowexpert.model.horizon))),
                        None => run_scheduler(&cfg, &mut RandomWalkPolicy::new(cfg.seed, 0.05, 1.0), &mut plant, r.bench_ticks),
                    }
                    .map_err(CliError::internal)?;
                    let path = ctx.layout.traces().join(format!("{ms}ms_s{s_min}_h{h}_{name}.jsonl"));
                    ctx.output(&path, &out.trace.to_jsonl())?;
                    runs.push(metrics(&out));
                }
                let sync = runs.pop().expect("three runs");
                let fresh = runs.pop().expect("three runs");
                let inpaint = runs.pop().expect("three runs");
                let lambda = latency_ticks(ms, base.control_rate);
                let per_boundary = (sync.switches > 0).then(|| sync.gap_ticks as f64 / sync.switches as f64);
                lines.push(format!(
                    "  {ms:>6} ms (lambda {lambda:>2}) s_min {s_min:>2} H {h:>2}: gaps {:>3}, overruns {:>3}, divergence {} vs fresh {}; sync gaps/boundary {}",
                    inpaint.gap_ticks,
                    inpaint.overruns,
                    fmt_opt(inpaint.mean_divergence),
                    fmt_opt(fresh.mean_divergence),
                    fmt_opt(per_boundary)
                ));
                points.push(SweepPoint {
                    latency_ms: ms,
                    latency_ticks: lambda,
                    s_min,
                    horizon: h,
                    feasible: lambda <= h - s_min,
                    inpaint,
                    fresh,
                    sync,
                    sync_gaps_per_boundary: per_boundary,
                });
            }
        }
    }
    lines.insert(0, format!("bench-rtc: {} sweep points, {} ticks each", points.len(), r.bench_ticks));
    let policy = serde_json::to_value(r.bench_policy).map_err(CliError::internal)?;
    let report = ctx.report(json!({ "ticks": r.bench_ticks, "policy": policy, "control_rate": base.control_rate, "points": points }))?;
    Ok((report, lines))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |v| format!("{v:.4}"))
}

/// Header summary of a dataset, checkpoint or JSON artifact.
pub fn inspect(path: &Path) -> Result<Value, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::user(format!("reading {}: {e}", path.display())))?;
    if bytes.starts_with(DATASET_MAGIC) {
        let headers = read_headers(&bytes).map_err(user)?;
        let frames: usize = headers.iter().map(|h| h.frame_count).sum();
        return Ok(json!({ "kind": "dataset", "episodes": headers.len(), "frames": frames, "headers": headers }));
    }
    if bytes.starts_with(CHECKPOINT_MAGIC) {
        let (params, header) = read_checkpoint(&mut bytes.as_slice()).map_err(user)?;
        return Ok(json!({ "kind": "checkpoint", "parameters": params.parameter_count(), "header": header }));
    }
    let v: Value = serde_json::from_slice(&bytes).map_err(|_| CliError::user(format!("{}: not a dataset, checkpoint or JSON file", path.display())))?;
    let keys: Vec<&String> = v.as_object().map(|o| o.keys().collect()).unwrap_or_default();
    Ok(json!({ "kind": "json", "schema_version": v.get("schema_version"), "command": v.get("command"), "keys": keys }))
}

/// Default output directory when `--out` is absent.
pub fn default_out() -> PathBuf {
    PathBuf::from("hvla-out")
}
