use std::path::{Path, PathBuf};
use std::str::FromStr;

use hvla_core::fasttok::TokenizerConfig;
use hvla_core::flow::{ExpertConfig, LrDecay, PretrainConfig, TrainConfig};
use hvla_core::plant::{builtin_tasks, TaskSpec};
use hvla_core::rtc::SchedulerConfig;
use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Drives demo generation and model init, and offsets every stage seed.
    pub seed: u64,
    pub actioncore: ActioncoreSection,
    pub fasttok: FasttokSection,
    pub flowexpert: FlowexpertSection,
    pub rtcsched: RtcschedSection,
    pub simplant: SimplantSection,
    pub paths: PathsSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormSource {
    /// Every generated episode.
    Corpus,
    /// Only the finetuning task's episodes.
    FinetuneTask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActioncoreSection {
    pub norm_source: NormSource,
    /// Frame-rate factor applied to generated episodes, as `"p/q"`.
    pub resample_factor: String,
}

impl Default for ActioncoreSection {
    fn default() -> Self {
        Self { norm_source: NormSource::Corpus, resample_factor: "1".into() }
    }
}

impl ActioncoreSection {
    pub fn factor(&self) -> Result<Ratio<i64>, CliError> {
        let r = Ratio::<i64>::from_str(self.resample_factor.trim())
            .map_err(|_| CliError::user(format!("actioncore.resample_factor: cannot parse {:?}", self.resample_factor)))?;
        if *r.numer() <= 0 || *r.denom() <= 0 {
            return Err(CliError::user("actioncore.resample_factor must be positive"));
        }
        Ok(r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FasttokSection {
    pub scale: u32,
    pub vocab_size: usize,
    pub action_horizon: usize,
    /// Frames sampled (evenly) from the task-space corpus to fit the merges.
    pub fit_frames: usize,
}

impl Default for FasttokSection {
    fn default() -> Self {
        let t = TokenizerConfig::default();
        Self { scale: t.scale, vocab_size: t.vocab_size, action_horizon: t.action_horizon, fit_frames: 1500 }
    }
}

impl FasttokSection {
    pub fn tokenizer(&self) -> TokenizerConfig {
        TokenizerConfig { scale: self.scale, vocab_size: self.vocab_size, action_horizon: self.action_horizon, ..Default::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PretrainSource {
    /// Tokenized task-space actions of the generated demos.
    TaskSpace,
    /// Sequences from the three-symbol Markov grammar.
    Grammar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrammarSection {
    pub sequences: usize,
    pub length: usize,
}

impl Default for GrammarSection {
    fn default() -> Self {
        Self { sequences: 1000, length: 6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowexpertSection {
    pub model: ExpertConfig,
    pub pretrain_source: PretrainSource,
    pub grammar: GrammarSection,
    pub pretrain: PretrainConfig,
    pub posttrain: TrainConfig,
    pub finetune: TrainConfig,
    /// Fraction of episodes held out for validation during post-training.
    pub validation_fraction: f64,
    /// Euler steps when sampling chunks.
    pub sample_steps: usize,
}

impl Default for FlowexpertSection {
    fn default() -> Self {
        let model = ExpertConfig { width: 48, heads: 4, blocks: 2, vl_tokens: 4, horizon: 16, ..Default::default() };
        let mut pretrain = PretrainConfig { steps: 300, ..Default::default() };
        pretrain.optimizer.lr = 2e-3;
        let mut posttrain =
            TrainConfig { horizon: 16, steps: 600, batch_size: 16, freeze_encoder: true, validate_every: 100, ..Default::default() };
        posttrain.optimizer.lr = 2e-3;
        posttrain.optimizer.beta1 = 0.0;
        posttrain.optimizer.decay = LrDecay::Cosine;
        let finetune = TrainConfig { steps: 3000, seed: 1, ..posttrain.clone() };
        Self {
            model,
            pretrain_source: PretrainSource::TaskSpace,
            grammar: GrammarSection::default(),
            pretrain,
            posttrain,
            finetune,
            validation_fraction: 0.1,
            sample_steps: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchPolicy {
    /// Seeded random-walk chunks; needs no checkpoint.
    RandomWalk,
    /// The finetuned expert (requires the finetune checkpoint).
    Expert,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub latencies_ms: Vec<f64>,
    pub s_min: Vec<usize>,
    pub horizons: Vec<usize>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self { latencies_ms: vec![100.0, 160.0, 266.0, 400.0], s_min: vec![8], horizons: vec![16] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RtcschedSection {
    pub scheduler: SchedulerConfig,
    pub sweep: SweepSection,
    pub bench_ticks: usize,
    pub bench_policy: BenchPolicy,
}

impl Default for RtcschedSection {
    fn default() -> Self {
        Self { scheduler: SchedulerConfig::default(), sweep: SweepSection::default(), bench_ticks: 1000, bench_policy: BenchPolicy::RandomWalk }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub trials: usize,
    pub seed: u64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { trials: 10, seed: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimplantSection {
    /// Ids of built-in tasks in the corpus.
    pub tasks: Vec<u32>,
    pub demos_per_task: usize,
    pub finetune_task: u32,
    pub eval: EvalSection,
}

impl Default for SimplantSection {
    fn default() -> Self {
        Self { tasks: builtin_tasks().iter().map(|t| t.task_id).collect(), demos_per_task: 80, finetune_task: 0, eval: EvalSection::default() }
    }
}

impl SimplantSection {
    pub fn task(&self, id: u32) -> Result<TaskSpec, CliError> {
        builtin_tasks().into_iter().find(|t| t.task_id == id).ok_or_else(|| CliError::user(format!("unknown task id {id}")))
    }
}

/// Directories relative to the output directory (absolute paths are used as is).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub datasets: PathBuf,
    pub checkpoints: PathBuf,
    pub reports: PathBuf,
}

impl Default for PathsSection {
    fn default() -> Self {
        Self { datasets: "datasets".into(), checkpoints: "checkpoints".into(), reports: "reports".into() }
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            actioncore: ActioncoreSection::default(),
            fasttok: FasttokSection::default(),
            flowexpert: FlowexpertSection::default(),
            rtcsched: RtcschedSection::default(),
            simplant: SimplantSection::default(),
            paths: PathsSection::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::user(format!("reading config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::user(format!("config {}: {e}", path.display())))
    }

    /// Applies `section.key[.sub]=value` overrides. Values parse as JSON and
    /// fall back to a plain string.
    pub fn with_overrides(self, overrides: &[String]) -> Result<Self, CliError> {
        if overrides.is_empty() {
            return Ok(self);
        }
        let mut doc = serde_json::to_value(&self).map_err(CliError::internal)?;
        for item in overrides {
            let (key, raw) = item.split_once('=').ok_or_else(|| CliError::user(format!("--set {item:?}: expected key=value")))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            let mut slot = &mut doc;
            for part in key.split('.') {
                slot = slot
                    .as_object_mut()
                    .and_then(|m| m.get_mut(part))
                    .ok_or_else(|| CliError::user(format!("--set {key}: no such config key")))?;
            }
            *slot = value;
        }
        serde_json::from_value(doc).map_err(|e| CliError::user(format!("config override: {e}")))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let f = &self.flowexpert;
        let h = f.model.horizon;
        for (name, got) in [
            ("flowexpert.posttrain.horizon", f.posttrain.horizon),
            ("flowexpert.finetune.horizon", f.finetune.horizon),
            ("rtcsched.scheduler.horizon", self.rtcsched.scheduler.horizon),
        ] {
            if got != h {
                return Err(CliError::user(format!("{name} = {got} but flowexpert.model.horizon = {h}")));
            }
        }
        f.model.validate().map_err(|e| CliError::user(format!("flowexpert.model: {e}")))?;
        f.posttrain.validate().map_err(|e| CliError::user(format!("flowexpert.posttrain: {e}")))?;
        f.finetune.validate().map_err(|e| CliError::user(format!("flowexpert.finetune: {e}")))?;
        if f.pretrain.batch_size == 0 {
            return Err(CliError::user("flowexpert.pretrain.batch_size must be positive"));
        }
        if !(f.validation_fraction > 0.0 && f.validation_fraction < 1.0) {
            return Err(CliError::user("flowexpert.validation_fraction must lie in (0, 1)"));
        }
        if f.sample_steps == 0 {
            return Err(CliError::user("flowexpert.sample_steps must be positive"));
        }
        if f.grammar.sequences == 0 || f.grammar.length < 2 {
            return Err(CliError::user("flowexpert.grammar needs at least one sequence of length 2"));
        }
        self.fasttok.tokenizer().validate().map_err(|e| CliError::user(format!("fasttok: {e}")))?;
        if self.fasttok.fit_frames == 0 {
            return Err(CliError::user("fasttok.fit_frames must be positive"));
        }
        self.actioncore.factor()?;
        self.rtcsched.scheduler.validate().map_err(|e| CliError::user(format!("rtcsched.scheduler: {e}")))?;
        let sw = &self.rtcsched.sweep;
        if sw.latencies_ms.is_empty() || sw.s_min.is_empty() || sw.horizons.is_empty() {
            return Err(CliError::user("rtcsched.sweep lists must be non-empty"));
        }
        let s = &self.simplant;
        if s.tasks.is_empty() {
            return Err(CliError::user("simplant.tasks must be non-empty"));
        }
        for id in &s.tasks {
            s.task(*id)?;
        }
        if !s.tasks.contains(&s.finetune_task) {
            return Err(CliError::user(format!("simplant.finetune_task {} is not in simplant.tasks", s.finetune_task)));
        }
        if s.demos_per_task == 0 || s.eval.trials == 0 {
            return Err(CliError::user("simplant.demos_per_task and simplant.eval.trials must be positive"));
        }
        for (name, p) in [("datasets", &self.paths.datasets), ("checkpoints", &self.paths.checkpoints), ("reports", &self.paths.reports)] {
            if p.as_os_str().is_empty() {
                return Err(CliError::user(format!("paths.{name} is empty")));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let v = serde_json::to_value(self).expect("config serializes");
        hex::encode(Sha256::digest(v.to_string().as_bytes()))
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = PipelineConfig::default();
        c.validate().unwrap();
        let back: PipelineConfig = serde_json::from_str(&c.to_json_pretty()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn overrides_reach_nested_keys() {
        let c = PipelineConfig::default()
            .with_overrides(&["flowexpert.finetune.steps=7".into(), "actioncore.norm_source=finetune_task".into(), "seed=3".into()])
            .unwrap();
        assert_eq!(c.flowexpert.finetune.steps, 7);
        assert_eq!(c.actioncore.norm_source, NormSource::FinetuneTask);
        assert_eq!(c.seed, 3);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_user_errors() {
        for bad in ["flowexpert.nope=1", "seed", "seed=-1", "simplant.tasks=[9]"] {
            let r = PipelineConfig::default().with_overrides(&[bad.into()]).and_then(|c| c.validate());
            assert_eq!(r.unwrap_err().exit_code(), 1, "{bad}");
        }
    }

    #[test]
    fn horizon_mismatch_is_rejected() {
        let c = PipelineConfig::default().with_overrides(&["rtcsched.scheduler.horizon=12".into()]).unwrap();
        let msg = c.validate().unwrap_err().to_string();
        assert!(msg.contains("rtcsched.scheduler.horizon"), "{msg}");
    }

    #[test]
    fn resample_factor_parses_ratios() {
        let mut a = ActioncoreSection::default();
        assert_eq!(a.factor().unwrap(), Ratio::from_integer(1));
        a.resample_factor = "3/2".into();
        assert_eq!(a.factor().unwrap(), Ratio::new(3, 2));
        a.resample_factor = "0".into();
        assert!(a.factor().is_err());
    }
}
