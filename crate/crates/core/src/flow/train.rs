//! Optimizer and training loops for the flow objective and next-token pretraining.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{encode_context_on, expert_forward, pretrain_logits, ExpertParams, Variant, ENCODER_PREFIX, EXPERT_PREFIX, PRETRAIN_PREFIX};
use super::tape::{Grads, Mat, ParamStore, Tape};
use super::{arc, normal_mat, FlowError, FlowSample};
use crate::actions::Observation;
use crate::rtc::{apply_rtc_mask, RtcTrainRule};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    /// First-moment decay; 0 disables momentum.
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip, skipped when `None`.
    pub grad_clip: Option<f64>,
    pub decay: LrDecay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrDecay {
    #[default]
    Constant,
    /// Half-cosine from `lr` to zero over the run.
    Cosine,
}

impl LrDecay {
    pub fn factor(self, step: usize, total: usize) -> f64 {
        match self {
            LrDecay::Constant => 1.0,
            LrDecay::Cosine => 0.5 * (1.0 + (std::f64::consts::PI * step as f64 / total.max(1) as f64).cos()),
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 2e-3, beta1: 0.0, beta2: 0.999, eps: 1e-8, grad_clip: Some(1.0), decay: LrDecay::Constant }
    }
}

/// Bias-corrected adaptive-moment optimizer.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<Option<Mat>>,
    v: Vec<Option<Mat>>,
    t: i32,
    /// Multiplies `config.lr`; set by the training loop's decay schedule.
    pub lr_scale: f64,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        Self { config, m: vec![None; store.len()], v: vec![None; store.len()], t: 0, lr_scale: 1.0 }
    }

    /// Applies one update to every parameter that has a gradient and passes `trainable`.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads, trainable: impl Fn(&str) -> bool) {
        self.t += 1;
        let c = &self.config;
        let lr = c.lr * self.lr_scale;
        let clip = match c.grad_clip {
            Some(max) => {
                let norm = grads.0.iter().flatten().map(|g| g.iter().map(|x| x * x).sum::<f64>()).sum::<f64>().sqrt();
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        let bc1 = 1.0 - c.beta1.powi(self.t);
        let bc2 = 1.0 - c.beta2.powi(self.t);
        for id in 0..store.len() {
            let Some(g) = grads.get(id) else { continue };
            if !trainable(store.name(id)) {
                continue;
            }
            let m = self.m[id].get_or_insert_with(|| Mat::zeros(g.raw_dim()));
            let v = self.v[id].get_or_insert_with(|| Mat::zeros(g.raw_dim()));
            let p = store.value_mut(id);
            ndarray::Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                let g = g * clip;
                *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + c.eps);
            });
        }
    }
}

/// A normalized action chunk with the observation it was recorded under.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowExample {
    pub obs: Observation,
    pub chunk: Mat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub horizon: usize,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    pub d_max: usize,
    pub exec_horizon: usize,
    pub include_zero_delay: bool,
    pub variant: Variant,
    pub freeze_encoder: bool,
    pub validation_size: usize,
    /// Record validation loss every this many steps (0: only at the ends).
    pub validate_every: usize,
    pub optimizer: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            horizon: 16,
            batch_size: 16,
            steps: 1500,
            seed: 0,
            d_max: 6,
            exec_horizon: 8,
            include_zero_delay: true,
            variant: Variant::Mmdit,
            freeze_encoder: false,
            validation_size: 64,
            validate_every: 0,
            optimizer: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn rtc_rule(&self) -> RtcTrainRule {
        RtcTrainRule {
            d_max: self.d_max,
            horizon: self.horizon,
            exec_horizon: self.exec_horizon,
            include_zero_delay: self.include_zero_delay,
        }
    }

    pub fn validate(&self) -> Result<(), FlowError> {
        self.rtc_rule().validate().map_err(|e| FlowError::Config(e.to_string()))?;
        if self.batch_size == 0 {
            return Err(FlowError::Config("batch_size must be positive".into()));
        }
        if !(self.optimizer.lr >= 0.0) {
            return Err(FlowError::Config("learning rate must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ExpertParams,
    pub loss_curve: Vec<f64>,
    /// `(step, loss)` on the fixed validation batch; first entry is step 0.
    pub validation_curve: Vec<(usize, f64)>,
}

impl TrainOutcome {
    pub fn initial_validation(&self) -> f64 {
        self.validation_curve.first().map(|v| v.1).unwrap_or(f64::NAN)
    }

    pub fn final_validation(&self) -> f64 {
        self.validation_curve.last().map(|v| v.1).unwrap_or(f64::NAN)
    }
}

/// Flow loss over a batch (sum of squared errors over all unmasked entries divided
/// by their count) together with its exact gradient.
pub fn fm_batch_loss(params: &ExpertParams, batch: &[(Observation, FlowSample)]) -> Result<(f64, Grads), FlowError> {
    let config = &params.config;
    let mut t = Tape::new(&params.store);
    let mut total = None;
    let mut count = 0usize;
    for (obs, sample) in batch {
        super::model::check_expert_shapes(config, &Mat::zeros((config.vl_tokens, config.width)), &sample.a_tau)?;
        let z = encode_context_on(&mut t, config, obs)?;
        let a_tau = t.leaf(sample.a_tau.clone());
        let pred = expert_forward(&mut t, config, z, a_tau, sample.tau, None);
        let sse = t.masked_sse(pred, arc(sample.target()), &sample.mask);
        count += sample.mask.iter().filter(|m| !**m).count() * config.action_dim;
        total = Some(match total {
            None => sse,
            Some(acc) => t.add(acc, sse),
        });
    }
    let Some(total) = total else { return Err(FlowError::EmptyLossSupport) };
    if count == 0 {
        return Err(FlowError::EmptyLossSupport);
    }
    let loss = t.scale(total, 1.0 / count as f64);
    let value = t.scalar(loss);
    Ok((value, t.backward(loss)))
}

fn draw_sample(chunk: &Mat, rule: &RtcTrainRule, rng: &mut ChaCha8Rng, masked: bool) -> Result<FlowSample, FlowError> {
    let tau: f64 = rng.random_range(0.0..1.0);
    let eps = normal_mat(chunk.nrows(), chunk.ncols(), rng);
    let sample = FlowSample::new(chunk.clone(), eps, tau)?;
    if !masked {
        return Ok(sample);
    }
    let d = rule.sample(rng);
    apply_rtc_mask(sample, d).map_err(|e| FlowError::Config(e.to_string()))
}

fn validation_loss(params: &ExpertParams, batch: &[(Observation, FlowSample)]) -> Result<f64, FlowError> {
    if batch.is_empty() {
        return Ok(f64::NAN);
    }
    let mut sum = 0.0;
    for item in batch {
        sum += fm_batch_loss(params, std::slice::from_ref(item))?.0;
    }
    Ok(sum / batch.len() as f64)
}

fn posttrain_trainable(freeze_encoder: bool) -> impl Fn(&str) -> bool {
    move |name: &str| name.starts_with(EXPERT_PREFIX) || (!freeze_encoder && name.starts_with(ENCODER_PREFIX))
}

/// Trains the flow expert. Each step draws a batch with replacement, a uniform
/// flow time and fresh noise per example, and a delay mask from the RTC rule.
/// Validation uses a fixed, unmasked batch drawn once from `val`.
pub fn train(
    mut params: ExpertParams,
    config: &TrainConfig,
    data: &[FlowExample],
    val: &[FlowExample],
) -> Result<TrainOutcome, FlowError> {
    config.validate()?;
    if params.config.horizon != config.horizon {
        return Err(FlowError::Config(format!(
            "model horizon {} differs from training horizon {}",
            params.config.horizon, config.horizon
        )));
    }
    if params.config.variant != config.variant {
        return Err(FlowError::Config("model variant differs from training variant".into()));
    }
    if data.is_empty() {
        return Err(FlowError::Config("empty training set".into()));
    }
    let rule = config.rtc_rule();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut val_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5a5a_5a5a_5a5a_5a5a);
    let val_batch: Vec<(Observation, FlowSample)> = if val.is_empty() {
        Vec::new()
    } else {
        (0..config.validation_size)
            .map(|i| {
                let ex = &val[i % val.len()];
                Ok((ex.obs.clone(), draw_sample(&ex.chunk, &rule, &mut val_rng, false)?))
            })
            .collect::<Result<_, FlowError>>()?
    };

    let mut adam = Adam::new(config.optimizer.clone(), &params.store);
    let trainable = posttrain_trainable(config.freeze_encoder);
    let mut loss_curve = Vec::with_capacity(config.steps);
    let mut validation_curve = vec![(0, validation_loss(&params, &val_batch)?)];
    for step in 0..config.steps {
        let batch: Vec<(Observation, FlowSample)> = (0..config.batch_size)
            .map(|_| {
                let ex = data.choose(&mut rng).expect("non-empty data");
                Ok((ex.obs.clone(), draw_sample(&ex.chunk, &rule, &mut rng, true)?))
            })
            .collect::<Result<_, FlowError>>()?;
        let (loss, grads) = fm_batch_loss(&params, &batch)?;
        if !loss.is_finite() {
            return Err(FlowError::NonFiniteLoss { step, loss });
        }
        loss_curve.push(loss);
        adam.lr_scale = config.optimizer.decay.factor(step, config.steps);
        adam.step(&mut params.store, &grads, &trainable);
        let done = step + 1;
        if config.validate_every > 0 && done % config.validate_every == 0 && done != config.steps {
            validation_curve.push((done, validation_loss(&params, &val_batch)?));
        }
    }
    if config.steps > 0 {
        validation_curve.push((config.steps, validation_loss(&params, &val_batch)?));
    }
    Ok(TrainOutcome { params, loss_curve, validation_curve })
}

/// A token sequence with the observation it was produced under.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainExample {
    pub obs: Observation,
    pub tokens: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    pub optimizer: AdamConfig,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self { batch_size: 16, steps: 300, seed: 0, optimizer: AdamConfig::default() }
    }
}

/// Token-weighted mean next-token cross-entropy and its gradient.
pub fn pretrain_batch_loss(params: &ExpertParams, batch: &[&PretrainExample]) -> Result<(f64, Grads), FlowError> {
    let config = &params.config;
    let mut t = Tape::new(&params.store);
    let mut total = None;
    let mut count = 0usize;
    for ex in batch {
        let z = encode_context_on(&mut t, config, &ex.obs)?;
        let logits = pretrain_logits(&mut t, config, z, &ex.tokens)?;
        let targets: Vec<usize> = ex.tokens.iter().map(|&x| x as usize).collect();
        let ce = t.cross_entropy(logits, &targets);
        let weighted = t.scale(ce, ex.tokens.len() as f64);
        count += ex.tokens.len();
        total = Some(match total {
            None => weighted,
            Some(acc) => t.add(acc, weighted),
        });
    }
    let Some(total) = total else { return Err(FlowError::EmptySequence) };
    let loss = t.scale(total, 1.0 / count as f64);
    let value = t.scalar(loss);
    Ok((value, t.backward(loss)))
}

/// Trains the context encoder and the next-token head.
pub fn pretrain(
    mut params: ExpertParams,
    config: &PretrainConfig,
    data: &[PretrainExample],
) -> Result<(ExpertParams, Vec<f64>), FlowError> {
    if data.is_empty() {
        return Err(FlowError::Config("empty pretraining set".into()));
    }
    if config.batch_size == 0 {
        return Err(FlowError::Config("batch_size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(config.optimizer.clone(), &params.store);
    let trainable = |name: &str| name.starts_with(PRETRAIN_PREFIX) || name.starts_with(ENCODER_PREFIX);
    let mut curve = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let batch: Vec<&PretrainExample> = (0..config.batch_size).map(|_| data.choose(&mut rng).expect("non-empty")).collect();
        let (loss, grads) = pretrain_batch_loss(&params, &batch)?;
        if !loss.is_finite() {
            return Err(FlowError::NonFiniteLoss { step, loss });
        }
        curve.push(loss);
        adam.lr_scale = config.optimizer.decay.factor(step, config.steps);
        adam.step(&mut params.store, &grads, trainable);
    }
    Ok((params, curve))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actions::ProprioState;
    use crate::flow::{pretrain_next_token_loss, ExpertConfig, PretrainHeadConfig};

    fn small_config() -> ExpertConfig {
        ExpertConfig {
            width: 16,
            heads: 2,
            blocks: 2,
            vl_tokens: 2,
            horizon: 8,
            context_dim: 4,
            num_tasks: 2,
            pretrain: PretrainHeadConfig { vocab: 3, blocks: 1, max_tokens: 6 },
            ..Default::default()
        }
    }

    fn obs(task: u32, context: [f64; 4]) -> Observation {
        Observation { proprio: ProprioState::default(), context: context.to_vec(), task_id: task }
    }

    /// Chunks that are a deterministic function of the context.
    fn toy_data(n: usize, seed: u64) -> Vec<FlowExample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let c: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
                let chunk = Mat::from_shape_fn((8, 36), |(r, j)| {
                    let phase = r as f64 / 8.0 + j as f64 * 0.1;
                    0.5 * (c[0] * (phase * 3.0).sin() + c[1] * (phase * 2.0).cos())
                });
                FlowExample { obs: obs(0, c), chunk }
            })
            .collect()
    }

    fn train_config(steps: usize) -> TrainConfig {
        TrainConfig { horizon: 8, d_max: 3, exec_horizon: 4, batch_size: 8, steps, validation_size: 16, ..Default::default() }
    }

    #[test]
    fn zero_learning_rate_keeps_params() {
        let params = ExpertParams::init(small_config(), 1).unwrap();
        let mut config = train_config(5);
        config.optimizer.lr = 0.0;
        let data = toy_data(10, 2);
        let out = train(params.clone(), &config, &data, &data).unwrap();
        assert_eq!(out.params, params);
        assert_eq!(out.loss_curve.len(), 5);
    }

    #[test]
    fn initial_loss_equals_noise_minus_data_energy() {
        let params = ExpertParams::init(small_config(), 1).unwrap();
        let data = toy_data(4, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rule = train_config(1).rtc_rule();
        let batch: Vec<(Observation, FlowSample)> =
            data.iter().map(|ex| (ex.obs.clone(), draw_sample(&ex.chunk, &rule, &mut rng, false).unwrap())).collect();
        let (loss, _) = fm_batch_loss(&params, &batch).unwrap();
        let expected = batch.iter().map(|(_, s)| s.target().iter().map(|v| v * v).sum::<f64>()).sum::<f64>() / (4.0 * 8.0 * 36.0);
        assert!((loss - expected).abs() < 1e-12);
    }

    #[test]
    fn same_seed_same_curve() {
        let data = toy_data(10, 2);
        let run = || train(ExpertParams::init(small_config(), 1).unwrap(), &train_config(6), &data, &data).unwrap();
        let (a, b) = (run(), run());
        assert_eq!(a.loss_curve, b.loss_curve);
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn training_halves_validation_loss() {
        let data = toy_data(64, 5);
        let val = toy_data(16, 6);
        // the width must exceed the 36 action channels or the noise cannot pass through a token
        let config = ExpertConfig { width: 48, heads: 4, ..small_config() };
        let out = train(ExpertParams::init(config, 1).unwrap(), &train_config(200), &data, &val).unwrap();
        assert!(out.final_validation() <= 0.5 * out.initial_validation(), "{:?}", out.validation_curve);
    }

    #[test]
    fn frozen_encoder_is_untouched() {
        let params = ExpertParams::init(small_config(), 1).unwrap();
        let config = TrainConfig { freeze_encoder: true, ..train_config(3) };
        let data = toy_data(8, 2);
        let out = train(params.clone(), &config, &data, &[]).unwrap();
        for (name, value) in params.store.iter() {
            let after = out.params.store.get(name).unwrap();
            if name.starts_with(ENCODER_PREFIX) || name.starts_with(PRETRAIN_PREFIX) {
                assert_eq!(value, after, "{name}");
            }
        }
        assert_ne!(params.store.get("expert.final.out.w"), out.params.store.get("expert.final.out.w"));
    }

    #[test]
    fn config_mismatches_are_errors() {
        let params = ExpertParams::init(small_config(), 1).unwrap();
        let data = toy_data(2, 2);
        assert!(train(params.clone(), &TrainConfig { horizon: 16, d_max: 3, ..train_config(1) }, &data, &[]).is_err());
        assert!(train(params.clone(), &TrainConfig { variant: Variant::NaiveDit, ..train_config(1) }, &data, &[]).is_err());
        assert!(train(params, &TrainConfig { d_max: 8, ..train_config(1) }, &data, &[]).is_err());
    }

    #[test]
    fn divergent_lr_aborts() {
        let params = ExpertParams::init(small_config(), 1).unwrap();
        let mut config = train_config(50);
        config.optimizer = AdamConfig { lr: 1e300, grad_clip: None, ..Default::default() };
        let data = toy_data(8, 2);
        assert!(matches!(train(params, &config, &data, &[]), Err(FlowError::NonFiniteLoss { .. })));
    }

    /// Exact expected loss under a 3-symbol Markov grammar, by enumeration.
    fn grammar() -> ([f64; 3], [[f64; 3]; 3]) {
        ([0.5, 0.3, 0.2], [[0.1, 0.6, 0.3], [0.5, 0.2, 0.3], [0.3, 0.3, 0.4]])
    }

    fn enumerate(len: usize) -> Vec<(Vec<u32>, f64)> {
        let (init, trans) = grammar();
        let mut out = vec![(Vec::new(), 1.0)];
        for i in 0..len {
            out = out
                .into_iter()
                .flat_map(|(seq, p): (Vec<u32>, f64)| {
                    (0..3u32).map(move |s| {
                        let q = if i == 0 { init[s as usize] } else { trans[*seq.last().unwrap() as usize][s as usize] };
                        let mut next = seq.clone();
                        next.push(s);
                        (next, p * q)
                    })
                })
                .collect();
        }
        out
    }

    #[test]
    fn pretraining_reaches_grammar_entropy() {
        let len = 6;
        let all = enumerate(len);
        let entropy = -all.iter().map(|(_, p)| p * p.ln()).sum::<f64>() / len as f64;
        assert!((all.iter().map(|(_, p)| p).sum::<f64>() - 1.0).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let data: Vec<PretrainExample> = (0..1000)
            .map(|_| {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let seq = all.iter().find(|(_, p)| {
                    acc += p;
                    acc >= u
                });
                let tokens = seq.unwrap_or(all.last().unwrap()).0.clone();
                PretrainExample { obs: obs(0, [0.0; 4]), tokens }
            })
            .collect();
        let params = ExpertParams::init(small_config(), 3).unwrap();
        let config = PretrainConfig { batch_size: 16, steps: 400, seed: 1, optimizer: AdamConfig { lr: 3e-3, ..Default::default() } };
        let (trained, curve) = pretrain(params, &config, &data).unwrap();
        assert!((curve[0] - 3f64.ln()).abs() < 1e-9);

        let z = trained.encode_context(&obs(0, [0.0; 4])).unwrap();
        let expected: f64 = all.iter().map(|(seq, p)| p * pretrain_next_token_loss(&trained, &z, seq).unwrap()).sum();
        assert!((expected - entropy).abs() / entropy < 0.05, "model {expected} vs entropy {entropy}");
    }
}
