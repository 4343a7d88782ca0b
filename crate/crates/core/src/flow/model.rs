//! Action expert network.
//!
//! ```text
//! obs ──encoder──> VL tokens (K x D) ─┐
//! a_tau (H x 36) ──embed──> A tokens ─┼─> blocks: per-stream adaLN modulation from tau,
//! tau ──sinusoid──> MLP ──> c ────────┘   joint attention over [VL ‖ A], per-stream MLP
//!                                         ──> final adaLN ──> linear ──> velocity (H x 36)
//! ```
//!
//! In the MM-DiT variant both streams get their own shift/scale/gate sets. The
//! single-stream ("naive") variant only modulates the action stream; its VL
//! stream runs plain pre-norm residual updates. Both share the same joint
//! attention topology, and the naive variant widens its action MLP so the
//! parameter counts match.
//!
//! The last block only updates the action stream: VL outputs are never read
//! after it.

use std::f64::consts::LN_2;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Mat, ParamStore, Tape, Var};
use super::FlowError;
use crate::actions::{layout, Observation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Mmdit,
    NaiveDit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExpertConfig {
    pub width: usize,
    pub heads: usize,
    pub blocks: usize,
    pub vl_tokens: usize,
    pub horizon: usize,
    pub action_dim: usize,
    pub context_dim: usize,
    pub proprio_dim: usize,
    pub num_tasks: usize,
    pub mlp_ratio: usize,
    pub variant: Variant,
    /// Learned positional embedding on the VL tokens.
    pub vl_positional: bool,
    pub pretrain: PretrainHeadConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainHeadConfig {
    pub vocab: usize,
    pub blocks: usize,
    pub max_tokens: usize,
}

impl Default for PretrainHeadConfig {
    fn default() -> Self {
        Self { vocab: 2048, blocks: 2, max_tokens: 48 }
    }
}

impl Default for ExpertConfig {
    fn default() -> Self {
        Self {
            width: 64,
            heads: 4,
            blocks: 4,
            vl_tokens: 8,
            horizon: 16,
            action_dim: layout::JOINT_DIM,
            context_dim: 32,
            proprio_dim: layout::STATE_DIM,
            num_tasks: 8,
            mlp_ratio: 4,
            variant: Variant::Mmdit,
            vl_positional: true,
            pretrain: PretrainHeadConfig::default(),
        }
    }
}

impl ExpertConfig {
    pub fn validate(&self) -> Result<(), FlowError> {
        let bad = |m: &str| Err(FlowError::Config(m.to_string()));
        if self.width == 0 || self.heads == 0 || self.width % self.heads != 0 {
            return bad("width must be a positive multiple of heads");
        }
        if self.width % 2 != 0 {
            return bad("width must be even for the sinusoidal time embedding");
        }
        if self.blocks == 0 || self.vl_tokens == 0 || self.horizon == 0 || self.action_dim == 0 {
            return bad("blocks, vl_tokens, horizon and action_dim must be positive");
        }
        if self.num_tasks == 0 {
            return bad("num_tasks must be positive");
        }
        Ok(())
    }

    fn mlp_hidden(&self) -> usize {
        self.mlp_ratio * self.width
    }

    /// Action-stream MLP width of `block`; the naive variant absorbs the
    /// parameters of the VL modulation it does not have in that block.
    pub fn action_mlp_hidden(&self, block: usize) -> usize {
        match self.variant {
            Variant::Mmdit => self.mlp_hidden(),
            Variant::NaiveDit => {
                let d = self.width;
                let sets = if block + 1 == self.blocks { 2 } else { 6 };
                let vl_mod = d * sets * d + sets * d;
                let per_unit = 2 * d + 1;
                self.mlp_hidden() + (vl_mod + per_unit / 2) / per_unit
            }
        }
    }
}

/// Every trainable weight: context encoder, action expert and pretraining head.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertParams {
    pub config: ExpertConfig,
    pub store: ParamStore,
}

/// Parameter-name prefixes of the three sub-networks.
pub const ENCODER_PREFIX: &str = "encoder.";
pub const EXPERT_PREFIX: &str = "expert.";
pub const PRETRAIN_PREFIX: &str = "pretrain.";

#[derive(Clone, Copy)]
enum Init {
    /// adaLN-zero: modulation and output heads start at zero.
    Zero,
    /// Every tensor random; used for gradient checks.
    Random,
}

fn linear(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, zero: bool, rng: &mut ChaCha8Rng) {
    if zero {
        store.zeros(format!("{name}.w"), fan_in, fan_out);
        store.zeros(format!("{name}.b"), 1, fan_out);
    } else {
        store.normal(format!("{name}.w"), fan_in, fan_out, 1.0 / (fan_in as f64).sqrt(), rng);
        store.normal(format!("{name}.b"), 1, fan_out, 0.02, rng);
    }
}

impl ExpertParams {
    /// Standard initialization: modulation weights and output projections are zero,
    /// so every residual block is the identity and the velocity head outputs 0.
    pub fn init(config: ExpertConfig, seed: u64) -> Result<Self, FlowError> {
        Self::build(config, seed, Init::Zero)
    }

    /// All tensors random, including gates and heads.
    pub fn init_random(config: ExpertConfig, seed: u64) -> Result<Self, FlowError> {
        Self::build(config, seed, Init::Random)
    }

    fn build(config: ExpertConfig, seed: u64, init: Init) -> Result<Self, FlowError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let zero = matches!(init, Init::Zero);
        let d = config.width;
        let k = config.vl_tokens;
        let hidden = config.mlp_hidden();

        // context encoder
        linear(&mut s, "encoder.in", config.context_dim + config.proprio_dim, k * d, false, &mut rng);
        s.normal("encoder.task", config.num_tasks, k * d, 0.5, &mut rng);

        // expert embeddings
        linear(&mut s, "expert.vl_in", d, d, false, &mut rng);
        if config.vl_positional {
            s.normal("expert.vl_pos", k, d, 0.1, &mut rng);
        }
        linear(&mut s, "expert.a_in", config.action_dim, d, false, &mut rng);
        s.normal("expert.a_pos", config.horizon, d, 0.1, &mut rng);
        linear(&mut s, "expert.t1", d, d, false, &mut rng);
        linear(&mut s, "expert.t2", d, d, false, &mut rng);

        for b in 0..config.blocks {
            let last = b + 1 == config.blocks;
            let p = format!("expert.block{b}");
            linear(&mut s, &format!("{p}.a.mod"), d, 6 * d, zero, &mut rng);
            linear(&mut s, &format!("{p}.a.qkv"), d, 3 * d, false, &mut rng);
            linear(&mut s, &format!("{p}.a.out"), d, d, false, &mut rng);
            linear(&mut s, &format!("{p}.a.mlp1"), d, config.action_mlp_hidden(b), false, &mut rng);
            linear(&mut s, &format!("{p}.a.mlp2"), config.action_mlp_hidden(b), d, false, &mut rng);
            if config.variant == Variant::Mmdit {
                let width = if last { 2 * d } else { 6 * d };
                linear(&mut s, &format!("{p}.vl.mod"), d, width, zero, &mut rng);
            }
            linear(&mut s, &format!("{p}.vl.qkv"), d, 3 * d, false, &mut rng);
            if !last {
                linear(&mut s, &format!("{p}.vl.out"), d, d, false, &mut rng);
                linear(&mut s, &format!("{p}.vl.mlp1"), d, hidden, false, &mut rng);
                linear(&mut s, &format!("{p}.vl.mlp2"), hidden, d, false, &mut rng);
            }
        }
        linear(&mut s, "expert.final.mod", d, 2 * d, zero, &mut rng);
        linear(&mut s, "expert.final.out", d, config.action_dim, zero, &mut rng);

        // next-token head
        let pc = &config.pretrain;
        if pc.blocks > 0 {
            linear(&mut s, "pretrain.vl_in", d, d, false, &mut rng);
            s.normal("pretrain.tok", pc.vocab + 1, d, 0.5, &mut rng);
            s.normal("pretrain.pos", pc.max_tokens, d, 0.1, &mut rng);
            for b in 0..pc.blocks {
                let p = format!("pretrain.block{b}");
                linear(&mut s, &format!("{p}.qkv"), d, 3 * d, false, &mut rng);
                linear(&mut s, &format!("{p}.out"), d, d, false, &mut rng);
                linear(&mut s, &format!("{p}.mlp1"), d, hidden, false, &mut rng);
                linear(&mut s, &format!("{p}.mlp2"), hidden, d, false, &mut rng);
            }
            linear(&mut s, "pretrain.head", d, pc.vocab, zero, &mut rng);
        }
        Ok(Self { config, store: s })
    }

    pub fn parameter_count(&self) -> usize {
        self.store.scalar_count()
    }

    /// Parameters of the action expert proper (excludes encoder and pretraining head).
    pub fn expert_parameter_count(&self) -> usize {
        self.store.count_with_prefix(EXPERT_PREFIX)
    }

    /// Maps an observation to `K x D` VL tokens.
    pub fn encode_context(&self, obs: &Observation) -> Result<Mat, FlowError> {
        let mut t = Tape::new(&self.store);
        let z = encode_context_on(&mut t, &self.config, obs)?;
        Ok(t.value(z).clone())
    }

    /// Predicted velocity for a noised chunk.
    pub fn forward_expert(&self, z: &Mat, a_tau: &Mat, tau: f64) -> Result<Mat, FlowError> {
        check_expert_shapes(&self.config, z, a_tau)?;
        let mut t = Tape::new(&self.store);
        let zv = t.leaf(z.clone());
        let av = t.leaf(a_tau.clone());
        let out = expert_forward(&mut t, &self.config, zv, av, tau, None);
        Ok(t.value(out).clone())
    }

    /// Attention distributions of every block and head, each `(K + H) x (K + H)`.
    pub fn attention_maps(&self, z: &Mat, a_tau: &Mat, tau: f64) -> Result<Vec<Mat>, FlowError> {
        check_expert_shapes(&self.config, z, a_tau)?;
        let mut t = Tape::new(&self.store);
        let zv = t.leaf(z.clone());
        let av = t.leaf(a_tau.clone());
        let mut maps = Vec::new();
        expert_forward(&mut t, &self.config, zv, av, tau, Some(&mut maps));
        Ok(maps.into_iter().map(|v| t.value(v).clone()).collect())
    }
}

pub(crate) fn check_expert_shapes(config: &ExpertConfig, z: &Mat, a_tau: &Mat) -> Result<(), FlowError> {
    if z.dim() != (config.vl_tokens, config.width) {
        return Err(FlowError::Shape(format!(
            "VL tokens are {:?}, expected ({}, {})",
            z.dim(),
            config.vl_tokens,
            config.width
        )));
    }
    if a_tau.dim() != (config.horizon, config.action_dim) {
        return Err(FlowError::Shape(format!(
            "action chunk is {:?}, expected ({}, {})",
            a_tau.dim(),
            config.horizon,
            config.action_dim
        )));
    }
    Ok(())
}

fn dense(t: &mut Tape, x: Var, name: &str) -> Var {
    let w = t.p(&format!("{name}.w"));
    let b = t.p(&format!("{name}.b"));
    let h = t.matmul(x, w);
    t.add_row(h, b)
}

fn modulate(t: &mut Tape, x: Var, shift: Var, scale: Var) -> Var {
    let n = t.layer_norm(x);
    let s1 = t.add_scalar(scale, 1.0);
    let h = t.mul_row(n, s1);
    t.add_row(h, shift)
}

fn mlp(t: &mut Tape, x: Var, name: &str) -> Var {
    let h = dense(t, x, &format!("{name}.mlp1"));
    let h = t.gelu(h);
    dense(t, h, &format!("{name}.mlp2"))
}

/// Multi-head attention over pre-projected `q, k, v` (`N x D` each).
pub(crate) fn attention(
    t: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
    mask: Option<&Array2<bool>>,
    maps: &mut Option<&mut Vec<Var>>,
) -> Var {
    let d = t.value(q).ncols();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = t.slice_cols(q, h * dh, (h + 1) * dh);
        let kh = t.slice_cols(k, h * dh, (h + 1) * dh);
        let vh = t.slice_cols(v, h * dh, (h + 1) * dh);
        let scores = t.matmul_nt(qh, kh);
        let scores = t.scale(scores, scale);
        let probs = t.softmax(scores, mask);
        if let Some(m) = maps.as_deref_mut() {
            m.push(probs);
        }
        outs.push(t.matmul(probs, vh));
    }
    if outs.len() == 1 {
        outs[0]
    } else {
        t.concat_cols(&outs)
    }
}

/// Sinusoidal features of the flow time, `1 x width`.
pub fn time_features(tau: f64, width: usize) -> Mat {
    let half = width / 2;
    let t = tau * 1000.0;
    Mat::from_shape_fn((1, width), |(_, i)| {
        let k = i % half;
        let freq = (-(10_000f64.ln()) * k as f64 / half as f64).exp();
        if i < half {
            (t * freq).sin()
        } else {
            (t * freq).cos()
        }
    })
}

pub(crate) fn encode_context_on(t: &mut Tape, config: &ExpertConfig, obs: &Observation) -> Result<Var, FlowError> {
    if obs.context.len() != config.context_dim {
        return Err(FlowError::Shape(format!(
            "context has {} features, expected {}",
            obs.context.len(),
            config.context_dim
        )));
    }
    if obs.proprio.0.len() != config.proprio_dim {
        return Err(FlowError::Shape("proprio width mismatch".into()));
    }
    if obs.task_id as usize >= config.num_tasks {
        return Err(FlowError::Shape(format!("task id {} >= num_tasks {}", obs.task_id, config.num_tasks)));
    }
    let input: Vec<f64> = obs.context.iter().chain(obs.proprio.as_slice()).copied().collect();
    let x = t.leaf(Mat::from_shape_vec((1, input.len()), input).expect("row vector"));
    let h = dense(t, x, "encoder.in");
    let table = t.p("encoder.task");
    let task = t.gather_rows(table, &[obs.task_id as usize]);
    let h = t.add(h, task);
    let h = t.tanh(h);
    Ok(t.reshape(h, config.vl_tokens, config.width))
}

pub(crate) fn expert_forward(
    t: &mut Tape,
    config: &ExpertConfig,
    z: Var,
    a_tau: Var,
    tau: f64,
    mut maps: Option<&mut Vec<Var>>,
) -> Var {
    let d = config.width;
    let k = config.vl_tokens;
    let mmdit = config.variant == Variant::Mmdit;

    let mut vl = dense(t, z, "expert.vl_in");
    if config.vl_positional {
        let pos = t.p("expert.vl_pos");
        vl = t.add(vl, pos);
    }
    let a = dense(t, a_tau, "expert.a_in");
    let pos = t.p("expert.a_pos");
    let mut a = t.add(a, pos);

    let tf = t.leaf(time_features(tau, d));
    let c = dense(t, tf, "expert.t1");
    let c = t.silu(c);
    let c = dense(t, c, "expert.t2");
    let c = t.silu(c);

    for b in 0..config.blocks {
        let last = b + 1 == config.blocks;
        let p = format!("expert.block{b}");
        let ma = dense(t, c, &format!("{p}.a.mod"));
        let chunk = |t: &mut Tape, m: Var, i: usize| t.slice_cols(m, i * d, (i + 1) * d);
        let (a_shift1, a_scale1, a_gate1) = (chunk(t, ma, 0), chunk(t, ma, 1), chunk(t, ma, 2));
        let (a_shift2, a_scale2, a_gate2) = (chunk(t, ma, 3), chunk(t, ma, 4), chunk(t, ma, 5));

        let ha = modulate(t, a, a_shift1, a_scale1);
        let (hv, vl_mod) = if mmdit {
            let mv = dense(t, c, &format!("{p}.vl.mod"));
            let (sh, sc) = (chunk(t, mv, 0), chunk(t, mv, 1));
            (modulate(t, vl, sh, sc), Some(mv))
        } else {
            (t.layer_norm(vl), None)
        };

        let qkv_a = dense(t, ha, &format!("{p}.a.qkv"));
        let qkv_v = dense(t, hv, &format!("{p}.vl.qkv"));
        let qkv = t.concat_rows(&[qkv_v, qkv_a]);
        let q = t.slice_cols(qkv, 0, d);
        let kk = t.slice_cols(qkv, d, 2 * d);
        let v = t.slice_cols(qkv, 2 * d, 3 * d);
        let o = attention(t, q, kk, v, config.heads, None, &mut maps);
        let n = t.value(o).nrows();
        let o_v = t.slice_rows(o, 0, k);
        let o_a = t.slice_rows(o, k, n);

        let oa = dense(t, o_a, &format!("{p}.a.out"));
        let oa = t.mul_row(oa, a_gate1);
        a = t.add(a, oa);
        let h = modulate(t, a, a_shift2, a_scale2);
        let h = mlp(t, h, &format!("{p}.a"));
        let h = t.mul_row(h, a_gate2);
        a = t.add(a, h);

        if !last {
            let ov = dense(t, o_v, &format!("{p}.vl.out"));
            match vl_mod {
                Some(mv) => {
                    let (g1, sh2, sc2, g2) = (chunk(t, mv, 2), chunk(t, mv, 3), chunk(t, mv, 4), chunk(t, mv, 5));
                    let ov = t.mul_row(ov, g1);
                    vl = t.add(vl, ov);
                    let h = modulate(t, vl, sh2, sc2);
                    let h = mlp(t, h, &format!("{p}.vl"));
                    let h = t.mul_row(h, g2);
                    vl = t.add(vl, h);
                }
                None => {
                    vl = t.add(vl, ov);
                    let h = t.layer_norm(vl);
                    let h = mlp(t, h, &format!("{p}.vl"));
                    vl = t.add(vl, h);
                }
            }
        }
    }

    let mf = dense(t, c, "expert.final.mod");
    let shift = t.slice_cols(mf, 0, d);
    let scale = t.slice_cols(mf, d, 2 * d);
    let h = modulate(t, a, shift, scale);
    dense(t, h, "expert.final.out")
}

/// Next-token logits (`N x vocab`) for `tokens`, conditioned on VL tokens `z`.
///
/// Position `i` sees every VL token and `BOS, tokens[..i]`, and predicts `tokens[i]`.
pub(crate) fn pretrain_logits(t: &mut Tape, config: &ExpertConfig, z: Var, tokens: &[u32]) -> Result<Var, FlowError> {
    let pc = &config.pretrain;
    if pc.blocks == 0 {
        return Err(FlowError::Config("model has no pretraining head".into()));
    }
    if tokens.is_empty() {
        return Err(FlowError::EmptySequence);
    }
    if tokens.len() > pc.max_tokens {
        return Err(FlowError::Shape(format!("{} tokens exceed max_tokens {}", tokens.len(), pc.max_tokens)));
    }
    if let Some(bad) = tokens.iter().find(|&&tok| tok as usize >= pc.vocab) {
        return Err(FlowError::Shape(format!("token {bad} outside vocab {}", pc.vocab)));
    }
    let k = config.vl_tokens;
    let n = tokens.len();
    let ids: Vec<usize> = std::iter::once(pc.vocab).chain(tokens[..n - 1].iter().map(|&x| x as usize)).collect();
    let table = t.p("pretrain.tok");
    let x = t.gather_rows(table, &ids);
    let pos = t.p("pretrain.pos");
    let pos = t.slice_rows(pos, 0, n);
    let x = t.add(x, pos);
    let vl = dense(t, z, "pretrain.vl_in");
    let mut h = t.concat_rows(&[vl, x]);

    let total = k + n;
    let mask = Array2::from_shape_fn((total, total), |(r, c)| if r < k { c < k } else { c <= r });
    let d = config.width;
    for b in 0..pc.blocks {
        let p = format!("pretrain.block{b}");
        let hn = t.layer_norm(h);
        let qkv = dense(t, hn, &format!("{p}.qkv"));
        let q = t.slice_cols(qkv, 0, d);
        let kk = t.slice_cols(qkv, d, 2 * d);
        let v = t.slice_cols(qkv, 2 * d, 3 * d);
        let o = attention(t, q, kk, v, config.heads, Some(&mask), &mut None);
        let o = dense(t, o, &format!("{p}.out"));
        h = t.add(h, o);
        let hn = t.layer_norm(h);
        let m = mlp(t, hn, &p);
        h = t.add(h, m);
    }
    let out = t.slice_rows(h, k, total);
    let out = t.layer_norm(out);
    Ok(dense(t, out, "pretrain.head"))
}

/// Entropy of a uniform distribution over `v` outcomes, in nats.
pub fn uniform_entropy(v: usize) -> f64 {
    (v as f64).log2() * LN_2
}
