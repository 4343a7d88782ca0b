//! Flow-matching action expert: noising, loss, Euler sampling, the next-token
//! pretraining head, training and checkpoints.
//!
//! Convention: `a_tau = tau * a + (1 - tau) * eps`, the network regresses the
//! velocity target `eps - a`, and sampling integrates from noise at `tau = 0` to
//! data at `tau = 1` with `a <- a - delta * v`.

mod checkpoint;
mod grammar;
mod gradcheck;
mod model;
mod policy;
mod tape;
mod train;

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CheckpointHeader, TensorShape, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use grammar::MarkovGrammar;
pub use gradcheck::{gradient_check, gradient_check_fn, GradCheckReport};
pub use policy::{fit_action_norm, flow_examples, FlowPolicy};
pub use model::{
    time_features, uniform_entropy, ExpertConfig, ExpertParams, PretrainHeadConfig, Variant, ENCODER_PREFIX, EXPERT_PREFIX,
    PRETRAIN_PREFIX,
};
pub use tape::{Grads, Mat, ParamStore, Tape, Var};
pub use train::{
    fm_batch_loss, pretrain, pretrain_batch_loss, train, Adam, AdamConfig, FlowExample, LrDecay, PretrainConfig, PretrainExample, TrainConfig,
    TrainOutcome,
};

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("flow time {0} outside [0, 1]")]
    TauOutOfRange(f64),
    #[error("empty loss support")]
    EmptyLossSupport,
    #[error("empty token sequence")]
    EmptySequence,
    #[error("committed prefix of {len} steps does not fit horizon {horizon}")]
    PrefixTooLong { len: usize, horizon: usize },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("non-finite loss {loss} at step {step}")]
    NonFiniteLoss { step: usize, loss: f64 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One training sample of the flow objective.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSample {
    pub a: Mat,
    pub eps: Mat,
    pub tau: f64,
    pub a_tau: Mat,
    /// `true` rows hold the clean action and are excluded from the loss.
    pub mask: Vec<bool>,
}

impl FlowSample {
    pub fn new(a: Mat, eps: Mat, tau: f64) -> Result<Self, FlowError> {
        let a_tau = noise_action(&a, &eps, tau)?;
        let mask = vec![false; a.nrows()];
        Ok(Self { a, eps, tau, a_tau, mask })
    }

    pub fn target(&self) -> Mat {
        &self.eps - &self.a
    }
}

fn same_shape(a: &Mat, b: &Mat, what: &str) -> Result<(), FlowError> {
    if a.dim() != b.dim() {
        return Err(FlowError::Shape(format!("{what}: {:?} vs {:?}", a.dim(), b.dim())));
    }
    Ok(())
}

pub fn noise_action(a: &Mat, eps: &Mat, tau: f64) -> Result<Mat, FlowError> {
    same_shape(a, eps, "action and noise")?;
    if !(0.0..=1.0).contains(&tau) {
        return Err(FlowError::TauOutOfRange(tau));
    }
    if tau == 1.0 {
        return Ok(a.clone());
    }
    if tau == 0.0 {
        return Ok(eps.clone());
    }
    Ok(a * tau + eps * (1.0 - tau))
}

pub fn velocity_target(a: &Mat, eps: &Mat) -> Result<Mat, FlowError> {
    same_shape(a, eps, "action and noise")?;
    Ok(eps - a)
}

/// Mean squared error over unmasked entries against `eps - a`.
pub fn fm_loss(pred: &Mat, a: &Mat, eps: &Mat, mask: &[bool]) -> Result<f64, FlowError> {
    same_shape(pred, a, "prediction and action")?;
    same_shape(a, eps, "action and noise")?;
    if mask.len() != a.nrows() {
        return Err(FlowError::Shape(format!("mask has {} rows, chunk has {}", mask.len(), a.nrows())));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (r, &masked) in mask.iter().enumerate() {
        if masked {
            continue;
        }
        for c in 0..a.ncols() {
            let e = pred[(r, c)] - (eps[(r, c)] - a[(r, c)]);
            sum += e * e;
        }
        count += a.ncols();
    }
    if count == 0 {
        return Err(FlowError::EmptyLossSupport);
    }
    Ok(sum / count as f64)
}

/// Standard-normal matrix.
pub fn normal_mat(rows: usize, cols: usize, rng: &mut impl Rng) -> Mat {
    Mat::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

/// Euler integration of a velocity field from `eps` (tau = 0) to tau = 1.
///
/// `field(a_tau, tau)` returns the predicted velocity. When a prefix is given,
/// its rows overwrite the chunk before every evaluation and at the end.
pub fn integrate(
    mut field: impl FnMut(&Mat, f64) -> Result<Mat, FlowError>,
    eps: Mat,
    steps: usize,
    committed_prefix: Option<&Mat>,
) -> Result<Mat, FlowError> {
    if steps == 0 {
        return Err(FlowError::Config("at least one integration step".into()));
    }
    let horizon = eps.nrows();
    if let Some(p) = committed_prefix {
        if p.nrows() >= horizon {
            return Err(FlowError::PrefixTooLong { len: p.nrows(), horizon });
        }
        if p.ncols() != eps.ncols() {
            return Err(FlowError::Shape("prefix width differs from chunk".into()));
        }
    }
    let overwrite = |a: &mut Mat| {
        if let Some(p) = committed_prefix {
            a.slice_mut(ndarray::s![..p.nrows(), ..]).assign(p);
        }
    };
    let delta = 1.0 / steps as f64;
    let mut a = eps;
    for i in 0..steps {
        overwrite(&mut a);
        let tau = i as f64 * delta;
        let v = field(&a, tau)?;
        same_shape(&v, &a, "velocity")?;
        a.scaled_add(-delta, &v);
    }
    overwrite(&mut a);
    Ok(a)
}

/// Samples an action chunk for VL tokens `z` with seeded noise.
pub fn sample_actions(
    params: &ExpertParams,
    z: &Mat,
    steps: usize,
    committed_prefix: Option<&Mat>,
    rng: &mut impl Rng,
) -> Result<Mat, FlowError> {
    let c = &params.config;
    let eps = normal_mat(c.horizon, c.action_dim, rng);
    integrate(|a, tau| params.forward_expert(z, a, tau), eps, steps, committed_prefix)
}

/// Mean next-token cross-entropy of `tokens` given VL tokens `z`.
pub fn pretrain_next_token_loss(params: &ExpertParams, z: &Mat, tokens: &[u32]) -> Result<f64, FlowError> {
    let mut t = Tape::new(&params.store);
    let zv = t.leaf(z.clone());
    let logits = model::pretrain_logits(&mut t, &params.config, zv, tokens)?;
    let targets: Vec<usize> = tokens.iter().map(|&x| x as usize).collect();
    let loss = t.cross_entropy(logits, &targets);
    Ok(t.scalar(loss))
}

pub(crate) fn arc(m: Mat) -> Arc<Mat> {
    Arc::new(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn noise_endpoints_and_midpoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = normal_mat(4, 3, &mut rng);
        let eps = normal_mat(4, 3, &mut rng);
        assert_eq!(noise_action(&a, &eps, 1.0).unwrap(), a);
        assert_eq!(noise_action(&a, &eps, 0.0).unwrap(), eps);
        assert_eq!(noise_action(&array![[2.0]], &array![[0.0]], 0.5).unwrap(), array![[1.0]]);
        assert!(matches!(noise_action(&a, &eps, 1.5), Err(FlowError::TauOutOfRange(_))));
        assert!(noise_action(&a, &eps, -0.1).is_err());
    }

    #[test]
    fn velocity_target_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = normal_mat(3, 5, &mut rng);
        assert!(velocity_target(&a, &a).unwrap().iter().all(|v| *v == 0.0));
        assert_eq!(velocity_target(&array![[1.0, 2.0]], &array![[0.0, 0.0]]).unwrap(), array![[-1.0, -2.0]]);
        let eps = normal_mat(3, 5, &mut rng);
        let t = velocity_target(&a, &eps).unwrap();
        for ((x, y), z) in a.iter().zip(eps.iter()).zip(t.iter()) {
            assert_eq!(*z, y - x);
        }
        assert!(velocity_target(&a, &Mat::zeros((2, 5))).is_err());
    }

    #[test]
    fn fm_loss_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = normal_mat(6, 4, &mut rng);
        let eps = normal_mat(6, 4, &mut rng);
        let mask = vec![false; 6];
        assert_eq!(fm_loss(&(&eps - &a), &a, &eps, &mask).unwrap(), 0.0);
        let ones = Mat::ones((6, 4));
        assert_eq!(fm_loss(&Mat::zeros((6, 4)), &Mat::zeros((6, 4)), &ones, &mask).unwrap(), 1.0);
        assert!(matches!(fm_loss(&a, &a, &eps, &[true; 6]), Err(FlowError::EmptyLossSupport)));
    }

    proptest! {
        #[test]
        fn fm_loss_ignores_masked_rows(seed in 0u64..1000, d in 1usize..5, junk in -1e3f64..1e3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = normal_mat(6, 4, &mut rng);
            let eps = normal_mat(6, 4, &mut rng);
            let pred = normal_mat(6, 4, &mut rng);
            let mask: Vec<bool> = (0..6).map(|r| r < d).collect();
            let base = fm_loss(&pred, &a, &eps, &mask).unwrap();
            let (mut p2, mut a2) = (pred.clone(), a.clone());
            p2.row_mut(0).fill(junk);
            a2.row_mut(d - 1).fill(-junk);
            prop_assert_eq!(base.to_bits(), fm_loss(&p2, &a2, &eps, &mask).unwrap().to_bits());
        }
    }

    #[test]
    fn one_euler_step_on_exact_field_lands_on_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let target = normal_mat(5, 3, &mut rng);
        let eps = normal_mat(5, 3, &mut rng);
        let e0 = eps.clone();
        let star = target.clone();
        let out = integrate(move |_, _| Ok(&e0 - &star), eps, 1, None).unwrap();
        assert!((out - target).iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn committed_prefix_is_returned_exactly() {
        let config = ExpertConfig { width: 8, heads: 2, blocks: 1, vl_tokens: 2, horizon: 6, context_dim: 4, ..Default::default() };
        let params = ExpertParams::init_random(config, 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let z = normal_mat(2, 8, &mut rng);
        let prefix = normal_mat(3, 36, &mut rng);
        let out = sample_actions(&params, &z, 4, Some(&prefix), &mut rng).unwrap();
        assert_eq!(out.slice(ndarray::s![..3, ..]), prefix);
        let too_long = normal_mat(6, 36, &mut rng);
        assert!(matches!(
            sample_actions(&params, &z, 4, Some(&too_long), &mut rng),
            Err(FlowError::PrefixTooLong { .. })
        ));
        assert!(sample_actions(&params, &z, 0, None, &mut rng).is_err());
    }

    #[test]
    fn uniform_head_gives_log_vocab() {
        let config = ExpertConfig {
            width: 8,
            heads: 2,
            blocks: 1,
            vl_tokens: 2,
            horizon: 4,
            context_dim: 4,
            pretrain: PretrainHeadConfig { vocab: 11, blocks: 1, max_tokens: 5 },
            ..Default::default()
        };
        let params = ExpertParams::init(config, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = normal_mat(2, 8, &mut rng);
        let loss = pretrain_next_token_loss(&params, &z, &[1, 4, 10, 0]).unwrap();
        assert!((loss - 11f64.ln()).abs() < 1e-12);
        assert!(matches!(pretrain_next_token_loss(&params, &z, &[]), Err(FlowError::EmptySequence)));
        assert!(pretrain_next_token_loss(&params, &z, &[11]).is_err());
    }

    #[test]
    fn one_hot_head_drives_loss_to_zero() {
        // Tokens encode their own position: token i at position i. A head reading the
        // position embedding can copy it; build that head by hand.
        let config = ExpertConfig {
            width: 8,
            heads: 2,
            blocks: 1,
            vl_tokens: 2,
            horizon: 4,
            context_dim: 4,
            pretrain: PretrainHeadConfig { vocab: 4, blocks: 1, max_tokens: 4 },
            ..Default::default()
        };
        let mut params = ExpertParams::init(config, 0).unwrap();
        // Silence every block so the head sees LN(tok + pos) of the input row.
        for name in ["pretrain.block0.out.w", "pretrain.block0.out.b", "pretrain.block0.mlp2.w", "pretrain.block0.mlp2.b"] {
            params.store.get_mut(name).unwrap().fill(0.0);
        }
        params.store.get_mut("pretrain.tok").unwrap().fill(0.0);
        let pos = params.store.get_mut("pretrain.pos").unwrap();
        pos.fill(0.0);
        for i in 0..4 {
            pos[(i, 2 * i)] = 1.0;
            pos[(i, 2 * i + 1)] = -1.0;
        }
        let mut scores = Vec::new();
        for scale in [1.0, 10.0, 100.0] {
            let head = params.store.get_mut("pretrain.head.w").unwrap();
            head.fill(0.0);
            for i in 0..4 {
                head[(2 * i, i)] = scale;
            }
            let z = Mat::zeros((2, 8));
            scores.push(pretrain_next_token_loss(&params, &z, &[0, 1, 2, 3]).unwrap());
        }
        assert!(scores[0] > scores[1] && scores[1] > scores[2]);
        assert!(scores[2] < 1e-6, "{scores:?}");
    }
}
