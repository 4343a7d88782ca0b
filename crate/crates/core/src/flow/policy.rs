use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::ExpertParams;
use super::train::FlowExample;
use super::{sample_actions, FlowError, Mat};
use crate::actions::{ActionSeq, Episode, JointAction, NormStats, Observation};
use crate::rtc::{Policy, PolicyRequest, RtcError};

/// Quantile statistics over every joint action in `episodes`; constant
/// dimensions become padding.
pub fn fit_action_norm(episodes: &[Episode]) -> Result<NormStats, FlowError> {
    let rows: Vec<&[f64]> = episodes.iter().flat_map(|e| e.actions.rows()).collect();
    if rows.is_empty() {
        return Err(FlowError::EmptySequence);
    }
    let dim = rows[0].len();
    NormStats::fit_rows(rows, dim).map(NormStats::with_degenerate_as_pad).map_err(|e| FlowError::Config(e.to_string()))
}

/// One example per frame: the observation at `t` and the normalized actions
/// `t..t+H`, padded by repeating the final action.
pub fn flow_examples(episodes: &[Episode], norm: &NormStats, horizon: usize) -> Result<Vec<FlowExample>, FlowError> {
    let mut out = Vec::new();
    for ep in episodes {
        let ActionSeq::Joint(actions) = &ep.actions else {
            return Err(FlowError::Config("flow examples need joint-space episodes".into()));
        };
        if actions.is_empty() {
            return Err(FlowError::EmptySequence);
        }
        let normed = actions
            .iter()
            .map(|a| norm.normalize(&a.0))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| FlowError::Config(e.to_string()))?;
        let dim = normed[0].len();
        for t in 0..actions.len() {
            let mut chunk = Mat::zeros((horizon, dim));
            for j in 0..horizon {
                let row = &normed[(t + j).min(normed.len() - 1)];
                chunk.row_mut(j).iter_mut().zip(row).for_each(|(c, v)| *c = *v);
            }
            let obs = Observation { proprio: ep.states[t], context: ep.contexts[t].clone(), task_id: ep.task_id };
            out.push(FlowExample { obs, chunk });
        }
    }
    Ok(out)
}

/// Chunk policy backed by the flow expert: the committed prefix is normalized and
/// inpainted during integration, the result denormalized, and the prefix rows
/// copied back verbatim.
#[derive(Debug, Clone)]
pub struct FlowPolicy {
    pub params: ExpertParams,
    pub norm: NormStats,
    pub steps: usize,
    seed: u64,
    rng: ChaCha8Rng,
}

impl FlowPolicy {
    pub fn new(params: ExpertParams, norm: NormStats, steps: usize, seed: u64) -> Self {
        Self { params, norm, steps, seed, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn sample(&mut self, obs: &Observation, prefix: &[JointAction]) -> Result<Vec<JointAction>, FlowError> {
        let c = &self.params.config;
        let z = self.params.encode_context(obs)?;
        let committed = if prefix.is_empty() {
            None
        } else {
            let mut m = Mat::zeros((prefix.len(), c.action_dim));
            for (i, a) in prefix.iter().enumerate() {
                let y = self.norm.normalize(&a.0).map_err(|e| FlowError::Config(e.to_string()))?;
                m.row_mut(i).iter_mut().zip(&y).for_each(|(d, v)| *d = *v);
            }
            Some(m)
        };
        let a = sample_actions(&self.params, &z, self.steps, committed.as_ref(), &mut self.rng)?;
        let mut out = Vec::with_capacity(c.horizon);
        for (i, row) in a.rows().into_iter().enumerate() {
            if let Some(p) = prefix.get(i) {
                out.push(*p);
                continue;
            }
            let y: Vec<f64> = row.iter().map(|v| v.clamp(-1.0, 1.0)).collect();
            let x = self.norm.denormalize(&y).map_err(|e| FlowError::Config(e.to_string()))?;
            out.push(JointAction::from_slice(&x).map_err(|e| FlowError::Config(e.to_string()))?);
        }
        Ok(out)
    }
}

impl Policy for FlowPolicy {
    fn chunk(&mut self, request: &PolicyRequest) -> Result<Vec<JointAction>, RtcError> {
        if request.horizon != self.params.config.horizon {
            return Err(RtcError::Policy(format!("expert horizon {} but scheduler wants {}", self.params.config.horizon, request.horizon)));
        }
        self.sample(&request.observation, &request.prefix).map_err(|e| RtcError::Policy(e.to_string()))
    }

    fn reset(&mut self, episode: usize) {
        self.rng = ChaCha8Rng::seed_from_u64(self.seed);
        self.rng.set_stream(episode as u64);
    }
}
