use std::collections::BTreeMap;

use serde::Serialize;

use super::model::ExpertParams;
use super::tape::{Grads, ParamStore};
use super::train::fm_batch_loss;
use super::{FlowError, FlowSample};
use crate::actions::Observation;

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    /// Max over all checked scalars of `|g - fd| / max(|g|, 1e-8)`.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Max relative error per parameter tensor.
    pub per_tensor: BTreeMap<String, f64>,
    pub checked: usize,
    /// Tensor, exact gradient and estimate at the worst scalar.
    pub worst: Option<(String, f64, f64)>,
}

/// Compares exact gradients of `f` with finite differences for every scalar of
/// `store`. The estimate is Richardson-extrapolated from central differences at
/// `epsilon` and `epsilon / 2`, which cancels the second-order truncation term.
pub fn gradient_check_fn(
    store: &ParamStore,
    epsilon: f64,
    mut f: impl FnMut(&ParamStore) -> Result<(f64, Grads), FlowError>,
) -> Result<GradCheckReport, FlowError> {
    let (_, grads) = f(store)?;
    let mut work = store.clone();
    let mut report = GradCheckReport { max_rel_error: 0.0, max_abs_error: 0.0, per_tensor: BTreeMap::new(), checked: 0, worst: None };
    for id in 0..store.len() {
        let shape = store.value(id).raw_dim();
        let mut worst = 0.0f64;
        for idx in ndarray::indices(shape) {
            let orig = store.value(id)[idx];
            let mut central = |h: f64| -> Result<f64, FlowError> {
                work.value_mut(id)[idx] = orig + h;
                let up = f(&work)?.0;
                work.value_mut(id)[idx] = orig - h;
                let down = f(&work)?.0;
                work.value_mut(id)[idx] = orig;
                Ok((up - down) / (2.0 * h))
            };
            let coarse = central(epsilon)?;
            let fine = central(epsilon / 2.0)?;
            let fd = (4.0 * fine - coarse) / 3.0;
            let g = grads.get(id).map(|m| m[idx]).unwrap_or(0.0);
            let abs = (g - fd).abs();
            let rel = abs / g.abs().max(1e-8);
            if rel > report.max_rel_error && rel > worst {
                report.worst = Some((store.name(id).to_string(), g, fd));
            }
            worst = worst.max(rel);
            report.max_abs_error = report.max_abs_error.max(abs);
            report.checked += 1;
        }
        report.max_rel_error = report.max_rel_error.max(worst);
        report.per_tensor.insert(store.name(id).to_string(), worst);
    }
    Ok(report)
}

/// Finite-difference check of the flow loss over `batch`.
pub fn gradient_check(params: &ExpertParams, batch: &[(Observation, FlowSample)], epsilon: f64) -> Result<GradCheckReport, FlowError> {
    let mut probe = params.clone();
    gradient_check_fn(&params.store, epsilon, |store| {
        probe.store.clone_from(store);
        fm_batch_loss(&probe, batch)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actions::ProprioState;
    use crate::flow::tape::Tape;
    use crate::flow::{normal_mat, ExpertConfig, PretrainHeadConfig, Variant};
    use crate::rtc::apply_rtc_mask;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    #[test]
    fn linear_network_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        store.normal("w", 5, 3, 1.0, &mut rng);
        store.normal("b", 1, 3, 1.0, &mut rng);
        let x = normal_mat(7, 5, &mut rng);
        let y = Arc::new(normal_mat(7, 3, &mut rng));
        let report = gradient_check_fn(&store, 1e-4, |s| {
            let mut t = Tape::new(s);
            let xv = t.leaf(x.clone());
            let w = t.p("w");
            let b = t.p("b");
            let h = t.matmul(xv, w);
            let h = t.add_row(h, b);
            let l = t.masked_sse(h, y.clone(), &[false; 7]);
            let l = t.scale(l, 1.0 / 21.0);
            Ok((t.scalar(l), t.backward(l)))
        })
        .unwrap();
        assert_eq!(report.checked, 18);
        assert!(report.max_rel_error < 1e-8, "{report:?}");
    }

    fn mini(variant: Variant) -> ExpertConfig {
        ExpertConfig {
            width: 8,
            heads: 2,
            blocks: 2,
            vl_tokens: 2,
            horizon: 4,
            action_dim: 36,
            context_dim: 3,
            num_tasks: 2,
            mlp_ratio: 2,
            variant,
            pretrain: PretrainHeadConfig { blocks: 0, ..Default::default() },
            ..Default::default()
        }
    }

    fn batch(seed: u64, d: usize) -> Vec<(Observation, FlowSample)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..2)
            .map(|i| {
                let obs = Observation {
                    proprio: ProprioState(std::array::from_fn(|_| rng.random_range(-1.0..1.0))),
                    context: (0..3).map(|_| rng.random_range(-1.0..1.0)).collect(),
                    task_id: i,
                };
                let s = FlowSample::new(normal_mat(4, 36, &mut rng), normal_mat(4, 36, &mut rng), rng.random_range(0.0..1.0)).unwrap();
                (obs, apply_rtc_mask(s, d).unwrap())
            })
            .collect()
    }

    #[test]
    fn mini_expert_matches_finite_differences() {
        for variant in [Variant::Mmdit, Variant::NaiveDit] {
            let params = ExpertParams::init_random(mini(variant), 3).unwrap();
            assert!(params.parameter_count() <= 10_000, "{}", params.parameter_count());
            let report = gradient_check(&params, &batch(4, 1), 1e-3).unwrap();
            assert_eq!(report.checked, params.parameter_count());
            assert!(report.max_rel_error < 1e-4, "{variant:?}: {} {:?}", report.max_rel_error, report.worst);
        }
    }

    #[test]
    fn masked_rows_carry_no_gradient() {
        let params = ExpertParams::init_random(mini(Variant::Mmdit), 5).unwrap();
        let b = batch(6, 2);
        let mut scrambled = b.clone();
        for (_, s) in scrambled.iter_mut() {
            for r in 0..2 {
                s.eps.row_mut(r).fill(1e3);
            }
        }
        let (l1, g1) = fm_batch_loss(&params, &b).unwrap();
        let (l2, g2) = fm_batch_loss(&params, &scrambled).unwrap();
        assert_eq!(l1, l2);
        for (x, y) in g1.0.iter().zip(g2.0.iter()) {
            assert_eq!(x, y);
        }
        // a parameter that feeds only masked rows gets exactly zero gradient
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        store.normal("pred", 4, 36, 1.0, &mut rng);
        let target = Arc::new(normal_mat(4, 36, &mut rng));
        let mut t = Tape::new(&store);
        let p = t.p("pred");
        let l = t.masked_sse(p, target, &[true, true, false, false]);
        let g = t.backward(l);
        let g = g.get(0).unwrap();
        assert!(g.slice(ndarray::s![..2, ..]).iter().all(|v| *v == 0.0));
        assert!(g.slice(ndarray::s![2.., ..]).iter().all(|v| *v != 0.0));
    }
}
