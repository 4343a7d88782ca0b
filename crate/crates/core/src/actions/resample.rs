use num_rational::Ratio;
use thiserror::Error;

use super::{ActionError, ActionSeq, Episode, JointAction, ProprioState, TaskAction};

#[derive(Debug, Error, PartialEq)]
pub enum ResampleError {
    #[error("resample factor must be positive, got {0}")]
    NonPositiveFactor(Ratio<i64>),
    #[error(transparent)]
    Action(#[from] ActionError),
}

/// Position of output frame `k` on the source grid, as `(index, rem / den)`.
struct GridPoint {
    index: usize,
    rem: i64,
    den: i64,
}

fn lerp_row(rows: &[&[f64]], p: &GridPoint) -> Vec<f64> {
    let a = rows[p.index];
    if p.rem == 0 {
        return a.to_vec();
    }
    let b = rows[p.index + 1];
    let t = p.rem as f64 / p.den as f64;
    a.iter().zip(b).map(|(x, y)| x + (y - x) * t).collect()
}

/// Resamples an episode by `factor` = new rate / old rate.
///
/// Output frames lie on the new grid within the source duration, so the first
/// frame is always kept and the last one is kept whenever the duration falls on
/// the new grid. Every channel is interpolated linearly; 6D rotation blocks are
/// blended component-wise and re-orthonormalized by the consumer.
pub fn resample_episode(ep: &Episode, factor: Ratio<i64>) -> Result<Episode, ResampleError> {
    if *factor.numer() <= 0 || *factor.denom() <= 0 {
        return Err(ResampleError::NonPositiveFactor(factor));
    }
    let (num, den) = (*factor.numer(), *factor.denom());
    let n = ep.len() as i64;
    let out_len = (n - 1) * num / den + 1;
    let points: Vec<GridPoint> = (0..out_len)
        .map(|k| {
            let pos = k * den;
            GridPoint { index: (pos / num) as usize, rem: pos % num, den: num }
        })
        .collect();

    let action_rows: Vec<&[f64]> = ep.actions.rows().collect();
    let actions = match &ep.actions {
        ActionSeq::Joint(_) => ActionSeq::Joint(
            points
                .iter()
                .map(|p| JointAction::from_slice(&lerp_row(&action_rows, p)))
                .collect::<Result<_, _>>()?,
        ),
        ActionSeq::Task(_) => ActionSeq::Task(
            points
                .iter()
                .map(|p| TaskAction::from_slice(&lerp_row(&action_rows, p)))
                .collect::<Result<_, _>>()?,
        ),
    };
    let state_rows: Vec<&[f64]> = ep.states.iter().map(|s| s.as_slice()).collect();
    let states = points
        .iter()
        .map(|p| ProprioState::from_slice(&lerp_row(&state_rows, p)))
        .collect::<Result<_, _>>()?;
    let ctx_rows: Vec<&[f64]> = ep.contexts.iter().map(Vec::as_slice).collect();
    let contexts = points.iter().map(|p| lerp_row(&ctx_rows, p)).collect();

    Ok(Episode {
        task_id: ep.task_id,
        frame_rate: ep.frame_rate * num as f64 / den as f64,
        actions,
        states,
        contexts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_episode(values: &[f64], rate: f64) -> Episode {
        let actions = values
            .iter()
            .map(|&v| {
                let mut a = [0.0; 36];
                a[0] = v;
                JointAction(a)
            })
            .collect();
        Episode {
            task_id: 0,
            frame_rate: rate,
            actions: ActionSeq::Joint(actions),
            states: vec![ProprioState::default(); values.len()],
            contexts: values.iter().map(|&v| vec![v]).collect(),
        }
    }

    fn channel(ep: &Episode) -> Vec<f64> {
        ep.actions.rows().map(|r| r[0]).collect()
    }

    #[test]
    fn upsample_by_three() {
        let out = resample_episode(&scalar_episode(&[0.0, 3.0], 10.0), Ratio::from_integer(3)).unwrap();
        assert_eq!(channel(&out), vec![0.0, 1.0, 2.0, 3.0]);
        assert_eq!(out.frame_rate, 30.0);
        assert_eq!(out.contexts, vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0]]);
    }

    #[test]
    fn unit_factor_is_identity() {
        let ep = scalar_episode(&[0.5, -1.0, 2.25, 7.0], 30.0);
        assert_eq!(resample_episode(&ep, Ratio::from_integer(1)).unwrap(), ep);
    }

    #[test]
    fn non_positive_factor_rejected() {
        let ep = scalar_episode(&[0.0, 1.0], 30.0);
        assert!(resample_episode(&ep, Ratio::from_integer(0)).is_err());
        assert!(resample_episode(&ep, Ratio::new(-1, 3)).is_err());
    }

    #[test]
    fn down_then_up_restores_shared_grid_points_exactly() {
        let values: Vec<f64> = (0..31).map(|i| (i as f64 * 0.7).sin() * 3.0).collect();
        let ep = scalar_episode(&values, 30.0);
        let down = resample_episode(&ep, Ratio::new(1, 3)).unwrap();
        assert_eq!(down.len(), 11);
        let up = resample_episode(&down, Ratio::from_integer(3)).unwrap();
        assert_eq!(up.len(), 31);
        let (orig, back) = (channel(&ep), channel(&up));
        for k in (0..31).step_by(3) {
            assert_eq!(back[k], orig[k]);
        }
        // and f then 1/f
        let up_first = resample_episode(&ep, Ratio::from_integer(3)).unwrap();
        let round = resample_episode(&up_first, Ratio::new(1, 3)).unwrap();
        assert_eq!(channel(&round), orig);
    }

    #[test]
    fn sinusoid_round_trip_within_interpolation_bound() {
        let freq = 0.8;
        let f = |t: f64| (2.0 * std::f64::consts::PI * freq * t).sin();
        let values: Vec<f64> = (0..91).map(|i| f(i as f64 / 30.0)).collect();
        let ep = scalar_episode(&values, 30.0);
        let down = resample_episode(&ep, Ratio::new(1, 3)).unwrap();
        let up = resample_episode(&down, Ratio::from_integer(3)).unwrap();

        // Oracle: max |f''| from second differences on a dense grid, then h^2/8.
        let dense = 1e-3;
        let max_curv = (1..3000)
            .map(|i| {
                let t = i as f64 * dense;
                ((f(t + dense) - 2.0 * f(t) + f(t - dense)) / (dense * dense)).abs()
            })
            .fold(0.0, f64::max);
        let h = 1.0 / 10.0;
        let bound = h * h / 8.0 * max_curv * (1.0 + 1e-3);

        let err = channel(&up).iter().zip(&values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err > 0.0 && err <= bound, "err {err} bound {bound}");
    }
}
