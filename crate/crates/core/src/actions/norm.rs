use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NormError {
    #[error("insufficient samples in dimension {0}")]
    InsufficientSamples(usize),
    #[error("non-finite sample in dimension {0}")]
    NonFiniteSample(usize),
    #[error("dimension {0} is degenerate (q01 == q99) and not declared as padding")]
    Degenerate(usize),
    #[error("vector has {got} dimensions, stats have {expected}")]
    DimMismatch { expected: usize, got: usize },
}

/// Per-dimension 1st/99th percentile statistics.
///
/// Dimensions listed in `pad_dims` are treated as padding: they normalize to 0
/// and denormalize to `q01`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub q01: Vec<f64>,
    pub q99: Vec<f64>,
    #[serde(default)]
    pub pad_dims: BTreeSet<usize>,
}

/// Quantile by linear interpolation between order statistics of `sorted`.
pub fn quantile_linear(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = h - lo as f64;
    if frac == 0.0 {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

/// Fits q01/q99 for each dimension; `columns[d]` holds every sample of dimension `d`.
pub fn fit_quantile_stats(columns: &[Vec<f64>]) -> Result<NormStats, NormError> {
    let mut q01 = Vec::with_capacity(columns.len());
    let mut q99 = Vec::with_capacity(columns.len());
    for (d, col) in columns.iter().enumerate() {
        if col.iter().any(|v| !v.is_finite()) {
            return Err(NormError::NonFiniteSample(d));
        }
        if col.len() < 2 {
            return Err(NormError::InsufficientSamples(d));
        }
        let mut sorted = col.clone();
        sorted.sort_by(f64::total_cmp);
        q01.push(quantile_linear(&sorted, 0.01));
        q99.push(quantile_linear(&sorted, 0.99));
    }
    Ok(NormStats { q01, q99, pad_dims: BTreeSet::new() })
}

impl NormStats {
    /// Fits from row-major samples (`rows[frame][dim]`).
    pub fn fit_rows<'a, I>(rows: I, dim: usize) -> Result<Self, NormError>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut columns = vec![Vec::new(); dim];
        for row in rows {
            if row.len() != dim {
                return Err(NormError::DimMismatch { expected: dim, got: row.len() });
            }
            for (c, v) in columns.iter_mut().zip(row) {
                c.push(*v);
            }
        }
        fit_quantile_stats(&columns)
    }

    pub fn dim(&self) -> usize {
        self.q01.len()
    }

    pub fn is_degenerate(&self, d: usize) -> bool {
        self.q01[d] == self.q99[d]
    }

    pub fn degenerate_dims(&self) -> Vec<usize> {
        (0..self.dim()).filter(|&d| self.is_degenerate(d)).collect()
    }

    pub fn with_pad_dims(mut self, dims: impl IntoIterator<Item = usize>) -> Self {
        self.pad_dims.extend(dims);
        self
    }

    /// Declares every degenerate dimension as padding.
    pub fn with_degenerate_as_pad(self) -> Self {
        let dims = self.degenerate_dims();
        self.with_pad_dims(dims)
    }

    fn check(&self, x: &[f64]) -> Result<(), NormError> {
        if x.len() != self.dim() {
            return Err(NormError::DimMismatch { expected: self.dim(), got: x.len() });
        }
        if let Some(d) = (0..self.dim()).find(|&d| self.is_degenerate(d) && !self.pad_dims.contains(&d)) {
            return Err(NormError::Degenerate(d));
        }
        Ok(())
    }

    /// Maps `[q01, q99]` onto `[-1, 1]`, clipping outside.
    pub fn normalize(&self, x: &[f64]) -> Result<Vec<f64>, NormError> {
        self.check(x)?;
        Ok(x.iter()
            .enumerate()
            .map(|(d, &v)| {
                if self.pad_dims.contains(&d) {
                    0.0
                } else {
                    let y = 2.0 * (v - self.q01[d]) / (self.q99[d] - self.q01[d]) - 1.0;
                    y.clamp(-1.0, 1.0)
                }
            })
            .collect())
    }

    pub fn denormalize(&self, y: &[f64]) -> Result<Vec<f64>, NormError> {
        self.check(y)?;
        Ok(y.iter()
            .enumerate()
            .map(|(d, &v)| {
                if self.pad_dims.contains(&d) {
                    self.q01[d]
                } else {
                    (v + 1.0) * 0.5 * (self.q99[d] - self.q01[d]) + self.q01[d]
                }
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent oracle: rank positions computed with exact rational arithmetic.
    fn oracle_quantile(samples: &[f64], num: usize, den: usize) -> f64 {
        let mut s = samples.to_vec();
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let pos_num = (s.len() - 1) * num;
        let (k, rem) = (pos_num / den, pos_num % den);
        if rem == 0 {
            s[k]
        } else {
            s[k] + (s[k + 1] - s[k]) * rem as f64 / den as f64
        }
    }

    #[test]
    fn uniform_grid_quantiles() {
        let col: Vec<f64> = (0..=100).map(f64::from).collect();
        let s = fit_quantile_stats(&[col]).unwrap();
        assert_eq!(s.q01, vec![1.0]);
        assert_eq!(s.q99, vec![99.0]);
    }

    #[test]
    fn constant_dimension_is_degenerate() {
        let s = fit_quantile_stats(&[vec![5.0; 10]]).unwrap();
        assert_eq!((s.q01[0], s.q99[0]), (5.0, 5.0));
        assert!(s.is_degenerate(0));
        assert_eq!(s.normalize(&[5.0]), Err(NormError::Degenerate(0)));
        let s = s.with_degenerate_as_pad();
        assert_eq!(s.normalize(&[5.0]).unwrap(), vec![0.0]);
        assert_eq!(s.denormalize(&[0.3]).unwrap(), vec![5.0]);
    }

    #[test]
    fn seeded_samples_match_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let col: Vec<f64> = (0..10).map(|_| rng.random_range(-3.0..3.0)).collect();
        let s = fit_quantile_stats(&[col.clone()]).unwrap();
        assert!((s.q01[0] - oracle_quantile(&col, 1, 100)).abs() < 1e-12);
        assert!((s.q99[0] - oracle_quantile(&col, 99, 100)).abs() < 1e-12);
        // ordering independence
        let mut rev = col.clone();
        rev.reverse();
        assert_eq!(fit_quantile_stats(&[rev]).unwrap(), s);
    }

    #[test]
    fn fit_errors() {
        assert_eq!(fit_quantile_stats(&[vec![]]), Err(NormError::InsufficientSamples(0)));
        assert_eq!(fit_quantile_stats(&[vec![1.0, 2.0], vec![1.0, f64::NAN]]), Err(NormError::NonFiniteSample(1)));
    }

    #[test]
    fn normalize_endpoints() {
        let s = NormStats { q01: vec![-2.0], q99: vec![6.0], pad_dims: BTreeSet::new() };
        assert_eq!(s.normalize(&[-2.0]).unwrap(), vec![-1.0]);
        assert_eq!(s.normalize(&[2.0]).unwrap(), vec![0.0]);
        assert_eq!(s.normalize(&[14.0]).unwrap(), vec![1.0]);
        assert_eq!(s.normalize(&[-100.0]).unwrap(), vec![-1.0]);
        assert!(matches!(s.normalize(&[0.0, 0.0]), Err(NormError::DimMismatch { .. })));
    }

    proptest! {
        #[test]
        fn denormalize_inverts_inside_range(lo in -10.0f64..10.0, width in 0.01f64..20.0, t in 0.0f64..=1.0) {
            let hi = lo + width;
            let s = NormStats { q01: vec![lo], q99: vec![hi], pad_dims: BTreeSet::new() };
            let x = lo + t * width;
            let back = s.denormalize(&s.normalize(&[x]).unwrap()).unwrap()[0];
            prop_assert!((back - x).abs() <= 1e-12 * (1.0 + x.abs().max(hi.abs())));
        }
    }
}
