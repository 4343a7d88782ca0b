use std::f64::consts::PI;

/// Orthonormal DCT-II.
pub fn dct_ii(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let nf = n as f64;
    (0..n)
        .map(|k| {
            let w = if k == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
            w * x
                .iter()
                .enumerate()
                .map(|(t, v)| v * (PI * (t as f64 + 0.5) * k as f64 / nf).cos())
                .sum::<f64>()
        })
        .collect()
}

/// Orthonormal DCT-III, the inverse of [`dct_ii`].
pub fn dct_iii(c: &[f64]) -> Vec<f64> {
    let n = c.len();
    let nf = n as f64;
    (0..n)
        .map(|t| {
            c.iter()
                .enumerate()
                .map(|(k, v)| {
                    let w = if k == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
                    w * v * (PI * (t as f64 + 0.5) * k as f64 / nf).cos()
                })
                .sum()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn length_one_is_identity() {
        assert_eq!(dct_ii(&[0.37]), vec![0.37]);
        assert_eq!(dct_iii(&[0.37]), vec![0.37]);
    }

    #[test]
    fn inverse_and_energy() {
        let x = [0.3, -0.7, 0.1, 0.9, -0.2];
        let c = dct_ii(&x);
        let back = dct_iii(&c);
        for (a, b) in back.iter().zip(&x) {
            assert!((a - b).abs() < 1e-12);
        }
        let e = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>();
        assert!((e(&x) - e(&c)).abs() < 1e-12);
    }
}
