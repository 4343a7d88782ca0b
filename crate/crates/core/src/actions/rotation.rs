//! 6D rotation encoding: the first two columns of a rotation matrix,
//! decoded back with Gram-Schmidt.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

const ORTHONORMAL_TOL: f64 = 1e-6;
const DEGENERATE_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum RotationError {
    #[error("invalid rotation")]
    InvalidRotation,
    #[error("degenerate 6D rotation")]
    Degenerate,
}

pub fn rot6d_from_matrix(r: &Matrix3<f64>) -> Result<[f64; 6], RotationError> {
    let gram = r.transpose() * r - Matrix3::identity();
    if gram.amax() > ORTHONORMAL_TOL || r.determinant() <= 0.0 {
        return Err(RotationError::InvalidRotation);
    }
    let c0 = r.column(0);
    let c1 = r.column(1);
    Ok([c0[0], c0[1], c0[2], c1[0], c1[1], c1[2]])
}

pub fn matrix_from_rot6d(v: &[f64; 6]) -> Result<Matrix3<f64>, RotationError> {
    let a1 = Vector3::new(v[0], v[1], v[2]);
    let a2 = Vector3::new(v[3], v[4], v[5]);
    let n1 = a1.norm();
    if !(n1 > DEGENERATE_TOL) {
        return Err(RotationError::Degenerate);
    }
    let b1 = a1 / n1;
    let residual = a2 - b1 * b1.dot(&a2);
    let n2 = residual.norm();
    if !(n2 > DEGENERATE_TOL) {
        return Err(RotationError::Degenerate);
    }
    let b2 = residual / n2;
    let b3 = b1.cross(&b2);
    Ok(Matrix3::from_columns(&[b1, b2, b3]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Rotation3, Unit};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_rotation(rng: &mut impl Rng) -> Matrix3<f64> {
        let axis = Unit::new_normalize(Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ));
        let angle = rng.random_range(-3.1..3.1);
        Rotation3::from_axis_angle(&axis, angle).into_inner()
    }

    /// Gram-Schmidt written out on plain arrays.
    fn oracle(v: [f64; 6]) -> [[f64; 3]; 3] {
        let dot = |a: [f64; 3], b: [f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
        let scale = |a: [f64; 3], s: f64| [a[0] * s, a[1] * s, a[2] * s];
        let a1 = [v[0], v[1], v[2]];
        let a2 = [v[3], v[4], v[5]];
        let b1 = scale(a1, 1.0 / dot(a1, a1).sqrt());
        let p = dot(b1, a2);
        let r = [a2[0] - p * b1[0], a2[1] - p * b1[1], a2[2] - p * b1[2]];
        let b2 = scale(r, 1.0 / dot(r, r).sqrt());
        let b3 = [
            b1[1] * b2[2] - b1[2] * b2[1],
            b1[2] * b2[0] - b1[0] * b2[2],
            b1[0] * b2[1] - b1[1] * b2[0],
        ];
        [b1, b2, b3]
    }

    #[test]
    fn identity_encodes_to_unit_columns() {
        assert_eq!(rot6d_from_matrix(&Matrix3::identity()).unwrap(), [1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn quarter_turn_about_z() {
        let r = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert_eq!(rot6d_from_matrix(&r).unwrap(), [0.0, 1.0, 0.0, -1.0, 0.0, 0.0]);
    }

    #[test]
    fn rejects_non_rotations() {
        let scaled = Matrix3::identity() * 1.01;
        assert_eq!(rot6d_from_matrix(&scaled), Err(RotationError::InvalidRotation));
        let reflection = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0);
        assert_eq!(rot6d_from_matrix(&reflection), Err(RotationError::InvalidRotation));
    }

    #[test]
    fn decode_unit_and_sheared_inputs() {
        assert_eq!(matrix_from_rot6d(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap(), Matrix3::identity());
        assert_eq!(matrix_from_rot6d(&[2.0, 0.0, 0.0, 1.0, 1.0, 0.0]).unwrap(), Matrix3::identity());
    }

    #[test]
    fn decode_matches_oracle() {
        let v = [0.3, 0.4, 0.5, -0.2, 0.9, 0.1];
        let m = matrix_from_rot6d(&v).unwrap();
        let o = oracle(v);
        for (c, col) in o.iter().enumerate() {
            for (r, val) in col.iter().enumerate() {
                assert!((m[(r, c)] - val).abs() < 1e-12);
            }
        }
        assert!((m.transpose() * m - Matrix3::identity()).amax() < 1e-9);
        assert!((m.determinant() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn decode_rejects_degenerate() {
        assert_eq!(matrix_from_rot6d(&[0.0; 6]), Err(RotationError::Degenerate));
        assert_eq!(matrix_from_rot6d(&[1.0, 0.0, 0.0, 3.0, 0.0, 0.0]), Err(RotationError::Degenerate));
    }

    #[test]
    fn random_rotations_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let r = random_rotation(&mut rng);
            let back = matrix_from_rot6d(&rot6d_from_matrix(&r).unwrap()).unwrap();
            assert!((back - r).amax() < 1e-9);
            assert!((back.determinant() - 1.0).abs() < 1e-9);
        }
    }
}
