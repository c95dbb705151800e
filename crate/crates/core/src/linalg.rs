//! Dense SPD helpers: Cholesky with an escalating diagonal jitter.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// First jitter rung, relative to the diagonal scale.
pub const JITTER_START: f64 = 1e-10;
/// Last jitter rung before giving up.
pub const JITTER_MAX: f64 = 1e-6;

/// A Cholesky factor together with the jitter that was needed to obtain it.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
    pub jitter: f64,
}

impl SpdFactor {
    /// Factorises `matrix`, adding `rung * scale` to the diagonal on failure
    /// with rungs 1e-10, 1e-9, ..., 1e-6.
    pub fn new(matrix: DMatrix<f64>, scale: f64) -> Result<Self> {
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("Gram matrix has non-finite entries".into()));
        }
        if let Some(chol) = Cholesky::new(matrix.clone()) {
            return Ok(Self { chol, jitter: 0.0 });
        }
        let mut rung = JITTER_START;
        let mut last = 0.0;
        while rung <= JITTER_MAX * (1.0 + 1e-9) {
            let jitter = rung * scale;
            let mut jittered = matrix.clone();
            for i in 0..jittered.nrows() {
                jittered[(i, i)] += jitter;
            }
            if let Some(chol) = Cholesky::new(jittered) {
                return Ok(Self { chol, jitter });
            }
            last = jitter;
            rung *= 10.0;
        }
        Err(Error::Conditioning { jitter: last })
    }

    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(rhs)
    }

    pub fn solve_matrix(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(rhs)
    }

    /// Lower-triangular factor `L` with `L Lᵀ = K + jitter·I`.
    pub fn l(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    /// `vᵀ K⁻¹ v` via one triangular solve.
    pub fn quad_form(&self, v: &DVector<f64>) -> f64 {
        let mut w = v.clone();
        self.chol.l_dirty().solve_lower_triangular_mut(&mut w);
        w.norm_squared()
    }
}

/// Matrix 1-norm (maximum absolute column sum).
pub fn norm1(matrix: &DMatrix<f64>) -> f64 {
    matrix
        .column_iter()
        .map(|col| col.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spd_matrix_needs_no_jitter() {
        let k = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let f = SpdFactor::new(k, 1.0).unwrap();
        assert_eq!(f.jitter, 0.0);
        let x = f.solve(&DVector::from_vec(vec![3.0, 3.0]));
        assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn rank_deficient_matrix_gets_jitter() {
        let k = DMatrix::from_element(3, 3, 1.0);
        let f = SpdFactor::new(k, 1.0).unwrap();
        assert!(f.jitter >= JITTER_START && f.jitter <= JITTER_MAX);
    }

    #[test]
    fn indefinite_matrix_is_a_conditioning_error() {
        let k = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        match SpdFactor::new(k, 1.0) {
            Err(Error::Conditioning { jitter }) => assert!((jitter - 1e-6).abs() < 1e-12),
            other => panic!("expected conditioning error, got {other:?}"),
        }
    }

    #[test]
    fn quad_form_matches_solve() {
        let k = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let v = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let f = SpdFactor::new(k, 1.0).unwrap();
        let direct = v.dot(&f.solve(&v));
        assert!((f.quad_form(&v) - direct).abs() < 1e-13);
    }

    #[test]
    fn norm1_is_max_abs_column_sum() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, -4.0, -2.0, 1.0]);
        assert_eq!(norm1(&a), 5.0);
    }
}
