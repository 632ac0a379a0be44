use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

pub(crate) const JITTER_START: f64 = 1e-8;
pub(crate) const JITTER_MAX: f64 = 1e-4;

/// Cholesky factor of a symmetric positive-definite matrix plus the jitter it needed.
pub(crate) struct Factor {
    pub chol: Cholesky<f64, Dyn>,
    pub jitter: f64,
    pub logdet: f64,
}

/// Factorizes `m`, adding `jitter * scale` to the diagonal from 1e-8 up to
/// 1e-4 (x10 per attempt) if the plain factorization fails.
pub(crate) fn factor_with_jitter(m: &DMatrix<f64>, scale: f64) -> Result<Factor> {
    if let Some(chol) = m.clone().cholesky() {
        return Ok(finish(chol, 0.0));
    }
    let mut j = JITTER_START;
    while j <= JITTER_MAX * 1.000_001 {
        let mut mj = m.clone();
        for i in 0..mj.nrows() {
            mj[(i, i)] += j * scale;
        }
        if let Some(chol) = mj.cholesky() {
            return Ok(finish(chol, j * scale));
        }
        j *= 10.0;
    }
    Err(Error::Singular {
        max_jitter: JITTER_MAX * scale,
    })
}

fn finish(chol: Cholesky<f64, Dyn>, jitter: f64) -> Factor {
    let l = chol.l_dirty();
    let logdet = 2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>();
    Factor { chol, jitter, logdet }
}

impl Factor {
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    /// Lower factor flattened row-major (only the lower triangle is meaningful).
    pub fn lower_row_major(&self) -> Vec<f64> {
        let l = self.chol.l();
        let n = l.nrows();
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                out[i * n + j] = l[(i, j)];
            }
        }
        out
    }
}

/// Squared norm of `L^{-1} b` for a row-major lower-triangular `l`.
#[inline]
pub(crate) fn forward_sq_norm(l: &[f64], n: usize, b: &[f64], work: &mut [f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..n {
        let row = &l[i * n..i * n + i];
        let mut s = b[i];
        for (lij, wj) in row.iter().zip(&work[..i]) {
            s -= lij * wj;
        }
        let v = s / l[i * n + i];
        work[i] = v;
        acc += v * v;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jitter_rescues_semidefinite() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let f = factor_with_jitter(&m, 1.0).unwrap();
        assert!(f.jitter >= JITTER_START && f.jitter <= JITTER_MAX);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(factor_with_jitter(&bad, 1.0), Err(Error::Singular { .. })));
    }

    #[test]
    fn forward_norm_matches_solve() {
        let m = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let f = factor_with_jitter(&m, 1.0).unwrap();
        let b = [0.3, -1.0, 2.0];
        let mut work = [0.0; 3];
        let got = forward_sq_norm(&f.lower_row_major(), 3, &b, &mut work);
        let want = DVector::from_row_slice(&b).dot(&f.solve(&DVector::from_row_slice(&b)));
        assert!((got - want).abs() < 1e-12);
        assert!((f.logdet - m.determinant().ln()).abs() < 1e-12);
    }
}
