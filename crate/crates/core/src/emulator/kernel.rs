//! Matérn-5/2 correlation with per-dimension lengthscales.

use nalgebra::DMatrix;

const SQRT5: f64 = 2.236_067_977_499_79;

/// Correlation at scaled distance `r`.
#[inline]
pub fn matern52(r: f64) -> f64 {
    let s = SQRT5 * r;
    (1.0 + s + s * s / 3.0) * (-s).exp()
}

/// Common factor of the log-lengthscale derivative: `dk/dlog l_k = f(r) * (dx_k / l_k)^2`.
#[inline]
pub(crate) fn matern52_dlog_factor(r: f64) -> f64 {
    let s = SQRT5 * r;
    (5.0 / 3.0) * (1.0 + s) * (-s).exp()
}

/// Rows of `x` divided elementwise by the lengthscales, stored row-major.
pub(crate) fn scale_rows(x: &[Vec<f64>], lengthscales: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len() * lengthscales.len());
    for row in x {
        out.extend(row.iter().zip(lengthscales).map(|(v, l)| v / l));
    }
    out
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        s += d * d;
    }
    s
}

/// Correlation matrix of row-major scaled inputs with `d` columns.
pub(crate) fn correlation_matrix(scaled: &[f64], d: usize) -> DMatrix<f64> {
    let n = scaled.len() / d;
    let mut k = DMatrix::<f64>::identity(n, n);
    for i in 0..n {
        let xi = &scaled[i * d..(i + 1) * d];
        for j in 0..i {
            let v = matern52(sq_dist(xi, &scaled[j * d..(j + 1) * d]).sqrt());
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Writes the correlations between `x` (already scaled) and every training row into `out`.
#[inline]
pub(crate) fn cross_correlation(x_scaled: &[f64], train: &[f64], d: usize, out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        *o = matern52(sq_dist(x_scaled, &train[i * d..(i + 1) * d]).sqrt());
    }
}
