//! Small dense linear algebra used by the filters.
//!
//! The hot filtering path works on flat row-major slices with caller-owned
//! scratch space; the slower smoothing and forecasting paths use nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Diagonal jitter tried in order when a factorisation fails.
pub const JITTER_LADDER: [f64; 8] = [0.0, 1e-12, 1e-11, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

/// In-place lower Cholesky factorisation of an `n x n` row-major matrix.
///
/// Only the lower triangle is read. Returns `false` if a pivot is not
/// strictly positive; the slice contents are then unspecified.
pub fn cholesky_in_place(a: &mut [f64], n: usize) -> bool {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > 0.0) || !d.is_finite() {
            return false;
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in (j + 1)..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
        for k in (j + 1)..n {
            a[j * n + k] = 0.0;
        }
    }
    true
}

/// Factorises `src` into `dst`, escalating diagonal jitter through
/// [`JITTER_LADDER`]. Returns the jitter that succeeded.
pub fn cholesky_with_jitter(src: &[f64], dst: &mut [f64], n: usize) -> Option<f64> {
    for &jitter in JITTER_LADDER.iter() {
        dst[..n * n].copy_from_slice(&src[..n * n]);
        for i in 0..n {
            dst[i * n + i] += jitter;
        }
        if cholesky_in_place(dst, n) {
            return Some(jitter);
        }
    }
    None
}

/// Solves `L y = b` in place for lower-triangular row-major `l`.
pub fn forward_substitute(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

/// Log-determinant of `L Lᵀ` given its lower factor.
pub fn chol_logdet(l: &[f64], n: usize) -> f64 {
    (0..n).map(|i| l[i * n + i].ln()).sum::<f64>() * 2.0
}

/// Lower Cholesky factor of a symmetric positive definite nalgebra matrix,
/// with jitter escalation.
pub fn spd_cholesky(a: &DMatrix<f64>) -> Option<(DMatrix<f64>, f64)> {
    let n = a.nrows();
    for &jitter in JITTER_LADDER.iter() {
        let mut m = a.clone();
        for i in 0..n {
            m[(i, i)] += jitter;
        }
        if let Some(ch) = m.cholesky() {
            return Some((ch.l(), jitter));
        }
    }
    None
}

/// A square root `S` with `S Sᵀ = A` for a symmetric positive semi-definite
/// matrix. Falls back to a clamped eigendecomposition when Cholesky fails, so
/// exactly singular covariances (including zero) are handled without jitter.
pub fn psd_sqrt(a: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(ch) = a.clone().cholesky() {
        return ch.l();
    }
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut s = eig.eigenvectors.clone();
    for (j, &lambda) in eig.eigenvalues.iter().enumerate() {
        let root = if lambda > 0.0 { lambda.sqrt() } else { 0.0 };
        for i in 0..s.nrows() {
            s[(i, j)] *= root;
        }
    }
    s
}

/// Solves `A X = B` for symmetric positive semi-definite `A`, using
/// Cholesky with jitter and a pseudo-inverse as the last resort.
pub fn spd_solve(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(ch) = a.clone().cholesky() {
        return ch.solve(b);
    }
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let scale = eig.eigenvalues.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let tol = scale * 1e-12 * a.nrows() as f64;
    let inv_vals = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues
            .iter()
            .map(|&l| if l > tol { 1.0 / l } else { 0.0 }),
    );
    let v = &eig.eigenvectors;
    v * DMatrix::from_diagonal(&inv_vals) * v.transpose() * b
}

/// Replaces `a` with `(a + aᵀ) / 2`.
pub fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let m = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = m;
            a[(j, i)] = m;
        }
    }
}
