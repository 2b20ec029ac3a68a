//! Small dense linear-algebra helpers shared by the density evaluators.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Relative diagonal jitter used for the single factorization retry.
pub const JITTER_REL: f64 = 1e-10;

/// Cholesky factorization with one jittered retry.
pub fn cholesky_with_jitter(m: DMatrix<f64>, context: &str) -> Result<DMatrix<f64>> {
    cholesky_decomp(m, context).map(|c| c.l())
}

pub fn cholesky_decomp(mut m: DMatrix<f64>, context: &str) -> Result<Cholesky<f64, Dyn>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical(format!("{context}: non-finite entries")));
    }
    let n = m.nrows();
    let trace = m.trace();
    if let Some(c) = Cholesky::new(m.clone()) {
        return Ok(c);
    }
    let jitter = JITTER_REL * trace.abs().max(f64::MIN_POSITIVE) / n.max(1) as f64;
    for i in 0..n {
        m[(i, i)] += jitter;
    }
    Cholesky::new(m).ok_or_else(|| Error::numerical(format!("{context}: cholesky failed after jitter")))
}

/// `log|A|` from its lower Cholesky factor.
pub fn chol_log_det(l: &DMatrix<f64>) -> f64 {
    2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// Solve `L x = b` for lower-triangular `L`.
pub fn solve_lower(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    l.solve_lower_triangular(b)
        .expect("cholesky factor has a positive diagonal")
}

/// Solve `Lᵀ x = b` for lower-triangular `L`.
pub fn solve_lower_transpose(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    l.tr_solve_lower_triangular(b)
        .expect("cholesky factor has a positive diagonal")
}

pub fn solve_lower_mat(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    l.solve_lower_triangular(b)
        .expect("cholesky factor has a positive diagonal")
}
