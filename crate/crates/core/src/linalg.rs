//! Small dense helpers and the matrix-free largest-eigenvalue estimate.

use ndarray::{Array1, ArrayView1, ArrayView2};
use thiserror::Error;

use crate::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EigenError {
    #[error("power iteration did not converge after {iterations} iterations (last relative change {last_change:e})")]
    NotConverged { iterations: usize, last_change: f64 },
    #[error("non-finite value in power iteration at iteration {iteration}")]
    NonFinite { iteration: usize },
}

/// Euclidean norm.
pub fn norm2<T: Scalar>(v: ArrayView1<'_, T>) -> T {
    v.dot(&v).sqrt()
}

/// Settings for [`gram_top_eigenvalue`].
#[derive(Debug, Clone, Copy)]
pub struct PowerIteration<T> {
    /// Stop when the Rayleigh quotient changes by at most this relative amount.
    pub tol: T,
    pub max_iter: usize,
}

impl<T: Scalar> Default for PowerIteration<T> {
    fn default() -> Self {
        // 1e-10 is below f32 resolution; clamp to a few ulps there.
        let tol = T::lit(1e-10).max(T::epsilon() * T::lit(4.0));
        Self { tol, max_iter: 10_000 }
    }
}

/// Largest eigenvalue of `XᵀX` without forming it.
///
/// Each step costs two matrix-vector products with `X`, i.e. O(NT). The start
/// vector is all ones, so the estimate is deterministic.
pub fn gram_top_eigenvalue<T: Scalar>(
    x: ArrayView2<'_, T>,
    opts: PowerIteration<T>,
) -> Result<T, EigenError> {
    let n = x.ncols();
    if n == 0 || x.nrows() == 0 {
        return Ok(T::zero());
    }
    let mut v = Array1::from_elem(n, T::one() / T::from_usize_lossy(n).sqrt());
    let mut lambda = T::zero();
    let mut last_change = f64::INFINITY;
    for it in 1..=opts.max_iter {
        let xv = x.dot(&v);
        let w = x.t().dot(&xv);
        // Rayleigh quotient vᵀXᵀXv with ‖v‖ = 1.
        let rq = xv.dot(&xv);
        let wn = norm2(w.view());
        if !wn.is_finite() || !rq.is_finite() {
            return Err(EigenError::NonFinite { iteration: it });
        }
        if wn == T::zero() {
            // v lies in the null space; for the all-ones start this means X = 0
            // or its columns cancel, and then λ1 is the quotient seen so far.
            return Ok(lambda.max(rq));
        }
        let change = if rq == T::zero() {
            T::zero()
        } else {
            ((rq - lambda) / rq).abs()
        };
        lambda = rq;
        v = w / wn;
        last_change = change.as_f64();
        if it > 1 && change <= opts.tol {
            return Ok(lambda);
        }
    }
    Err(EigenError::NotConverged {
        iterations: opts.max_iter,
        last_change,
    })
}
