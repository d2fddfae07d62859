//! Two-stage baseline: nonnegative orthogonal matching pursuit picks the assets,
//! projected gradient descent on the probability simplex allocates capital.
//!
//! Both inner solvers work on the `k×k` Gram matrix of the selected columns, so
//! an iteration costs O(k²) once the Gram matrix is formed.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{gram_top_eigenvalue, EigenError, PowerIteration};
use crate::pds::{relative_change, FeasibilityReport, SolveResult};
use crate::proximal::{l0_norm, project_simplex};
use crate::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NnompError {
    #[error("sparsity level {k} outside 1..={n}")]
    SparsityRange { k: usize, n: usize },
    #[error("returns have {rows} rows but benchmark has {bench} entries")]
    RowMismatch { rows: usize, bench: usize },
    #[error(transparent)]
    Eigen(#[from] EigenError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NnompOptions<T> {
    pub nnls_tol: T,
    pub nnls_max_iter: usize,
    pub pgd: PgdOptions<T>,
}

impl<T: Scalar> Default for NnompOptions<T> {
    fn default() -> Self {
        Self {
            nnls_tol: T::lit(1e-10),
            nnls_max_iter: 20_000,
            pgd: PgdOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PgdOptions<T> {
    pub tol: T,
    pub max_iter: usize,
    /// Keep the objective value after every iteration.
    #[serde(default)]
    pub record_trace: bool,
}

impl<T: Scalar> Default for PgdOptions<T> {
    fn default() -> Self {
        Self {
            tol: T::lit(1e-8),
            max_iter: 50_000,
            record_trace: false,
        }
    }
}

/// Assets chosen by the greedy stage, in selection order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult<T> {
    pub support: Vec<usize>,
    /// Nonnegative least-squares coefficients on `support` (not normalised).
    pub coeffs: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PgdOutcome<T> {
    pub weights: Array1<T>,
    pub iterations: usize,
    pub converged: bool,
    /// ETE after each iteration when requested, starting with the initial point.
    pub trace: Vec<T>,
}

fn check_rows<T>(x: ArrayView2<'_, T>, r_b: ArrayView1<'_, T>) -> Result<(), NnompError> {
    if x.nrows() != r_b.len() {
        return Err(NnompError::RowMismatch {
            rows: x.nrows(),
            bench: r_b.len(),
        });
    }
    Ok(())
}

fn columns<T: Scalar>(x: ArrayView2<'_, T>, idx: &[usize]) -> Array2<T> {
    x.select(Axis(1), idx)
}

/// Minimise `½‖r − A c‖²` over `c ≥ 0` by projected gradient, warm-started at `start`.
fn nnls<T: Scalar>(a: ArrayView2<'_, T>, r: ArrayView1<'_, T>, start: Array1<T>, tol: T, max_iter: usize) -> Result<Array1<T>, NnompError> {
    let gram = a.t().dot(&a);
    let rhs = a.t().dot(&r);
    let lipschitz = gram_top_eigenvalue(a, PowerIteration::default())?;
    if lipschitz == T::zero() {
        return Ok(Array1::zeros(start.len()));
    }
    let step = T::one() / lipschitz;
    let mut c = start;
    for _ in 0..max_iter {
        let grad = gram.dot(&c) - &rhs;
        let next = (&c - &(grad * step)).mapv(|v| v.max(T::zero()));
        let change = relative_change(next.view(), c.view());
        c = next;
        if change <= tol {
            break;
        }
    }
    Ok(c)
}

/// Greedy nonnegative selection of at most `k` assets.
///
/// Each round adds the unselected column with the largest positive correlation
/// with the current residual (lowest index on ties), refits NNLS on the whole
/// support, and updates the residual. Stops early when no column correlates
/// positively.
pub fn nnomp_select<T: Scalar>(
    x: ArrayView2<'_, T>,
    r_b: ArrayView1<'_, T>,
    k: usize,
    opts: &NnompOptions<T>,
) -> Result<SelectionResult<T>, NnompError> {
    let n = x.ncols();
    if k == 0 || k > n {
        return Err(NnompError::SparsityRange { k, n });
    }
    check_rows(x, r_b)?;
    let mut support: Vec<usize> = Vec::with_capacity(k);
    let mut coeffs = Array1::zeros(0);
    let mut residual = r_b.to_owned();
    let mut chosen = vec![false; n];
    for _ in 0..k {
        let corr = x.t().dot(&residual);
        let mut best: Option<(usize, T)> = None;
        for (j, &c) in corr.iter().enumerate() {
            if chosen[j] || !(c > T::zero()) {
                continue;
            }
            if best.is_none_or(|(_, b)| c > b) {
                best = Some((j, c));
            }
        }
        let Some((j, _)) = best else { break };
        chosen[j] = true;
        support.push(j);
        let mut start = coeffs.to_vec();
        start.push(T::zero());
        let sub = columns(x, &support);
        coeffs = nnls(sub.view(), r_b, Array1::from(start), opts.nnls_tol, opts.nnls_max_iter)?;
        residual = &r_b - &sub.dot(&coeffs);
    }
    Ok(SelectionResult {
        support,
        coeffs: coeffs.to_vec(),
    })
}

/// Minimise ETE over the probability simplex, starting from `1/K`.
///
/// Steps have size `1/β` with `β = (2/T) λ1(XᵀX)`, so the objective never increases.
pub fn pgd_allocate<T: Scalar>(
    x_sub: ArrayView2<'_, T>,
    r_b: ArrayView1<'_, T>,
    opts: &PgdOptions<T>,
) -> Result<PgdOutcome<T>, NnompError> {
    check_rows(x_sub, r_b)?;
    let k = x_sub.ncols();
    if k == 0 {
        return Err(NnompError::SparsityRange { k, n: 0 });
    }
    let scale = T::lit(2.0) / T::from_usize_lossy(x_sub.nrows().max(1));
    let gram = x_sub.t().dot(&x_sub);
    let rhs = x_sub.t().dot(&r_b);
    let rr = r_b.dot(&r_b);
    let ete = |w: &Array1<T>| (w.dot(&gram.dot(w)) - T::lit(2.0) * rhs.dot(w) + rr) * scale / T::lit(2.0);

    let mut w = Array1::from_elem(k, T::one() / T::from_usize_lossy(k));
    let mut trace = Vec::new();
    if opts.record_trace {
        trace.push(ete(&w));
    }
    let beta = scale * gram_top_eigenvalue(x_sub, PowerIteration::default())?;
    if k == 1 || beta == T::zero() {
        return Ok(PgdOutcome {
            weights: w,
            iterations: 0,
            converged: true,
            trace,
        });
    }
    let step = T::one() / beta;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        let grad = (gram.dot(&w) - &rhs) * scale;
        let next = project_simplex((&w - &(grad * step)).view());
        let change = relative_change(next.view(), w.view());
        w = next;
        iterations += 1;
        if opts.record_trace {
            trace.push(ete(&w));
        }
        if change <= opts.tol {
            converged = true;
            break;
        }
    }
    Ok(PgdOutcome {
        weights: w,
        iterations,
        converged,
        trace,
    })
}

/// Selection followed by allocation, zero-padded to all `N` assets.
///
/// If no asset correlates positively with the benchmark the result is the
/// uniform portfolio over all assets with `fallback` set.
pub fn nnomp_pgd<T: Scalar>(
    x: ArrayView2<'_, T>,
    r_b: ArrayView1<'_, T>,
    k: usize,
    opts: &NnompOptions<T>,
) -> Result<SolveResult<T>, NnompError> {
    let n = x.ncols();
    let selection = nnomp_select(x, r_b, k, opts)?;
    let (w, iterations, converged, fallback) = if selection.support.is_empty() {
        log::warn!("nnomp selected no assets; falling back to the uniform portfolio");
        (Array1::from_elem(n, T::one() / T::from_usize_lossy(n)), 0, true, true)
    } else {
        let mut support = selection.support.clone();
        support.sort_unstable();
        let sub = columns(x, &support);
        let alloc = pgd_allocate(sub.view(), r_b, &opts.pgd)?;
        let mut w = Array1::zeros(n);
        for (&j, &v) in support.iter().zip(alloc.weights.iter()) {
            w[j] = v;
        }
        (w, alloc.iterations, alloc.converged, false)
    };
    let residual = &r_b - &x.dot(&w);
    let objective_value = residual.dot(&residual) / T::from_usize_lossy(x.nrows().max(1));
    let feasibility = FeasibilityReport {
        sum_residual: (w.sum() - T::one()).abs(),
        box_violation: w.iter().fold(T::zero(), |acc, &v| acc.max(-v)),
        sparsity_count: l0_norm(w.view()),
        sparsity_limit: k,
    };
    Ok(SolveResult {
        w: w.to_vec(),
        iterations,
        converged,
        objective_value,
        feasibility,
        fallback,
    })
}
