//! Metric projections onto the constraint sets of the tracking problem and the
//! conjugate-prox (Moreau) transform used for the dual updates.
//!
//! The ℓ0 sets are nonconvex, so their projection is set-valued when
//! magnitudes tie; ties keep the lowest index. Projections write literal
//! zeros, so `‖·‖₀` is counted with exact comparison.

use std::cmp::Ordering;

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProxError {
    #[error("sparsity level must be at least 1")]
    ZeroSparsity,
    #[error("vector length {got} does not match {expected}")]
    Length { got: usize, expected: usize },
    #[error("box lower bound {lower} exceeds upper bound {upper}")]
    InvertedBox { lower: f64, upper: f64 },
}

/// Number of exactly-nonzero entries.
pub fn l0_norm<T: Scalar>(v: ArrayView1<'_, T>) -> usize {
    v.iter().filter(|&&x| x != T::zero()).count()
}

/// Indices sorted by decreasing magnitude; equal magnitudes stay in index order.
fn magnitude_order<T: Scalar>(z: ArrayView1<'_, T>) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..z.len()).collect();
    idx.sort_by(|&a, &b| z[b].abs().partial_cmp(&z[a].abs()).unwrap_or(Ordering::Equal));
    idx
}

/// Keep the `k` largest-magnitude entries of `z`, zero the rest.
///
/// `k >= len(z)` is the identity.
pub fn project_l0<T: Scalar>(z: ArrayView1<'_, T>, k: usize) -> Result<Array1<T>, ProxError> {
    if k == 0 {
        return Err(ProxError::ZeroSparsity);
    }
    if k >= z.len() {
        return Ok(z.to_owned());
    }
    let mut out = Array1::zeros(z.len());
    for &i in magnitude_order(z).iter().take(k) {
        out[i] = z[i];
    }
    Ok(out)
}

/// `w0 + P_{S_0}(z - w0)`: move at most `k` coordinates away from `w0`.
pub fn project_turnover<T: Scalar>(
    z: ArrayView1<'_, T>,
    k: usize,
    w0: ArrayView1<'_, T>,
) -> Result<Array1<T>, ProxError> {
    if z.len() != w0.len() {
        return Err(ProxError::Length {
            got: z.len(),
            expected: w0.len(),
        });
    }
    let diff = &z - &w0;
    let step = project_l0(diff.view(), k)?;
    // Untouched coordinates are copied from w0 rather than summed, so they
    // compare equal to w0 bit for bit.
    Ok(Array1::from_shape_fn(z.len(), |i| {
        if step[i] == T::zero() {
            w0[i]
        } else {
            z[i]
        }
    }))
}

/// Elementwise clamp into `[lower, upper]`.
pub fn project_box<T: Scalar>(z: ArrayView1<'_, T>, lower: T, upper: T) -> Result<Array1<T>, ProxError> {
    if lower > upper {
        return Err(ProxError::InvertedBox {
            lower: lower.as_f64(),
            upper: upper.as_f64(),
        });
    }
    Ok(z.mapv(|v| v.min(upper).max(lower)))
}

/// Projection onto the hyperplane `1ᵀw = 1`.
pub fn project_hyperplane<T: Scalar>(z: ArrayView1<'_, T>) -> Array1<T> {
    let n = T::from_usize_lossy(z.len());
    let shift = (T::one() - z.sum()) / n;
    z.mapv(|v| v + shift)
}

/// Euclidean projection onto the probability simplex (sort and threshold).
pub fn project_simplex<T: Scalar>(z: ArrayView1<'_, T>) -> Array1<T> {
    let mut sorted = z.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap_or(Ordering::Equal));
    let mut cumsum = T::zero();
    let mut theta = T::zero();
    for (i, &v) in sorted.iter().enumerate() {
        cumsum += v;
        let t = (cumsum - T::one()) / T::from_usize_lossy(i + 1);
        if v - t > T::zero() {
            theta = t;
        } else {
            break;
        }
    }
    z.mapv(|v| (v - theta).max(T::zero()))
}

/// `prox_{γ f*}(x) = x - γ prox_{f/γ}(x/γ)`.
///
/// For indicator functions the inner prox is the projection regardless of its
/// index, so `prox` is just the projection routine.
pub fn conjugate_prox<T, F>(prox: F, gamma: T, x: ArrayView1<'_, T>) -> Array1<T>
where
    T: Scalar,
    F: Fn(ArrayView1<'_, T>) -> Array1<T>,
{
    let scaled = x.mapv(|v| v / gamma);
    let p = prox(scaled.view());
    &x - &(p * gamma)
}

/// A constraint set with a closed-form projection.
pub trait ConstraintSet<T: Scalar> {
    fn project(&self, z: ArrayView1<'_, T>) -> Array1<T>;

    fn contains(&self, w: ArrayView1<'_, T>, tol: T) -> bool;
}

/// `S_0` (portfolio sparsity) or `S_{w0}` (turnover sparsity).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum SparsitySet<T> {
    Portfolio { k: usize },
    Turnover { k: usize, w0: Vec<T> },
}

impl<T: Scalar> SparsitySet<T> {
    pub fn portfolio(k: usize, n: usize) -> Result<Self, ProxError> {
        check_k(k, n)?;
        Ok(Self::Portfolio { k })
    }

    pub fn turnover(k: usize, w0: Vec<T>) -> Result<Self, ProxError> {
        check_k(k, w0.len())?;
        Ok(Self::Turnover { k, w0 })
    }

    pub fn k(&self) -> usize {
        match self {
            Self::Portfolio { k } | Self::Turnover { k, .. } => *k,
        }
    }

    pub fn anchor(&self) -> Option<&[T]> {
        match self {
            Self::Portfolio { .. } => None,
            Self::Turnover { w0, .. } => Some(w0),
        }
    }

    /// Count that the constraint bounds: `‖w‖₀` or `‖w - w0‖₀`.
    pub fn count(&self, w: ArrayView1<'_, T>) -> usize {
        match self {
            Self::Portfolio { .. } => l0_norm(w),
            Self::Turnover { w0, .. } => w.iter().zip(w0).filter(|(a, b)| a != b).count(),
        }
    }
}

fn check_k(k: usize, n: usize) -> Result<(), ProxError> {
    if k == 0 {
        return Err(ProxError::ZeroSparsity);
    }
    if k > n {
        return Err(ProxError::Length { got: k, expected: n });
    }
    Ok(())
}

impl<T: Scalar> ConstraintSet<T> for SparsitySet<T> {
    fn project(&self, z: ArrayView1<'_, T>) -> Array1<T> {
        match self {
            Self::Portfolio { k } => project_l0(z, *k).expect("k validated at construction"),
            Self::Turnover { k, w0 } => project_turnover(z, *k, ArrayView1::from(w0.as_slice()))
                .expect("k and w0 validated at construction"),
        }
    }

    fn contains(&self, w: ArrayView1<'_, T>, _tol: T) -> bool {
        self.count(w) <= self.k()
    }
}

/// `S_{l,u}`: every weight within `[lower, upper]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxSet<T> {
    pub lower: T,
    pub upper: T,
}

impl<T: Scalar> BoxSet<T> {
    pub fn new(lower: T, upper: T) -> Result<Self, ProxError> {
        if lower > upper {
            return Err(ProxError::InvertedBox {
                lower: lower.as_f64(),
                upper: upper.as_f64(),
            });
        }
        Ok(Self { lower, upper })
    }

    /// Largest violation `max(l - w_i, w_i - u, 0)`.
    pub fn violation(&self, w: ArrayView1<'_, T>) -> T {
        w.iter().fold(T::zero(), |acc, &v| {
            acc.max(self.lower - v).max(v - self.upper)
        })
    }
}

impl<T: Scalar> ConstraintSet<T> for BoxSet<T> {
    fn project(&self, z: ArrayView1<'_, T>) -> Array1<T> {
        z.mapv(|v| v.min(self.upper).max(self.lower))
    }

    fn contains(&self, w: ArrayView1<'_, T>, tol: T) -> bool {
        self.violation(w) <= tol
    }
}

/// `S_1`: weights sum to one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SumToOneSet {
    pub n: usize,
}

impl SumToOneSet {
    pub fn residual<T: Scalar>(&self, w: ArrayView1<'_, T>) -> T {
        (w.sum() - T::one()).abs()
    }
}

impl<T: Scalar> ConstraintSet<T> for SumToOneSet {
    fn project(&self, z: ArrayView1<'_, T>) -> Array1<T> {
        project_hyperplane(z)
    }

    fn contains(&self, w: ArrayView1<'_, T>, tol: T) -> bool {
        self.residual(w) <= tol
    }
}
