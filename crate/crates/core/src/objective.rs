//! Tracking-error objectives and their gradients.
//!
//! Both measures share the residual `e = r_b - X w`:
//!
//! * ETE: `(1/T) ‖e‖²`, gradient `-(2/T) Xᵀ e`
//! * DR:  `(1/T) ‖e⁺‖²`, gradient `-(2/T) Xᵀ e⁺`
//!
//! DR only penalises days on which the portfolio lags the benchmark. Its gradient
//! is dominated by the ETE one, so the same Lipschitz constant serves both.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{gram_top_eigenvalue, EigenError, PowerIteration};
use crate::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ObjectiveError {
    #[error("returns have {rows} rows but benchmark has {bench} entries")]
    RowMismatch { rows: usize, bench: usize },
    #[error("weight vector has length {got}, expected {expected}")]
    WeightLength { got: usize, expected: usize },
    #[error("objective needs at least one day and one asset")]
    Empty,
    #[error(transparent)]
    Eigen(#[from] EigenError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrackingMeasure {
    /// Empirical tracking error.
    Ete,
    /// Downside risk.
    Dr,
}

#[derive(Debug, Clone)]
pub struct Objective<T> {
    kind: TrackingMeasure,
    x: Array2<T>,
    r_b: Array1<T>,
}

/// Lipschitz constant `β = (2/T) λ1(XᵀX)` of the objective gradient.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct LipschitzBound<T>(T);

impl<T: Scalar> LipschitzBound<T> {
    pub fn new(beta: T) -> Option<Self> {
        (beta >= T::zero() && beta.is_finite()).then_some(Self(beta))
    }

    pub fn beta(self) -> T {
        self.0
    }
}

impl<T: Scalar> Objective<T> {
    pub fn new(kind: TrackingMeasure, x: Array2<T>, r_b: Array1<T>) -> Result<Self, ObjectiveError> {
        if x.nrows() != r_b.len() {
            return Err(ObjectiveError::RowMismatch {
                rows: x.nrows(),
                bench: r_b.len(),
            });
        }
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(ObjectiveError::Empty);
        }
        Ok(Self { kind, x, r_b })
    }

    pub fn kind(&self) -> TrackingMeasure {
        self.kind
    }

    pub fn returns(&self) -> ArrayView2<'_, T> {
        self.x.view()
    }

    pub fn benchmark(&self) -> ArrayView1<'_, T> {
        self.r_b.view()
    }

    pub fn n_days(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_assets(&self) -> usize {
        self.x.ncols()
    }

    fn check(&self, w: ArrayView1<'_, T>) -> Result<(), ObjectiveError> {
        if w.len() != self.n_assets() {
            return Err(ObjectiveError::WeightLength {
                got: w.len(),
                expected: self.n_assets(),
            });
        }
        Ok(())
    }

    /// `r_b - X w`.
    pub fn residual(&self, w: ArrayView1<'_, T>) -> Result<Array1<T>, ObjectiveError> {
        self.check(w)?;
        Ok(&self.r_b - &self.x.dot(&w))
    }

    fn scale(&self) -> T {
        T::one() / T::from_usize_lossy(self.n_days())
    }

    pub fn ete_value(&self, w: ArrayView1<'_, T>) -> Result<T, ObjectiveError> {
        let e = self.residual(w)?;
        Ok(e.dot(&e) * self.scale())
    }

    pub fn dr_value(&self, w: ArrayView1<'_, T>) -> Result<T, ObjectiveError> {
        let e = self.residual(w)?;
        let s: T = e.iter().map(|&v| v.max(T::zero())).map(|v| v * v).sum();
        Ok(s * self.scale())
    }

    /// Value of the configured measure.
    pub fn value(&self, w: ArrayView1<'_, T>) -> Result<T, ObjectiveError> {
        match self.kind {
            TrackingMeasure::Ete => self.ete_value(w),
            TrackingMeasure::Dr => self.dr_value(w),
        }
    }

    /// Gradient of the configured measure.
    pub fn gradient(&self, w: ArrayView1<'_, T>) -> Result<Array1<T>, ObjectiveError> {
        let mut e = self.residual(w)?;
        if self.kind == TrackingMeasure::Dr {
            // A zero residual contributes nothing to either branch.
            e.mapv_inplace(|v| v.max(T::zero()));
        }
        let coef = -(T::lit(2.0) * self.scale());
        Ok(self.x.t().dot(&e) * coef)
    }

    /// `β = (2/T) λ1(XᵀX)` by power iteration.
    pub fn lipschitz(&self) -> Result<LipschitzBound<T>, ObjectiveError> {
        self.lipschitz_with(PowerIteration::default())
    }

    pub fn lipschitz_with(&self, opts: PowerIteration<T>) -> Result<LipschitzBound<T>, ObjectiveError> {
        let lambda = gram_top_eigenvalue(self.x.view(), opts)?;
        Ok(LipschitzBound(T::lit(2.0) * self.scale() * lambda))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn diag(kind: TrackingMeasure, r_b: Array1<f64>) -> Objective<f64> {
        Objective::new(kind, array![[1.0, 0.0], [0.0, 2.0]], r_b).unwrap()
    }

    #[test]
    fn ete_examples() {
        let o = diag(TrackingMeasure::Ete, array![1.0, 2.0]);
        assert_eq!(o.ete_value(array![1.0, 1.0].view()).unwrap(), 0.0);
        assert_eq!(o.gradient(array![1.0, 1.0].view()).unwrap(), array![0.0, 0.0]);
        let o = diag(TrackingMeasure::Ete, array![1.0, 0.0]);
        assert_eq!(o.ete_value(array![0.0, 0.0].view()).unwrap(), 0.5);
    }

    #[test]
    fn dr_examples() {
        // residual [0.5, -0.5]
        let o = Objective::new(TrackingMeasure::Dr, array![[1.0], [1.0]], array![0.5, -0.5]).unwrap();
        let w = array![0.0];
        assert_eq!(o.dr_value(w.view()).unwrap(), 0.125);

        // fully clipped: X w >= r_b
        let o = diag(TrackingMeasure::Dr, array![0.5, 0.5]);
        let w = array![1.0, 1.0];
        assert_eq!(o.dr_value(w.view()).unwrap(), 0.0);
        assert_eq!(o.gradient(w.view()).unwrap(), array![0.0, 0.0]);

        // all positive residual: DR == ETE
        let w = array![0.1, 0.1];
        assert_eq!(o.dr_value(w.view()).unwrap(), o.ete_value(w.view()).unwrap());
    }

    #[test]
    fn dimension_errors() {
        let o = diag(TrackingMeasure::Ete, array![1.0, 2.0]);
        assert!(matches!(
            o.ete_value(array![1.0].view()),
            Err(ObjectiveError::WeightLength { got: 1, expected: 2 })
        ));
        assert!(o.gradient(array![1.0, 2.0, 3.0].view()).is_err());
        assert!(matches!(
            Objective::new(TrackingMeasure::Ete, array![[1.0]], array![1.0, 2.0]),
            Err(ObjectiveError::RowMismatch { .. })
        ));
    }

    #[test]
    fn lipschitz_examples() {
        let o = diag(TrackingMeasure::Ete, array![1.0, 2.0]);
        assert!((o.lipschitz().unwrap().beta() - 4.0).abs() < 1e-9);
        let z = Objective::<f64>::new(TrackingMeasure::Dr, Array2::zeros((3, 2)), Array1::zeros(3)).unwrap();
        assert_eq!(z.lipschitz().unwrap().beta(), 0.0);
    }
}
