//! Primal-dual splitting solver for ℓ0-constrained index tracking.
//!
//! The problem `min TE(w)` subject to `w ∈ S_s`, `w ∈ S_{l,u}`, `1ᵀw = 1` is split as
//! `f1 = TE`, `f2 = ι_{S_s}`, `f3(v1, v2) = ι_{S_{l,u}}(v1) + ι_{S_1}(v2)` with
//! `A = [I I]ᵀ`, so `λ1(AᵀA) = 2`. One iteration is
//!
//! ```text
//! w⁺ = P_{S_s}(w − γ1 (∇TE(w) + v1 + v2))
//! vi ← vi + γ2 (2w⁺ − w)                      (i = 1, 2)
//! v1 ← v1 − γ2 P_{S_{l,u}}(v1 / γ2)
//! v2 ← v2 − γ2 P_{S_1}(v2 / γ2)
//! γ1, γ2 ← decay · γ1, decay · γ2
//! ```
//!
//! Sparsity is enforced exactly by the primal projection; the box and the
//! budget are enforced only through the duals, so a finite iterate satisfies
//! them approximately. [`FeasibilityReport`] records by how much.

use ndarray::{Array1, ArrayView1};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::objective::{Objective, ObjectiveError};
use crate::proximal::{conjugate_prox, BoxSet, ConstraintSet, ProxError, SparsitySet, SumToOneSet};
use crate::Scalar;

/// `λ1(AᵀA)` for `A = [I I]ᵀ`.
const DUAL_OPERATOR_NORM: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProblemError {
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Prox(#[from] ProxError),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("feasible set is empty: {0}")]
    Infeasible(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error("non-finite iterate at iteration {iteration}")]
    NonFinite { iteration: usize },
    #[error("stepsizes γ1={gamma1}, γ2={gamma2} violate 1/γ1 − 2γ2 ≥ β/2 with β={beta}")]
    Stepsize { gamma1: f64, gamma2: f64, beta: f64 },
    #[error("invalid solver configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
}

/// Objective plus the three constraint sets, checked for consistency.
#[derive(Debug, Clone)]
pub struct TrackingProblem<T> {
    objective: Objective<T>,
    sparsity: SparsitySet<T>,
    bounds: BoxSet<T>,
    budget: SumToOneSet,
    beta: T,
}

impl<T: Scalar> TrackingProblem<T> {
    /// Validates dimensions, rejects empty feasible sets and computes `β`.
    pub fn new(objective: Objective<T>, sparsity: SparsitySet<T>, bounds: BoxSet<T>) -> Result<Self, ProblemError> {
        let n = objective.n_assets();
        let k = sparsity.k();
        if k == 0 {
            return Err(ProxError::ZeroSparsity.into());
        }
        if k > n {
            return Err(ProblemError::Dimension(format!("sparsity level {k} exceeds {n} assets")));
        }
        if let Some(w0) = sparsity.anchor() {
            if w0.len() != n {
                return Err(ProblemError::Dimension(format!("w0 has length {}, expected {n}", w0.len())));
            }
        }
        let BoxSet { lower, upper } = bounds;
        if lower > upper {
            return Err(ProxError::InvertedBox {
                lower: lower.as_f64(),
                upper: upper.as_f64(),
            }
            .into());
        }
        let slack = T::epsilon() * T::lit(16.0);
        // Maximum number of nonzero weights a feasible point can have.
        let support = match sparsity {
            SparsitySet::Portfolio { k } => k,
            SparsitySet::Turnover { .. } => n,
        };
        if T::from_usize_lossy(support) * upper < T::one() - slack {
            return Err(ProblemError::Infeasible(format!(
                "{support} assets capped at {upper} cannot sum to one"
            )));
        }
        if T::from_usize_lossy(n) * lower > T::one() + slack {
            return Err(ProblemError::Infeasible(format!("{n} assets floored at {lower} exceed one")));
        }
        if matches!(sparsity, SparsitySet::Portfolio { k } if k < n) && lower > T::zero() {
            return Err(ProblemError::Infeasible(format!(
                "lower bound {lower} > 0 forbids the zero weights a {k}-sparse portfolio needs"
            )));
        }
        let beta = objective.lipschitz()?.beta();
        Ok(Self {
            objective,
            sparsity,
            bounds,
            budget: SumToOneSet { n },
            beta,
        })
    }

    pub fn objective(&self) -> &Objective<T> {
        &self.objective
    }

    pub fn sparsity(&self) -> &SparsitySet<T> {
        &self.sparsity
    }

    pub fn bounds(&self) -> BoxSet<T> {
        self.bounds
    }

    pub fn budget(&self) -> SumToOneSet {
        self.budget
    }

    pub fn n_assets(&self) -> usize {
        self.budget.n
    }

    /// Lipschitz constant of the objective gradient.
    pub fn beta(&self) -> T {
        self.beta
    }

    /// Residuals of every constraint at `w`.
    pub fn feasibility(&self, w: ArrayView1<'_, T>) -> FeasibilityReport<T> {
        FeasibilityReport {
            sum_residual: self.budget.residual(w),
            box_violation: self.bounds.violation(w),
            sparsity_count: self.sparsity.count(w),
            sparsity_limit: self.sparsity.k(),
        }
    }
}

/// Initial primal point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum InitMode {
    /// `w = 0`.
    #[default]
    A,
    /// `w = 1/N` everywhere.
    B,
    /// `1/K` on `K` random assets (portfolio sparsity) or `w = w0` (turnover).
    C,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig<T> {
    /// `None` picks [`default_stepsizes`] from `β`.
    pub gamma1_init: Option<T>,
    pub gamma2_init: Option<T>,
    pub decay: T,
    pub stop_tol: T,
    pub max_iter: usize,
    pub init: InitMode,
    pub seed: Option<u64>,
}

impl<T: Scalar> Default for SolverConfig<T> {
    fn default() -> Self {
        Self {
            gamma1_init: None,
            gamma2_init: None,
            decay: T::lit(0.999),
            stop_tol: T::lit(1e-5),
            max_iter: 50_000,
            init: InitMode::A,
            seed: None,
        }
    }
}

impl<T: Scalar> SolverConfig<T> {
    /// Initial `(γ1, γ2)` for a problem with gradient Lipschitz constant `beta`.
    pub fn stepsizes(&self, beta: T) -> Result<(T, T), SolverError> {
        let (d1, d2) = default_stepsizes(beta);
        let g2 = self.gamma2_init.unwrap_or(d2);
        let g1 = match self.gamma1_init {
            Some(g) => g,
            None if self.gamma2_init.is_none() => d1,
            None => T::lit(0.99) / (beta / T::lit(2.0) + T::lit(DUAL_OPERATOR_NORM) * g2),
        };
        if !(g1 > T::zero() && g2 > T::zero()) {
            return Err(SolverError::Config("stepsizes must be positive".into()));
        }
        if T::one() / g1 - T::lit(DUAL_OPERATOR_NORM) * g2 < beta / T::lit(2.0) {
            return Err(SolverError::Stepsize {
                gamma1: g1.as_f64(),
                gamma2: g2.as_f64(),
                beta: beta.as_f64(),
            });
        }
        Ok((g1, g2))
    }

    fn validate(&self) -> Result<(), SolverError> {
        if !(self.decay > T::zero() && self.decay <= T::one()) {
            return Err(SolverError::Config(format!("decay {} outside (0, 1]", self.decay)));
        }
        if !(self.stop_tol > T::zero()) {
            return Err(SolverError::Config("stop_tol must be positive".into()));
        }
        Ok(())
    }
}

/// `γ2 = 1`, `γ1 = 0.99 / (β/2 + 2γ2)`: the stepsize condition with 1% slack.
pub fn default_stepsizes<T: Scalar>(beta: T) -> (T, T) {
    let gamma2 = T::one();
    let gamma1 = T::lit(0.99) / (beta / T::lit(2.0) + T::lit(DUAL_OPERATOR_NORM) * gamma2);
    (gamma1, gamma2)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverState<T> {
    pub w: Array1<T>,
    pub v1: Array1<T>,
    pub v2: Array1<T>,
    pub gamma1: T,
    pub gamma2: T,
    gamma1_init: T,
    gamma2_init: T,
    pub iter: usize,
    pub last_rel_change: T,
}

impl<T: Scalar> SolverState<T> {
    /// State at iteration 0 with explicit primal start and zero duals.
    pub fn new(w: Array1<T>, gamma1: T, gamma2: T) -> Self {
        let n = w.len();
        Self {
            w,
            v1: Array1::zeros(n),
            v2: Array1::zeros(n),
            gamma1,
            gamma2,
            gamma1_init: gamma1,
            gamma2_init: gamma2,
            iter: 0,
            last_rel_change: T::infinity(),
        }
    }

    /// One primal-dual pass; stepsizes then decay to `γ_init · decay^iter`.
    pub fn step(&mut self, problem: &TrackingProblem<T>, decay: T) -> Result<(), SolverError> {
        let grad = problem.objective.gradient(self.w.view())?;
        let (g1, g2) = (self.gamma1, self.gamma2);

        let forward = &self.w - &((&grad + &self.v1 + &self.v2) * g1);
        let w_next = problem.sparsity.project(forward.view());

        let extrapolated = (&w_next * T::lit(2.0) - &self.w) * g2;
        let v1 = &self.v1 + &extrapolated;
        let v2 = &self.v2 + &extrapolated;
        let bounds = problem.bounds;
        let v1 = conjugate_prox(|z| bounds.project(z), g2, v1.view());
        let v2 = conjugate_prox(|z| problem.budget.project(z), g2, v2.view());

        let iteration = self.iter + 1;
        let finite = |a: &Array1<T>| a.iter().all(|v| v.is_finite());
        if !(finite(&w_next) && finite(&v1) && finite(&v2)) {
            return Err(SolverError::NonFinite { iteration });
        }

        self.last_rel_change = relative_change(w_next.view(), self.w.view());
        self.w = w_next;
        self.v1 = v1;
        self.v2 = v2;
        self.iter = iteration;
        let factor = decay.powi(iteration as i32);
        self.gamma1 = self.gamma1_init * factor;
        self.gamma2 = self.gamma2_init * factor;
        Ok(())
    }
}

/// `‖new − old‖ / ‖old‖`, with `0/0 = 0` and `x/0 = ∞`.
pub fn relative_change<T: Scalar>(new: ArrayView1<'_, T>, old: ArrayView1<'_, T>) -> T {
    let diff = (&new - &old).mapv(|v| v * v).sum().sqrt();
    let base = old.dot(&old).sqrt();
    if base == T::zero() {
        if diff == T::zero() {
            T::zero()
        } else {
            T::infinity()
        }
    } else {
        diff / base
    }
}

/// Constraint residuals of a returned portfolio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport<T> {
    /// `|1ᵀw − 1|`.
    pub sum_residual: T,
    /// `max(l − w_i, w_i − u, 0)`.
    pub box_violation: T,
    /// `‖w‖₀` or `‖w − w0‖₀`.
    pub sparsity_count: usize,
    pub sparsity_limit: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResult<T> {
    pub w: Vec<T>,
    pub iterations: usize,
    pub converged: bool,
    pub objective_value: T,
    pub feasibility: FeasibilityReport<T>,
    /// Set when a baseline had to fall back to a default portfolio.
    #[serde(default)]
    pub fallback: bool,
}

/// Starting state for `cfg.init`, with stepsizes from `cfg`.
pub fn initialize<T: Scalar>(problem: &TrackingProblem<T>, cfg: &SolverConfig<T>) -> Result<SolverState<T>, SolverError> {
    cfg.validate()?;
    let (g1, g2) = cfg.stepsizes(problem.beta)?;
    let n = problem.n_assets();
    let w = match cfg.init {
        InitMode::A => Array1::zeros(n),
        InitMode::B => Array1::from_elem(n, T::one() / T::from_usize_lossy(n)),
        InitMode::C => match &problem.sparsity {
            SparsitySet::Turnover { w0, .. } => Array1::from(w0.clone()),
            SparsitySet::Portfolio { k } => {
                let mut rng = match cfg.seed {
                    Some(s) => ChaCha8Rng::seed_from_u64(s),
                    None => {
                        log::warn!("init mode C without a seed; the result is not reproducible");
                        ChaCha8Rng::from_os_rng()
                    }
                };
                let mut w = Array1::zeros(n);
                let share = T::one() / T::from_usize_lossy(*k);
                for i in sample(&mut rng, n, *k) {
                    w[i] = share;
                }
                w
            }
        },
    };
    Ok(SolverState::new(w, g1, g2))
}

/// Iterate until the relative change drops to `cfg.stop_tol` or `cfg.max_iter` is hit.
pub fn solve<T: Scalar>(problem: &TrackingProblem<T>, cfg: &SolverConfig<T>) -> Result<SolveResult<T>, SolverError> {
    let mut state = initialize(problem, cfg)?;
    let mut converged = false;
    while state.iter < cfg.max_iter {
        state.step(problem, cfg.decay)?;
        if state.last_rel_change <= cfg.stop_tol {
            converged = true;
            break;
        }
    }
    log::debug!(
        "pds finished after {} iterations (converged: {converged}, last change {:e})",
        state.iter,
        state.last_rel_change.as_f64()
    );
    let objective_value = problem.objective.value(state.w.view())?;
    Ok(SolveResult {
        feasibility: problem.feasibility(state.w.view()),
        w: state.w.to_vec(),
        iterations: state.iter,
        converged,
        objective_value,
        fallback: false,
    })
}
