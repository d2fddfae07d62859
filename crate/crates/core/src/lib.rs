//! Sparse index tracking.
//!
//! Builds portfolios that track an equal-weight benchmark with at most `K1`
//! holdings (portfolio sparsity) or at most `K2` changed positions per
//! rebalance (turnover sparsity). The tracking problem is solved by a
//! primal-dual splitting iteration with exact ℓ0 projections; a two-stage
//! NNOMP-PGD baseline and a rolling-window backtester with a per-share fee
//! model are included for evaluation.
//!
//! All numerical code is generic over [`Scalar`] (`f32` or `f64`); the `*64`
//! aliases below fix the common `f64` case.

// `!(x > 0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backtest;
pub mod linalg;
pub mod market_data;
pub mod nnomp;
pub mod objective;
pub mod pds;
pub mod proximal;
pub mod scalar;
pub mod synth;

pub use backtest::{mdte, rebalance_trades, run_backtest, BacktestConfig, BacktestError, BacktestReport, CostModel, Method};
pub use market_data::{compute_returns, load_prices, plan_windows, uniform_benchmark, PricePanel, ReturnsPanel, WindowPlan};
pub use nnomp::{nnomp_pgd, nnomp_select, pgd_allocate};
pub use objective::{Objective, TrackingMeasure};
pub use pds::{default_stepsizes, initialize, solve, InitMode, SolveResult, SolverConfig, SolverState, TrackingProblem};
pub use proximal::{BoxSet, SparsitySet, SumToOneSet};
pub use scalar::Scalar;

pub type PricePanel64 = PricePanel<f64>;
pub type ReturnsPanel64 = ReturnsPanel<f64>;
pub type Objective64 = Objective<f64>;
pub type TrackingProblem64 = TrackingProblem<f64>;
pub type SolverConfig64 = SolverConfig<f64>;
pub type SolveResult64 = SolveResult<f64>;
pub type BacktestReport64 = BacktestReport<f64>;

pub type Objective32 = Objective<f32>;
pub type TrackingProblem32 = TrackingProblem<f32>;
pub type SolverConfig32 = SolverConfig<f32>;
