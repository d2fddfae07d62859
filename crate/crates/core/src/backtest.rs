//! Rolling-window evaluation with trading simulation.
//!
//! For every window the chosen method is fitted on the training rows against the
//! equal-weight benchmark, the raw solution is repaired into a tradable
//! portfolio, and the portfolio is bought at the close preceding the test block
//! and held (no intra-window rebalancing) while returns accrue.
//!
//! Fees follow `max(minimum, rate · v)` per traded asset, `v` being shares
//! traded by default. Fees are paid from a cash account at the rebalance
//! instant, so wealth after a rebalance is exactly wealth before minus fees.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market_data::{benchmark_returns, ReturnsPanel, Window, WindowPlan};
use crate::nnomp::{nnomp_pgd, NnompError, NnompOptions};
use crate::objective::{Objective, ObjectiveError, TrackingMeasure};
use crate::pds::{solve, ProblemError, SolveResult, SolverConfig, SolverError, TrackingProblem};
use crate::proximal::{l0_norm, BoxSet, SparsitySet};
use crate::Scalar;

#[derive(Debug, Error)]
pub enum SolveFailure {
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Baseline(#[from] NnompError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error("fixed portfolio has {got} weights for {expected} assets")]
    FixedLength { got: usize, expected: usize },
}

#[derive(Debug, Error)]
pub enum BacktestError {
    #[error("window {window}: {source}")]
    Window {
        window: usize,
        #[source]
        source: SolveFailure,
    },
    #[error("window plan needs {needed} rows but the panel has {available}")]
    PlanTooLong { needed: usize, available: usize },
    #[error("price matrix is {got:?}, expected {expected:?}")]
    PriceShape { got: Vec<usize>, expected: Vec<usize> },
    #[error("capital {capital} cannot cover fees {fees} at rebalance {window}")]
    InsufficientCapital { window: usize, capital: f64, fees: f64 },
    #[error("invalid backtest input: {0}")]
    Invalid(String),
}

/// Unit of the traded volume `v` in the fee formula.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeeUnit {
    #[default]
    Shares,
    Dollars,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel<T> {
    pub rate: T,
    pub minimum: T,
    pub unit: FeeUnit,
}

impl<T: Scalar> Default for CostModel<T> {
    /// $0.005 per share, $1 minimum.
    fn default() -> Self {
        Self {
            rate: T::lit(0.005),
            minimum: T::one(),
            unit: FeeUnit::Shares,
        }
    }
}

impl<T: Scalar> CostModel<T> {
    pub fn free() -> Self {
        Self {
            rate: T::zero(),
            minimum: T::zero(),
            unit: FeeUnit::Shares,
        }
    }

    /// Fee for trading `shares` (signed) at `price`; zero when nothing trades.
    pub fn fee(&self, shares: T, price: T) -> T {
        if shares == T::zero() {
            return T::zero();
        }
        let volume = match self.unit {
            FeeUnit::Shares => shares.abs(),
            FeeUnit::Dollars => shares.abs() * price,
        };
        self.minimum.max(self.rate * volume)
    }
}

/// Sparsity regime of the PDS method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum SparsityMode {
    Portfolio { k1: usize },
    /// The first window has no prior holdings and is solved with `k1` portfolio sparsity.
    Turnover { k1: usize, k2: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Method<T> {
    Pds {
        measure: TrackingMeasure,
        sparsity: SparsityMode,
        solver: SolverConfig<T>,
    },
    NnompPgd {
        k: usize,
        options: NnompOptions<T>,
    },
    /// The same weights every window; used for benchmark replication.
    Fixed { weights: Vec<T> },
}

impl<T: Scalar> Method<T> {
    fn chains_windows(&self) -> bool {
        matches!(
            self,
            Method::Pds {
                sparsity: SparsityMode::Turnover { .. },
                ..
            }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestConfig<T> {
    pub plan: WindowPlan,
    pub method: Method<T>,
    /// Box applied to PDS problems and to the repair step.
    pub bounds: BoxSet<T>,
    pub cost: CostModel<T>,
    pub initial_capital: T,
    /// Solve independent windows on the rayon pool.
    #[serde(default)]
    pub parallel: bool,
}

/// One executed trade.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trade<T> {
    pub ticker: String,
    pub asset: usize,
    /// Positive for buys.
    pub shares: T,
    pub price: T,
    pub dollar_volume: T,
    pub fee: T,
}

/// Trades of one rebalance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RebalanceEntry<T> {
    pub window: usize,
    pub date: String,
    pub trades: Vec<Trade<T>>,
    pub total_fees: T,
    pub wealth_before: T,
    pub wealth_after: T,
}

impl<T> RebalanceEntry<T> {
    pub fn assets_traded(&self) -> usize {
        self.trades.len()
    }
}

/// Holdings after a rebalance.
#[derive(Debug, Clone, PartialEq)]
pub struct RebalanceOutcome<T> {
    pub holdings: Vec<T>,
    /// Change in cash: minus the net purchase value minus fees.
    pub cash_delta: T,
    pub trades: Vec<Trade<T>>,
    pub total_fees: T,
}

/// Relative share difference below which a position counts as unchanged.
const SHARE_TOLERANCE: f64 = 1e-12;

/// Move from `old_holdings` to `target_weights` of `capital` at `prices`.
///
/// Target shares are `weight · capital / price`; fractional shares are allowed.
/// A position whose target differs from the old share count only by rounding
/// is left untouched.
pub fn rebalance_trades<T: Scalar>(
    old_holdings: &[T],
    target_weights: &[T],
    capital: T,
    prices: &[T],
    tickers: &[String],
    cost: &CostModel<T>,
) -> Result<RebalanceOutcome<T>, BacktestError> {
    let n = old_holdings.len();
    if target_weights.len() != n || prices.len() != n || tickers.len() != n {
        return Err(BacktestError::Invalid("rebalance vectors differ in length".into()));
    }
    if !(capital > T::zero()) {
        return Err(BacktestError::Invalid(format!("capital {capital} must be positive")));
    }
    if prices.iter().any(|&p| !(p > T::zero())) {
        return Err(BacktestError::Invalid("prices must be positive".into()));
    }
    let tol = T::lit(SHARE_TOLERANCE);
    let mut holdings = old_holdings.to_vec();
    let mut trades = Vec::new();
    let mut cash_delta = T::zero();
    let mut total_fees = T::zero();
    for j in 0..n {
        let target = target_weights[j] * capital / prices[j];
        let old = old_holdings[j];
        let delta = target - old;
        if delta.abs() <= tol * old.abs().max(target.abs()) {
            continue;
        }
        let fee = cost.fee(delta, prices[j]);
        holdings[j] = target;
        cash_delta -= delta * prices[j] + fee;
        total_fees += fee;
        trades.push(Trade {
            ticker: tickers[j].clone(),
            asset: j,
            shares: delta,
            price: prices[j],
            dollar_volume: delta.abs() * prices[j],
            fee,
        });
    }
    Ok(RebalanceOutcome {
        holdings,
        cash_delta,
        trades,
        total_fees,
    })
}

/// Stacked-portfolio tracking error in basis points:
/// `10⁴ · ‖diag(X W) − r_b‖₂ / (n T_test)`.
///
/// `w_stacked` is N × (n T_test) with column `t` the portfolio held on day `t`;
/// `x_test` is (n T_test) × N.
pub fn mdte<T: Scalar>(
    w_stacked: ArrayView2<'_, T>,
    x_test: ArrayView2<'_, T>,
    r_b_test: ArrayView1<'_, T>,
) -> Result<T, BacktestError> {
    let days = x_test.nrows();
    if w_stacked.ncols() != days || r_b_test.len() != days || w_stacked.nrows() != x_test.ncols() {
        return Err(BacktestError::Invalid(format!(
            "mdte shapes: W {:?}, X {:?}, r_b {}",
            w_stacked.shape(),
            x_test.shape(),
            r_b_test.len()
        )));
    }
    if days == 0 {
        return Err(BacktestError::Invalid("mdte over zero days".into()));
    }
    let mut sq = T::zero();
    for t in 0..days {
        // Contiguous copy: same summation order as `benchmark_returns`.
        let w_t = w_stacked.column(t).to_owned();
        let d = x_test.row(t).dot(&w_t) - r_b_test[t];
        sq += d * d;
    }
    Ok(sq.sqrt() / T::from_usize_lossy(days) * T::lit(1e4))
}

/// Repeat each window's portfolio across its test days.
pub fn stack_portfolios<T: Scalar>(per_window: &[Vec<T>], test_len: usize) -> Array2<T> {
    let n = per_window.first().map_or(0, Vec::len);
    let mut w = Array2::zeros((n, per_window.len() * test_len));
    for (i, p) in per_window.iter().enumerate() {
        let col = ArrayView1::from(p.as_slice());
        for t in 0..test_len {
            w.column_mut(i * test_len + t).assign(&col);
        }
    }
    w
}

/// Project `values[free]` onto `{Σ = target, lower ≤ · ≤ upper}` by shifting and
/// clamping. When the cap makes the target unreachable it is dropped.
fn fit_budget<T: Scalar>(values: &mut [T], free: &[usize], target: T, lower: T, upper: T) {
    if free.is_empty() {
        return;
    }
    let count = T::from_usize_lossy(free.len());
    let upper = if count * upper < target { T::infinity() } else { upper };
    if count * lower >= target {
        for &i in free {
            values[i] = lower;
        }
        return;
    }
    let total = |tau: T, v: &[T]| -> T { free.iter().map(|&i| (v[i] + tau).min(upper).max(lower)).sum() };
    let vmax = free.iter().map(|&i| values[i]).fold(T::neg_infinity(), T::max);
    let vmin = free.iter().map(|&i| values[i]).fold(T::infinity(), T::min);
    // total(lo) ≤ target ≤ total(hi)
    let mut lo = lower - vmax;
    let mut hi = if upper.is_finite() {
        upper - vmin
    } else {
        target - vmin
    };
    for _ in 0..200 {
        let mid = (lo + hi) / T::lit(2.0);
        if mid <= lo || mid >= hi {
            break;
        }
        if total(mid, values) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let tau = (lo + hi) / T::lit(2.0);
    for &i in free {
        values[i] = (values[i] + tau).min(upper).max(lower);
    }
}

/// Make a raw solver output tradable.
///
/// Without an anchor the nonzero entries are shifted and clamped into the box
/// so they sum to one. With an anchor `w0` only coordinates that differ from
/// `w0` are adjusted, so the traded set never grows. Returns the weights and
/// whether a uniform fallback was needed.
pub fn repair_portfolio<T: Scalar>(raw: &[T], bounds: BoxSet<T>, anchor: Option<&[T]>) -> (Vec<T>, bool) {
    let mut w = raw.to_vec();
    match anchor {
        None => {
            let free: Vec<usize> = (0..w.len()).filter(|&i| w[i] != T::zero()).collect();
            if free.is_empty() {
                let n = T::from_usize_lossy(w.len());
                return (vec![T::one() / n; w.len()], true);
            }
            fit_budget(&mut w, &free, T::one(), bounds.lower, bounds.upper);
        }
        Some(w0) => {
            let free: Vec<usize> = (0..w.len()).filter(|&i| w[i] != w0[i]).collect();
            let fixed: T = (0..w.len()).filter(|&i| w[i] == w0[i]).map(|i| w0[i]).sum();
            fit_budget(&mut w, &free, T::one() - fixed, bounds.lower, bounds.upper);
        }
    }
    (w, false)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowReport<T> {
    pub index: usize,
    pub window: Window,
    pub solve: SolveResult<T>,
    /// Weights actually traded.
    pub portfolio: Vec<T>,
    pub repair_fallback: bool,
    /// Sparsity constraint used for the solve.
    pub sparsity: SparsitySet<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyRecord<T> {
    pub date: String,
    pub portfolio_return: T,
    pub benchmark_return: T,
    pub wealth: T,
    /// Cost-free buy-and-hold of the benchmark weights on the same schedule.
    pub benchmark_wealth: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport<T> {
    /// Tracking error of the traded portfolios, in bps.
    pub mdte_bps: T,
    /// Same measure for the unrepaired solver outputs.
    pub mdte_raw_bps: T,
    /// Final wealth over initial capital.
    pub normalized_return: T,
    pub benchmark_normalized_return: T,
    pub total_fees: T,
    pub tickers: Vec<String>,
    pub windows: Vec<WindowReport<T>>,
    pub ledger: Vec<RebalanceEntry<T>>,
    pub daily: Vec<DailyRecord<T>>,
    pub config: BacktestConfig<T>,
}

impl<T: Scalar> BacktestReport<T> {
    pub fn wealth_path(&self) -> Vec<T> {
        self.daily.iter().map(|d| d.wealth).collect()
    }
}

struct Fitted<T> {
    solve: SolveResult<T>,
    sparsity: SparsitySet<T>,
}

fn fit_window<T: Scalar>(
    method: &Method<T>,
    bounds: BoxSet<T>,
    x: ArrayView2<'_, T>,
    r_b: ArrayView1<'_, T>,
    window_index: usize,
    anchor: Option<&[T]>,
) -> Result<Fitted<T>, SolveFailure> {
    let n = x.ncols();
    match method {
        Method::Pds {
            measure,
            sparsity,
            solver,
        } => {
            let set = match (sparsity, anchor) {
                (SparsityMode::Portfolio { k1 }, _) | (SparsityMode::Turnover { k1, .. }, None) => {
                    SparsitySet::portfolio(*k1, n).map_err(ProblemError::from)?
                }
                (SparsityMode::Turnover { k2, .. }, Some(w0)) => {
                    SparsitySet::turnover(*k2, w0.to_vec()).map_err(ProblemError::from)?
                }
            };
            let objective = Objective::new(*measure, x.to_owned(), r_b.to_owned())?;
            let problem = TrackingProblem::new(objective, set.clone(), bounds)?;
            let mut cfg = *solver;
            cfg.seed = cfg.seed.map(|s| s.wrapping_add(window_index as u64));
            Ok(Fitted {
                solve: solve(&problem, &cfg)?,
                sparsity: set,
            })
        }
        Method::NnompPgd { k, options } => Ok(Fitted {
            solve: nnomp_pgd(x, r_b, *k, options)?,
            sparsity: SparsitySet::Portfolio { k: *k },
        }),
        Method::Fixed { weights } => {
            if weights.len() != n {
                return Err(SolveFailure::FixedLength {
                    got: weights.len(),
                    expected: n,
                });
            }
            let objective = Objective::new(TrackingMeasure::Ete, x.to_owned(), r_b.to_owned())?;
            let w = ArrayView1::from(weights.as_slice());
            Ok(Fitted {
                solve: SolveResult {
                    w: weights.clone(),
                    iterations: 0,
                    converged: true,
                    objective_value: objective.value(w)?,
                    feasibility: crate::pds::FeasibilityReport {
                        sum_residual: (w.sum() - T::one()).abs(),
                        box_violation: bounds.violation(w),
                        sparsity_count: l0_norm(w),
                        sparsity_limit: n,
                    },
                    fallback: false,
                },
                sparsity: SparsitySet::Portfolio { k: n },
            })
        }
    }
}

/// Run the rolling-window experiment.
///
/// `prices` is the (T+1)×N close matrix matching `panel`; when absent, prices
/// are implied from the returns with every asset starting at 100.
pub fn run_backtest<T: Scalar>(
    panel: &ReturnsPanel<T>,
    prices: Option<&Array2<T>>,
    config: &BacktestConfig<T>,
) -> Result<BacktestReport<T>, BacktestError> {
    let x = panel.returns();
    let (days, n) = x.dim();
    let plan = &config.plan;
    if plan.windows.is_empty() {
        return Err(BacktestError::Invalid("window plan is empty".into()));
    }
    let needed = plan.windows.iter().map(|w| w.test.end.max(w.train.end)).max().unwrap_or(0);
    if needed > days {
        return Err(BacktestError::PlanTooLong { needed, available: days });
    }
    if !(config.initial_capital > T::zero()) {
        return Err(BacktestError::Invalid("initial capital must be positive".into()));
    }
    let implied;
    let prices = match prices {
        Some(p) => {
            if p.dim() != (days + 1, n) {
                return Err(BacktestError::PriceShape {
                    got: p.shape().to_vec(),
                    expected: vec![days + 1, n],
                });
            }
            p
        }
        None => {
            implied = panel.implied_prices(T::lit(100.0));
            &implied
        }
    };
    let bench_w = Array1::from_elem(n, T::one() / T::from_usize_lossy(n));
    let r_b = benchmark_returns(x.view(), bench_w.view());
    let repair_bounds = match config.method {
        Method::Pds { .. } => config.bounds,
        _ => BoxSet {
            lower: T::zero(),
            upper: T::one(),
        },
    };

    let fit = |i: usize, w: &Window, anchor: Option<&[T]>| {
        let xs = x.slice(s![w.train.clone(), ..]);
        let rs = r_b.slice(s![w.train.clone()]);
        fit_window(&config.method, config.bounds, xs, rs, i, anchor)
            .map_err(|source| BacktestError::Window { window: i, source })
    };
    let prefitted: Option<Vec<Fitted<T>>> = if config.method.chains_windows() {
        None
    } else if config.parallel {
        Some(
            plan.windows
                .par_iter()
                .enumerate()
                .map(|(i, w)| fit(i, w, None))
                .collect::<Result<_, _>>()?,
        )
    } else {
        Some(
            plan.windows
                .iter()
                .enumerate()
                .map(|(i, w)| fit(i, w, None))
                .collect::<Result<_, _>>()?,
        )
    };
    let mut prefitted = prefitted.map(|v| v.into_iter());

    let mut holdings = vec![T::zero(); n];
    let mut cash = config.initial_capital;
    let mut bench_holdings = vec![T::zero(); n];
    let mut bench_cash = config.initial_capital;
    let mut windows = Vec::with_capacity(plan.windows.len());
    let mut ledger = Vec::with_capacity(plan.windows.len());
    let mut daily = Vec::with_capacity(plan.windows.len() * plan.test_len);
    let mut prev_wealth = config.initial_capital;
    let free = CostModel::free();
    let value = |h: &[T], c: T, row: usize| -> T { h.iter().zip(prices.row(row)).map(|(&q, &p)| q * p).sum::<T>() + c };

    for (i, win) in plan.windows.iter().enumerate() {
        let row = win.test.start;
        let px = prices.row(row).to_vec();
        let wealth = value(&holdings, cash, row);
        // Holdings as weights of current wealth: the portfolio before rebalancing.
        let drifted: Vec<T> = holdings.iter().zip(&px).map(|(&q, &p)| q * p / wealth).collect();
        let anchor = (i > 0).then_some(drifted.as_slice());

        let fitted = match prefitted.as_mut() {
            Some(it) => it.next().expect("one fit per window"),
            None => fit(i, win, anchor)?,
        };
        let repair_anchor = match fitted.sparsity {
            SparsitySet::Turnover { .. } => anchor,
            SparsitySet::Portfolio { .. } => None,
        };
        let (portfolio, repair_fallback) = repair_portfolio(&fitted.solve.w, repair_bounds, repair_anchor);

        let outcome = rebalance_trades(&holdings, &portfolio, wealth, &px, panel.tickers(), &config.cost)?;
        if outcome.total_fees >= wealth {
            return Err(BacktestError::InsufficientCapital {
                window: i,
                capital: wealth.as_f64(),
                fees: outcome.total_fees.as_f64(),
            });
        }
        holdings = outcome.holdings;
        cash += outcome.cash_delta;
        ledger.push(RebalanceEntry {
            window: i,
            date: rebalance_label(panel, row),
            trades: outcome.trades,
            total_fees: outcome.total_fees,
            wealth_before: wealth,
            wealth_after: value(&holdings, cash, row),
        });

        let bench_wealth = value(&bench_holdings, bench_cash, row);
        let b = rebalance_trades(&bench_holdings, bench_w.as_slice().expect("contiguous"), bench_wealth, &px, panel.tickers(), &free)?;
        bench_holdings = b.holdings;
        bench_cash += b.cash_delta;

        for t in win.test.clone() {
            let wealth_t = value(&holdings, cash, t + 1);
            daily.push(DailyRecord {
                date: panel.dates()[t].clone(),
                portfolio_return: wealth_t / prev_wealth - T::one(),
                benchmark_return: r_b[t],
                wealth: wealth_t,
                benchmark_wealth: value(&bench_holdings, bench_cash, t + 1),
            });
            prev_wealth = wealth_t;
        }
        windows.push(WindowReport {
            index: i,
            window: win.clone(),
            solve: fitted.solve,
            portfolio,
            repair_fallback,
            sparsity: fitted.sparsity,
        });
    }

    let test_rows: Vec<usize> = plan.windows.iter().flat_map(|w| w.test.clone()).collect();
    let x_test = x.select(Axis(0), &test_rows);
    let r_b_test = r_b.select(Axis(0), &test_rows);
    let traded: Vec<Vec<T>> = windows.iter().map(|w| w.portfolio.clone()).collect();
    let raw: Vec<Vec<T>> = windows.iter().map(|w| w.solve.w.clone()).collect();
    let mdte_bps = mdte(stack_portfolios(&traded, plan.test_len).view(), x_test.view(), r_b_test.view())?;
    let mdte_raw_bps = mdte(stack_portfolios(&raw, plan.test_len).view(), x_test.view(), r_b_test.view())?;
    let last = daily.last().expect("at least one test day");
    Ok(BacktestReport {
        mdte_bps,
        mdte_raw_bps,
        normalized_return: last.wealth / config.initial_capital,
        benchmark_normalized_return: last.benchmark_wealth / config.initial_capital,
        total_fees: ledger.iter().map(|e| e.total_fees).sum(),
        tickers: panel.tickers().to_vec(),
        windows,
        ledger,
        daily,
        config: config.clone(),
    })
}

/// Label of the close at which a rebalance happens: the day before `row`.
fn rebalance_label<T: Scalar>(panel: &ReturnsPanel<T>, row: usize) -> String {
    if row == 0 {
        "start".to_owned()
    } else {
        panel.dates()[row - 1].clone()
    }
}
