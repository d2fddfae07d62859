//! Price ingestion, simple returns, the uniform benchmark and rolling windows.
//!
//! Panels are immutable once built. Dates are opaque labels that only need to
//! be strictly increasing under string ordering; no calendar arithmetic is done.

use std::collections::HashSet;
use std::io::Read;
use std::ops::Range;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Scalar;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed CSV at line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("need at least 2 price rows, got {0}")]
    TooFewRows(usize),
    #[error("every asset was dropped for missing prices")]
    AllAssetsDropped,
    #[error("dates must be strictly increasing: {prev:?} then {next:?}")]
    NonIncreasingDates { prev: String, next: String },
    #[error("duplicate ticker {0:?}")]
    DuplicateTicker(String),
    #[error("price for {ticker} on {date} must be strictly positive, got {value}")]
    NonPositivePrice { ticker: String, date: String, value: f64 },
    #[error("panel shape mismatch: {0}")]
    Shape(String),
    #[error("window plan needs {needed} rows but only {available} are available")]
    InsufficientRows { needed: usize, available: usize },
    #[error("window lengths and count must be positive")]
    EmptyWindow,
}

/// Adjusted close prices, one row per trading day.
#[derive(Debug, Clone, PartialEq)]
pub struct PricePanel<T> {
    dates: Vec<String>,
    tickers: Vec<String>,
    prices: Array2<T>,
}

impl<T: Scalar> PricePanel<T> {
    pub fn new(dates: Vec<String>, tickers: Vec<String>, prices: Array2<T>) -> Result<Self, DataError> {
        if prices.nrows() != dates.len() || prices.ncols() != tickers.len() {
            return Err(DataError::Shape(format!(
                "{} dates x {} tickers vs {:?} prices",
                dates.len(),
                tickers.len(),
                prices.shape()
            )));
        }
        if dates.len() < 2 {
            return Err(DataError::TooFewRows(dates.len()));
        }
        if tickers.is_empty() {
            return Err(DataError::AllAssetsDropped);
        }
        check_dates(&dates)?;
        check_tickers(&tickers)?;
        for ((t, j), &p) in prices.indexed_iter() {
            if !(p > T::zero()) || !p.is_finite() {
                return Err(DataError::NonPositivePrice {
                    ticker: tickers[j].clone(),
                    date: dates[t].clone(),
                    value: p.as_f64(),
                });
            }
        }
        Ok(Self { dates, tickers, prices })
    }

    pub fn dates(&self) -> &[String] {
        &self.dates
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    /// (T+1)×N price matrix.
    pub fn prices(&self) -> &Array2<T> {
        &self.prices
    }

    pub fn n_assets(&self) -> usize {
        self.tickers.len()
    }

    pub fn n_rows(&self) -> usize {
        self.dates.len()
    }
}

/// Result of [`load_prices`]: the gap-free panel and the tickers that were excluded.
#[derive(Debug, Clone)]
pub struct LoadedPrices<T> {
    pub panel: PricePanel<T>,
    pub dropped: Vec<String>,
}

fn check_dates(dates: &[String]) -> Result<(), DataError> {
    for pair in dates.windows(2) {
        if pair[1] <= pair[0] {
            return Err(DataError::NonIncreasingDates {
                prev: pair[0].clone(),
                next: pair[1].clone(),
            });
        }
    }
    Ok(())
}

fn check_tickers(tickers: &[String]) -> Result<(), DataError> {
    let mut seen = HashSet::new();
    for t in tickers {
        if !seen.insert(t.as_str()) {
            return Err(DataError::DuplicateTicker(t.clone()));
        }
    }
    Ok(())
}

/// Parse a `date,TICKER...` CSV. Any asset with an empty cell is dropped.
pub fn load_prices<T: Scalar, R: Read>(source: R) -> Result<LoadedPrices<T>, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let header = reader.headers()?.clone();
    if header.len() < 2 {
        return Err(DataError::Malformed {
            line: 1,
            reason: "header needs a date column and at least one ticker".into(),
        });
    }
    let all_tickers: Vec<String> = header.iter().skip(1).map(str::to_owned).collect();
    check_tickers(&all_tickers)?;

    let mut dates = Vec::new();
    let mut cells: Vec<Vec<Option<f64>>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let line = i + 2;
        if record.len() != header.len() {
            return Err(DataError::Malformed {
                line,
                reason: format!("expected {} fields, found {}", header.len(), record.len()),
            });
        }
        dates.push(record[0].to_owned());
        let row = record
            .iter()
            .skip(1)
            .map(|cell| {
                if cell.is_empty() {
                    Ok(None)
                } else {
                    cell.parse::<f64>().map(Some).map_err(|e| DataError::Malformed {
                        line,
                        reason: format!("bad number {cell:?}: {e}"),
                    })
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        cells.push(row);
    }
    if dates.len() < 2 {
        return Err(DataError::TooFewRows(dates.len()));
    }
    check_dates(&dates)?;

    let keep: Vec<usize> = (0..all_tickers.len())
        .filter(|&j| cells.iter().all(|row| row[j].is_some()))
        .collect();
    let dropped: Vec<String> = (0..all_tickers.len())
        .filter(|j| !keep.contains(j))
        .map(|j| all_tickers[j].clone())
        .collect();
    if keep.is_empty() {
        return Err(DataError::AllAssetsDropped);
    }
    if !dropped.is_empty() {
        log::info!("dropped {} asset(s) with missing prices: {:?}", dropped.len(), dropped);
    }
    let tickers = keep.iter().map(|&j| all_tickers[j].clone()).collect();
    let prices = Array2::from_shape_fn((dates.len(), keep.len()), |(t, k)| {
        T::lit(cells[t][keep[k]].expect("kept columns are complete"))
    });
    let panel = PricePanel::new(dates, tickers, prices)?;
    Ok(LoadedPrices { panel, dropped })
}

/// Asset returns: row `t` holds the simple returns realised on day `dates[t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnsPanel<T> {
    dates: Vec<String>,
    tickers: Vec<String>,
    returns: Array2<T>,
}

impl<T: Scalar> ReturnsPanel<T> {
    pub fn new(dates: Vec<String>, tickers: Vec<String>, returns: Array2<T>) -> Result<Self, DataError> {
        if returns.nrows() != dates.len() || returns.ncols() != tickers.len() {
            return Err(DataError::Shape(format!(
                "{} dates x {} tickers vs {:?} returns",
                dates.len(),
                tickers.len(),
                returns.shape()
            )));
        }
        if tickers.is_empty() {
            return Err(DataError::Shape("no assets".into()));
        }
        check_tickers(&tickers)?;
        if let Some(((t, j), _)) = returns
            .indexed_iter()
            .find(|(_, &r)| !(r > -T::one()) || !r.is_finite())
        {
            return Err(DataError::Shape(format!(
                "return of {} on {} must be finite and > -1",
                tickers[j], dates[t]
            )));
        }
        Ok(Self { dates, tickers, returns })
    }

    /// Build a panel with generated labels (`d0000`, `a000`, ...).
    pub fn from_matrix(returns: Array2<T>) -> Result<Self, DataError> {
        let dates = (0..returns.nrows()).map(|t| format!("d{t:05}")).collect();
        let tickers = (0..returns.ncols()).map(|j| format!("a{j:03}")).collect();
        Self::new(dates, tickers, returns)
    }

    pub fn dates(&self) -> &[String] {
        &self.dates
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    /// T×N return matrix.
    pub fn returns(&self) -> &Array2<T> {
        &self.returns
    }

    pub fn n_days(&self) -> usize {
        self.returns.nrows()
    }

    pub fn n_assets(&self) -> usize {
        self.returns.ncols()
    }

    /// Prices implied by compounding the returns from a common starting level.
    pub fn implied_prices(&self, start: T) -> Array2<T> {
        let (t_len, n) = self.returns.dim();
        let mut prices = Array2::from_elem((t_len + 1, n), start);
        for t in 0..t_len {
            for j in 0..n {
                prices[[t + 1, j]] = prices[[t, j]] * (T::one() + self.returns[[t, j]]);
            }
        }
        prices
    }
}

/// `X[t, j] = (p[t+1, j] - p[t, j]) / p[t, j]`, labelled with the later date.
pub fn compute_returns<T: Scalar>(panel: &PricePanel<T>) -> ReturnsPanel<T> {
    let p = panel.prices();
    let prev = p.slice(ndarray::s![..-1, ..]);
    let next = p.slice(ndarray::s![1.., ..]);
    let returns = (&next - &prev) / prev;
    ReturnsPanel {
        dates: panel.dates()[1..].to_vec(),
        tickers: panel.tickers().to_vec(),
        returns,
    }
}

/// Equal-weight benchmark `r_b = X b` with `b = 1/N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSeries<T> {
    pub returns: Vec<T>,
    pub weights: Vec<T>,
}

pub fn uniform_benchmark<T: Scalar>(panel: &ReturnsPanel<T>) -> BenchmarkSeries<T> {
    let n = panel.n_assets();
    let b = Array1::from_elem(n, T::one() / T::from_usize_lossy(n));
    let r_b = benchmark_returns(panel.returns().view(), b.view());
    BenchmarkSeries {
        returns: r_b.to_vec(),
        weights: b.to_vec(),
    }
}

/// Daily returns of a fixed weight vector, `X w`.
pub fn benchmark_returns<T: Scalar>(x: ndarray::ArrayView2<'_, T>, w: ndarray::ArrayView1<'_, T>) -> Array1<T> {
    x.map_axis(Axis(1), |row| row.dot(&w))
}

/// One train/test split; ranges index rows of the returns panel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub train: Range<usize>,
    pub test: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowPlan {
    pub train_len: usize,
    pub test_len: usize,
    pub windows: Vec<Window>,
}

impl WindowPlan {
    pub fn n_windows(&self) -> usize {
        self.windows.len()
    }

    /// Rows consumed: `train_len + n * test_len`.
    pub fn rows_used(&self) -> usize {
        self.train_len + self.windows.len() * self.test_len
    }

    /// Contiguous row range covered by all test windows.
    pub fn test_span(&self) -> Range<usize> {
        match (self.windows.first(), self.windows.last()) {
            (Some(a), Some(b)) => a.test.start..b.test.end,
            _ => 0..0,
        }
    }
}

pub const DEFAULT_TRAIN_LEN: usize = 200;
pub const DEFAULT_TEST_LEN: usize = 100;
pub const DEFAULT_N_WINDOWS: usize = 10;

/// Rolling windows starting at row 0: each training block is the `train_len`
/// rows immediately preceding its test block.
pub fn plan_windows(
    total_rows: usize,
    train_len: usize,
    test_len: usize,
    n_windows: usize,
) -> Result<WindowPlan, DataError> {
    if train_len == 0 || test_len == 0 || n_windows == 0 {
        return Err(DataError::EmptyWindow);
    }
    let needed = train_len + n_windows * test_len;
    if total_rows < needed {
        return Err(DataError::InsufficientRows {
            needed,
            available: total_rows,
        });
    }
    let windows = (0..n_windows)
        .map(|i| {
            let test_start = train_len + i * test_len;
            Window {
                train: test_start - train_len..test_start,
                test: test_start..test_start + test_len,
            }
        })
        .collect();
    Ok(WindowPlan {
        train_len,
        test_len,
        windows,
    })
}
