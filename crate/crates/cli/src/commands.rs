use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::s;
use serde::Serialize;
use sparsetrack::backtest::{repair_portfolio, BacktestError, SparsityMode};
use sparsetrack::market_data::{benchmark_returns, LoadedPrices};
use sparsetrack::nnomp::NnompOptions;
use sparsetrack::synth::{generate, SynthSpec};
use sparsetrack::*;

use crate::config::{ExperimentConfig, MethodName, SparsityName, SynthArgs};
use crate::CliError;

fn load(path: &Path) -> Result<LoadedPrices<f64>, CliError> {
    let file = File::open(path).map_err(|e| CliError::input(format!("cannot open {}: {e}", path.display())))?;
    let loaded = load_prices::<f64, _>(file).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    if !loaded.dropped.is_empty() {
        log::warn!("dropped {} assets with missing prices: {}", loaded.dropped.len(), loaded.dropped.join(", "));
    }
    Ok(loaded)
}

fn out_file(dir: &Path, name: &str) -> Result<PathBuf, CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::input(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir.join(name))
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::input(format!("cannot write {}: {e}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::input(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>, CliError> {
    csv::Writer::from_path(path).map_err(|e| CliError::input(format!("cannot write {}: {e}", path.display())))
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::input(e.to_string())
}

fn solver_config(cfg: &ExperimentConfig) -> SolverConfig64 {
    SolverConfig {
        decay: cfg.decay,
        stop_tol: cfg.tol,
        max_iter: cfg.max_iter,
        init: cfg.init.into(),
        seed: Some(cfg.seed),
        ..SolverConfig::default()
    }
}

fn method(cfg: &ExperimentConfig, n_assets: usize) -> Method<f64> {
    let measure = match cfg.method {
        MethodName::PdsDr => TrackingMeasure::Dr,
        _ => TrackingMeasure::Ete,
    };
    match cfg.method {
        MethodName::PdsEte | MethodName::PdsDr => Method::Pds {
            measure,
            sparsity: match cfg.sparsity {
                SparsityName::Portfolio => SparsityMode::Portfolio { k1: cfg.k1 },
                SparsityName::Turnover => SparsityMode::Turnover { k1: cfg.k1, k2: cfg.k2 },
            },
            solver: solver_config(cfg),
        },
        MethodName::NnompPgd => Method::NnompPgd {
            k: cfg.k1,
            options: NnompOptions::default(),
        },
        MethodName::Benchmark => Method::Fixed {
            weights: vec![1.0 / n_assets as f64; n_assets],
        },
    }
}

fn bounds(cfg: &ExperimentConfig) -> Result<BoxSet<f64>, CliError> {
    BoxSet::new(cfg.lower, cfg.upper).map_err(|e| CliError::input(e.to_string()))
}

#[derive(Serialize)]
struct TrackDiagnostics<'a> {
    config: &'a ExperimentConfig,
    dropped_assets: &'a [String],
    train_rows: std::ops::Range<usize>,
    train_dates: (String, String),
    solve: SolveResult64,
    repair_fallback: bool,
}

pub fn track(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let loaded = load(cfg.data_path()?)?;
    let returns = compute_returns(&loaded.panel);
    let (days, n) = returns.returns().dim();
    if cfg.train_len == 0 || days < cfg.train_len {
        return Err(CliError::input(format!(
            "need {} return rows for training, the data has {days}",
            cfg.train_len
        )));
    }
    if cfg.sparsity == SparsityName::Turnover {
        return Err(CliError::input("turnover sparsity needs previous holdings; use `backtest`"));
    }
    let rows = days - cfg.train_len..days;
    let x = returns.returns().slice(s![rows.clone(), ..]).to_owned();
    let b = ndarray::Array1::from_elem(n, 1.0 / n as f64);
    let r_b = benchmark_returns(x.view(), b.view());
    let bounds = bounds(cfg)?;
    let solve_result = match method(cfg, n) {
        Method::Pds { measure, solver, .. } => {
            let objective = Objective::new(measure, x, r_b).map_err(|e| CliError::input(e.to_string()))?;
            let sparsity = SparsitySet::portfolio(cfg.k1, n).map_err(|e| CliError::input(e.to_string()))?;
            let problem = TrackingProblem::new(objective, sparsity, bounds).map_err(|e| CliError::input(e.to_string()))?;
            solve(&problem, &solver).map_err(|e| CliError::Solver(e.to_string()))?
        }
        Method::NnompPgd { k, options } => {
            nnomp_pgd(x.view(), r_b.view(), k, &options).map_err(|e| CliError::Solver(e.to_string()))?
        }
        Method::Fixed { weights } => {
            let objective = Objective::new(TrackingMeasure::Ete, x, r_b).map_err(|e| CliError::input(e.to_string()))?;
            let value = objective.value(ndarray::ArrayView1::from(&weights)).map_err(|e| CliError::input(e.to_string()))?;
            SolveResult {
                w: weights,
                iterations: 0,
                converged: true,
                objective_value: value,
                feasibility: sparsetrack::pds::FeasibilityReport {
                    sum_residual: 0.0,
                    box_violation: 0.0,
                    sparsity_count: n,
                    sparsity_limit: n,
                },
                fallback: false,
            }
        }
    };
    let repair_bounds = match cfg.method {
        MethodName::PdsEte | MethodName::PdsDr => bounds,
        _ => BoxSet { lower: 0.0, upper: 1.0 },
    };
    let (weights, repair_fallback) = repair_portfolio(&solve_result.w, repair_bounds, None);

    let path = out_file(&cfg.out_dir, "weights.csv")?;
    let mut w = csv_writer(&path)?;
    w.write_record(["ticker", "weight"]).map_err(csv_err)?;
    for (t, v) in returns.tickers().iter().zip(&weights) {
        w.write_record([t.as_str(), &v.to_string()]).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(&path))?;

    let dates = returns.dates();
    write_json(
        &out_file(&cfg.out_dir, "diagnostics.json")?,
        &TrackDiagnostics {
            config: cfg,
            dropped_assets: &loaded.dropped,
            train_dates: (dates[rows.start].clone(), dates[rows.end - 1].clone()),
            train_rows: rows,
            solve: solve_result,
            repair_fallback,
        },
    )?;
    println!(
        "holdings={} ete={:e}",
        weights.iter().filter(|&&v| v != 0.0).count(),
        returns_ete(&returns, cfg.train_len, &weights)
    );
    Ok(())
}

fn returns_ete(returns: &ReturnsPanel64, train_len: usize, w: &[f64]) -> f64 {
    let (days, n) = returns.returns().dim();
    let x = returns.returns().slice(s![days - train_len.., ..]);
    let b = ndarray::Array1::from_elem(n, 1.0 / n as f64);
    let e = benchmark_returns(x, b.view()) - x.dot(&ndarray::ArrayView1::from(w));
    e.dot(&e) / train_len as f64
}

#[derive(Serialize)]
struct ReportFile<'a> {
    config: &'a ExperimentConfig,
    dropped_assets: &'a [String],
    report: &'a BacktestReport64,
}

pub fn backtest(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let loaded = load(cfg.data_path()?)?;
    let returns = compute_returns(&loaded.panel);
    let plan = plan_windows(returns.n_days(), cfg.train_len, cfg.test_len, cfg.windows)
        .map_err(|e| CliError::input(e.to_string()))?;
    let bt = BacktestConfig {
        plan,
        method: method(cfg, returns.n_assets()),
        bounds: bounds(cfg)?,
        cost: CostModel {
            unit: cfg.fee_unit.into(),
            ..CostModel::default()
        },
        initial_capital: cfg.capital,
        parallel: true,
    };
    let report = run_backtest(&returns, Some(loaded.panel.prices()), &bt).map_err(|e| match e {
        BacktestError::Window { .. } | BacktestError::InsufficientCapital { .. } => CliError::Solver(e.to_string()),
        other => CliError::input(other.to_string()),
    })?;

    write_json(
        &out_file(&cfg.out_dir, "report.json")?,
        &ReportFile {
            config: cfg,
            dropped_assets: &loaded.dropped,
            report: &report,
        },
    )?;
    let path = out_file(&cfg.out_dir, "daily.csv")?;
    let mut w = csv_writer(&path)?;
    w.write_record(["day", "date", "portfolio_return", "benchmark_return", "wealth", "benchmark_wealth"])
        .map_err(csv_err)?;
    for (i, d) in report.daily.iter().enumerate() {
        w.write_record([
            i.to_string(),
            d.date.clone(),
            d.portfolio_return.to_string(),
            d.benchmark_return.to_string(),
            d.wealth.to_string(),
            d.benchmark_wealth.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(io_err(&path))?;
    println!("MDTE_bps={:.6} Ret={:.6}", report.mdte_bps, report.normalized_return);
    Ok(())
}

pub fn synth(args: SynthArgs) -> Result<(), CliError> {
    let defaults = SynthSpec::default();
    let spec = SynthSpec {
        n_assets: args.n_assets.unwrap_or(defaults.n_assets),
        n_days: args.n_days.unwrap_or(defaults.n_days),
        k_true: args.k_true.unwrap_or(defaults.k_true),
        seed: args.seed.unwrap_or(defaults.seed),
        noise_std: args.noise_std.unwrap_or(defaults.noise_std),
    };
    let data = generate::<f64>(&spec).map_err(|e| CliError::input(e.to_string()))?;
    let dir = args.out_dir.unwrap_or_else(|| PathBuf::from("out"));

    let path = out_file(&dir, "prices.csv")?;
    let mut w = csv_writer(&path)?;
    let panel = &data.prices;
    w.write_record(std::iter::once("date").chain(panel.tickers().iter().map(String::as_str)))
        .map_err(csv_err)?;
    for (date, row) in panel.dates().iter().zip(panel.prices().rows()) {
        w.write_record(std::iter::once(date.clone()).chain(row.iter().map(|p| p.to_string())))
            .map_err(csv_err)?;
    }
    w.flush().map_err(io_err(&path))?;
    write_json(&out_file(&dir, "truth.json")?, &data.truth)?;
    let mut out = std::io::stdout().lock();
    writeln!(out, "wrote {} rows x {} assets to {}", panel.n_rows(), panel.n_assets(), path.display())
        .map_err(|e| CliError::input(e.to_string()))?;
    Ok(())
}
