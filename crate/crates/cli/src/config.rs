//! Experiment configuration: flags, an optional flat JSON file, and defaults.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use sparsetrack::backtest::FeeUnit;
use sparsetrack::market_data::{DEFAULT_N_WINDOWS, DEFAULT_TEST_LEN, DEFAULT_TRAIN_LEN};
use sparsetrack::InitMode;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodName {
    PdsEte,
    PdsDr,
    NnompPgd,
    /// Hold the equal-weight benchmark itself.
    Benchmark,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SparsityName {
    Portfolio,
    Turnover,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
pub enum InitName {
    #[value(name = "A", alias = "a")]
    A,
    #[value(name = "B", alias = "b")]
    B,
    #[value(name = "C", alias = "c")]
    C,
}

impl From<InitName> for InitMode {
    fn from(v: InitName) -> Self {
        match v {
            InitName::A => InitMode::A,
            InitName::B => InitMode::B,
            InitName::C => InitMode::C,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeeUnitName {
    Shares,
    Dollars,
}

impl From<FeeUnitName> for FeeUnit {
    fn from(v: FeeUnitName) -> Self {
        match v {
            FeeUnitName::Shares => FeeUnit::Shares,
            FeeUnitName::Dollars => FeeUnit::Dollars,
        }
    }
}

/// Options shared by `track` and `backtest`. Every field is optional so that
/// flags can be layered over a config file.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ExperimentArgs {
    /// Adjusted-close CSV: a date column followed by one column per ticker
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Tracking method [default: pds-ete]
    #[arg(long, value_enum)]
    pub method: Option<MethodName>,
    /// Sparsity regime [default: portfolio]
    #[arg(long, value_enum)]
    pub sparsity: Option<SparsityName>,
    /// Maximum number of holdings [default: 40]
    #[arg(long)]
    pub k1: Option<usize>,
    /// Maximum number of changed positions per rebalance in turnover mode [default: k1]
    #[arg(long)]
    pub k2: Option<usize>,
    /// Upper weight bound [default: 4/k1]
    #[arg(long)]
    pub upper: Option<f64>,
    /// Training rows per window [default: 200]
    #[arg(long)]
    pub train_len: Option<usize>,
    /// Test rows per window [default: 100]
    #[arg(long)]
    pub test_len: Option<usize>,
    /// Number of rolling windows [default: 10]
    #[arg(long)]
    pub windows: Option<usize>,
    /// Initial capital in dollars [default: 10000]
    #[arg(long)]
    pub capital: Option<f64>,
    /// Solver starting point [default: A]
    #[arg(long, value_enum)]
    pub init: Option<InitName>,
    /// Seed for random initialisation [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Relative-change stopping tolerance [default: 1e-5]
    #[arg(long)]
    pub tol: Option<f64>,
    /// Per-iteration stepsize decay factor [default: 0.999]
    #[arg(long)]
    pub decay: Option<f64>,
    /// Iteration cap per solve [default: 50000]
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Unit of traded volume in the fee formula [default: shares]
    #[arg(long, value_enum)]
    pub fee_unit: Option<FeeUnitName>,
    /// Output directory [default: out]
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

macro_rules! overlay {
    ($base:ident, $top:ident, $($f:ident),*) => {
        ExperimentArgs { $($f: $top.$f.or($base.$f)),* }
    };
}

impl ExperimentArgs {
    /// Fields set in `self` win over `base`.
    pub fn over(self, base: ExperimentArgs) -> ExperimentArgs {
        let top = self;
        overlay!(
            base, top, data, method, sparsity, k1, k2, upper, train_len, test_len, windows, capital, init, seed, tol,
            decay, max_iter, fee_unit, out_dir
        )
    }
}

/// Fully resolved configuration, echoed into every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct ExperimentConfig {
    pub data: Option<PathBuf>,
    pub method: MethodName,
    pub sparsity: SparsityName,
    pub k1: usize,
    pub k2: usize,
    pub lower: f64,
    pub upper: f64,
    pub train_len: usize,
    pub test_len: usize,
    pub windows: usize,
    pub capital: f64,
    pub init: InitName,
    pub seed: u64,
    pub tol: f64,
    pub decay: f64,
    pub max_iter: usize,
    pub fee_unit: FeeUnitName,
    pub out_dir: PathBuf,
}

pub const DEFAULT_K1: usize = 40;
pub const DEFAULT_CAPITAL: f64 = 10_000.0;

impl ExperimentConfig {
    pub fn resolve(args: ExperimentArgs) -> Result<Self, CliError> {
        let k1 = args.k1.unwrap_or(DEFAULT_K1);
        if k1 == 0 {
            return Err(CliError::input("k1 must be positive"));
        }
        let k2 = args.k2.unwrap_or(k1);
        if k2 == 0 {
            return Err(CliError::input("k2 must be positive"));
        }
        let cfg = Self {
            data: args.data,
            method: args.method.unwrap_or(MethodName::PdsEte),
            sparsity: args.sparsity.unwrap_or(SparsityName::Portfolio),
            k1,
            k2,
            lower: 0.0,
            upper: args.upper.unwrap_or(4.0 / k1 as f64),
            train_len: args.train_len.unwrap_or(DEFAULT_TRAIN_LEN),
            test_len: args.test_len.unwrap_or(DEFAULT_TEST_LEN),
            windows: args.windows.unwrap_or(DEFAULT_N_WINDOWS),
            capital: args.capital.unwrap_or(DEFAULT_CAPITAL),
            init: args.init.unwrap_or(InitName::A),
            seed: args.seed.unwrap_or(0),
            tol: args.tol.unwrap_or(1e-5),
            decay: args.decay.unwrap_or(0.999),
            max_iter: args.max_iter.unwrap_or(50_000),
            fee_unit: args.fee_unit.unwrap_or(FeeUnitName::Shares),
            out_dir: args.out_dir.unwrap_or_else(|| PathBuf::from("out")),
        };
        if !(cfg.upper > cfg.lower) {
            return Err(CliError::input(format!("upper bound {} must exceed 0", cfg.upper)));
        }
        if !(cfg.capital > 0.0) {
            return Err(CliError::input("capital must be positive"));
        }
        if !(cfg.tol > 0.0) || !(cfg.decay > 0.0 && cfg.decay <= 1.0) {
            return Err(CliError::input("tol must be positive and decay in (0, 1]"));
        }
        Ok(cfg)
    }

    pub fn data_path(&self) -> Result<&Path, CliError> {
        self.data.as_deref().ok_or_else(|| CliError::input("no --data file given"))
    }
}

/// Synthetic-data options.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct SynthArgs {
    /// Number of assets [default: 50]
    #[arg(long)]
    pub n_assets: Option<usize>,
    /// Number of return days; the CSV has one more row [default: 1300]
    #[arg(long)]
    pub n_days: Option<usize>,
    /// Size of the planted tracking portfolio [default: 10]
    #[arg(long)]
    pub k_true: Option<usize>,
    /// Random seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Standard deviation of the benchmark's deviation from the planted portfolio [default: 1e-4]
    #[arg(long)]
    pub noise_std: Option<f64>,
    /// Output directory [default: out]
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

impl SynthArgs {
    pub fn over(self, base: SynthArgs) -> SynthArgs {
        SynthArgs {
            n_assets: self.n_assets.or(base.n_assets),
            n_days: self.n_days.or(base.n_days),
            k_true: self.k_true.or(base.k_true),
            seed: self.seed.or(base.seed),
            noise_std: self.noise_std.or(base.noise_std),
            out_dir: self.out_dir.or(base.out_dir),
        }
    }
}

/// Read a flat JSON object whose keys mirror the flag names.
pub fn read_file<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}
