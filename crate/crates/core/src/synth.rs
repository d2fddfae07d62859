//! Synthetic price panels with a planted sparse tracking portfolio.
//!
//! Returns follow a factor model `r_t = a + L f_t + ε_t` (one market factor and
//! two sector factors). A random set of `k_true` assets is chosen and the
//! remaining assets receive a common daily adjustment so that the equal-weight
//! benchmark equals the equal-weight portfolio of the planted assets plus
//! Gaussian noise of standard deviation `noise_std`.

use ndarray::Array2;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market_data::{DataError, PricePanel};
use crate::Scalar;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_assets: usize,
    /// Number of return days; the panel has one more price row.
    pub n_days: usize,
    pub k_true: usize,
    pub seed: u64,
    pub noise_std: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_assets: 50,
            n_days: 1300,
            k_true: 10,
            seed: 0,
            noise_std: 1e-4,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.n_assets == 0 {
            return Err(SynthError::Spec("n-assets must be positive".into()));
        }
        if self.n_days == 0 {
            return Err(SynthError::Spec("n-days must be positive".into()));
        }
        if self.k_true == 0 || self.k_true > self.n_assets {
            return Err(SynthError::Spec(format!(
                "k-true {} must lie in 1..={}",
                self.k_true, self.n_assets
            )));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(SynthError::Spec("noise-std must be finite and nonnegative".into()));
        }
        Ok(())
    }
}

/// The planted portfolio: `1/k_true` on each of `indices`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub indices: Vec<usize>,
    pub tickers: Vec<String>,
    pub weights: Vec<f64>,
    pub spec: SynthSpec,
}

#[derive(Debug, Clone)]
pub struct SynthData<T> {
    pub prices: PricePanel<T>,
    /// T×N return matrix used to build the prices.
    pub returns: Array2<f64>,
    pub truth: SynthTruth,
}

const N_SECTORS: usize = 2;

/// Raw factor-model returns with the planted-portfolio adjustment applied.
pub fn synth_returns(spec: &SynthSpec) -> Result<(Array2<f64>, Vec<usize>), SynthError> {
    spec.validate()?;
    let n = spec.n_assets;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");

    let drift: Vec<f64> = (0..n).map(|_| rng.random_range(-2e-4..6e-4)).collect();
    let market_beta: Vec<f64> = (0..n).map(|_| 1.0 + 0.3 * std_normal.sample(&mut rng)).collect();
    let sector_beta: Vec<[f64; N_SECTORS]> = (0..n)
        .map(|_| std::array::from_fn(|_| 0.5 * std_normal.sample(&mut rng)))
        .collect();
    let idio_dist = Uniform::new(0.008, 0.02).expect("valid range");
    let idio_vol: Vec<f64> = (0..n).map(|_| idio_dist.sample(&mut rng)).collect();

    let mut planted: Vec<usize> = sample(&mut rng, n, spec.k_true).into_vec();
    planted.sort_unstable();
    let mut is_planted = vec![false; n];
    for &j in &planted {
        is_planted[j] = true;
    }

    let mut x = Array2::zeros((spec.n_days, n));
    for t in 0..spec.n_days {
        let market = 3e-4 + 0.01 * std_normal.sample(&mut rng);
        let sectors: [f64; N_SECTORS] = std::array::from_fn(|_| 0.005 * std_normal.sample(&mut rng));
        for j in 0..n {
            let sector: f64 = sector_beta[j].iter().zip(&sectors).map(|(b, f)| b * f).sum();
            x[[t, j]] = drift[j] + market_beta[j] * market + sector + idio_vol[j] * std_normal.sample(&mut rng);
        }
        let noise = spec.noise_std * std_normal.sample(&mut rng);
        let k = spec.k_true;
        if k < n {
            let row = x.row(t);
            let mean_all = row.sum() / n as f64;
            let mean_planted = planted.iter().map(|&j| row[j]).sum::<f64>() / k as f64;
            // Shift the other assets so mean_all becomes mean_planted + noise.
            let shift = (mean_planted - mean_all + noise) * n as f64 / (n - k) as f64;
            for j in (0..n).filter(|&j| !is_planted[j]) {
                x[[t, j]] += shift;
            }
        }
        for v in x.row_mut(t) {
            *v = v.max(-0.95);
        }
    }
    Ok((x, planted))
}

/// Prices starting at 100 for every asset, with day labels `d00000`, ...
pub fn generate<T: Scalar>(spec: &SynthSpec) -> Result<SynthData<T>, SynthError> {
    let (x, planted) = synth_returns(spec)?;
    let n = spec.n_assets;
    let mut prices = Array2::from_elem((spec.n_days + 1, n), 100.0_f64);
    for t in 0..spec.n_days {
        for j in 0..n {
            prices[[t + 1, j]] = prices[[t, j]] * (1.0 + x[[t, j]]);
        }
    }
    let tickers: Vec<String> = (0..n).map(|j| format!("S{j:03}")).collect();
    let dates = (0..=spec.n_days).map(|t| format!("d{t:05}")).collect();
    let panel = PricePanel::new(dates, tickers.clone(), prices.mapv(T::lit))?;
    let w = 1.0 / spec.k_true as f64;
    let truth = SynthTruth {
        tickers: planted.iter().map(|&j| tickers[j].clone()).collect(),
        weights: vec![w; planted.len()],
        indices: planted,
        spec: spec.clone(),
    };
    Ok(SynthData {
        prices: panel,
        returns: x,
        truth,
    })
}
