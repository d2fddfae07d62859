#![allow(clippy::needless_range_loop)]
#![allow(dead_code)]

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sparsetrack::{initialize, BoxSet, InitMode, Objective, SolverConfig, SparsitySet, TrackingMeasure, TrackingProblem};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, sd: f64) -> Array2<f64> {
    let d = Normal::new(0.0, sd).unwrap();
    Array2::from_shape_fn((rows, cols), |_| d.sample(rng))
}

pub fn gaussian_vector(rng: &mut ChaCha8Rng, n: usize, sd: f64) -> Array1<f64> {
    let d = Normal::new(0.0, sd).unwrap();
    Array1::from_shape_fn(n, |_| d.sample(rng))
}

/// Uniform weights on `k` distinct random assets.
pub fn planted(rng: &mut ChaCha8Rng, n: usize, k: usize) -> (Vec<usize>, Array1<f64>) {
    let mut idx = rand::seq::index::sample(rng, n, k).into_vec();
    idx.sort_unstable();
    let mut w = Array1::zeros(n);
    for &j in &idx {
        w[j] = 1.0 / k as f64;
    }
    (idx, w)
}

/// A random point of the probability simplex.
pub fn simplex_point(rng: &mut ChaCha8Rng, n: usize) -> Array1<f64> {
    let v = Array1::from_shape_fn(n, |_| -rng.random::<f64>().ln());
    let s = v.sum();
    v / s
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Straight transcription of the iteration on plain vectors.
pub struct Reference {
    pub w: Vec<f64>,
    pub v1: Vec<f64>,
    pub v2: Vec<f64>,
    pub g1: f64,
    pub g2: f64,
}

impl Reference {
    #[allow(clippy::too_many_arguments)]
    pub fn step(&mut self, x: &Array2<f64>, r_b: &Array1<f64>, k: usize, anchor: Option<&[f64]>, lo: f64, hi: f64) {
        let (t, n) = x.dim();
        let mut e = vec![0.0; t];
        for i in 0..t {
            let mut xw = 0.0;
            for j in 0..n {
                xw += x[[i, j]] * self.w[j];
            }
            e[i] = r_b[i] - xw;
        }
        let mut grad = vec![0.0; n];
        for j in 0..n {
            let mut acc = 0.0;
            for i in 0..t {
                acc += x[[i, j]] * e[i];
            }
            grad[j] = -2.0 / t as f64 * acc;
        }
        let z: Vec<f64> = (0..n).map(|j| self.w[j] - self.g1 * (grad[j] + self.v1[j] + self.v2[j])).collect();
        let base = anchor.map_or(vec![0.0; n], <[f64]>::to_vec);
        let d: Vec<f64> = (0..n).map(|j| z[j] - base[j]).collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| d[b].abs().partial_cmp(&d[a].abs()).unwrap().then(a.cmp(&b)));
        let mut w_new = base.clone();
        for &j in order.iter().take(k) {
            w_new[j] = base[j] + d[j];
        }
        for j in 0..n {
            let ext = self.g2 * (2.0 * w_new[j] - self.w[j]);
            self.v1[j] += ext;
            self.v2[j] += ext;
        }
        for j in 0..n {
            let y = self.v1[j] / self.g2;
            self.v1[j] -= self.g2 * y.max(lo).min(hi);
        }
        let total: f64 = self.v2.iter().map(|v| v / self.g2).sum();
        let shift = (total - 1.0) / n as f64;
        for j in 0..n {
            let y = self.v2[j] / self.g2;
            self.v2[j] -= self.g2 * (y - shift);
        }
        self.w = w_new;
        self.g1 *= 0.999;
        self.g2 *= 0.999;
    }
}


/// Largest elementwise gap between the library iteration and [`Reference`]
/// over 10 iterations of a seeded instance.
pub fn transcription_gap(turnover: bool) -> f64 {
    let mut r = rng(2024);
    let (t, n, k) = (30, 12, 4);
    let x = gaussian_matrix(&mut r, t, n, 0.02);
    let r_b = x.mean_axis(ndarray::Axis(1)).unwrap();
    let w0 = simplex_point(&mut r, n).to_vec();
    let sparsity = if turnover {
        SparsitySet::turnover(k, w0.clone()).unwrap()
    } else {
        SparsitySet::portfolio(k, n).unwrap()
    };
    let obj = Objective::new(TrackingMeasure::Ete, x.clone(), r_b.clone()).unwrap();
    let problem = TrackingProblem::new(obj, sparsity, BoxSet::new(0.0, 0.5).unwrap()).unwrap();
    let cfg = SolverConfig {
        init: if turnover { InitMode::C } else { InitMode::B },
        ..SolverConfig::default()
    };
    let mut state = initialize(&problem, &cfg).unwrap();
    let mut reference = Reference {
        w: state.w.to_vec(),
        v1: vec![0.0; n],
        v2: vec![0.0; n],
        g1: state.gamma1,
        g2: state.gamma2,
    };
    let anchor = turnover.then_some(w0.as_slice());
    let mut gap: f64 = 0.0;
    for _ in 0..10 {
        state.step(&problem, cfg.decay).unwrap();
        reference.step(&x, &r_b, k, anchor, 0.0, 0.5);
        gap = gap
            .max(max_abs_diff(state.w.as_slice().unwrap(), &reference.w))
            .max(max_abs_diff(state.v1.as_slice().unwrap(), &reference.v1))
            .max(max_abs_diff(state.v2.as_slice().unwrap(), &reference.v2))
            .max((state.gamma1 - reference.g1).abs())
            .max((state.gamma2 - reference.g2).abs());
    }
    gap
}
