//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.
//!
//! Criterion 12 (real-data smoke check) runs only when `SPARSETRACK_SP500_CSV`
//! points at an adjusted-close CSV; it never affects the exit status.

mod common;

use std::time::{Duration, Instant};

use common::*;
use ndarray::{Array1, Array2};
use sparsetrack::backtest::{stack_portfolios, SparsityMode};
use sparsetrack::market_data::benchmark_returns;
use sparsetrack::nnomp::NnompOptions;
use sparsetrack::proximal::{conjugate_prox, project_box, project_hyperplane, project_l0, project_turnover};
use sparsetrack::synth::{generate, synth_returns, SynthSpec};
use sparsetrack::*;

struct Line {
    id: u32,
    pass: bool,
    text: String,
}

fn line(id: u32, pass: bool, text: impl Into<String>) -> Line {
    Line { id, pass, text: text.into() }
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

fn sq_dist(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    (a - b).mapv(|v| v * v).sum()
}

fn projection_oracle() -> Line {
    let start = Instant::now();
    let mut r = rng(1);
    let mut worst: f64 = 0.0;
    for case in 0..200 {
        let n = 1 + case % 10;
        let k = 1 + (case / 10) % n;
        let z = gaussian_vector(&mut r, n, 1.0);
        let w0 = simplex_point(&mut r, n);
        let p = project_l0(z.view(), k).unwrap();
        let t = project_turnover(z.view(), k, w0.view()).unwrap();
        let (mut best_l0, mut best_t) = (f64::INFINITY, f64::INFINITY);
        for mask in 0u32..1 << n {
            if mask.count_ones() as usize > k {
                continue;
            }
            let mut a = Array1::zeros(n);
            let mut b = w0.clone();
            for i in (0..n).filter(|&i| mask >> i & 1 == 1) {
                a[i] = z[i];
                b[i] = z[i];
            }
            best_l0 = best_l0.min(sq_dist(&a, &z));
            best_t = best_t.min(sq_dist(&b, &z));
        }
        worst = worst.max((sq_dist(&p, &z) - best_l0).abs()).max((sq_dist(&t, &z) - best_t).abs());
    }
    let el = start.elapsed();
    line(
        1,
        worst <= 1e-12 && el < Duration::from_secs(10),
        format!("projection oracle: 200 instances, max distance gap {worst:.1e}, {:.2} s", secs(el)),
    )
}

fn gradient_check() -> Line {
    let mut r = rng(2);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let t = 2 + case % 49;
        let n = 1 + case % 20;
        let x = gaussian_matrix(&mut r, t, n, 1.0);
        let r_b = gaussian_vector(&mut r, t, 1.0);
        let w = gaussian_vector(&mut r, n, 0.5);
        for kind in [TrackingMeasure::Ete, TrackingMeasure::Dr] {
            let o = Objective::new(kind, x.clone(), r_b.clone()).unwrap();
            let g = o.gradient(w.view()).unwrap();
            for j in 0..n {
                let (mut up, mut dn) = (w.clone(), w.clone());
                up[j] += h;
                dn[j] -= h;
                let fd = (o.value(up.view()).unwrap() - o.value(dn.view()).unwrap()) / (2.0 * h);
                worst = worst.max((g[j] - fd).abs() / g[j].abs().max(fd.abs()).max(1e-6));
            }
        }
    }
    line(2, worst <= 1e-5, format!("gradients vs central differences: 100 instances, max relative error {worst:.1e}"))
}

fn moreau_identity() -> Line {
    let mut r = rng(3);
    let mut worst: f64 = 0.0;
    let boxed = |v: ndarray::ArrayView1<f64>| project_box(v, 0.0, 0.25).unwrap();
    let hyper = |v: ndarray::ArrayView1<f64>| project_hyperplane(v);
    for case in 0..1000 {
        let x = gaussian_vector(&mut r, 1 + case % 12, 2.0);
        let gamma = 10f64.powf(rand::Rng::random_range(&mut r, -2.0..2.0));
        let y = &x / gamma;
        let b = boxed(x.view()) + conjugate_prox(boxed, 1.0 / gamma, y.view()) * gamma;
        let h = hyper(x.view()) + conjugate_prox(hyper, 1.0 / gamma, y.view()) * gamma;
        worst = worst.max(max_abs_diff(b.as_slice().unwrap(), x.as_slice().unwrap()));
        worst = worst.max(max_abs_diff(h.as_slice().unwrap(), x.as_slice().unwrap()));
    }
    line(3, worst <= 1e-12, format!("Moreau identity (box, hyperplane): 1000 draws, max error {worst:.1e}"))
}

fn algorithm_fidelity() -> Line {
    let gap = transcription_gap(false).max(transcription_gap(true));
    line(4, gap <= 1e-12, format!("iteration vs straight-line transcription: 10 iterations, max gap {gap:.1e}"))
}

struct PlantedRun {
    recovered: bool,
    converged: bool,
    sum_residual: f64,
    box_violation: f64,
    sparsity_ok: bool,
}

fn planted_problem(x: Array2<f64>, r_b: Array1<f64>) -> TrackingProblem64 {
    let o = Objective::new(TrackingMeasure::Ete, x, r_b).unwrap();
    TrackingProblem::new(o, SparsitySet::portfolio(10, 50).unwrap(), BoxSet::new(0.0, 0.4).unwrap()).unwrap()
}

fn planted_run(problem: &TrackingProblem64, support: &[usize]) -> PlantedRun {
    let res = solve(problem, &SolverConfig::default()).unwrap();
    let found: Vec<usize> = (0..50).filter(|&j| res.w[j] != 0.0).collect();
    PlantedRun {
        recovered: found == support && res.objective_value <= 1e-8,
        converged: res.converged,
        sum_residual: res.feasibility.sum_residual,
        box_violation: res.feasibility.box_violation,
        sparsity_ok: res.feasibility.sparsity_count <= 10,
    }
}

fn planted_recovery(lines: &mut Vec<Line>, notes: &mut Vec<String>) {
    let start = Instant::now();
    let runs: Vec<PlantedRun> = (0..20)
        .map(|seed| {
            let spec = SynthSpec { n_assets: 50, n_days: 200, k_true: 10, seed, noise_std: 0.0 };
            let (x, support) = synth_returns(&spec).unwrap();
            let r_b = benchmark_returns(x.view(), Array1::from_elem(50, 0.02).view());
            planted_run(&planted_problem(x, r_b), &support)
        })
        .collect();
    let el = start.elapsed();
    let hits = runs.iter().filter(|r| r.recovered).count();
    lines.push(line(
        5,
        hits >= 18 && el < Duration::from_secs(30),
        format!("planted recovery, factor-model generator without noise: {hits}/20 seeds exact, {:.2} s", secs(el)),
    ));
    let converged: Vec<&PlantedRun> = runs.iter().filter(|r| r.converged).collect();
    let sum = converged.iter().map(|r| r.sum_residual).fold(0.0, f64::max);
    let bx = converged.iter().map(|r| r.box_violation).fold(0.0, f64::max);
    let l0 = runs.iter().all(|r| r.sparsity_ok);
    lines.push(line(
        6,
        sum <= 1e-3 && bx <= 1e-3 && l0,
        format!(
            "feasibility on the planted suite: {}/20 converged, max |1ᵀw-1| {sum:.1e}, max box violation {bx:.1e}, l0 bound always held: {l0}",
            converged.len()
        ),
    ));

    // Same problem with independent Gaussian returns, for comparison.
    let iid = (0..20)
        .filter(|&seed| {
            let mut r = rng(seed + 1000);
            let x = gaussian_matrix(&mut r, 200, 50, 0.01);
            let (support, w) = planted(&mut r, 50, 10);
            let r_b = x.dot(&w);
            planted_run(&planted_problem(x, r_b), &support).recovered
        })
        .count();
    notes.push(format!("criterion 5 context: independent Gaussian returns (sd 0.01), same sizes: {iid}/20 exact"));
}

fn synthetic_backtest_panel(seed: u64) -> (ReturnsPanel64, Array2<f64>) {
    let spec = SynthSpec { n_assets: 50, n_days: 500, k_true: 10, seed, noise_std: 1e-3 };
    let data = generate::<f64>(&spec).unwrap();
    let prices = data.prices.prices().clone();
    (compute_returns(&data.prices), prices)
}

fn config(method: Method<f64>) -> BacktestConfig<f64> {
    BacktestConfig {
        plan: plan_windows(500, 200, 100, 3).unwrap(),
        method,
        bounds: BoxSet::new(0.0, 0.4).unwrap(),
        cost: CostModel::default(),
        initial_capital: 10_000.0,
        parallel: false,
    }
}

fn pds(sparsity: SparsityMode, init: InitMode, seed: u64) -> Method<f64> {
    Method::Pds {
        measure: TrackingMeasure::Ete,
        sparsity,
        solver: SolverConfig { init, seed: Some(seed), ..SolverConfig::default() },
    }
}

fn accounting_gap(report: &BacktestReport64) -> f64 {
    report
        .ledger
        .iter()
        .map(|e| (e.wealth_before - e.total_fees - e.wealth_after).abs())
        .fold(0.0, f64::max)
}

fn backtest_suite(lines: &mut Vec<Line>, notes: &mut Vec<String>) {
    let start = Instant::now();
    let portfolio = SparsityMode::Portfolio { k1: 10 };
    let turnover = SparsityMode::Turnover { k1: 10, k2: 5 };
    let mut wins = 0;
    let mut alt_wins = [0usize; 2];
    let (mut mdte_pds, mut mdte_base) = (0.0, 0.0);
    let mut turnover_violations = 0;
    let mut portfolio_violations = 0;
    let mut rebalances = 0;
    let mut worst_accounting: f64 = 0.0;
    let mut simulations = 0;
    for seed in 0..50 {
        let (panel, prices) = synthetic_backtest_panel(seed);
        let run = |m: Method<f64>| run_backtest(&panel, Some(&prices), &config(m)).unwrap();
        let a = run(pds(portfolio, InitMode::A, seed));
        let base = run(Method::NnompPgd { k: 10, options: NnompOptions::default() });
        if a.mdte_bps <= base.mdte_bps {
            wins += 1;
        }
        mdte_pds += a.mdte_bps / 50.0;
        mdte_base += base.mdte_bps / 50.0;
        for (slot, init) in [InitMode::B, InitMode::C].into_iter().enumerate() {
            if run(pds(portfolio, init, seed)).mdte_bps <= base.mdte_bps {
                alt_wins[slot] += 1;
            }
        }
        let t_ete = run(pds(turnover, InitMode::A, seed));
        let t_dr = run(Method::Pds {
            measure: TrackingMeasure::Dr,
            sparsity: turnover,
            solver: SolverConfig::default(),
        });
        for report in [&t_ete, &t_dr] {
            for e in report.ledger.iter().skip(1) {
                rebalances += 1;
                if e.assets_traded() > 5 {
                    turnover_violations += 1;
                }
            }
        }
        for report in [&a, &base] {
            portfolio_violations += report.ledger.iter().filter(|e| e.assets_traded() > 20).count();
        }
        for report in [&a, &base, &t_ete, &t_dr] {
            worst_accounting = worst_accounting.max(accounting_gap(report));
            simulations += 1;
        }
    }
    lines.push(line(
        7,
        wins >= 30,
        format!(
            "PDS[P, ETE] (default init) MDTE <= NNOMP-PGD in {wins}/50 backtests (need 30); mean MDTE {mdte_pds:.3} vs {mdte_base:.3} bps"
        ),
    ));
    notes.push(format!(
        "criterion 7 context: same runs with init B: {}/50, init C: {}/50",
        alt_wins[0], alt_wins[1]
    ));
    lines.push(line(
        8,
        turnover_violations == 0 && portfolio_violations == 0,
        format!(
            "turnover ledger (K2=5): {turnover_violations} violations in {rebalances} rebalances after the first; portfolio runs over 2K1 trades: {portfolio_violations}"
        ),
    ));
    let fee_ok = CostModel::<f64>::default().fee(100.0, 10.0) == 1.0 && CostModel::<f64>::default().fee(300.0, 10.0) == 1.5;
    lines.push(line(
        9,
        fee_ok && worst_accounting <= 1e-9,
        format!(
            "fees $1.00 at 100 shares and $1.50 at 300 shares: {fee_ok}; accounting identity over {simulations} simulations, max gap ${worst_accounting:.1e}"
        ),
    ));
    notes.push(format!("backtest suite took {:.1} s", secs(start.elapsed())));
}

fn mdte_oracle() -> Line {
    let mut r = rng(10);
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let (n, test_len, windows) = (2 + case % 9, 1 + case % 7, 1 + case % 4);
        let days = test_len * windows;
        let x = gaussian_matrix(&mut r, days, n, 0.02);
        let r_b = gaussian_vector(&mut r, days, 0.02);
        let ports: Vec<Vec<f64>> = (0..windows).map(|_| simplex_point(&mut r, n).to_vec()).collect();
        let got = mdte(stack_portfolios(&ports, test_len).view(), x.view(), r_b.view()).unwrap();
        let mut ss = 0.0;
        for t in 0..days {
            let p = &ports[t / test_len];
            let d: f64 = (0..n).map(|j| x[[t, j]] * p[j]).sum::<f64>() - r_b[t];
            ss += d * d;
        }
        worst = worst.max((got - ss.sqrt() / days as f64 * 1e4).abs());
    }
    let x = gaussian_matrix(&mut r, 30, 8, 0.02);
    let b = Array1::from_elem(8, 0.125);
    let r_b = benchmark_returns(x.view(), b.view());
    let own = mdte(stack_portfolios(&[b.to_vec(), b.to_vec(), b.to_vec()], 10).view(), x.view(), r_b.view()).unwrap();
    line(
        10,
        worst <= 1e-12 && own == 0.0,
        format!("MDTE vs direct formula: max gap {worst:.1e} bps; benchmark self-tracking {own} bps"),
    )
}

fn per_iteration(t: usize) -> Duration {
    let mut r = rng(11);
    let x = gaussian_matrix(&mut r, t, 500, 0.01);
    let r_b = x.mean_axis(ndarray::Axis(1)).unwrap();
    let o = Objective::new(TrackingMeasure::Ete, x, r_b).unwrap();
    let p = TrackingProblem::new(o, SparsitySet::portfolio(40, 500).unwrap(), BoxSet::new(0.0, 0.1).unwrap()).unwrap();
    let cfg = SolverConfig::default();
    (0..3)
        .map(|_| {
            let mut state = initialize(&p, &cfg).unwrap();
            let start = Instant::now();
            for _ in 0..1000 {
                state.step(&p, cfg.decay).unwrap();
            }
            start.elapsed() / 1000
        })
        .min()
        .unwrap()
}

fn scaling() -> Line {
    let short = per_iteration(200);
    let long = per_iteration(400);
    let ratio = secs(long) / secs(short);
    line(
        11,
        ratio <= 2.5,
        format!(
            "per-iteration time N=500: T=200 {:.1} us, T=400 {:.1} us, ratio {ratio:.2}",
            secs(short) * 1e6,
            secs(long) * 1e6
        ),
    )
}

fn real_data_smoke() -> String {
    let Ok(path) = std::env::var("SPARSETRACK_SP500_CSV") else {
        return "criterion 12 SKIP real-data smoke check (set SPARSETRACK_SP500_CSV to run; not gated)".into();
    };
    let result = std::fs::File::open(&path)
        .map_err(|e| e.to_string())
        .and_then(|f| load_prices::<f64, _>(f).map_err(|e| e.to_string()))
        .and_then(|loaded| {
            let returns = compute_returns(&loaded.panel);
            let plan = plan_windows(returns.n_days(), 200, 100, 10).map_err(|e| e.to_string())?;
            let cfg = BacktestConfig {
                plan,
                method: pds(SparsityMode::Portfolio { k1: 40 }, InitMode::A, 0),
                bounds: BoxSet::new(0.0, 0.1).unwrap(),
                cost: CostModel::default(),
                initial_capital: 10_000.0,
                parallel: true,
            };
            run_backtest(&returns, Some(loaded.panel.prices()), &cfg).map_err(|e| e.to_string())
        });
    match result {
        Ok(r) => format!(
            "criterion 12 {} real-data MDTE {:.3} bps (band 0.2..2.0; not gated)",
            if (0.2..=2.0).contains(&r.mdte_bps) { "PASS" } else { "FAIL" },
            r.mdte_bps
        ),
        Err(e) => format!("criterion 12 ERROR {path}: {e} (not gated)"),
    }
}

fn main() {
    // cargo passes harness flags such as --list; there is nothing to list.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let mut lines = vec![projection_oracle(), gradient_check(), moreau_identity(), algorithm_fidelity()];
    let mut notes = Vec::new();
    planted_recovery(&mut lines, &mut notes);
    backtest_suite(&mut lines, &mut notes);
    lines.push(mdte_oracle());
    lines.push(scaling());
    lines.sort_by_key(|l| l.id);
    for l in &lines {
        println!("criterion {} {} {}", l.id, if l.pass { "PASS" } else { "FAIL" }, l.text);
    }
    println!("{}", real_data_smoke());
    for n in &notes {
        println!("note: {n}");
    }
    let failed: Vec<u32> = lines.iter().filter(|l| !l.pass).map(|l| l.id).collect();
    if failed.is_empty() {
        println!("acceptance: all gated criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
