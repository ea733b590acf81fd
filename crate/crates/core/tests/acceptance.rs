//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails. `ACCEPTANCE_ONLY=1,7` runs a subset.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use eigenrisk::*;
use std::result::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err(e: Error) -> String {
    e.to_string()
}

fn powerlaw_ts(alpha: f64, beta: f64, modes: usize, noise: f64) -> Result<Task64, String> {
    make_powerlaw_structure(&PowerlawTask::new(alpha, beta).map_err(err)?, modes)
        .and_then(|t| t.with_noise(noise))
        .map_err(err)
}

/// Random admissible powerlaw task: α ∈ [1.2, 3], β ∈ [1.1, min(2α+1, 4)).
fn random_exponents(rng: &mut ChaCha8Rng) -> (f64, f64) {
    let alpha = rng.random_range(1.2f64..3.0);
    let beta = rng.random_range(1.1..(2.0 * alpha + 1.0).min(4.0));
    (alpha, beta)
}

/// Simulated RF regression against theory on a (k, ridge) grid at n = 256.
fn simulation_grid() -> Outcome {
    let ts = powerlaw_ts(1.5, 1.5, 10_000, 0.5)?.truncated();
    let n = 256;
    let ks: Vec<usize> = (0..10).map(|j| 16 << j).collect();
    let ridges = [1e-3, 1.0, 1e2];
    let sims = simulate_rf_grid(&ts, n, &ks, &ridges, 45, 20_240_601, false, FeatureSampling::Projected)
        .map_err(err)?;
    let mut ok = 0;
    let mut misses = Vec::new();
    for s in &sims {
        let k = s.k.expect("rf result");
        let th = rf_risk(&ts, n as f64, k as f64, s.ridge).map_err(err)?;
        let z_test = (s.test_mean - th.e_test) / s.test_se.expect("45 trials");
        let z_train = (s.train_mean - th.e_train) / s.train_se.expect("45 trials");
        if z_test.abs() <= 3.0 && z_train.abs() <= 3.0 {
            ok += 1;
        } else {
            misses.push(format!("(k={k}, δ={}, z_te={z_test:.2}, z_tr={z_train:.2})", s.ridge));
        }
    }
    let frac = ok as f64 / sims.len() as f64;
    let detail = format!("{ok}/{} grid points within 3 SE; misses: {}", sims.len(), misses.join(" "));
    ensure(frac >= 0.9, || detail.clone())?;
    Ok(detail)
}

/// Optimally regularized test risk never increases with n or k.
fn more_is_better() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut checks = 0;
    let mut strict = 0;
    for task_id in 0..50 {
        let (alpha, beta) = random_exponents(&mut rng);
        let noise = if task_id % 5 == 0 { 0.0 } else { rng.random_range(0.0..1.0) };
        let modes = rng.random_range(600..3000);
        let ts = powerlaw_ts(alpha, beta, modes, noise)?;
        let best = |n: f64, k: f64| -> Result<f64, String> {
            Ok(optimal_ridge(&ts, n, Features::Finite(k)).map_err(err)?.report.e_test)
        };
        let mut sizes: Vec<f64> = (0..4).map(|_| rng.random_range(1..=512) as f64).collect();
        sizes.sort_by(f64::total_cmp);
        sizes.dedup();
        let other = rng.random_range(1..=512) as f64;
        for (i, &a) in sizes.iter().enumerate() {
            for &b in &sizes[i + 1..] {
                for (lo, hi, what) in [
                    (best(a, other)?, best(b, other)?, "n"),
                    (best(other, a)?, best(other, b)?, "k"),
                ] {
                    checks += 1;
                    ensure(hi <= lo * (1.0 + 1e-9), || {
                        format!("task {task_id} (α={alpha:.3}, β={beta:.3}, σ²={noise:.3}): risk rose in {what} from {a} to {b}: {lo} -> {hi}")
                    })?;
                    if b >= 2.0 * a {
                        strict += 1;
                        ensure(lo - hi > 1e-8, || {
                            format!("task {task_id}: no strict decrease in {what} from {a} to {b}: {lo} -> {hi}")
                        })?;
                    }
                }
            }
        }
    }
    Ok(format!("{checks} monotonicity checks over 50 tasks, {strict} with a strict decrease"))
}

/// The general RF risk reproduces every special-case formula.
fn limit_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(47);
    let grid = LimitGrid::default();
    let mut worst = (0.0f64, String::new());
    for task_id in 0..100 {
        let (alpha, beta) = random_exponents(&mut rng);
        let noise = rng.random_range(0.0..1.0);
        let modes = rng.random_range(500..4000);
        let ts = powerlaw_ts(alpha, beta, modes, noise)?;
        let n = rng.random_range(16.0f64..1024.0).round();
        let mut k = rng.random_range(16.0f64..1024.0).round();
        if (n / k).max(k / n) < 1.25 {
            k = (n * 2.0).round();
        }
        for r in check_all_limits(&ts, n, k, &grid).map_err(err)? {
            if r.relative_gap > worst.0 {
                worst = (r.relative_gap, format!("{:?} on task {task_id} (n={n}, k={k})", r.limit_name));
            }
            ensure(r.relative_gap < 1e-3, || {
                format!(
                    "task {task_id} (α={alpha:.3}, β={beta:.3}, n={n}, k={k}): {:?} gap {:e}",
                    r.limit_name, r.relative_gap
                )
            })?;
        }
    }
    Ok(format!("600 checks on 100 tasks, worst gap {:.2e} ({})", worst.0, worst.1))
}

/// Zero-ridge powerlaw asymptotics against exact solves.
fn powerlaw_asymptotics() -> Outcome {
    let mut lines = Vec::new();
    for alpha in [1.2f64, 1.5, 2.0, 3.0] {
        let ts = powerlaw_ts(alpha, alpha, 20_000, 0.0)?;
        let e0 = krr_risk(&ts, 1e4, 0.0).map_err(err)?.overfitting_coeff;
        let rel = (e0 - alpha).abs() / alpha;
        ensure(rel < 0.05, || format!("(a) α={alpha}: E₀ = {e0}, off by {rel:.3}"))?;
        lines.push(format!("E₀(α={alpha})={e0:.4}"));
    }
    for (alpha, beta) in [(1.5f64, 1.5f64), (2.0, 1.5), (1.5, 2.5)] {
        let task = PowerlawTask::new(alpha, beta).map_err(err)?;
        let ts = make_powerlaw_structure(&task, 8192).map_err(err)?;
        let exact = krr_risk(&ts, 4096.0, 0.0).map_err(err)?.e_test;
        let closed = null_risk(&task, 4096.0).map_err(err)?;
        let rel = (exact - closed).abs() / closed;
        ensure(rel < 0.03, || format!("(b) (α,β)=({alpha},{beta}): {exact} vs closed form {closed}"))?;
        lines.push(format!("risk gap({alpha},{beta})={rel:.2e}"));
    }
    for alpha in [1.2f64, 1.5, 2.0, 3.0] {
        let ts = powerlaw_ts(alpha, alpha, 4096, 0.0)?;
        let exact = solve_krr_kappa(&ts, 256.0, 0.0).map_err(err)?.kappa;
        let closed = null_kappa(alpha, 256.0).map_err(err)?;
        let rel = (exact - closed).abs() / exact;
        ensure(rel < 0.02, || format!("(c) α={alpha}: κ = {exact} vs {closed}"))?;
        lines.push(format!("κ gap(α={alpha})={rel:.2e}"));
    }
    Ok(lines.join(", "))
}

/// Fitting ratio at the numerically optimal ridge versus the closed-form R*.
fn optimal_ratio_theory() -> Outcome {
    let n = 65_536.0;
    // plug-in oracle: s² = 0 gives √R* = (α − β)/((α − 1)β); the
    // interpolation threshold is (β − α)/(α(α − 1))
    let oracle_2_15 = ((2.0f64 - 1.5) / ((2.0 - 1.0) * 1.5)).powi(2);
    let threshold = (2.5 - 1.5) / (1.5 * (1.5 - 1.0));
    ensure((oracle_2_15 - 1.0 / 9.0).abs() < 1e-15 && (threshold - 4.0 / 3.0f64).abs() < 1e-15, || {
        "oracle arithmetic".into()
    })?;
    let ridges: Vec<f64> = std::iter::once(0.0)
        .chain((0..=600).map(|i| 10f64.powf(-10.0 + 12.0 * i as f64 / 600.0)))
        .collect();
    let cases = [(2.0, 1.5, 0.0, Some(oracle_2_15)), (1.5, 2.5, 0.0, Some(0.0)), (1.5, 2.5, 1.0, Some(0.0)), (1.5, 2.5, 3.0, None)];
    let mut lines = Vec::new();
    for (alpha, beta, s2, oracle) in cases {
        let task = PowerlawTask::new(alpha, beta).and_then(|t| t.with_noise(s2)).map_err(err)?;
        let noise = scaled_noise(&task, n).map_err(err)?;
        let ts = make_powerlaw_structure(&task, 8192).and_then(|t| t.with_noise(noise)).map_err(err)?;
        let mut best = (f64::INFINITY, 0.0);
        for &d in &ridges {
            let r = krr_risk(&ts, n, d).map_err(err)?;
            if r.e_test < best.0 {
                best = (r.e_test, r.fitting_ratio);
            }
        }
        let theory = optimal_ratio(&task).map_err(err)?.ratio_star;
        if let Some(o) = oracle {
            ensure((theory - o).abs() < 1e-9, || format!("optimal_ratio {theory} vs oracle {o}"))?;
        } else {
            ensure(theory > 0.0, || format!("(α,β,s²)=({alpha},{beta},{s2}): expected R* > 0"))?;
        }
        ensure((best.1 - theory).abs() < 0.02, || {
            format!("(α,β,s²)=({alpha},{beta},{s2}): numerical argmin R = {:.4}, R* = {theory:.4}", best.1)
        })?;
        lines.push(format!("({alpha},{beta},{s2}): R_num={:.4} R*={theory:.4}", best.1));
    }
    Ok(lines.join(", "))
}

/// Risk penalty for a suboptimal fitting ratio is at least quadratic in √R.
fn suboptimality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(59);
    let n = 1e6;
    let mut tightest = f64::INFINITY;
    for task_id in 0..20 {
        let (alpha, beta) = random_exponents(&mut rng);
        let s2 = rng.random_range(0.0..3.0);
        let task = PowerlawTask::new(alpha, beta).and_then(|t| t.with_noise(s2)).map_err(err)?;
        let r_star = optimal_ratio(&task).map_err(err)?.ratio_star;
        let e_star = risk_of_ratio(&task, n, r_star).map_err(err)?;
        let c = (alpha - 1.0).powi(2) / (2.0 * alpha * alpha);
        for i in 0..100 {
            let r = i as f64 * 0.01;
            let ratio = risk_of_ratio(&task, n, r).map_err(err)? / e_star;
            let bound = 1.0 + c * (r.sqrt() - r_star.sqrt()).powi(2) - 1e-3;
            tightest = tightest.min(ratio - bound);
            ensure(ratio >= bound, || {
                format!("task {task_id} (α={alpha:.3}, β={beta:.3}, s²={s2:.3}) at R={r}: {ratio} < {bound}")
            })?;
        }
    }
    Ok(format!("2000 ratios on 20 tasks, smallest margin {tightest:.2e}"))
}

/// Proxy and direct exponent estimates on the synthetic benchmark.
fn exponent_recovery() -> Outcome {
    let ds = synthetic_powerlaw_dataset(&SyntheticKernelSpec::benchmark(2024)).map_err(err)?;
    let opts = FitOptions { holdout: Some(400), ..FitOptions::default() };
    let a = measure_alpha(&ds, &log_size_grid(10, 2000, 20), 1, &opts).map_err(err)?.exponent;
    let b = measure_beta(&ds, &log_size_grid(10, 1600, 20), 1, &opts).map_err(err)?.exponent;
    let de = direct_eigenstructure(&ds);
    let da = de.fit_alpha(&opts).map_err(err)?.exponent;
    let db = de.fit_beta(&opts).map_err(err)?.exponent;
    let detail = format!("proxy (α̂, β̂) = ({a:.3}, {b:.3}), direct = ({da:.3}, {db:.3}), truth (1.1, 1.3)");
    ensure((1.05..=1.20).contains(&a), || format!("proxy α̂ out of range: {detail}"))?;
    ensure((1.25..=1.35).contains(&b), || format!("proxy β̂ out of range: {detail}"))?;
    ensure((da - 1.1).abs() > (a - 1.1).abs(), || format!("direct α̂ not worse: {detail}"))?;
    ensure((db - 1.3).abs() > (b - 1.3).abs(), || format!("direct β̂ not worse: {detail}"))?;
    Ok(detail)
}

/// Double-descent peak on the diagonal, monotone decay away from it.
fn double_descent() -> Outcome {
    let grid: Vec<f64> = (0..=16).map(|i| 16.0 * 2f64.powf(i as f64 / 2.0)).collect();
    let mut checks = 0;
    // the peak is checked on the heatmap task; at δ = 10⁻³ it is only
    // visible while λ_n is not far below δ, which holds there but not for
    // steeper spectra
    for (alpha, beta, noise) in [(1.5, 1.5, 0.5), (2.0, 1.5, 0.0), (1.3, 2.0, 0.1)] {
        let ts = powerlaw_ts(alpha, beta, 4000, noise)?;
        let at = |n: f64, k: f64, d: f64| rf_risk(&ts, n, k, d).map(|r| r.e_test).map_err(err);
        let heatmap_task = noise == 0.5;
        for (i, &n) in grid.iter().enumerate().filter(|_| heatmap_task) {
            let row = grid.iter().map(|&k| at(n, k, 1e-3)).collect::<Result<Vec<_>, _>>()?;
            let argmax = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            ensure(argmax.abs_diff(i) <= 1, || {
                format!("task ({alpha},{beta},{noise}): peak at k={} for n={n}", grid[argmax])
            })?;
            checks += 1;
        }
        let tiny = 1e-10;
        for &fixed in &grid {
            let over: Vec<f64> = grid.iter().copied().filter(|&x| x > fixed).collect();
            let in_k = over.iter().map(|&k| at(fixed, k, tiny)).collect::<Result<Vec<_>, _>>()?;
            let in_n = over.iter().map(|&n| at(n, fixed, tiny)).collect::<Result<Vec<_>, _>>()?;
            for (series, what) in [(in_k, "k > n"), (in_n, "n > k")] {
                for w in series.windows(2) {
                    checks += 1;
                    ensure(w[1] <= w[0] * (1.0 + 1e-9), || {
                        format!("task ({alpha},{beta},{noise}): risk rose for {what} at fixed {fixed}: {} -> {}", w[0], w[1])
                    })?;
                }
            }
        }
    }
    Ok(format!("{checks} peak and monotonicity checks on 3 tasks"))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("simulation vs theory", simulation_grid),
        ("more is better", more_is_better),
        ("limit consistency", limit_suite),
        ("powerlaw asymptotics", powerlaw_asymptotics),
        ("optimal fitting ratio", optimal_ratio_theory),
        ("suboptimality lower bound", suboptimality),
        ("exponent recovery", exponent_recovery),
        ("double-descent geometry", double_descent),
    ];
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let id = i + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {id} [{name}]: PASS ({secs:.1}s) {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id} [{name}]: FAIL ({secs:.1}s) {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
