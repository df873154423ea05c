//! Built-in acceptance suite: eleven deterministic checks with fixed seeds
//! and pinned tolerances, each returning a pass/fail verdict with a detail
//! line and its runtime.  The CLI `verify` subcommand and the `acceptance`
//! integration test both run through this module, so the gate is identical
//! everywhere.

use std::time::Instant;

use serde::Serialize;

use crate::analysis::{self, decay_fit_in, Example33Mode};
use crate::error::{CoreError, Result};
use crate::measures::{ot_assignment, w1_exact_1d, EmpiricalMeasure};
use crate::models::{self, DiffusionSpec, ModelSpec};
use crate::noise::{positive_stable_increment, RngStream, StableParams};
use crate::rates::{
    direct_route_infimum, kinetic_condition_check, rate_profile, threshold_scan,
    threshold_scan_with_resolution, PhiSpec, Psi, Regime, ScanResolution, StableRateInfo,
    ThresholdParams,
};
use crate::simulate::{
    gamma_fixed_point, reflection_coupled_pairs, resume_mckean_vlasov, run_mckean_vlasov,
    synchronous_coupled_runs, SimConfig,
};

/// One acceptance criterion's outcome.
#[derive(Debug, Clone, Serialize)]
pub struct CriterionResult {
    pub id: usize,
    pub name: &'static str,
    /// Module the criterion exercises most directly (used by `--only`).
    pub module: &'static str,
    pub passed: bool,
    pub details: String,
    pub seconds: f64,
}

struct Criterion {
    id: usize,
    name: &'static str,
    module: &'static str,
    run: fn() -> Result<String>,
}

fn catalog() -> Vec<Criterion> {
    vec![
        Criterion { id: 1, name: "exact transport matches brute force", module: "measures", run: criterion_1 },
        Criterion { id: 2, name: "concave distance function machinery", module: "rates", run: criterion_2 },
        Criterion { id: 3, name: "reflection coupling contracts at the analytic rate", module: "simulate", run: criterion_3 },
        Criterion { id: 4, name: "synchronous coupling obeys the squared-growth bound", module: "simulate", run: criterion_4 },
        Criterion { id: 5, name: "measure map iterates contract geometrically", module: "simulate", run: criterion_5 },
        Criterion { id: 6, name: "phase transition of the scalar self-consistent model", module: "analysis", run: criterion_6 },
        Criterion { id: 7, name: "subordinator moment identities", module: "noise", run: criterion_7 },
        Criterion { id: 8, name: "synchronous distance bound under subordinated noise", module: "analysis", run: criterion_8 },
        Criterion { id: 9, name: "resolvent drift regularization", module: "models", run: criterion_9 },
        Criterion { id: 10, name: "interaction thresholds are resolution-stable and bracketed", module: "rates", run: criterion_10 },
        Criterion { id: 11, name: "bitwise determinism and semigroup splitting", module: "simulate", run: criterion_11 },
    ]
}

/// Names accepted by [`run_module`].
pub fn known_modules() -> Vec<&'static str> {
    let mut v: Vec<&'static str> = catalog().iter().map(|c| c.module).collect();
    v.sort_unstable();
    v.dedup();
    v
}

fn execute(c: &Criterion) -> CriterionResult {
    let start = Instant::now();
    let outcome = (c.run)();
    let seconds = start.elapsed().as_secs_f64();
    match outcome {
        Ok(details) => CriterionResult {
            id: c.id,
            name: c.name,
            module: c.module,
            passed: true,
            details,
            seconds,
        },
        Err(e) => CriterionResult {
            id: c.id,
            name: c.name,
            module: c.module,
            passed: false,
            details: format!("{e}"),
            seconds,
        },
    }
}

/// Run every criterion in order.
pub fn run_all() -> Vec<CriterionResult> {
    catalog().iter().map(execute).collect()
}

/// Run a single criterion by id (1-based); `None` for an unknown id.
pub fn run_one(id: usize) -> Option<CriterionResult> {
    catalog().iter().find(|c| c.id == id).map(execute)
}

/// Run the criteria belonging to one module, or all of them.
pub fn run_module(only: Option<&str>) -> Result<Vec<CriterionResult>> {
    match only {
        None => Ok(run_all()),
        Some(module) => {
            let cat = catalog();
            let picked: Vec<&Criterion> = cat.iter().filter(|c| c.module == module).collect();
            if picked.is_empty() {
                return Err(CoreError::Configuration(format!(
                    "unknown module '{module}'; known: {}",
                    known_modules().join(", ")
                )));
            }
            Ok(picked.into_iter().map(execute).collect())
        }
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(CoreError::Inconsistency(msg()))
    }
}

fn seeded_cloud(n: usize, dim: usize, mean_first: f64, sd: f64, seed: u64) -> EmpiricalMeasure {
    let mut stream = RngStream::new(seed, 0xACCE_97);
    let mut data = vec![0.0; n * dim];
    stream.fill_standard_normal(&mut data);
    for (i, v) in data.iter_mut().enumerate() {
        *v *= sd;
        if i % dim == 0 {
            *v += mean_first;
        }
    }
    EmpiricalMeasure::new(dim, data).expect("finite by construction")
}

// ───────────────────────── criterion 1 ─────────────────────────

/// Minimal mean pair distance over all bijections, by explicit enumeration.
fn brute_force_w1(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> f64 {
    let n = mu.len();
    let d = mu.dim();
    let dist = |i: usize, j: usize| -> f64 {
        let a = mu.point(i);
        let b = nu.point(j);
        (0..d).map(|k| (a[k] - b[k]) * (a[k] - b[k])).sum::<f64>().sqrt()
    };
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = f64::INFINITY;
    // Heap's algorithm, iterative
    let mut c = vec![0usize; n];
    let eval = |perm: &[usize]| -> f64 {
        perm.iter().enumerate().map(|(i, &j)| dist(i, j)).sum::<f64>() / n as f64
    };
    best = best.min(eval(&perm));
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = best.min(eval(&perm));
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best
}

fn criterion_1() -> Result<String> {
    let mut stream = RngStream::new(0xC0FFEE, 1);
    let mut max_dev: f64 = 0.0;
    let mut max_dev_1d: f64 = 0.0;
    for trial in 0..500u32 {
        let d = 1 + (trial as usize % 3);
        let n = 2 + (stream.next_u64() % 7) as usize; // 2..=8
        let draw = |stream: &mut RngStream, len: usize| -> Vec<f64> {
            (0..len).map(|_| 4.0 * stream.uniform_open01() - 2.0).collect()
        };
        let mu = EmpiricalMeasure::new(d, draw(&mut stream, n * d))?;
        let nu = EmpiricalMeasure::new(d, draw(&mut stream, n * d))?;
        let exact = ot_assignment(&mu, &nu, |r| r)?;
        let brute = brute_force_w1(&mu, &nu);
        let dev = (exact - brute).abs();
        max_dev = max_dev.max(dev);
        ensure(dev <= 1e-12, || {
            format!("trial {trial}: assignment {exact} vs brute force {brute}")
        })?;
        if d == 1 {
            let line = w1_exact_1d(&mu, &nu)?;
            let dev1 = (line - brute).abs();
            max_dev_1d = max_dev_1d.max(dev1);
            ensure(dev1 <= 1e-12, || {
                format!("trial {trial}: sorted-line W1 {line} vs brute force {brute}")
            })?;
        }
    }
    Ok(format!(
        "500 instances (dims 1-3, up to 8 points): max deviation {max_dev:.2e}, \
         1d sorted rule {max_dev_1d:.2e}"
    ))
}

// ───────────────────────── criterion 2 ─────────────────────────

fn criterion_2() -> Result<String> {
    let spec = PhiSpec::new(1.0, 1.0, 1.0)?;
    let alpha = 1.0;
    let psi = Psi::new(&spec, alpha)?;
    ensure(psi.c1() == 2.0, || format!("C1 = {} but must be exactly 2", psi.c1()))?;
    let c1 = psi.c1();
    let c2 = psi.c2();
    let lambda = 2.0 * alpha / c2;
    let mut worst_slack: f64 = f64::NEG_INFINITY;
    for i in 1..=200 {
        let r = 0.5 * i as f64; // 200-point grid over (0, 100]
        let v = psi.eval(r)?;
        ensure(c1 * r - 1e-9 * (1.0 + r) <= v && v <= c2 * r + 1e-9 * (1.0 + r), || {
            format!("envelope broken at r = {r}: psi = {v}, [{}, {}]", c1 * r, c2 * r)
        })?;
        let lhs = 2.0 * alpha * psi.second(r)? + psi.phi(r) * psi.deriv(r)?;
        let rhs = -lambda * v;
        worst_slack = worst_slack.max(lhs - rhs);
        ensure(lhs <= rhs + 1e-8, || {
            format!("differential inequality broken at r = {r}: {lhs} > {rhs}")
        })?;
    }
    let pure = Psi::pure_dissipative(1.0, alpha)?;
    for i in 1..=200 {
        let r = 0.5 * i as f64;
        let v = pure.eval(r)?;
        let target = 2.0 * alpha / 1.0 * r;
        ensure((v - target).abs() <= 1e-8 * target, || {
            format!("pure-dissipative closed form broken at r = {r}: {v} vs {target}")
        })?;
    }
    Ok(format!(
        "C1 = 2 exact; envelope and differential inequality on 200 grid points \
         (worst slack {worst_slack:.2e}); linear closed form to 1e-8"
    ))
}

// ───────────────────────── criterion 3 ─────────────────────────

fn criterion_3() -> Result<String> {
    let spec = PhiSpec::new(1.0, 1.0, 1.0)?;
    let model = models::piecewise_dissipative(1, spec, 1.0, 0.0)?;
    let profile = rate_profile(&spec, 1.0)?;
    let n = 4000;
    let eta1 = seeded_cloud(n, 1, -2.0, 0.5, 31);
    let eta2 = seeded_cloud(n, 1, 2.0, 0.5, 32);
    let pooled = EmpiricalMeasure::pool(&[&eta1, &eta2])?;
    let mut config = SimConfig::new(1e-3, 8.0, n, 33);
    config.record_dt = Some(0.25);
    let run = reflection_coupled_pairs(&model, &pooled, &eta1, &eta2, &config)?;
    ensure(run.divergence.is_none(), || "coupled run diverged".into())?;
    let first = &run.series[0];
    let psi0 = first.mean_psi.ok_or_else(|| {
        CoreError::Inconsistency("profile model must carry a distance functional".into())
    })?;
    let stderr0 = first.sd_psi.unwrap_or(0.0) / (n as f64).sqrt();
    let mut lines = Vec::new();
    for target in [1.0, 2.0, 4.0, 8.0] {
        let point = run
            .series
            .iter()
            .find(|p| (p.t - target).abs() < 5e-4)
            .ok_or_else(|| CoreError::Inconsistency(format!("no record at t = {target}")))?;
        let lhs = point.mean_psi.unwrap_or(0.0);
        let decay = (-profile.lambda0 * target).exp();
        let stderr_t = point.sd_psi.unwrap_or(0.0) / (n as f64).sqrt();
        let rhs = decay * psi0 + 3.0 * (stderr_t + decay * stderr0);
        ensure(lhs <= rhs, || {
            format!("distance functional at t = {target}: {lhs} > bound {rhs}")
        })?;
        lines.push(format!("t={target}: {lhs:.3e} <= {rhs:.3e}"));
    }
    Ok(format!(
        "decay rate {:.4} certified on {} pairs ({}); final coupled fraction {:.3}",
        profile.lambda0,
        n,
        lines.join(", "),
        run.series.last().map_or(0.0, |p| p.frac_coupled)
    ))
}

// ───────────────────────── criterion 4 ─────────────────────────

fn criterion_4() -> Result<String> {
    let spec = PhiSpec::new(1.0, 1.0, 1.0)?;
    let kappa = 0.3;
    let k_one_sided = 1.0; // slope bound of the radial profile
    let model = models::piecewise_dissipative(1, spec, 1.0, kappa)?;
    let n = 4000;
    let mu1 = EmpiricalMeasure::new(1, vec![-1.0; n])?;
    let mu2 = EmpiricalMeasure::new(1, vec![1.0; n])?;
    let w1 = w1_exact_1d(&mu1, &mu2)?; // = 2
    let frozen1 = models::freeze(&model, &mu1)?;
    let frozen2 = models::freeze(&model, &mu2)?;
    let eta0 = seeded_cloud(n, 1, 0.0, 1.0, 41);
    let mut config = SimConfig::new(2e-3, 2.0, n, 42);
    config.record_dt = Some(0.5);
    let run = synchronous_coupled_runs(&frozen1, &frozen2, &eta0, &config)?;
    ensure(run.divergence.is_none(), || "coupled run diverged".into())?;
    let mut lines = Vec::new();
    for target in [0.5, 1.0, 2.0] {
        let point = run
            .series
            .iter()
            .find(|p| (p.t - target).abs() < 1e-3)
            .ok_or_else(|| CoreError::Inconsistency(format!("no record at t = {target}")))?;
        let bound = (kappa / k_one_sided) * ((2.0 * k_one_sided * target).exp() - 1.0) * w1 * w1;
        let slack = 3.0 * point.sd_dist_sq / (n as f64).sqrt();
        ensure(point.mean_dist_sq <= bound + slack, || {
            format!(
                "squared distance at t = {target}: {} > {bound} + {slack}",
                point.mean_dist_sq
            )
        })?;
        lines.push(format!("t={target}: {:.3e} <= {bound:.3e}", point.mean_dist_sq));
    }
    Ok(format!("frozen-pair growth bound on {n} pairs: {}", lines.join(", ")))
}

// ───────────────────────── criterion 5 ─────────────────────────

fn criterion_5() -> Result<String> {
    let spec = PhiSpec::new(1.0, 1.0, 1.0)?;
    let profile = rate_profile(&spec, 1.0)?;
    let thresholds = threshold_scan(&ThresholdParams {
        regime: Regime::BrownianFirstOrder,
        drift_constant: 1.0,
        c0: profile.c0,
        lambda0: profile.lambda0,
        stable: None,
    })?;
    let kappa = thresholds.delta0 / 10.0;
    let model = models::piecewise_dissipative(1, spec, 1.0, kappa)?;

    let n = 1000;
    let max_iter = 6;
    let mut ratio_sets: Vec<Vec<f64>> = vec![Vec::new(); max_iter - 1];
    for seed in 0..5u64 {
        let mu0 = seeded_cloud(n, 1, 2.0, 1.0, 500 + seed);
        let mut config = SimConfig::new(5e-3, 8.0, n, 510 + seed);
        config.window = 1.0;
        config.tol_stationary = 1e-15; // never stop early: observe all gaps
        config.tol_window = Some(0.5);
        let result = gamma_fixed_point(&model, &mu0, &config, max_iter)?;
        ensure(result.gaps.len() == max_iter, || {
            format!("seed {seed}: expected {max_iter} iterations, got {}", result.gaps.len())
        })?;
        for i in 1..max_iter {
            let prev = result.gaps[i - 1];
            let ratio = if prev == 0.0 { 0.0 } else { result.gaps[i] / prev };
            ratio_sets[i - 1].push(ratio);
        }
    }
    let mut medians = Vec::new();
    for (i, set) in ratio_sets.iter_mut().enumerate() {
        set.sort_by(f64::total_cmp);
        let median = set[set.len() / 2];
        ensure(median < 1.0, || {
            format!("iteration {}: median gap ratio {median} >= 1", i + 2)
        })?;
        medians.push(format!("{median:.3}"));
    }

    // measure-independent control: with common random numbers the second
    // iterate reproduces the first bitwise
    let control = models::ou(1, 1.0, 2.0)?;
    let mu0 = seeded_cloud(800, 1, 3.0, 1.0, 550);
    let mut config = SimConfig::new(5e-3, 6.0, 800, 551);
    config.window = 1.0;
    config.tol_stationary = 1e-12;
    config.tol_window = Some(0.3);
    let control_run = gamma_fixed_point(&control, &mu0, &config, 10)?;
    ensure(control_run.converged && control_run.iterations == 2, || {
        format!(
            "control model should converge at iteration 2, got {} (converged: {})",
            control_run.iterations, control_run.converged
        )
    })?;
    ensure(control_run.gaps[1] <= 1e-12, || {
        format!("control second gap {} above noise floor", control_run.gaps[1])
    })?;

    Ok(format!(
        "kappa = delta0/10 = {kappa:.3e}: median gap ratios over 5 seeds [{}]; \
         control map converged in one effective iteration",
        medians.join(", ")
    ))
}

// ───────────────────────── criterion 6 ─────────────────────────

fn criterion_6() -> Result<String> {
    let sub = SimConfig::new(1e-3, 20.0, 10_000, 61);
    let report = analysis::example33(0.5, Example33Mode::Simulate, &sub)?;
    let c_exact = report.c_const;
    ensure(
        (c_exact - ((-1.0_f64).exp() + std::f64::consts::PI.sqrt() * statrs::function::erf::erf(1.0)))
            .abs()
            <= 1e-8,
        || "quadrature constant disagrees with the closed form".into(),
    )?;
    ensure((report.epsilon_star - 0.9521).abs() <= 1e-4, || {
        format!("critical coupling {} not at 0.9521", report.epsilon_star)
    })?;
    let a_star = report.a_star.ok_or_else(|| {
        CoreError::Inconsistency("subcritical run lost its fixed point".into())
    })?;
    ensure((a_star - 2.106).abs() <= 1e-3, || format!("fixed point {a_star} not near 2.106"))?;
    let m_hat = report.m_hat_final.ok_or_else(|| {
        CoreError::Inconsistency("no terminal mean statistic recorded".into())
    })?;
    ensure((m_hat - a_star).abs() <= 0.05 * a_star, || {
        format!("terminal statistic {m_hat} off the fixed point {a_star} by more than 5%")
    })?;
    ensure(!report.divergence_detected, || "subcritical run flagged divergent".into())?;

    let sup_cfg = SimConfig::new(1e-3, 20.0, 2000, 62);
    let sup = analysis::example33(1.2, Example33Mode::Simulate, &sup_cfg)?;
    ensure(sup.no_invariant_measure, || "supercritical coupling not classified".into())?;
    let at = |series: &[(f64, f64)], t: f64| -> Option<f64> {
        series
            .iter()
            .min_by(|a, b| (a.0 - t).abs().total_cmp(&(b.0 - t).abs()))
            .map(|p| p.1)
    };
    let mid = at(&sup.mean_abs_series, 10.0).unwrap_or(0.0);
    let end = at(&sup.mean_abs_series, 20.0).unwrap_or(0.0);
    ensure(mid > 0.0 && end >= 2.0 * mid, || {
        format!("no doubling: mean abs {mid} at t=10 vs {end} at t=20")
    })?;
    ensure(sup.divergence_detected, || "supercritical growth not flagged".into())?;
    Ok(format!(
        "critical coupling {:.4}; terminal statistic {m_hat:.4} vs fixed point {a_star:.4}; \
         supercritical growth factor {:.1}",
        report.epsilon_star,
        end / mid
    ))
}

// ───────────────────────── criterion 7 ─────────────────────────

fn criterion_7() -> Result<String> {
    let params = StableParams::new(1.5)?;
    let exact = 1.511_429_216_246_800_8; // Gamma(1/3)/sqrt(pi)

    // Laplace transform at unit rate and unit time
    let mut stream = RngStream::new(0x57AB1E, 1);
    let n_laplace = 200_000;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..n_laplace {
        let s = positive_stable_increment(&mut stream, &params, 1.0)?;
        let v = (-s).exp();
        sum += v;
        sum_sq += v * v;
    }
    let nf = n_laplace as f64;
    let mean = sum / nf;
    let var = (sum_sq - nf * mean * mean) / (nf - 1.0);
    let stderr = (var / nf).sqrt();
    let target = (-1.0_f64).exp();
    ensure((mean - target).abs() <= 3.0 * stderr, || {
        format!("Laplace transform {mean} vs {target} (stderr {stderr})")
    })?;

    // scaled square-root moments across three horizons
    let mut ratios = Vec::new();
    for (slot, t) in [0.5, 1.0, 2.0].into_iter().enumerate() {
        let mut stream = RngStream::new(0x57AB1E, 10 + slot as u64);
        let n = 2_000_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let r = positive_stable_increment(&mut stream, &params, t)?.sqrt();
            sum += r;
            sum_sq += r * r;
        }
        let nf = n as f64;
        let scale = t.powf(1.0 / 1.5);
        let m = sum / nf / scale;
        let var = (sum_sq - nf * (sum / nf) * (sum / nf)) / (nf - 1.0);
        let stderr = (var / nf).sqrt() / scale;
        ensure((m - exact).abs() <= 3.0 * stderr, || {
            format!("t = {t}: scaled moment {m} vs {exact} (stderr {stderr})")
        })?;
        ratios.push(m);
    }
    let mean_ratio = ratios.iter().sum::<f64>() / ratios.len() as f64;
    for (i, r) in ratios.iter().enumerate() {
        ensure((r - mean_ratio).abs() <= 0.02 * mean_ratio, || {
            format!("scaled moment #{i} = {r} deviates from {mean_ratio} by over 2%")
        })?;
    }
    Ok(format!(
        "Laplace {mean:.5} vs {target:.5}; scaled moments [{:.4}, {:.4}, {:.4}] vs {exact:.4}",
        ratios[0], ratios[1], ratios[2]
    ))
}

// ───────────────────────── criterion 8 ─────────────────────────

fn criterion_8() -> Result<String> {
    let a = models::linear_stable(1, 1.0, 1.5)?;
    let b = models::linear_stable(1, 1.5, 1.5)?;
    let n = 4000;
    let mut passes = 0;
    let seeds = 20u64;
    let mut first_fail = String::new();
    for seed in 0..seeds {
        let eta = seeded_cloud(n, 1, 0.0, 1.0, 800 + seed);
        let mu = seeded_cloud(n, 1, 0.0, 1.0, 900 + seed);
        let setup = analysis::Lemma51Setup {
            model_a: &a,
            model_b: &b,
            mu_a: &mu,
            mu_b: &mu,
            eta_a: &eta,
            eta_b: &eta,
        };
        let config = SimConfig::new(4e-3, 4.0, n, 1000 + seed);
        let report = analysis::lemma51_check(&setup, &config)?;
        if report.verdict == analysis::Verdict::Pass {
            passes += 1;
        } else if first_fail.is_empty() {
            first_fail = format!("seed {seed}: {:?}", report.checkpoints);
        }
    }
    ensure(passes >= 19, || {
        format!("only {passes}/{seeds} seeds satisfied the bound; first failure: {first_fail}")
    })?;
    Ok(format!("distance bound held on {passes}/{seeds} seeds at t = 0.5, 1, 2, 4"))
}

// ───────────────────────── criterion 9 ─────────────────────────

fn criterion_9() -> Result<String> {
    use std::sync::Arc;
    // linear drift: closed-form resolvent
    let lambda = 2.0;
    let linear = ModelSpec::first_order_custom(
        "linear_for_resolvent",
        1,
        crate::models::NoiseKind::Brownian,
        vec![],
        Arc::new(move |x: &[f64], _s: &[f64], out: &mut [f64]| out[0] = -lambda * x[0]),
        DiffusionSpec::ScalarMeasure { sigma: Arc::new(|_s: &[f64]| 1.0) },
        models::AssumptionParams {
            kappa: 0.0,
            k0: 0.0,
            k0_tilde: 0.0,
            l_b: 0.0,
            k1: 0.0,
            k2: 0.0,
            r: 0.0,
            delta_bound: 1.0,
            one_sided_k: Some(-2.0 * lambda),
        },
        serde_json::json!({}),
    )?;
    for m in [1u32, 10, 100] {
        let reg = models::yosida_regularize(&linear, m, 0.0)?;
        for x in [-2.0, -0.5, 0.7, 1.5] {
            let mut out = [0.0];
            reg.drift_force(&[x], &[], &mut out);
            let target = -lambda * x / (1.0 + lambda / m as f64);
            ensure((out[0] - target).abs() <= 1e-10, || {
                format!("m = {m}, x = {x}: regularized drift {} vs closed form {target}", out[0])
            })?;
        }
    }

    // cubic drift: domination and monotone pointwise convergence
    let cubic = ModelSpec::first_order_custom(
        "cubic_for_resolvent",
        1,
        crate::models::NoiseKind::Brownian,
        vec![],
        Arc::new(|x: &[f64], _s: &[f64], out: &mut [f64]| out[0] = -x[0] * x[0] * x[0]),
        DiffusionSpec::ScalarMeasure { sigma: Arc::new(|_s: &[f64]| 1.0) },
        models::AssumptionParams {
            kappa: 0.0,
            k0: 0.0,
            k0_tilde: 0.0,
            l_b: 0.0,
            k1: 0.0,
            k2: 0.0,
            r: 0.0,
            delta_bound: 1.0,
            one_sided_k: Some(0.0),
        },
        serde_json::json!({}),
    )?;
    let grid: Vec<f64> = (-8..=8).map(|i| 0.25 * i as f64).collect();
    let mut last_err: Vec<f64> = vec![f64::INFINITY; grid.len()];
    let mut stage_max = Vec::new();
    for m in [1u32, 4, 16, 64, 256, 1024] {
        let reg = models::yosida_regularize(&cubic, m, 0.0)?;
        let mut worst = 0.0f64;
        for (gi, &x) in grid.iter().enumerate() {
            let mut out = [0.0];
            reg.drift_force(&[x], &[], &mut out);
            let full = -x * x * x;
            ensure(out[0].abs() <= full.abs() + 1e-12, || {
                format!("m = {m}, x = {x}: |regularized| {} exceeds |drift| {}", out[0], full)
            })?;
            let err = (out[0] - full).abs();
            ensure(err <= last_err[gi] + 1e-12, || {
                format!("m = {m}, x = {x}: error {err} not monotone (was {})", last_err[gi])
            })?;
            last_err[gi] = err;
            worst = worst.max(err);
        }
        stage_max.push(worst);
    }
    // first-order rate in 1/m: quadrupling m must cut the worst error well
    // below half, and the final stage must be visibly converged
    let final_err = stage_max[stage_max.len() - 1];
    let prev_err = stage_max[stage_max.len() - 2];
    ensure(final_err <= 0.3 * prev_err && final_err < 0.15, || {
        format!("cubic regularization stalled: stage maxima {stage_max:?}")
    })?;

    // one-sided inequality after removing the linear growth part
    let spec = PhiSpec::new(1.0, 1.0, 1.0)?;
    let kappa = 0.3;
    let model = models::piecewise_dissipative(1, spec, 1.0, kappa)?;
    let k = model.assumptions.one_sided_k.ok_or_else(|| {
        CoreError::Inconsistency("catalog model must carry its one-sided constant".into())
    })?;
    let m = 64u32;
    let reg = models::yosida_regularize(&model, m, k)?;
    let mut stream = RngStream::new(0x905, 5);
    let mut worst: f64 = f64::NEG_INFINITY;
    for _ in 0..10_000 {
        let x = 6.0 * stream.uniform_open01() - 3.0;
        let y = 6.0 * stream.uniform_open01() - 3.0;
        let cloud = |s: &mut RngStream| -> Result<EmpiricalMeasure> {
            let pts: Vec<f64> = (0..16).map(|_| 2.0 * s.uniform_open01() - 1.0).collect();
            EmpiricalMeasure::new(1, pts)
        };
        let mu1 = cloud(&mut stream)?;
        let mu2 = cloud(&mut stream)?;
        let s1 = models::measure_stats(&model, &mu1)?;
        let s2 = models::measure_stats(&model, &mu2)?;
        let w1 = w1_exact_1d(&mu1, &mu2)?;
        let eval = |x: f64, stats: &[f64]| -> f64 {
            let mut out = [0.0];
            reg.drift_force(&[x], stats, &mut out);
            out[0] - 0.5 * k * x // remove the retained linear part
        };
        let gap = 2.0 * (eval(x, &s1) - eval(y, &s2)) * (x - y) - 2.0 * kappa * w1 * w1;
        worst = worst.max(gap);
        ensure(gap <= 1e-9, || {
            format!("one-sided bound broken: x = {x}, y = {y}, excess {gap}")
        })?;
    }
    Ok(format!(
        "closed form to 1e-10; cubic domination and monotone convergence; \
         one-sided bound on 10000 samples (worst excess {worst:.2e})"
    ))
}

// ───────────────────────── criterion 10 ─────────────────────────

fn criterion_10() -> Result<String> {
    let sets = [
        ThresholdParams {
            regime: Regime::BrownianFirstOrder,
            drift_constant: 1.0,
            c0: 2.0,
            lambda0: 1.0,
            stable: None,
        },
        ThresholdParams {
            regime: Regime::BrownianKinetic,
            drift_constant: 4.5,
            c0: 2.0,
            lambda0: 0.5,
            stable: None,
        },
        ThresholdParams {
            regime: Regime::StableFirstOrder,
            drift_constant: 1.0,
            c0: 1.5,
            lambda0: 0.8,
            stable: Some(StableRateInfo { stable_alpha: 1.5, e_sqrt_s1: 1.511_429_216_246_8 }),
        },
    ];
    let mut worst_rel: f64 = 0.0;
    for params in &sets {
        let base = threshold_scan(params)?;
        let doubled = ScanResolution {
            grid_points: 8000,
            refine_iters: 320,
            bisect_iters: 400,
            t_cap_over_lambda0: 120.0,
        };
        let fine = threshold_scan_with_resolution(params, &doubled)?;
        for (name, a, b) in [
            ("delta1", base.delta1, fine.delta1),
            ("delta2", base.delta2, fine.delta2),
            ("delta0", base.delta0, fine.delta0),
        ] {
            let rel = (a - b).abs() / a.abs().max(1e-300);
            worst_rel = worst_rel.max(rel);
            ensure(rel <= 1e-6, || {
                format!("{name} moved by {rel:.2e} under doubled resolution ({a} vs {b})")
            })?;
        }
    }

    let cases = [
        (1.0, 1.0, 4.0, Regime::BrownianKinetic, true),
        (1.0, 1.0, 2.0, Regime::BrownianKinetic, false),
        (1.0, 1.0, 2.0, Regime::StableKinetic, true),
    ];
    for (k1, lb, gamma, regime, expected) in cases {
        let got = kinetic_condition_check(k1, lb, gamma, regime)?;
        ensure(got == expected, || {
            format!("friction condition ({k1}, {lb}, {gamma}, {regime}) = {got}, expected {expected}")
        })?;
    }

    // the reported delta2 is a genuine feasibility boundary
    let params = &sets[0];
    let report = threshold_scan(params)?;
    let mut certificate = "delta2 at the search cap (delta0 set by delta1)".to_string();
    if report.delta2 < 10.0 * report.delta1 * 0.999 {
        let (below, _) = direct_route_infimum(params, report.delta2 * (1.0 - 1e-3))?;
        let (above, _) = direct_route_infimum(params, report.delta2 * (1.0 + 1e-3))?;
        ensure(below < 1.0, || {
            format!("objective {below} >= 1 just below the reported boundary")
        })?;
        ensure(above >= 1.0, || {
            format!("objective {above} < 1 just above the reported boundary")
        })?;
        certificate = format!("boundary bracketed: {below:.6} < 1 <= {above:.6}");
    }
    Ok(format!(
        "three scans stable to {worst_rel:.2e} under doubled resolution; \
         friction cases exact; {certificate}"
    ))
}

// ───────────────────────── criterion 11 ─────────────────────────

fn criterion_11() -> Result<String> {
    let mean_field = models::example33(0.5)?;
    let jump = models::stable(1, 0.2, 1.5)?;
    let mut notes = Vec::new();
    for (tag, model) in [("mean-field", &mean_field), ("jump", &jump)] {
        let n = 1000;
        let eta0 = seeded_cloud(n, 1, 1.0, 1.0, 111);
        let config = SimConfig::new(2e-3, 1.0, n, 112);
        let baseline = run_mckean_vlasov(model, &eta0, &config)?;

        for threads in [1usize, 8] {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| CoreError::Configuration(format!("thread pool: {e}")))?;
            let run = pool.install(|| run_mckean_vlasov(model, &eta0, &config))?;
            ensure(run.terminal().data() == baseline.terminal().data(), || {
                format!("{tag}: {threads}-thread run changed the output bits")
            })?;
        }

        let mut half = config.clone();
        half.t_final = 0.5;
        let first = run_mckean_vlasov(model, &eta0, &half)?;
        let second = resume_mckean_vlasov(model, &first.state, &half)?;
        ensure(second.terminal().data() == baseline.terminal().data(), || {
            format!("{tag}: split run differs from the single run")
        })?;
        notes.push(format!("{tag} ok"));
    }

    // decay-fit determinism rider: identical inputs, identical outputs
    let series: Vec<(f64, f64)> = (0..=30)
        .map(|i| (0.2 * i as f64, (1.0 + 0.05 * (i as f64).sin()) * (-0.9 * 0.2 * i as f64).exp()))
        .collect();
    let f1 = decay_fit_in(&series, 1.0, 5.0)?;
    let f2 = decay_fit_in(&series, 1.0, 5.0)?;
    ensure(f1 == f2, || "repeated fits disagree".into())?;
    Ok(format!(
        "thread-count and split-run invariance for two models ({}); analysis determinism",
        notes.join(", ")
    ))
}
