//! Interacting-particle time stepping: the self-interacting system (each
//! particle sees the live empirical measure), the decoupled frozen-measure
//! flow, reflection and synchronous couplings, and the fixed-point iteration
//! of the measure map.
//!
//! Determinism: every particle (or coupled pair) owns one counter-based
//! [`RngStream`] addressed by `(seed, index)`, per-step draw counts are fixed,
//! and all cross-particle reductions run sequentially in index order — so a
//! run is bitwise reproducible for any thread count, and a run split at an
//! intermediate time equals the unsplit run.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::measures::{ot_assignment_plan, sliced_w1, w1_exact_1d, EmpiricalMeasure, DEFAULT_ASSIGNMENT_CAP};
use crate::models::{
    freeze, measure_stats, DiffusionSpec, ModelKind, ModelSpec, NoiseKind,
};
use crate::noise::{positive_stable_increment, RngStream, StableParams};
use crate::rates::Psi;

/// Coordinates beyond this magnitude count as blown up even while finite,
/// so divergence is caught before overflow poisons a whole step.
const BLOWUP_LIMIT: f64 = 1e100;

fn default_window() -> f64 {
    1.0
}

fn default_tol_stationary() -> f64 {
    0.05
}

/// Run configuration shared by all engines.  `t_final` is rounded to a whole
/// number of steps.  `couple_threshold = None` resolves to `0.5·√(α·h)` from
/// the model's ellipticity.  `tol_window` (stationarity gate of the
/// fixed-point iteration) defaults to `tol_stationary`; it exists separately
/// because the window gap has an O(N^{-1/2}) sampling floor while the
/// common-noise iteration gap can go far below it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub h: f64,
    #[serde(rename = "T")]
    pub t_final: f64,
    #[serde(rename = "N")]
    pub n_particles: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub couple_threshold: Option<f64>,
    #[serde(default)]
    pub burn_in: f64,
    #[serde(default = "default_window")]
    pub window: f64,
    #[serde(default = "default_tol_stationary")]
    pub tol_stationary: f64,
    #[serde(default)]
    pub tol_window: Option<f64>,
    #[serde(default)]
    pub record_dt: Option<f64>,
    #[serde(default)]
    pub snapshot_times: Vec<f64>,
    /// Discount rate K of the weighted subordinator integral
    /// ∫ e^{−K·s} dS_s accumulated per pair in synchronous stable runs.
    #[serde(default)]
    pub subordinator_discount: Option<f64>,
}

impl SimConfig {
    pub fn new(h: f64, t_final: f64, n_particles: usize, seed: u64) -> Self {
        SimConfig {
            h,
            t_final,
            n_particles,
            seed,
            couple_threshold: None,
            burn_in: 0.0,
            window: default_window(),
            tol_stationary: default_tol_stationary(),
            tol_window: None,
            record_dt: None,
            snapshot_times: Vec::new(),
            subordinator_discount: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h.is_finite() && self.h > 0.0) {
            return Err(CoreError::Parameter(format!("h must be > 0, got {}", self.h)));
        }
        if !(self.t_final.is_finite() && self.t_final > 0.0) {
            return Err(CoreError::Parameter(format!(
                "T must be > 0, got {}",
                self.t_final
            )));
        }
        if self.h > self.t_final {
            return Err(CoreError::Parameter(format!(
                "h = {} exceeds T = {}",
                self.h, self.t_final
            )));
        }
        if self.n_particles == 0 {
            return Err(CoreError::Parameter("N must be >= 1".into()));
        }
        if let Some(ct) = self.couple_threshold {
            if !(ct.is_finite() && ct >= self.h.sqrt() * 1e-3) {
                return Err(CoreError::Parameter(format!(
                    "couple_threshold {ct} must be >= 1e-3·sqrt(h) = {}",
                    self.h.sqrt() * 1e-3
                )));
            }
        }
        if !(self.burn_in.is_finite() && self.burn_in >= 0.0) {
            return Err(CoreError::Parameter("burn_in must be >= 0".into()));
        }
        if !(self.window.is_finite() && self.window > 0.0) {
            return Err(CoreError::Parameter("window must be > 0".into()));
        }
        if !(self.tol_stationary.is_finite() && self.tol_stationary > 0.0) {
            return Err(CoreError::Parameter("tol_stationary must be > 0".into()));
        }
        if let Some(dt) = self.record_dt {
            if !(dt.is_finite() && dt > 0.0) {
                return Err(CoreError::Parameter("record_dt must be > 0".into()));
            }
        }
        for &t in &self.snapshot_times {
            if !(t.is_finite() && t >= 0.0) {
                return Err(CoreError::Parameter(format!("snapshot time {t} must be >= 0")));
            }
        }
        Ok(())
    }

    pub fn n_steps(&self) -> u64 {
        ((self.t_final / self.h).round() as u64).max(1)
    }

    fn record_stride(&self) -> u64 {
        match self.record_dt {
            Some(dt) => ((dt / self.h).round() as u64).max(1),
            None => (self.n_steps() / 256).max(1),
        }
    }

    pub fn resolved_couple_threshold(&self, alpha: f64) -> f64 {
        self.couple_threshold.unwrap_or(0.5 * (alpha * self.h).sqrt())
    }
}

/// First-class blow-up outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub time: f64,
    pub detail: String,
}

/// One recorded instant of a single-system run: mean full-state norm and the
/// model's registered functional values.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesPoint {
    pub t: f64,
    pub mean_norm: f64,
    pub stats: Vec<f64>,
}

/// Everything needed to continue a run bitwise-exactly.
#[derive(Debug, Clone)]
pub struct SimState {
    pub time: f64,
    pub streams: Vec<RngStream>,
    pub cloud: EmpiricalMeasure,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub series: Vec<SeriesPoint>,
    pub snapshots: Vec<(f64, EmpiricalMeasure)>,
    pub divergence: Option<Divergence>,
    pub state: SimState,
}

impl RunResult {
    pub fn terminal(&self) -> &EmpiricalMeasure {
        &self.state.cloud
    }
}

// ───────────────────────────── step kernel ─────────────────────────────

struct Ctx<'a> {
    model: &'a ModelSpec,
    d: usize,
    sd: usize,
    h: f64,
    sqrt_h: f64,
    stable: Option<StableParams>,
    split: bool,
    sqrt_alpha: f64,
}

impl<'a> Ctx<'a> {
    fn new(model: &'a ModelSpec, h: f64) -> Result<Self> {
        let stable = match model.noise {
            NoiseKind::Brownian => None,
            NoiseKind::AlphaStable(p) => Some(p),
        };
        let (split, sqrt_alpha) = match &model.diffusion {
            DiffusionSpec::EllipticSplit { ellipticity_alpha, .. } => {
                if stable.is_some() {
                    return Err(CoreError::UnsupportedModel(format!(
                        "model '{}' pairs subordinated noise with an elliptic split; \
                         subordinated families carry state-constant diffusion",
                        model.name
                    )));
                }
                if model.kind == ModelKind::Kinetic {
                    return Err(CoreError::UnsupportedModel(format!(
                        "kinetic model '{}' must carry scalar diffusion",
                        model.name
                    )));
                }
                (true, ellipticity_alpha.sqrt())
            }
            DiffusionSpec::ScalarMeasure { .. } => (false, f64::NAN),
        };
        Ok(Ctx {
            model,
            d: model.dim,
            sd: model.state_dim(),
            h,
            sqrt_h: h.sqrt(),
            stable,
            split,
            sqrt_alpha,
        })
    }

    fn scalar_sigma(&self, stats: &[f64]) -> f64 {
        match &self.model.diffusion {
            DiffusionSpec::ScalarMeasure { sigma } => sigma(stats),
            DiffusionSpec::EllipticSplit { .. } => f64::NAN,
        }
    }
}

struct Scratch {
    force: Vec<f64>,
    mat: Vec<f64>,
    n1: Vec<f64>,
    n2: Vec<f64>,
}

impl Scratch {
    fn new(d: usize) -> Self {
        Scratch {
            force: vec![0.0; d],
            mat: vec![0.0; d * d],
            n1: vec![0.0; d],
            n2: vec![0.0; d],
        }
    }
}

/// One explicit step of one particle, in place.  Returns the subordinator
/// increment (0 for Brownian noise).  Draw counts per call are fixed by the
/// model shape alone.
fn step_particle(
    ctx: &Ctx,
    x: &mut [f64],
    stats: &[f64],
    scalar_sigma: f64,
    stream: &mut RngStream,
    sc: &mut Scratch,
) -> f64 {
    let d = ctx.d;
    ctx.model.drift_force(x, stats, &mut sc.force);
    let (ds, noise_scale) = match &ctx.stable {
        None => (0.0, ctx.sqrt_h),
        Some(params) => {
            let ds = positive_stable_increment(stream, params, ctx.h)
                .expect("step size validated before the run");
            (ds, ds.sqrt())
        }
    };
    match ctx.model.kind {
        ModelKind::FirstOrder => {
            if ctx.split {
                let DiffusionSpec::EllipticSplit { sigma_hat, .. } = &ctx.model.diffusion else {
                    unreachable!()
                };
                sigma_hat(x, stats, &mut sc.mat);
                stream.fill_standard_normal(&mut sc.n1);
                stream.fill_standard_normal(&mut sc.n2);
                for i in 0..d {
                    let mut diff = ctx.sqrt_alpha * sc.n1[i];
                    for j in 0..d {
                        diff += sc.mat[i * d + j] * sc.n2[j];
                    }
                    x[i] += sc.force[i] * ctx.h + ctx.sqrt_h * diff;
                }
            } else {
                stream.fill_standard_normal(&mut sc.n1);
                let amp = scalar_sigma * noise_scale;
                for i in 0..d {
                    x[i] += sc.force[i] * ctx.h + amp * sc.n1[i];
                }
            }
        }
        ModelKind::Kinetic => {
            let gamma = ctx.model.gamma.expect("kinetic models carry gamma");
            stream.fill_standard_normal(&mut sc.n1);
            let amp = scalar_sigma * noise_scale;
            for i in 0..d {
                // position from the pre-step velocity; the velocity block is
                // untouched until the second line
                x[i] += x[d + i] * ctx.h;
                x[d + i] += (-gamma * x[d + i] + sc.force[i]) * ctx.h + amp * sc.n1[i];
            }
        }
    }
    ds
}

fn slice_ok(buf: &[f64]) -> bool {
    buf.iter().all(|v| v.is_finite() && v.abs() <= BLOWUP_LIMIT)
}

fn first_bad_particle(buf: &[f64], sd: usize) -> usize {
    buf.chunks_exact(sd)
        .position(|p| !slice_ok(p))
        .unwrap_or(0)
}

/// One explicit step of a free particle against an explicit cloud.
pub fn em_step(
    model: &ModelSpec,
    x: &[f64],
    mu: &EmpiricalMeasure,
    h: f64,
    stream: &mut RngStream,
) -> Result<Vec<f64>> {
    if !(h.is_finite() && h > 0.0) {
        return Err(CoreError::Parameter(format!("h must be > 0, got {h}")));
    }
    let ctx = Ctx::new(model, h)?;
    if x.len() != ctx.sd {
        return Err(CoreError::Shape(format!(
            "state length {} does not match model state dim {}",
            x.len(),
            ctx.sd
        )));
    }
    let stats = measure_stats(model, mu)?;
    let scalar = ctx.scalar_sigma(&stats);
    let mut out = x.to_vec();
    let mut sc = Scratch::new(ctx.d);
    step_particle(&ctx, &mut out, &stats, scalar, stream, &mut sc);
    if !slice_ok(&out) {
        return Err(CoreError::Divergence {
            time: h,
            detail: "state became non-finite within one step".into(),
        });
    }
    Ok(out)
}

// ──────────────────────── single-system engine ────────────────────────

fn advance_cloud(
    ctx: &Ctx,
    buf: &mut [f64],
    streams: &mut [RngStream],
    stats: &[f64],
    scalar_sigma: f64,
) {
    let d = ctx.d;
    buf.par_chunks_mut(ctx.sd)
        .zip(streams.par_iter_mut())
        .for_each_init(
            || Scratch::new(d),
            |sc, (x, stream)| {
                step_particle(ctx, x, stats, scalar_sigma, stream, sc);
            },
        );
}

fn mean_norm(buf: &[f64], sd: usize) -> f64 {
    let n = (buf.len() / sd) as f64;
    buf.chunks_exact(sd)
        .map(|p| p.iter().map(|v| v * v).sum::<f64>().sqrt())
        .sum::<f64>()
        / n
}

/// Map requested snapshot times (absolute, measured from run start `t0`) to
/// step indices on the grid.
fn snapshot_steps(times: &[f64], t0: f64, h: f64, n_steps: u64) -> Vec<(u64, f64)> {
    let mut out: Vec<(u64, f64)> = times
        .iter()
        .filter_map(|&t| {
            let k = ((t - t0) / h).round();
            if k >= 0.0 && k <= n_steps as f64 {
                Some((k as u64, t))
            } else {
                None
            }
        })
        .collect();
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

fn run_core(
    model: &ModelSpec,
    start: &EmpiricalMeasure,
    mut streams: Vec<RngStream>,
    t0: f64,
    config: &SimConfig,
) -> Result<RunResult> {
    config.validate()?;
    let ctx = Ctx::new(model, config.h)?;
    if start.dim() != ctx.sd {
        return Err(CoreError::Shape(format!(
            "initial cloud dim {} does not match model state dim {}",
            start.dim(),
            ctx.sd
        )));
    }
    if start.len() != config.n_particles || streams.len() != config.n_particles {
        return Err(CoreError::Shape(format!(
            "initial cloud has {} particles, config.N = {}",
            start.len(),
            config.n_particles
        )));
    }
    let n_steps = config.n_steps();
    let stride = config.record_stride();
    let snaps = snapshot_steps(&config.snapshot_times, t0, config.h, n_steps);
    let snap_set: std::collections::BTreeMap<u64, Vec<f64>> = {
        let mut m: std::collections::BTreeMap<u64, Vec<f64>> = Default::default();
        for (k, t) in snaps {
            m.entry(k).or_default().push(t);
        }
        m
    };

    let mut buf = start.data().to_vec();
    let mut backup = buf.clone();
    let mut stats = vec![0.0; model.functionals.len()];
    let mut series = Vec::new();
    let mut snapshots = Vec::new();
    let mut divergence = None;
    let mut t = t0;

    for k in 0..n_steps {
        for (slot, f) in stats.iter_mut().zip(&model.functionals) {
            *slot = f.eval_raw(ctx.sd, &buf);
        }
        if k % stride == 0 || snap_set.contains_key(&k) {
            series.push(SeriesPoint { t, mean_norm: mean_norm(&buf, ctx.sd), stats: stats.clone() });
        }
        if let Some(times) = snap_set.get(&k) {
            let cloud = EmpiricalMeasure::new(ctx.sd, buf.clone())?;
            for &st in times {
                snapshots.push((st, cloud.clone()));
            }
        }
        backup.copy_from_slice(&buf);
        let scalar = ctx.scalar_sigma(&stats);
        advance_cloud(&ctx, &mut buf, &mut streams, &stats, scalar);
        t = t0 + (k + 1) as f64 * config.h;
        if !slice_ok(&buf) {
            let bad = first_bad_particle(&buf, ctx.sd);
            divergence = Some(Divergence {
                time: t,
                detail: format!("particle {bad} blew up at t = {t}"),
            });
            buf.copy_from_slice(&backup); // keep the last finite cloud
            t -= config.h;
            break;
        }
    }

    // terminal record and snapshots at the final grid point
    for (slot, f) in stats.iter_mut().zip(&model.functionals) {
        *slot = f.eval_raw(ctx.sd, &buf);
    }
    series.push(SeriesPoint { t, mean_norm: mean_norm(&buf, ctx.sd), stats: stats.clone() });
    let terminal = EmpiricalMeasure::new(ctx.sd, buf)?;
    if divergence.is_none() {
        if let Some(times) = snap_set.get(&n_steps) {
            for &st in times {
                snapshots.push((st, terminal.clone()));
            }
        }
    }
    Ok(RunResult {
        series,
        snapshots,
        divergence,
        state: SimState { time: t, streams, cloud: terminal },
    })
}

/// Self-interacting particle system: every particle drifts against the live
/// empirical measure of the whole cloud.  Blow-up is reported in the result,
/// not as an error.
pub fn run_mckean_vlasov(
    model: &ModelSpec,
    eta0: &EmpiricalMeasure,
    config: &SimConfig,
) -> Result<RunResult> {
    let streams = (0..config.n_particles)
        .map(|i| RngStream::new(config.seed, i as u64))
        .collect();
    run_core(model, eta0, streams, 0.0, config)
}

/// Continue a previous self-interacting run for `config.t_final` more time
/// units, reusing terminal cloud and stream positions; the concatenation is
/// bitwise equal to one longer run.
pub fn resume_mckean_vlasov(
    model: &ModelSpec,
    state: &SimState,
    config: &SimConfig,
) -> Result<RunResult> {
    run_core(model, &state.cloud, state.streams.clone(), state.time, config)
}

/// Decoupled flow: the measure argument is pinned to `mu` for the whole run.
pub fn run_frozen(
    model: &ModelSpec,
    mu: &EmpiricalMeasure,
    eta0: &EmpiricalMeasure,
    config: &SimConfig,
) -> Result<RunResult> {
    let frozen = freeze(model, mu)?;
    let streams = (0..config.n_particles)
        .map(|i| RngStream::new(config.seed, i as u64))
        .collect();
    run_core(&frozen, eta0, streams, 0.0, config)
}

// ───────────────────────── coupled engines ─────────────────────────

/// One recorded instant of a coupled run.  Distances use the full state
/// vector; standard deviations are across pairs (for MC error bands).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoupledSeriesPoint {
    pub t: f64,
    pub mean_dist: f64,
    pub sd_dist: f64,
    pub mean_dist_sq: f64,
    pub sd_dist_sq: f64,
    pub mean_psi: Option<f64>,
    pub sd_psi: Option<f64>,
    pub frac_coupled: f64,
}

#[derive(Debug, Clone)]
pub struct CoupledRunResult {
    pub series: Vec<CoupledSeriesPoint>,
    /// First coupling time per pair (reflection runs only).
    pub taus: Vec<Option<f64>>,
    pub terminal_x: EmpiricalMeasure,
    pub terminal_y: EmpiricalMeasure,
    /// Per-pair weighted subordinator integrals ∫₀^t e^{−K·s} dS_s at the
    /// configured snapshot times (synchronous stable runs with
    /// `subordinator_discount` set).
    pub sub_accum: Vec<(f64, Vec<f64>)>,
    pub divergence: Option<Divergence>,
}

/// Pair index `i` of the first cloud with `plan[i]` of the second so that
/// the initial mean pair distance realizes W₁ (sorted pairing in dimension
/// one, exact assignment otherwise).
fn initial_pairing(eta1: &EmpiricalMeasure, eta2: &EmpiricalMeasure) -> Result<Vec<usize>> {
    let n = eta1.len();
    if eta1.dim() == 1 {
        let mut o1: Vec<usize> = (0..n).collect();
        let mut o2: Vec<usize> = (0..n).collect();
        let a = eta1.data();
        let b = eta2.data();
        o1.sort_by(|&i, &j| a[i].total_cmp(&a[j]));
        o2.sort_by(|&i, &j| b[i].total_cmp(&b[j]));
        let mut plan = vec![0usize; n];
        for r in 0..n {
            plan[o1[r]] = o2[r];
        }
        Ok(plan)
    } else {
        Ok(ot_assignment_plan(eta1, eta2, |r| r, DEFAULT_ASSIGNMENT_CAP)?.0)
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

struct PairScratch {
    n1: Vec<f64>,
    n2: Vec<f64>,
    fx: Vec<f64>,
    fy: Vec<f64>,
    mx: Vec<f64>,
    my: Vec<f64>,
    u: Vec<f64>,
}

impl PairScratch {
    fn new(d: usize) -> Self {
        PairScratch {
            n1: vec![0.0; d],
            n2: vec![0.0; d],
            fx: vec![0.0; d],
            fy: vec![0.0; d],
            mx: vec![0.0; d * d],
            my: vec![0.0; d * d],
            u: vec![0.0; d],
        }
    }
}

/// Reflection-coupled pair system under a frozen measure: X is driven by
/// (ΔB¹, ΔB²); while the pair is apart Y sees ΔB¹ mirrored across the unit
/// vector along X − Y and the same ΔB²; at distance ≤ `couple_threshold` the
/// pair merges and evolves synchronously.  Requires a first-order Brownian
/// model with the elliptic split.
pub fn reflection_coupled_pairs(
    model: &ModelSpec,
    mu_frozen: &EmpiricalMeasure,
    eta1: &EmpiricalMeasure,
    eta2: &EmpiricalMeasure,
    config: &SimConfig,
) -> Result<CoupledRunResult> {
    config.validate()?;
    let (alpha, sigma_hat) = match (&model.kind, &model.noise, &model.diffusion) {
        (
            ModelKind::FirstOrder,
            NoiseKind::Brownian,
            DiffusionSpec::EllipticSplit { ellipticity_alpha, sigma_hat },
        ) => (*ellipticity_alpha, sigma_hat),
        _ => {
            return Err(CoreError::UnsupportedModel(format!(
                "reflection coupling needs a first-order Brownian model with the elliptic \
                 split; '{}' does not qualify",
                model.name
            )))
        }
    };
    let d = model.dim;
    let n = config.n_particles;
    if eta1.len() != n || eta2.len() != n {
        return Err(CoreError::Shape(format!(
            "coupled clouds must each have config.N = {n} points, got {} and {}",
            eta1.len(),
            eta2.len()
        )));
    }
    if eta1.dim() != d || eta2.dim() != d {
        return Err(CoreError::Shape("coupled cloud dims must match the model".into()));
    }
    let stats = measure_stats(model, mu_frozen)?;
    let threshold = config.resolved_couple_threshold(alpha);
    let sqrt_alpha = alpha.sqrt();
    let psi = match &model.phi_spec {
        Some(spec) => Some(Psi::new(spec, alpha)?),
        None => None,
    };

    let plan = initial_pairing(eta1, eta2)?;
    let mut xs = eta1.data().to_vec();
    let mut ys = vec![0.0; n * d];
    for i in 0..n {
        ys[i * d..(i + 1) * d].copy_from_slice(eta2.point(plan[i]));
    }
    let mut streams: Vec<RngStream> =
        (0..n).map(|i| RngStream::new(config.seed, i as u64)).collect();
    let mut coupled = vec![false; n];
    let mut taus: Vec<Option<f64>> = vec![None; n];
    for i in 0..n {
        if dist(&xs[i * d..(i + 1) * d], &ys[i * d..(i + 1) * d]) <= threshold {
            coupled[i] = true;
            taus[i] = Some(0.0);
            let src = xs[i * d..(i + 1) * d].to_vec();
            ys[i * d..(i + 1) * d].copy_from_slice(&src);
        }
    }

    let n_steps = config.n_steps();
    let stride = config.record_stride();
    let h = config.h;
    let sqrt_h = h.sqrt();
    let mut series = Vec::new();
    let mut divergence = None;
    let mut t = 0.0;

    let record = |series: &mut Vec<CoupledSeriesPoint>,
                  t: f64,
                  xs: &[f64],
                  ys: &[f64],
                  coupled: &[bool]|
     -> Result<()> {
        let mut dists = Vec::with_capacity(n);
        for i in 0..n {
            if coupled[i] {
                dists.push(0.0);
            } else {
                dists.push(dist(&xs[i * d..(i + 1) * d], &ys[i * d..(i + 1) * d]));
            }
        }
        let (mean_dist, sd_dist) = mean_sd(&dists);
        let sq: Vec<f64> = dists.iter().map(|v| v * v).collect();
        let (mean_dist_sq, sd_dist_sq) = mean_sd(&sq);
        let (mean_psi, sd_psi) = match &psi {
            Some(p) => {
                let mut vals = Vec::with_capacity(n);
                for &r in &dists {
                    vals.push(p.eval(r)?);
                }
                let (m, s) = mean_sd(&vals);
                (Some(m), Some(s))
            }
            None => (None, None),
        };
        let frac = coupled.iter().filter(|&&c| c).count() as f64 / n as f64;
        series.push(CoupledSeriesPoint {
            t,
            mean_dist,
            sd_dist,
            mean_dist_sq,
            sd_dist_sq,
            mean_psi,
            sd_psi,
            frac_coupled: frac,
        });
        Ok(())
    };

    record(&mut series, t, &xs, &ys, &coupled)?;

    for k in 0..n_steps {
        let t_next = (k + 1) as f64 * h;
        xs.par_chunks_mut(d)
            .zip(ys.par_chunks_mut(d))
            .zip(streams.par_iter_mut())
            .zip(coupled.par_iter_mut())
            .zip(taus.par_iter_mut())
            .for_each_init(
                || PairScratch::new(d),
                |sc, ((((x, y), stream), cpl), tau)| {
                    stream.fill_standard_normal(&mut sc.n1);
                    stream.fill_standard_normal(&mut sc.n2);
                    model.drift_force(x, &stats, &mut sc.fx);
                    sigma_hat(x, &stats, &mut sc.mx);
                    if *cpl {
                        for i in 0..d {
                            let mut diff = sqrt_alpha * sc.n1[i];
                            for j in 0..d {
                                diff += sc.mx[i * d + j] * sc.n2[j];
                            }
                            x[i] += sc.fx[i] * h + sqrt_h * diff;
                        }
                        y.copy_from_slice(x);
                        return;
                    }
                    let r = dist(x, y);
                    for i in 0..d {
                        sc.u[i] = (x[i] - y[i]) / r;
                    }
                    model.drift_force(y, &stats, &mut sc.fy);
                    sigma_hat(y, &stats, &mut sc.my);
                    let dot: f64 = sc.u.iter().zip(&sc.n1).map(|(a, b)| a * b).sum();
                    for i in 0..d {
                        let mut dx = sqrt_alpha * sc.n1[i];
                        let mut dy = sqrt_alpha * (sc.n1[i] - 2.0 * dot * sc.u[i]);
                        for j in 0..d {
                            dx += sc.mx[i * d + j] * sc.n2[j];
                            dy += sc.my[i * d + j] * sc.n2[j];
                        }
                        x[i] += sc.fx[i] * h + sqrt_h * dx;
                        y[i] += sc.fy[i] * h + sqrt_h * dy;
                    }
                    if dist(x, y) <= threshold {
                        y.copy_from_slice(x);
                        *cpl = true;
                        *tau = Some(t_next);
                    }
                },
            );
        t = t_next;
        if !(slice_ok(&xs) && slice_ok(&ys)) {
            divergence = Some(Divergence {
                time: t,
                detail: format!("coupled system blew up at t = {t}"),
            });
            break;
        }
        if (k + 1) % stride == 0 || k + 1 == n_steps {
            record(&mut series, t, &xs, &ys, &coupled)?;
        }
    }

    Ok(CoupledRunResult {
        series,
        taus,
        terminal_x: finite_cloud(d, xs)?,
        terminal_y: finite_cloud(d, ys)?,
        sub_accum: Vec::new(),
        divergence,
    })
}

/// Two systems advanced under identical noise: shared Brownian increments,
/// and for subordinated noise a shared subordinator and shared Gaussian
/// draws per pair.  Each system drifts against its own empirical measure
/// (frozen models ignore it).  Starts are matched by the W₁-optimal pairing.
pub fn synchronous_coupled_runs_from(
    model_a: &ModelSpec,
    model_b: &ModelSpec,
    eta_a: &EmpiricalMeasure,
    eta_b: &EmpiricalMeasure,
    config: &SimConfig,
) -> Result<CoupledRunResult> {
    config.validate()?;
    let ctx_a = Ctx::new(model_a, config.h)?;
    let ctx_b = Ctx::new(model_b, config.h)?;
    if ctx_a.sd != ctx_b.sd {
        return Err(CoreError::Configuration(format!(
            "coupled models disagree on state dim: {} vs {}",
            ctx_a.sd, ctx_b.sd
        )));
    }
    match (model_a.noise, model_b.noise) {
        (NoiseKind::Brownian, NoiseKind::Brownian) => {}
        (NoiseKind::AlphaStable(p), NoiseKind::AlphaStable(q)) if p == q => {}
        _ => {
            return Err(CoreError::Configuration(
                "synchronous coupling needs identical noise kinds (and identical stable \
                 indices)"
                    .into(),
            ))
        }
    }
    if ctx_a.split != ctx_b.split {
        return Err(CoreError::Configuration(
            "synchronous coupling needs matching diffusion structure on both sides".into(),
        ));
    }
    let sd = ctx_a.sd;
    let n = config.n_particles;
    if eta_a.len() != n || eta_b.len() != n || eta_a.dim() != sd || eta_b.dim() != sd {
        return Err(CoreError::Shape(format!(
            "coupled clouds must be {n} points of dim {sd}"
        )));
    }

    let plan = initial_pairing(eta_a, eta_b)?;
    let mut xa = eta_a.data().to_vec();
    let mut xb = vec![0.0; n * sd];
    for i in 0..n {
        xb[i * sd..(i + 1) * sd].copy_from_slice(eta_b.point(plan[i]));
    }
    let mut streams: Vec<RngStream> =
        (0..n).map(|i| RngStream::new(config.seed, i as u64)).collect();

    let track_accum = config.subordinator_discount.is_some() && ctx_a.stable.is_some();
    let discount = config.subordinator_discount.unwrap_or(0.0);
    let mut accum = vec![0.0; if track_accum { n } else { 0 }];
    let mut sub_accum: Vec<(f64, Vec<f64>)> = Vec::new();

    let n_steps = config.n_steps();
    let stride = config.record_stride();
    let h = config.h;
    let snap_map = {
        let mut m: std::collections::BTreeMap<u64, Vec<f64>> = Default::default();
        for (k, st) in snapshot_steps(&config.snapshot_times, 0.0, h, n_steps) {
            m.entry(k).or_default().push(st);
        }
        m
    };

    let mut stats_a = vec![0.0; model_a.functionals.len()];
    let mut stats_b = vec![0.0; model_b.functionals.len()];
    let mut series = Vec::new();
    let mut divergence = None;
    let mut t = 0.0;

    let record = |series: &mut Vec<CoupledSeriesPoint>, t: f64, xa: &[f64], xb: &[f64]| {
        let mut dists = Vec::with_capacity(n);
        for i in 0..n {
            dists.push(dist(&xa[i * sd..(i + 1) * sd], &xb[i * sd..(i + 1) * sd]));
        }
        let (mean_dist, sd_dist) = mean_sd(&dists);
        let sq: Vec<f64> = dists.iter().map(|v| v * v).collect();
        let (mean_dist_sq, sd_dist_sq) = mean_sd(&sq);
        series.push(CoupledSeriesPoint {
            t,
            mean_dist,
            sd_dist,
            mean_dist_sq,
            sd_dist_sq,
            mean_psi: None,
            sd_psi: None,
            frac_coupled: 0.0,
        });
    };

    let snapshot_accum =
        |sub: &mut Vec<(f64, Vec<f64>)>, times: &[f64], accum: &[f64]| {
            for &st in times {
                sub.push((st, accum.to_vec()));
            }
        };

    record(&mut series, t, &xa, &xb);
    if let Some(times) = snap_map.get(&0) {
        if track_accum {
            snapshot_accum(&mut sub_accum, times, &accum);
        }
    }

    for k in 0..n_steps {
        for (slot, f) in stats_a.iter_mut().zip(&model_a.functionals) {
            *slot = f.eval_raw(sd, &xa);
        }
        for (slot, f) in stats_b.iter_mut().zip(&model_b.functionals) {
            *slot = f.eval_raw(sd, &xb);
        }
        let scalar_a = ctx_a.scalar_sigma(&stats_a);
        let scalar_b = ctx_b.scalar_sigma(&stats_b);
        let weight = (-discount * t).exp(); // e^{−K·s} at the step's left endpoint
        let d = ctx_a.d;

        if track_accum {
            xa.par_chunks_mut(sd)
                .zip(xb.par_chunks_mut(sd))
                .zip(streams.par_iter_mut())
                .zip(accum.par_iter_mut())
                .for_each_init(
                    || (Scratch::new(d), Scratch::new(d)),
                    |(sa, sb), (((a, b), stream), acc)| {
                        let ds = step_shared(&ctx_a, &ctx_b, a, b, &stats_a, &stats_b, scalar_a, scalar_b, stream, sa, sb);
                        *acc += weight * ds;
                    },
                );
        } else {
            xa.par_chunks_mut(sd)
                .zip(xb.par_chunks_mut(sd))
                .zip(streams.par_iter_mut())
                .for_each_init(
                    || (Scratch::new(d), Scratch::new(d)),
                    |(sa, sb), ((a, b), stream)| {
                        step_shared(&ctx_a, &ctx_b, a, b, &stats_a, &stats_b, scalar_a, scalar_b, stream, sa, sb);
                    },
                );
        }

        t = (k + 1) as f64 * h;
        if !(slice_ok(&xa) && slice_ok(&xb)) {
            divergence = Some(Divergence {
                time: t,
                detail: format!("synchronous pair system blew up at t = {t}"),
            });
            break;
        }
        let is_snap = snap_map.contains_key(&(k + 1));
        if (k + 1) % stride == 0 || k + 1 == n_steps || is_snap {
            record(&mut series, t, &xa, &xb);
        }
        if let Some(times) = snap_map.get(&(k + 1)) {
            if track_accum {
                snapshot_accum(&mut sub_accum, times, &accum);
            }
        }
    }

    Ok(CoupledRunResult {
        series,
        taus: Vec::new(),
        terminal_x: finite_cloud(sd, xa)?,
        terminal_y: finite_cloud(sd, xb)?,
        sub_accum,
        divergence,
    })
}

/// Same-start synchronous coupling (pairs are the identical particles).
pub fn synchronous_coupled_runs(
    model_a: &ModelSpec,
    model_b: &ModelSpec,
    eta0_shared: &EmpiricalMeasure,
    config: &SimConfig,
) -> Result<CoupledRunResult> {
    synchronous_coupled_runs_from(model_a, model_b, eta0_shared, eta0_shared, config)
}

/// Advance one pair under shared increments; returns the shared subordinator
/// increment (0 for Brownian).
#[allow(clippy::too_many_arguments)]
fn step_shared(
    ctx_a: &Ctx,
    ctx_b: &Ctx,
    a: &mut [f64],
    b: &mut [f64],
    stats_a: &[f64],
    stats_b: &[f64],
    scalar_a: f64,
    scalar_b: f64,
    stream: &mut RngStream,
    sa: &mut Scratch,
    sb: &mut Scratch,
) -> f64 {
    let d = ctx_a.d;
    let h = ctx_a.h;
    ctx_a.model.drift_force(a, stats_a, &mut sa.force);
    ctx_b.model.drift_force(b, stats_b, &mut sb.force);
    let (ds, noise_scale) = match &ctx_a.stable {
        None => (0.0, ctx_a.sqrt_h),
        Some(params) => {
            let ds = positive_stable_increment(stream, params, h)
                .expect("step size validated before the run");
            (ds, ds.sqrt())
        }
    };
    if ctx_a.split {
        let DiffusionSpec::EllipticSplit { sigma_hat: sh_a, .. } = &ctx_a.model.diffusion else {
            unreachable!()
        };
        let DiffusionSpec::EllipticSplit { sigma_hat: sh_b, .. } = &ctx_b.model.diffusion else {
            unreachable!()
        };
        sh_a(a, stats_a, &mut sa.mat);
        sh_b(b, stats_b, &mut sb.mat);
        stream.fill_standard_normal(&mut sa.n1);
        stream.fill_standard_normal(&mut sa.n2);
        let sqrt_h = ctx_a.sqrt_h;
        for i in 0..d {
            let mut da = ctx_a.sqrt_alpha * sa.n1[i];
            let mut db = ctx_b.sqrt_alpha * sa.n1[i];
            for j in 0..d {
                da += sa.mat[i * d + j] * sa.n2[j];
                db += sb.mat[i * d + j] * sa.n2[j];
            }
            a[i] += sa.force[i] * h + sqrt_h * da;
            b[i] += sb.force[i] * h + sqrt_h * db;
        }
        return ds;
    }
    stream.fill_standard_normal(&mut sa.n1);
    match ctx_a.model.kind {
        ModelKind::FirstOrder => {
            let amp_a = scalar_a * noise_scale;
            let amp_b = scalar_b * noise_scale;
            for i in 0..d {
                a[i] += sa.force[i] * h + amp_a * sa.n1[i];
                b[i] += sb.force[i] * h + amp_b * sa.n1[i];
            }
        }
        ModelKind::Kinetic => {
            let ga = ctx_a.model.gamma.expect("kinetic models carry gamma");
            let gb = ctx_b.model.gamma.expect("kinetic models carry gamma");
            let amp_a = scalar_a * noise_scale;
            let amp_b = scalar_b * noise_scale;
            for i in 0..d {
                a[i] += a[d + i] * h;
                a[d + i] += (-ga * a[d + i] + sa.force[i]) * h + amp_a * sa.n1[i];
                b[i] += b[d + i] * h;
                b[d + i] += (-gb * b[d + i] + sb.force[i]) * h + amp_b * sa.n1[i];
            }
        }
    }
    ds
}

/// Build a cloud from a raw buffer, clamping non-finite coordinates so a
/// divergent terminal state is still representable (divergence is reported
/// separately alongside it).
fn finite_cloud(dim: usize, mut buf: Vec<f64>) -> Result<EmpiricalMeasure> {
    for v in &mut buf {
        if v.is_nan() {
            *v = 0.0;
        } else if !v.is_finite() {
            *v = v.signum() * BLOWUP_LIMIT;
        }
    }
    EmpiricalMeasure::new(dim, buf)
}

// ───────────────────────── fixed-point iteration ─────────────────────────

#[derive(Debug, Clone)]
pub struct GammaResult {
    pub mu_star: EmpiricalMeasure,
    /// W₁ gaps between successive iterates.
    pub gaps: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Three consecutive increasing gaps were observed (possible
    /// no-fixed-point regime).
    pub diverging: bool,
}

/// W₁-type gap used by the iteration: exact in dimension one, sliced
/// (fixed directions) otherwise.
fn cloud_gap(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> Result<f64> {
    if a.dim() == 1 {
        w1_exact_1d(a, b)
    } else {
        sliced_w1(a, b, 32)
    }
}

/// Iterate the empirical measure map: each step runs the decoupled flow with
/// the current iterate frozen (same seed and same start cloud every time, so
/// the map is a deterministic function of the frozen measure) and takes the
/// terminal cloud.  Stops when the W₁ gap drops below `tol_stationary`.
///
/// Every inner run must pass the stationarity gate: the W₁ distance between
/// the clouds pooled over the last two windows of length `window` must be
/// below `tol_window` (default `tol_stationary`).
pub fn gamma_fixed_point(
    model: &ModelSpec,
    mu0: &EmpiricalMeasure,
    config: &SimConfig,
    max_iter: usize,
) -> Result<GammaResult> {
    config.validate()?;
    if max_iter == 0 {
        return Err(CoreError::Parameter("max_iter must be >= 1".into()));
    }
    let w = config.window;
    if config.t_final < config.burn_in + 2.0 * w {
        return Err(CoreError::Configuration(format!(
            "T = {} leaves no room for burn_in = {} plus two windows of {}",
            config.t_final, config.burn_in, w
        )));
    }
    let t_end = config.n_steps() as f64 * config.h;
    let samples_per_window = 4;
    let mut inner = config.clone();
    inner.snapshot_times = (0..2 * samples_per_window)
        .map(|j| t_end - 2.0 * w + (j as f64 + 0.5) * w / samples_per_window as f64)
        .collect();
    let tol_window = config.tol_window.unwrap_or(config.tol_stationary);

    let mut mu = mu0.clone();
    let mut gaps = Vec::new();
    let mut converged = false;
    let mut diverging = false;
    let mut increases = 0;

    for _ in 0..max_iter {
        let result = run_frozen(model, &mu, mu0, &inner)?;
        if let Some(div) = result.divergence {
            return Err(CoreError::Divergence {
                time: div.time,
                detail: format!("decoupled run diverged during the iteration: {}", div.detail),
            });
        }
        let half = result.snapshots.len() / 2;
        let win1: Vec<&EmpiricalMeasure> =
            result.snapshots[..half].iter().map(|(_, c)| c).collect();
        let win2: Vec<&EmpiricalMeasure> =
            result.snapshots[half..].iter().map(|(_, c)| c).collect();
        let pooled1 = EmpiricalMeasure::pool(&win1)?;
        let pooled2 = EmpiricalMeasure::pool(&win2)?;
        let window_gap = cloud_gap(&pooled1, &pooled2)?;
        if window_gap >= tol_window {
            return Err(CoreError::NonStationary(format!(
                "decoupled run not stationary: window gap {window_gap} >= {tol_window} \
                 (lengthen T or loosen tol_window)"
            )));
        }
        let next = result.state.cloud;
        let gap = cloud_gap(&mu, &next)?;
        if let Some(&last) = gaps.last() {
            if gap > last {
                increases += 1;
                if increases >= 3 {
                    diverging = true;
                }
            } else {
                increases = 0;
            }
        }
        gaps.push(gap);
        mu = next;
        if gap < config.tol_stationary {
            converged = true;
            break;
        }
    }

    Ok(GammaResult {
        mu_star: mu,
        iterations: gaps.len(),
        gaps,
        converged,
        diverging,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{self, AssumptionParams};
    use crate::rates::PhiSpec;
    use statrs::function::erf::erfc;
    use std::sync::Arc;

    fn normal_cloud(n: usize, dim: usize, mean: f64, sd: f64, seed: u64) -> EmpiricalMeasure {
        let mut s = RngStream::new(seed, 9001);
        let mut data = vec![0.0; n * dim];
        s.fill_standard_normal(&mut data);
        for v in &mut data {
            *v = mean + sd * *v;
        }
        EmpiricalMeasure::new(dim, data).unwrap()
    }

    fn dirac_cloud(n: usize, dim: usize, value: f64) -> EmpiricalMeasure {
        EmpiricalMeasure::new(dim, vec![value; n * dim]).unwrap()
    }

    fn variance(data: &[f64]) -> f64 {
        let n = data.len() as f64;
        let m = data.iter().sum::<f64>() / n;
        data.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0)
    }

    /// Linear pull toward the origin with noise switched off entirely.
    fn noiseless_linear(dim: usize) -> ModelSpec {
        ModelSpec::first_order_custom(
            "noiseless_linear",
            dim,
            NoiseKind::Brownian,
            vec![],
            Arc::new(|x: &[f64], _stats: &[f64], out: &mut [f64]| {
                for (o, &xi) in out.iter_mut().zip(x) {
                    *o = -xi;
                }
            }),
            DiffusionSpec::ScalarMeasure { sigma: Arc::new(|_stats: &[f64]| 0.0) },
            AssumptionParams {
                kappa: 0.0,
                k0: 0.0,
                k0_tilde: 0.0,
                l_b: 0.0,
                k1: 0.0,
                k2: 0.0,
                r: 0.0,
                delta_bound: 1.0,
                one_sided_k: Some(-2.0),
            },
            serde_json::json!({}),
        )
        .unwrap()
    }

    #[test]
    fn config_validation_rejects_bad_inputs() {
        let ok = SimConfig::new(0.01, 1.0, 16, 1);
        ok.validate().unwrap();

        let mut bad = ok.clone();
        bad.h = 0.0;
        assert!(matches!(bad.validate(), Err(CoreError::Parameter(_))));

        let mut bad = ok.clone();
        bad.h = 2.0; // exceeds T
        assert!(matches!(bad.validate(), Err(CoreError::Parameter(_))));

        let mut bad = ok.clone();
        bad.n_particles = 0;
        assert!(matches!(bad.validate(), Err(CoreError::Parameter(_))));

        let mut bad = ok.clone();
        bad.couple_threshold = Some(1e-9); // below the h-linked floor
        assert!(matches!(bad.validate(), Err(CoreError::Parameter(_))));

        let mut bad = ok.clone();
        bad.snapshot_times = vec![-1.0];
        assert!(matches!(bad.validate(), Err(CoreError::Parameter(_))));

        assert_eq!(SimConfig::new(1e-3, 8.0, 1, 0).n_steps(), 8000);
    }

    #[test]
    fn em_step_with_noise_off_is_explicit_euler() {
        let model = noiseless_linear(1);
        let mu = dirac_cloud(4, 1, 0.0);
        let mut stream = RngStream::new(3, 0);
        let next = em_step(&model, &[1.0], &mu, 0.01, &mut stream).unwrap();
        assert!((next[0] - 0.99).abs() < 1e-15);

        let err = em_step(&model, &[1.0, 2.0], &mu, 0.01, &mut stream);
        assert!(matches!(err, Err(CoreError::Shape(_))));
    }

    #[test]
    fn zero_diffusion_run_tracks_the_ode_flow() {
        let model = noiseless_linear(1);
        let eta0 = dirac_cloud(8, 1, 1.0);
        let config = SimConfig::new(0.01, 1.0, 8, 0);
        let run = run_mckean_vlasov(&model, &eta0, &config).unwrap();
        assert!(run.divergence.is_none());
        let m = run.terminal().mean()[0];
        assert!(
            (m - (-1.0_f64).exp()).abs() < 2.0 * config.h,
            "Euler endpoint {m} vs e^-1"
        );
        // all particles identical: deterministic flow from a Dirac start
        let data = run.terminal().data();
        assert!(data.iter().all(|&v| v == data[0]));
    }

    #[test]
    fn run_records_series_and_snapshots_on_the_grid() {
        let model = models::ou(2, 1.0, 1.0).unwrap();
        let eta0 = normal_cloud(32, 2, 0.0, 1.0, 4);
        let mut config = SimConfig::new(0.05, 1.0, 32, 11);
        config.snapshot_times = vec![0.0, 0.5, 1.0, 7.0]; // 7.0 is off-range: dropped
        let run = run_mckean_vlasov(&model, &eta0, &config).unwrap();
        assert_eq!(run.snapshots.len(), 3);
        assert_eq!(run.snapshots[0].0, 0.0);
        assert_eq!(run.snapshots[1].0, 0.5);
        assert_eq!(run.snapshots[2].0, 1.0);
        assert_eq!(run.snapshots[0].1.len(), 32);
        assert_eq!(run.snapshots[0].1.data(), eta0.data());
        assert_eq!(run.series.first().unwrap().t, 0.0);
        assert!((run.series.last().unwrap().t - 1.0).abs() < 1e-12);
        assert!((run.state.time - 1.0).abs() < 1e-12);
        assert_eq!(run.snapshots[2].1.data(), run.terminal().data());
    }

    #[test]
    fn ou_reaches_its_stationary_spread() {
        // explicit scheme fixed point of the variance: alpha/(theta(2 - theta h))
        let theta = 1.0;
        let alpha = 2.0;
        let h = 2e-3;
        let model = models::ou(1, theta, alpha).unwrap();
        let eta0 = normal_cloud(10_000, 1, 0.0, 1.0, 5);
        let config = SimConfig::new(h, 5.0, 10_000, 17);
        let run = run_mckean_vlasov(&model, &eta0, &config).unwrap();
        assert!(run.divergence.is_none());
        let v = variance(run.terminal().data());
        let target = alpha / (theta * (2.0 - theta * h));
        assert!(
            (v - target).abs() < 0.03 * target,
            "terminal variance {v} vs {target}"
        );
    }

    #[test]
    fn frozen_run_keeps_a_stationary_start_nearby() {
        let model = models::ou(1, 1.0, 2.0).unwrap();
        let eta0 = normal_cloud(10_000, 1, 0.0, 1.0, 6);
        let config = SimConfig::new(2e-3, 1.0, 10_000, 23);
        let run = run_frozen(&model, &eta0, &eta0, &config).unwrap();
        let gap = w1_exact_1d(run.terminal(), &eta0).unwrap();
        assert!(gap < 0.05, "stationary drifted by {gap}");
    }

    #[test]
    fn interaction_free_model_ignores_the_frozen_measure() {
        let spec = PhiSpec::new(1.0, 1.0, 1.0).unwrap();
        let model = models::piecewise_dissipative(1, spec, 1.0, 0.0).unwrap();
        let eta0 = normal_cloud(200, 1, 0.5, 1.0, 7);
        let other = normal_cloud(200, 1, -3.0, 0.2, 8);
        let config = SimConfig::new(0.01, 0.5, 200, 31);
        let live = run_mckean_vlasov(&model, &eta0, &config).unwrap();
        let frozen = run_frozen(&model, &other, &eta0, &config).unwrap();
        assert_eq!(live.terminal().data(), frozen.terminal().data());
    }

    #[test]
    fn same_seed_same_bits_for_any_thread_count() {
        let model = models::example33(0.5).unwrap();
        let eta0 = normal_cloud(400, 1, 1.0, 0.5, 9);
        let config = SimConfig::new(0.01, 0.5, 400, 41);
        let baseline = run_mckean_vlasov(&model, &eta0, &config).unwrap();
        let repeat = run_mckean_vlasov(&model, &eta0, &config).unwrap();
        assert_eq!(baseline.terminal().data(), repeat.terminal().data());

        for threads in [1usize, 8] {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            let run = pool
                .install(|| run_mckean_vlasov(&model, &eta0, &config))
                .unwrap();
            assert_eq!(
                baseline.terminal().data(),
                run.terminal().data(),
                "thread count {threads} changed the bits"
            );
        }
    }

    #[test]
    fn resume_matches_one_longer_run_exactly() {
        let spec = PhiSpec::new(1.0, 1.0, 1.0).unwrap();
        let model = models::piecewise_dissipative(1, spec, 1.0, 0.3).unwrap();
        let eta0 = normal_cloud(300, 1, 0.0, 1.0, 10);
        let first = SimConfig::new(5e-3, 1.0, 300, 53);
        let run1 = run_mckean_vlasov(&model, &eta0, &first).unwrap();
        let run2 = resume_mckean_vlasov(&model, &run1.state, &first).unwrap();

        let mut whole_cfg = first.clone();
        whole_cfg.t_final = 2.0;
        let whole = run_mckean_vlasov(&model, &eta0, &whole_cfg).unwrap();
        assert_eq!(run2.terminal().data(), whole.terminal().data());
        assert!((run2.state.time - 2.0).abs() < 1e-12);
    }

    #[test]
    fn blow_up_is_reported_with_last_finite_cloud() {
        let model = ModelSpec::first_order_custom(
            "cubic_explosion",
            1,
            NoiseKind::Brownian,
            vec![],
            Arc::new(|x: &[f64], _s: &[f64], out: &mut [f64]| out[0] = x[0] * x[0] * x[0]),
            DiffusionSpec::ScalarMeasure { sigma: Arc::new(|_s: &[f64]| 0.0) },
            AssumptionParams {
                kappa: 0.0,
                k0: 0.0,
                k0_tilde: 0.0,
                l_b: 0.0,
                k1: 0.0,
                k2: 0.0,
                r: 0.0,
                delta_bound: 1.0,
                one_sided_k: None,
            },
            serde_json::json!({}),
        )
        .unwrap();
        let eta0 = dirac_cloud(4, 1, 2.0);
        let config = SimConfig::new(0.1, 10.0, 4, 0);
        let run = run_mckean_vlasov(&model, &eta0, &config).unwrap();
        let div = run.divergence.as_ref().expect("cubic growth must blow up");
        assert!(div.time > 0.0 && div.time < 10.0);
        assert!(run.terminal().data().iter().all(|v| v.is_finite()));
        assert!(run.state.time < 10.0);
    }

    #[test]
    fn kinetic_run_stays_finite() {
        let model = models::kinetic(1, 0.5, 1.0, 1.0, 8.0, 4.0).unwrap();
        let eta0 = normal_cloud(300, 2, 0.5, 1.0, 11);
        let config = SimConfig::new(1e-3, 5.0, 300, 61);
        let run = run_mckean_vlasov(&model, &eta0, &config).unwrap();
        assert!(run.divergence.is_none());
        let last = run.series.last().unwrap();
        assert!(last.mean_norm.is_finite() && last.mean_norm < 100.0);
    }

    #[test]
    fn subordinated_run_spreads_and_stays_finite() {
        let model = models::stable(1, 0.2, 1.5).unwrap();
        let eta0 = dirac_cloud(500, 1, 0.0);
        let config = SimConfig::new(1e-3, 1.0, 500, 71);
        let run = run_mckean_vlasov(&model, &eta0, &config).unwrap();
        assert!(run.divergence.is_none());
        let v = variance(run.terminal().data());
        assert!(v > 0.01, "subordinated noise should spread the cloud, var = {v}");
    }

    #[test]
    fn reflection_rejects_models_without_the_split() {
        let config = SimConfig::new(0.01, 1.0, 8, 0);
        let eta = normal_cloud(8, 1, 0.0, 1.0, 12);

        let scalar_model = models::example33(0.5).unwrap();
        let err = reflection_coupled_pairs(&scalar_model, &eta, &eta, &eta, &config);
        assert!(matches!(err, Err(CoreError::UnsupportedModel(_))));

        let stable_model = models::linear_stable(1, 1.0, 1.5).unwrap();
        let err = reflection_coupled_pairs(&stable_model, &eta, &eta, &eta, &config);
        assert!(matches!(err, Err(CoreError::UnsupportedModel(_))));
    }

    #[test]
    fn reflection_couples_identical_clouds_at_time_zero() {
        let model = models::ou(1, 1.0, 1.0).unwrap();
        let eta = normal_cloud(64, 1, 0.0, 1.0, 13);
        let config = SimConfig::new(0.01, 0.5, 64, 81);
        let run = reflection_coupled_pairs(&model, &eta, &eta, &eta, &config).unwrap();
        assert!(run.taus.iter().all(|t| *t == Some(0.0)));
        assert!(run.series.iter().all(|p| p.mean_dist == 0.0 && p.frac_coupled == 1.0));
        assert_eq!(run.terminal_x.data(), run.terminal_y.data());
    }

    #[test]
    fn reflection_coupling_times_follow_the_level_hitting_law() {
        // driftless unit-noise pair started 2 apart: the half-difference is a
        // standard Brownian path and coupling is its first passage to level 1,
        // so P(tau <= t) = erfc(1/sqrt(2 t)).
        let model = models::ou(1, 0.0, 1.0).unwrap();
        let n = 1000;
        let eta1 = dirac_cloud(n, 1, -1.0);
        let eta2 = dirac_cloud(n, 1, 1.0);
        let config = SimConfig::new(5e-4, 12.0, n, 97);
        let run = reflection_coupled_pairs(&model, &eta1, &eta1, &eta2, &config).unwrap();
        assert!(run.divergence.is_none());

        let mut worst: f64 = 0.0;
        for t in [0.25, 0.5, 1.0, 2.0, 4.0, 8.0] {
            let hit = run
                .taus
                .iter()
                .filter(|tau| matches!(tau, Some(s) if *s <= t))
                .count() as f64
                / n as f64;
            let law = erfc(1.0 / (2.0 * t).sqrt());
            worst = worst.max((hit - law).abs());
        }
        assert!(worst < 0.06, "coupling-time CDF deviates by {worst}");

        // coupling is permanent and fractions only grow
        for w in run.series.windows(2) {
            assert!(w[1].frac_coupled >= w[0].frac_coupled);
        }
        for (i, tau) in run.taus.iter().enumerate() {
            if tau.is_some() {
                assert_eq!(run.terminal_x.point(i), run.terminal_y.point(i));
            }
        }
    }

    #[test]
    fn reflection_contracts_the_coupling_distance() {
        let spec = PhiSpec::new(1.0, 1.0, 1.0).unwrap();
        let model = models::piecewise_dissipative(1, spec, 1.0, 0.0).unwrap();
        let n = 2000;
        let eta1 = normal_cloud(n, 1, -2.0, 0.5, 14);
        let eta2 = normal_cloud(n, 1, 2.0, 0.5, 15);
        let config = SimConfig::new(1e-3, 4.0, n, 103);
        let run = reflection_coupled_pairs(&model, &eta1, &eta1, &eta2, &config).unwrap();
        let first = run.series.first().unwrap().mean_psi.unwrap();
        let last = run.series.last().unwrap().mean_psi.unwrap();
        assert!(
            last < 0.5 * first,
            "coupling functional should shrink hard: {first} -> {last}"
        );
    }

    #[test]
    fn synchronous_identical_systems_stay_glued() {
        let model = models::linear_stable(1, 1.0, 1.5).unwrap();
        let eta0 = normal_cloud(300, 1, 0.0, 1.0, 16);
        let config = SimConfig::new(0.01, 0.5, 300, 113);
        let run = synchronous_coupled_runs(&model, &model, &eta0, &config).unwrap();
        assert!(run.series.iter().all(|p| p.mean_dist == 0.0));
        assert_eq!(run.terminal_x.data(), run.terminal_y.data());
    }

    #[test]
    fn synchronous_pairs_share_every_increment() {
        // sigma = 1 versus sigma = 2 from the same start with zero drift at
        // the origin: after one shared step the second path is exactly twice
        // the first (scaling by two is exact in floating point).
        let a = models::linear_stable(1, 1.0, 1.5).unwrap();
        let b = models::linear_stable(1, 2.0, 1.5).unwrap();
        let eta0 = dirac_cloud(200, 1, 0.0);
        let mut config = SimConfig::new(0.1, 0.1, 200, 127);
        config.subordinator_discount = Some(0.0);
        config.snapshot_times = vec![0.1];
        let run = synchronous_coupled_runs(&a, &b, &eta0, &config).unwrap();
        for i in 0..200 {
            let xa = run.terminal_x.point(i)[0];
            let xb = run.terminal_y.point(i)[0];
            assert_eq!(xb, 2.0 * xa, "pair {i} did not share its increment");
        }
        assert_eq!(run.sub_accum.len(), 1);
        let (t, accum) = &run.sub_accum[0];
        assert_eq!(*t, 0.1);
        assert_eq!(accum.len(), 200);
        assert!(accum.iter().all(|&s| s > 0.0));
    }

    #[test]
    fn synchronous_rejects_mismatched_structure() {
        let eta1 = normal_cloud(16, 1, 0.0, 1.0, 17);
        let config = SimConfig::new(0.01, 0.1, 16, 0);

        let stable_model = models::linear_stable(1, 1.0, 1.5).unwrap();
        let brownian_model = models::example33(0.5).unwrap();
        let err = synchronous_coupled_runs(&stable_model, &brownian_model, &eta1, &config);
        assert!(matches!(err, Err(CoreError::Configuration(_))));

        let other_index = models::linear_stable(1, 1.0, 1.7).unwrap();
        let err = synchronous_coupled_runs(&stable_model, &other_index, &eta1, &config);
        assert!(matches!(err, Err(CoreError::Configuration(_))));

        let split_model = models::ou(1, 1.0, 1.0).unwrap();
        let err = synchronous_coupled_runs(&split_model, &brownian_model, &eta1, &config);
        assert!(matches!(err, Err(CoreError::Configuration(_))));
    }

    #[test]
    fn synchronous_frozen_pair_obeys_the_squared_growth_bound() {
        // one-sided constant K = l1 = 1 and interaction weight kappa = 0.3:
        // E|X1 - X2|^2 <= (kappa/K)(e^{2 K t} - 1) W1(mu1, mu2)^2
        let spec = PhiSpec::new(1.0, 1.0, 1.0).unwrap();
        let model = models::piecewise_dissipative(1, spec, 1.0, 0.3).unwrap();
        let mu1 = dirac_cloud(1000, 1, -1.0);
        let mu2 = dirac_cloud(1000, 1, 1.0);
        let frozen1 = freeze(&model, &mu1).unwrap();
        let frozen2 = freeze(&model, &mu2).unwrap();
        let eta0 = normal_cloud(1000, 1, 0.0, 1.0, 18);
        let mut config = SimConfig::new(2e-3, 1.0, 1000, 131);
        config.record_dt = Some(0.5);
        let run = synchronous_coupled_runs(&frozen1, &frozen2, &eta0, &config).unwrap();
        let w1_sq = 4.0; // W1(delta_{-1}, delta_{+1})^2
        for p in run.series.iter().skip(1) {
            let bound = 0.3 * ((2.0 * p.t).exp() - 1.0) * w1_sq;
            let slack = 3.0 * p.sd_dist_sq / (1000.0_f64).sqrt();
            assert!(
                p.mean_dist_sq <= bound + slack,
                "t = {}: {} > {} + {}",
                p.t,
                p.mean_dist_sq,
                bound,
                slack
            );
        }
    }

    #[test]
    fn gamma_iteration_stops_immediately_for_measure_free_dynamics() {
        // the map ignores its argument, so with common random numbers the
        // second gap is exactly zero
        let model = models::ou(1, 1.0, 2.0).unwrap();
        let mu0 = normal_cloud(800, 1, 3.0, 1.0, 19);
        let mut config = SimConfig::new(5e-3, 6.0, 800, 139);
        config.window = 1.0;
        config.tol_stationary = 1e-12;
        config.tol_window = Some(0.2);
        let result = gamma_fixed_point(&model, &mu0, &config, 10).unwrap();
        assert_eq!(result.iterations, 2);
        assert_eq!(result.gaps[1], 0.0);
        assert!(result.converged);
        assert!(!result.diverging);
    }

    #[test]
    fn gamma_iteration_contracts_for_weak_interaction() {
        let spec = PhiSpec::new(1.0, 1.0, 1.0).unwrap();
        let model = models::piecewise_dissipative(1, spec, 1.0, 0.05).unwrap();
        let mu0 = normal_cloud(600, 1, 1.5, 1.0, 20);
        let mut config = SimConfig::new(5e-3, 10.0, 600, 149);
        config.window = 2.0;
        config.tol_stationary = 1e-3;
        config.tol_window = Some(0.2);
        let result = gamma_fixed_point(&model, &mu0, &config, 8).unwrap();
        assert!(result.converged, "gaps: {:?}", result.gaps);
        assert!(!result.diverging);
        for w in result.gaps.windows(2) {
            assert!(w[1] <= w[0] * 1.05, "gaps should not grow: {:?}", result.gaps);
        }
    }

    #[test]
    fn gamma_iteration_flags_short_nonstationary_runs() {
        let model = models::ou(1, 0.05, 2.0).unwrap();
        let mu0 = normal_cloud(200, 1, 5.0, 0.1, 21);
        let mut config = SimConfig::new(0.01, 3.0, 200, 151);
        config.window = 1.0;
        config.tol_window = Some(1e-4);
        let err = gamma_fixed_point(&model, &mu0, &config, 4);
        assert!(matches!(err, Err(CoreError::NonStationary(_))));
    }

    #[test]
    fn gamma_iteration_needs_room_for_two_windows() {
        let model = models::ou(1, 1.0, 2.0).unwrap();
        let mu0 = normal_cloud(100, 1, 0.0, 1.0, 22);
        let mut config = SimConfig::new(0.01, 1.5, 100, 0);
        config.window = 1.0;
        let err = gamma_fixed_point(&model, &mu0, &config, 4);
        assert!(matches!(err, Err(CoreError::Configuration(_))));
    }
}
