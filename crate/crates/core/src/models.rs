//! SDE model descriptions: drift, diffusion, noise kind, measure dependence,
//! and the standing-assumption parameters, plus a catalog of built-in
//! families whose constructions are engineered to satisfy the assumption
//! inequalities with explicit margins (verified numerically in the tests).
//!
//! Measure dependence is restricted to a small set of registered scalar
//! functionals of the particle cloud, each 1-Lipschitz with respect to W1.
//! The engine evaluates them once per step and hands the values to the
//! coefficient closures, keeping per-step cost O(N·d).

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::measures::EmpiricalMeasure;
use crate::noise::StableParams;
use crate::rates::PhiSpec;

/// First-order state (dim d) or kinetic position/velocity state (dim 2d).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    FirstOrder,
    Kinetic,
}

/// Driving noise of the SDE.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Brownian,
    AlphaStable(StableParams),
}

/// Registered scalar functionals μ ↦ (1/N)Σ g(p_i); every g is 1-Lipschitz,
/// so |F(μ) - F(ν)| ≤ W1(μ, ν).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasureFunctional {
    /// mean of tanh(⟨e, p⟩) with e = (1, …, 1)/√dim of the cloud.
    MeanTanhProj,
    /// mean of |p| + 1 (the phase-transition model's nonlinearity).
    MeanAbsPlusOne,
}

impl MeasureFunctional {
    pub fn eval(&self, mu: &EmpiricalMeasure) -> f64 {
        self.eval_raw(mu.dim(), mu.data())
    }

    /// Evaluate over a row-major point buffer without building a cloud
    /// (the per-step path of the particle engine).  Summation is in point
    /// order, so the value is independent of thread count.
    pub fn eval_raw(&self, dim: usize, data: &[f64]) -> f64 {
        let n = (data.len() / dim) as f64;
        match self {
            MeasureFunctional::MeanTanhProj => {
                let scale = 1.0 / (dim as f64).sqrt();
                let sum: f64 = data
                    .chunks_exact(dim)
                    .map(|p| (p.iter().sum::<f64>() * scale).tanh())
                    .sum();
                sum / n
            }
            MeasureFunctional::MeanAbsPlusOne => {
                let sum: f64 = data
                    .chunks_exact(dim)
                    .map(|p| p.iter().map(|v| v * v).sum::<f64>().sqrt() + 1.0)
                    .sum();
                sum / n
            }
        }
    }
}

/// Evaluate all of a model's registered functionals on a cloud.
pub fn measure_stats(model: &ModelSpec, mu: &EmpiricalMeasure) -> Result<Vec<f64>> {
    if mu.dim() != model.law_dim() {
        return Err(CoreError::Shape(format!(
            "cloud dim {} does not match the model's law dim {}",
            mu.dim(),
            model.law_dim()
        )));
    }
    Ok(model.functionals.iter().map(|f| f.eval(mu)).collect())
}

type CoeffFn = dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync;
type ScalarFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

/// Diffusion description.  `EllipticSplit` is the first-order Brownian form
/// σσ* = αI + σ̂σ̂* (σ̂ written row-major d×d); `ScalarMeasure` is the scalar
/// σ(μ) of the kinetic and subordinated families (constant in the state).
#[derive(Clone)]
pub enum DiffusionSpec {
    EllipticSplit {
        ellipticity_alpha: f64,
        sigma_hat: Arc<CoeffFn>,
    },
    ScalarMeasure {
        sigma: Arc<ScalarFn>,
    },
}

/// Standing-assumption constants attached to a model.  Interpretation:
/// `kappa` is the interaction strength multiplying W1², `k0`/`k0_tilde` the
/// σ̂ Lipschitz and drift growth constants, `l_b` the kinetic drift Lipschitz
/// constant, `k1`/`k2`/`r` the partial-dissipativity constants and radius,
/// `delta_bound` the two-sided diffusion bound (≥ 1), and `one_sided_k` the
/// one-sided drift constant used by the time-change bound when present.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssumptionParams {
    pub kappa: f64,
    pub k0: f64,
    pub k0_tilde: f64,
    pub l_b: f64,
    pub k1: f64,
    pub k2: f64,
    pub r: f64,
    pub delta_bound: f64,
    #[serde(default)]
    pub one_sided_k: Option<f64>,
}

impl AssumptionParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("kappa", self.kappa),
            ("k0", self.k0),
            ("k0_tilde", self.k0_tilde),
            ("l_b", self.l_b),
            ("k1", self.k1),
            ("k2", self.k2),
            ("r", self.r),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(CoreError::Parameter(format!("{name} must be >= 0, got {v}")));
            }
        }
        if !(self.delta_bound.is_finite() && self.delta_bound >= 1.0) {
            return Err(CoreError::Parameter(format!(
                "delta_bound must be >= 1, got {}",
                self.delta_bound
            )));
        }
        Ok(())
    }

    fn zeroed() -> Self {
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
        }
    }
}

/// One SDE family: coefficients plus metadata.  For `FirstOrder` the state is
/// `dim`-dimensional; for `Kinetic` it is `2·dim` (position block then
/// velocity block) and the drift closure returns only the force term b(x, μ)
/// of the velocity equation — the engine assembles dx = v dt,
/// dv = (−γv + b)dt + σ dB.
#[derive(Clone)]
pub struct ModelSpec {
    pub name: String,
    pub dim: usize,
    pub kind: ModelKind,
    pub noise: NoiseKind,
    pub gamma: Option<f64>,
    pub functionals: Vec<MeasureFunctional>,
    pub diffusion: DiffusionSpec,
    pub assumptions: AssumptionParams,
    /// Radial profile certified by the drift/diffusion pair, when one is.
    pub phi_spec: Option<PhiSpec>,
    /// Constructor parameters, echoed into run manifests.
    pub params: serde_json::Value,
    drift: Arc<CoeffFn>,
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("kind", &self.kind)
            .field("noise", &self.noise)
            .field("gamma", &self.gamma)
            .field("assumptions", &self.assumptions)
            .finish_non_exhaustive()
    }
}

/// Diffusion value at a point: either the elliptic split (α, σ̂ matrix) or
/// the scalar σ(μ).
#[derive(Debug, Clone, PartialEq)]
pub enum DiffusionValue {
    EllipticSplit { alpha: f64, sigma_hat: Vec<f64> },
    Scalar(f64),
}

impl ModelSpec {
    /// Dimension of one particle's state vector.
    pub fn state_dim(&self) -> usize {
        match self.kind {
            ModelKind::FirstOrder => self.dim,
            ModelKind::Kinetic => 2 * self.dim,
        }
    }

    /// Dimension of the law the model depends on (equals the state dim).
    pub fn law_dim(&self) -> usize {
        self.state_dim()
    }

    /// Force term of the drift (length `dim`), given precomputed functional
    /// values. For first-order models this is the whole drift.
    pub fn drift_force(&self, state: &[f64], stats: &[f64], out: &mut [f64]) {
        (self.drift)(state, stats, out)
    }

    /// Build a first-order model from raw closures.
    #[allow(clippy::too_many_arguments)]
    pub fn first_order_custom(
        name: &str,
        dim: usize,
        noise: NoiseKind,
        functionals: Vec<MeasureFunctional>,
        drift: Arc<CoeffFn>,
        diffusion: DiffusionSpec,
        assumptions: AssumptionParams,
        params: serde_json::Value,
    ) -> Result<ModelSpec> {
        if dim == 0 {
            return Err(CoreError::Parameter("dim must be >= 1".into()));
        }
        assumptions.validate()?;
        if let DiffusionSpec::EllipticSplit { ellipticity_alpha, .. } = &diffusion {
            if !(ellipticity_alpha.is_finite() && *ellipticity_alpha > 0.0) {
                return Err(CoreError::Parameter(format!(
                    "ellipticity_alpha must be > 0, got {ellipticity_alpha}"
                )));
            }
        }
        Ok(ModelSpec {
            name: name.to_string(),
            dim,
            kind: ModelKind::FirstOrder,
            noise,
            gamma: None,
            functionals,
            diffusion,
            assumptions,
            phi_spec: None,
            params,
            drift,
        })
    }

    /// Build a kinetic model from raw closures; `drift` returns the force
    /// b(x, μ) only.
    #[allow(clippy::too_many_arguments)]
    pub fn kinetic_custom(
        name: &str,
        dim: usize,
        noise: NoiseKind,
        gamma: f64,
        functionals: Vec<MeasureFunctional>,
        drift: Arc<CoeffFn>,
        sigma: Arc<ScalarFn>,
        assumptions: AssumptionParams,
        params: serde_json::Value,
    ) -> Result<ModelSpec> {
        if dim == 0 {
            return Err(CoreError::Parameter("dim must be >= 1".into()));
        }
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(CoreError::Parameter(format!("gamma must be > 0, got {gamma}")));
        }
        assumptions.validate()?;
        Ok(ModelSpec {
            name: name.to_string(),
            dim,
            kind: ModelKind::Kinetic,
            noise,
            gamma: Some(gamma),
            functionals,
            diffusion: DiffusionSpec::ScalarMeasure { sigma },
            assumptions,
            phi_spec: None,
            params,
            drift,
        })
    }
}

/// Evaluate drift and diffusion of a model at a state and a cloud.  For
/// kinetic models the returned drift is the full 2d-vector (v, −γv + b).
pub fn eval_coefficients(
    model: &ModelSpec,
    x: &[f64],
    mu: &EmpiricalMeasure,
) -> Result<(Vec<f64>, DiffusionValue)> {
    if x.len() != model.state_dim() {
        return Err(CoreError::Shape(format!(
            "state length {} does not match model state dim {}",
            x.len(),
            model.state_dim()
        )));
    }
    let stats = measure_stats(model, mu)?;
    let d = model.dim;
    let mut force = vec![0.0; d];
    model.drift_force(x, &stats, &mut force);

    let drift = match model.kind {
        ModelKind::FirstOrder => force,
        ModelKind::Kinetic => {
            let gamma = model.gamma.expect("kinetic models carry gamma");
            let mut full = vec![0.0; 2 * d];
            for i in 0..d {
                full[i] = x[d + i];
                full[d + i] = -gamma * x[d + i] + force[i];
            }
            full
        }
    };

    let diffusion = match &model.diffusion {
        DiffusionSpec::EllipticSplit { ellipticity_alpha, sigma_hat } => {
            let mut m = vec![0.0; d * d];
            sigma_hat(x, &stats, &mut m);
            DiffusionValue::EllipticSplit { alpha: *ellipticity_alpha, sigma_hat: m }
        }
        DiffusionSpec::ScalarMeasure { sigma } => DiffusionValue::Scalar(sigma(&stats)),
    };

    for v in &drift {
        if !v.is_finite() {
            return Err(CoreError::Inconsistency(format!(
                "model '{}' produced a non-finite drift",
                model.name
            )));
        }
    }
    Ok((drift, diffusion))
}

// ───────────────────────────── built-in catalog ─────────────────────────────

/// Odd bounded-bump confinement: f(u) = −c·u + bump·tanh(slope·u/bump).
/// The difference quotient is bounded by −c + min(slope, 2·bump/|u−v|),
/// which is the envelope the catalog constructions budget against.
fn bump_drift(c: f64, slope: f64, bump: f64, u: f64) -> f64 {
    -c * u + bump * (slope * u / bump).tanh()
}

/// Partially dissipative first-order Brownian family certified against the
/// piecewise radial profile `spec`: per-coordinate drift
/// `−2l2·x_i + B'·tanh(L·x_i/B')` with `L = l1 + 1.95·l2`,
/// `B' = 0.95·l2·r0/√d`, diffusion split `√α·dB¹ + σ̂(x)dB²` with
/// `σ̂ = √(0.05·l2)·diag(tanh x_i)`, and mean-projection interaction
/// `√(0.1·κ·l2)·F(μ)·(1,…,1)/√d`.
///
/// Budget: the tanh-bump envelope gives drift rate ≤ −2l2 + min(L, 2B/r)
/// (B = 0.95·l2·r0); adding the σ̂ slack 0.025·l2 and the Young-split
/// interaction slack 0.025·l2 keeps the total under the profile rate at
/// r = 0, r0 and 2r0, hence everywhere (convexity in between).
pub fn piecewise_dissipative(
    dim: usize,
    spec: PhiSpec,
    ellipticity_alpha: f64,
    kappa: f64,
) -> Result<ModelSpec> {
    if !(kappa.is_finite() && kappa >= 0.0) {
        return Err(CoreError::Parameter(format!("kappa must be >= 0, got {kappa}")));
    }
    let PhiSpec { l1, l2, r0 } = spec;
    let c = 2.0 * l2;
    let slope = l1 + 1.95 * l2;
    let bump = 0.95 * l2 * r0 / (dim as f64).sqrt();
    let c_sigma = (0.05 * l2).sqrt();
    let c_int = (0.1 * kappa * l2).sqrt();
    let inv_sqrt_d = 1.0 / (dim as f64).sqrt();

    let drift: Arc<CoeffFn> = Arc::new(move |x, stats, out| {
        let inter = c_int * stats[0] * inv_sqrt_d;
        for (o, &xi) in out.iter_mut().zip(x) {
            *o = bump_drift(c, slope, bump, xi) + inter;
        }
    });
    let d = dim;
    let sigma_hat: Arc<CoeffFn> = Arc::new(move |x, _stats, out| {
        out.fill(0.0);
        for i in 0..d {
            out[i * d + i] = c_sigma * x[i].tanh();
        }
    });

    let assumptions = AssumptionParams {
        kappa,
        k0: c_sigma,
        k0_tilde: c_int,
        one_sided_k: Some(2.0 * l1),
        ..AssumptionParams::zeroed()
    };
    let mut model = ModelSpec::first_order_custom(
        "piecewise_dissipative",
        dim,
        NoiseKind::Brownian,
        vec![MeasureFunctional::MeanTanhProj],
        drift,
        DiffusionSpec::EllipticSplit { ellipticity_alpha, sigma_hat },
        assumptions,
        serde_json::json!({
            "dim": dim, "l1": l1, "l2": l2, "r0": r0,
            "ellipticity_alpha": ellipticity_alpha, "kappa": kappa,
        }),
    )?;
    model.phi_spec = Some(spec);
    Ok(model)
}

/// Scalar phase-transition family: dX = (−X + ε·m(μ))dt + ε·m(μ)dB with
/// m(μ) = mean of |x| + 1.  Below the critical ε the self-consistent mean
/// solves a = 1/(1 − ε𝔠/√π); above it the mean grows without bound.
pub fn example33(epsilon: f64) -> Result<ModelSpec> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(CoreError::Parameter(format!("epsilon must be > 0, got {epsilon}")));
    }
    let drift: Arc<CoeffFn> = Arc::new(move |x, stats, out| {
        out[0] = -x[0] + epsilon * stats[0];
    });
    let sigma: Arc<ScalarFn> = Arc::new(move |stats| epsilon * stats[0]);
    ModelSpec::first_order_custom(
        "example33",
        1,
        NoiseKind::Brownian,
        vec![MeasureFunctional::MeanAbsPlusOne],
        drift,
        DiffusionSpec::ScalarMeasure { sigma },
        AssumptionParams { kappa: epsilon * epsilon, ..AssumptionParams::zeroed() },
        serde_json::json!({ "epsilon": epsilon }),
    )
}

/// Shared kinetic force construction: −2K1·x + bump + √(κ/d)·tanh-mean·1.
/// Dissipativity rate beyond radius R: −2K1 + 2·(0.475·K1·R)/R = −1.05·K1,
/// certifying the −K1 bound with margin; Lipschitz constant `l_b` is
/// 2K1 + slope.
struct KineticParts {
    drift: Arc<CoeffFn>,
    sigma: Arc<ScalarFn>,
    assumptions: AssumptionParams,
}

fn kinetic_parts(dim: usize, kappa: f64, k1: f64, r: f64, delta_bound: f64) -> Result<KineticParts> {
    for (name, v) in [("k1", k1), ("r", r)] {
        if !(v.is_finite() && v > 0.0) {
            return Err(CoreError::Parameter(format!("{name} must be > 0, got {v}")));
        }
    }
    if !(kappa.is_finite() && kappa >= 0.0) {
        return Err(CoreError::Parameter(format!("kappa must be >= 0, got {kappa}")));
    }
    let c = 2.0 * k1;
    let slope = 2.5 * k1;
    let bump = 0.475 * k1 * r / (dim as f64).sqrt();
    let c_int = (kappa / dim as f64).sqrt();
    let sig_amp = (kappa / dim as f64).sqrt();
    let lo = 1.0 / delta_bound.sqrt();
    let hi = delta_bound.sqrt();

    let drift: Arc<CoeffFn> = Arc::new(move |x, stats, out| {
        let inter = c_int * stats[0];
        for i in 0..out.len() {
            out[i] = bump_drift(c, slope, bump, x[i]) + inter;
        }
    });
    let sigma: Arc<ScalarFn> = Arc::new(move |stats| (1.0 + sig_amp * stats[0]).clamp(lo, hi));
    Ok(KineticParts {
        drift,
        sigma,
        assumptions: AssumptionParams {
            kappa,
            l_b: c + slope,
            k1,
            r,
            delta_bound,
            ..AssumptionParams::zeroed()
        },
    })
}

/// Kinetic Brownian family (position/velocity state, scalar σ(μ) on the
/// velocity block).  The default γ = 8 satisfies the friction condition for
/// `k1 = 1`.
pub fn kinetic(
    dim: usize,
    kappa: f64,
    k1: f64,
    r: f64,
    gamma: f64,
    delta_bound: f64,
) -> Result<ModelSpec> {
    let parts = kinetic_parts(dim, kappa, k1, r, delta_bound)?;
    ModelSpec::kinetic_custom(
        "kinetic",
        dim,
        NoiseKind::Brownian,
        gamma,
        vec![MeasureFunctional::MeanTanhProj],
        parts.drift,
        parts.sigma,
        parts.assumptions,
        serde_json::json!({
            "dim": dim, "kappa": kappa, "k1": k1, "r": r,
            "gamma": gamma, "delta_bound": delta_bound,
        }),
    )
}

/// Kinetic family driven by subordinated Gaussian noise.
#[allow(clippy::too_many_arguments)]
pub fn kinetic_stable(
    dim: usize,
    kappa: f64,
    k1: f64,
    r: f64,
    gamma: f64,
    delta_bound: f64,
    stable_alpha: f64,
) -> Result<ModelSpec> {
    let parts = kinetic_parts(dim, kappa, k1, r, delta_bound)?;
    let stable = StableParams::new(stable_alpha)?;
    ModelSpec::kinetic_custom(
        "kinetic_stable",
        dim,
        NoiseKind::AlphaStable(stable),
        gamma,
        vec![MeasureFunctional::MeanTanhProj],
        parts.drift,
        parts.sigma,
        parts.assumptions,
        serde_json::json!({
            "dim": dim, "kappa": kappa, "k1": k1, "r": r,
            "gamma": gamma, "delta_bound": delta_bound, "stable_alpha": stable_alpha,
        }),
    )
}

/// First-order subordinated-noise family with two-sided dissipativity split
/// at squared radius R = 1: per-coordinate drift −2x + bump + interaction,
/// σ(μ) = scalar·I constant in x.  Certifies the squared-distance inequality
/// with K1 = 2, K2 = 2 (interaction slack 1 from the Young split).
pub fn stable(dim: usize, kappa: f64, stable_alpha: f64) -> Result<ModelSpec> {
    if !(kappa.is_finite() && kappa >= 0.0) {
        return Err(CoreError::Parameter(format!("kappa must be >= 0, got {kappa}")));
    }
    let stable_params = StableParams::new(stable_alpha)?;
    let r_sq = 1.0_f64; // squared-radius threshold
    let c = 2.0;
    let slope = 2.5;
    let bump = r_sq.sqrt() / 4.0 / (dim as f64).sqrt();
    let c_int = kappa.sqrt() / (dim as f64).sqrt();
    let sig_amp = (kappa / dim as f64).sqrt();
    let delta_bound = 4.0_f64;
    let lo = 1.0 / delta_bound.sqrt();
    let hi = delta_bound.sqrt();

    let drift: Arc<CoeffFn> = Arc::new(move |x, stats, out| {
        let inter = c_int * stats[0];
        for i in 0..out.len() {
            out[i] = bump_drift(c, slope, bump, x[i]) + inter;
        }
    });
    let sigma: Arc<ScalarFn> = Arc::new(move |stats| (1.0 + sig_amp * stats[0]).clamp(lo, hi));
    ModelSpec::first_order_custom(
        "stable",
        dim,
        NoiseKind::AlphaStable(stable_params),
        vec![MeasureFunctional::MeanTanhProj],
        drift,
        DiffusionSpec::ScalarMeasure { sigma },
        AssumptionParams {
            kappa,
            k1: 2.0,
            k2: 2.0,
            r: r_sq,
            delta_bound,
            one_sided_k: Some(2.0 * (slope - c) + 1.0),
            ..AssumptionParams::zeroed()
        },
        serde_json::json!({ "dim": dim, "kappa": kappa, "stable_alpha": stable_alpha }),
    )
}

/// Linear dissipative family dX = −X dt + σ dW_{S_t} with constant scalar σ;
/// one-sided constant −2 (2⟨−x+y, x−y⟩ = −2|x−y|²) and no measure
/// dependence.  The workhorse of the time-change bound checks.
pub fn linear_stable(dim: usize, sigma: f64, stable_alpha: f64) -> Result<ModelSpec> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(CoreError::Parameter(format!("sigma must be > 0, got {sigma}")));
    }
    let stable_params = StableParams::new(stable_alpha)?;
    let drift: Arc<CoeffFn> = Arc::new(|x, _stats, out| {
        for (o, &xi) in out.iter_mut().zip(x) {
            *o = -xi;
        }
    });
    let sig: Arc<ScalarFn> = Arc::new(move |_stats| sigma);
    let delta_bound = (sigma * sigma).max(1.0 / (sigma * sigma)).max(1.0);
    ModelSpec::first_order_custom(
        "linear_stable",
        dim,
        NoiseKind::AlphaStable(stable_params),
        vec![],
        drift,
        DiffusionSpec::ScalarMeasure { sigma: sig },
        AssumptionParams {
            delta_bound,
            one_sided_k: Some(-2.0),
            ..AssumptionParams::zeroed()
        },
        serde_json::json!({ "dim": dim, "sigma": sigma, "stable_alpha": stable_alpha }),
    )
}

/// Ornstein–Uhlenbeck / Brownian test family: drift −θx, purely isotropic
/// noise of strength α (σ̂ ≡ 0).  θ = 0 gives plain Brownian motion.
pub fn ou(dim: usize, theta: f64, ellipticity_alpha: f64) -> Result<ModelSpec> {
    if !(theta.is_finite() && theta >= 0.0) {
        return Err(CoreError::Parameter(format!("theta must be >= 0, got {theta}")));
    }
    let drift: Arc<CoeffFn> = Arc::new(move |x, _stats, out| {
        for (o, &xi) in out.iter_mut().zip(x) {
            *o = -theta * xi;
        }
    });
    let sigma_hat: Arc<CoeffFn> = Arc::new(|_x, _stats, out| out.fill(0.0));
    let mut model = ModelSpec::first_order_custom(
        "ou",
        dim,
        NoiseKind::Brownian,
        vec![],
        drift,
        DiffusionSpec::EllipticSplit { ellipticity_alpha, sigma_hat },
        AssumptionParams {
            one_sided_k: Some(-2.0 * theta),
            ..AssumptionParams::zeroed()
        },
        serde_json::json!({ "dim": dim, "theta": theta, "ellipticity_alpha": ellipticity_alpha }),
    )?;
    if theta > 0.0 {
        // dX = −θX has radial rate −θ everywhere: a fully dissipative profile.
        model.phi_spec = None;
    }
    Ok(model)
}

/// Build a catalog model by name with a flat JSON parameter map (the CLI
/// entry point).  Unknown keys are rejected.
pub fn by_name(name: &str, params: &serde_json::Map<String, serde_json::Value>) -> Result<ModelSpec> {
    let get = |key: &str, default: Option<f64>| -> Result<f64> {
        match params.get(key) {
            Some(v) => v.as_f64().ok_or_else(|| {
                CoreError::Configuration(format!("model parameter '{key}' must be a number"))
            }),
            None => default.ok_or_else(|| {
                CoreError::Configuration(format!("model '{name}' needs parameter '{key}'"))
            }),
        }
    };
    let known: &[&str] = match name {
        "piecewise_dissipative" => &["dim", "l1", "l2", "r0", "ellipticity_alpha", "kappa"],
        "example33" => &["epsilon"],
        "kinetic" => &["dim", "kappa", "k1", "r", "gamma", "delta_bound"],
        "kinetic_stable" => {
            &["dim", "kappa", "k1", "r", "gamma", "delta_bound", "stable_alpha"]
        }
        "stable" => &["dim", "kappa", "stable_alpha"],
        "linear_stable" => &["dim", "sigma", "stable_alpha"],
        "ou" => &["dim", "theta", "ellipticity_alpha"],
        other => {
            return Err(CoreError::Configuration(format!(
                "unknown model '{other}' (catalog: piecewise_dissipative, example33, kinetic, \
                 kinetic_stable, stable, linear_stable, ou)"
            )))
        }
    };
    for key in params.keys() {
        if !known.contains(&key.as_str()) {
            return Err(CoreError::Configuration(format!(
                "unknown parameter '{key}' for model '{name}'"
            )));
        }
    }
    let dim = || -> Result<usize> {
        let v = get("dim", Some(1.0))?;
        if v.fract() != 0.0 || v < 1.0 {
            return Err(CoreError::Configuration(format!("dim must be a positive integer, got {v}")));
        }
        Ok(v as usize)
    };
    match name {
        "piecewise_dissipative" => {
            let spec = PhiSpec::new(get("l1", Some(1.0))?, get("l2", Some(1.0))?, get("r0", Some(1.0))?)?;
            piecewise_dissipative(dim()?, spec, get("ellipticity_alpha", Some(1.0))?, get("kappa", Some(0.0))?)
        }
        "example33" => example33(get("epsilon", None)?),
        "kinetic" => kinetic(
            dim()?,
            get("kappa", Some(0.0))?,
            get("k1", Some(1.0))?,
            get("r", Some(1.0))?,
            get("gamma", Some(8.0))?,
            get("delta_bound", Some(4.0))?,
        ),
        "kinetic_stable" => kinetic_stable(
            dim()?,
            get("kappa", Some(0.0))?,
            get("k1", Some(1.0))?,
            get("r", Some(1.0))?,
            get("gamma", Some(8.0))?,
            get("delta_bound", Some(4.0))?,
            get("stable_alpha", Some(1.5))?,
        ),
        "stable" => stable(dim()?, get("kappa", Some(0.0))?, get("stable_alpha", Some(1.5))?),
        "linear_stable" => linear_stable(dim()?, get("sigma", Some(1.0))?, get("stable_alpha", Some(1.5))?),
        "ou" => ou(dim()?, get("theta", Some(1.0))?, get("ellipticity_alpha", Some(1.0))?),
        _ => unreachable!(),
    }
}

/// Pin the measure argument: evaluates the model's functionals on `mu` once
/// and returns a measure-independent model with those values baked in.  The
/// decoupled flow of the fixed-point iteration runs on frozen models.
pub fn freeze(model: &ModelSpec, mu: &EmpiricalMeasure) -> Result<ModelSpec> {
    let stats = measure_stats(model, mu)?;
    let inner = Arc::clone(&model.drift);
    let captured = stats.clone();
    let drift: Arc<CoeffFn> = Arc::new(move |x, _stats, out| inner(x, &captured, out));
    let diffusion = match &model.diffusion {
        DiffusionSpec::EllipticSplit { ellipticity_alpha, sigma_hat } => {
            let inner = Arc::clone(sigma_hat);
            let captured = stats.clone();
            DiffusionSpec::EllipticSplit {
                ellipticity_alpha: *ellipticity_alpha,
                sigma_hat: Arc::new(move |x, _stats, out| inner(x, &captured, out)),
            }
        }
        DiffusionSpec::ScalarMeasure { sigma } => {
            let inner = Arc::clone(sigma);
            let captured = stats;
            DiffusionSpec::ScalarMeasure { sigma: Arc::new(move |_stats| inner(&captured)) }
        }
    };
    let mut frozen = model.clone();
    frozen.name = format!("{}_frozen", model.name);
    frozen.functionals = vec![];
    frozen.drift = drift;
    frozen.diffusion = diffusion;
    Ok(frozen)
}

// ───────────────────────── structural operations ─────────────────────────

/// Symmetric PSD square root of (σσ* − αI): the σ̂ completing the elliptic
/// split.  Errors if the smallest eigenvalue of the difference is below
/// −1e−10, and verifies the reconstruction αI + σ̂σ̂* to 1e−10.
pub fn elliptic_decompose(sigma_product: &DMatrix<f64>, alpha: f64) -> Result<DMatrix<f64>> {
    if sigma_product.nrows() != sigma_product.ncols() {
        return Err(CoreError::Shape("sigma product must be square".into()));
    }
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(CoreError::Parameter(format!("alpha must be > 0, got {alpha}")));
    }
    let d = sigma_product.nrows();
    let diff = sigma_product - DMatrix::identity(d, d) * alpha;
    let sym = (&diff + diff.transpose()) * 0.5;
    let eig = nalgebra::SymmetricEigen::new(sym);
    if let Some(min) = eig.eigenvalues.iter().cloned().reduce(f64::min) {
        if min < -1e-10 {
            return Err(CoreError::Ellipticity(format!(
                "sigma product minus alpha*I has eigenvalue {min} < 0; split impossible"
            )));
        }
    }
    let sqrt_vals = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let root = &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals) * eig.eigenvectors.transpose();
    let recon = DMatrix::identity(d, d) * alpha + &root * root.transpose();
    let err = (&recon - sigma_product).amax();
    if err > 1e-10 {
        return Err(CoreError::Precision(format!(
            "elliptic split reconstruction error {err} exceeds 1e-10"
        )));
    }
    Ok(root)
}

/// Rescale a kinetic model by σ(μ) for a fixed cloud μ: returns the
/// unit-diffusion model with force b̄(x) = σ(μ)^{-1}·b(σ(μ)x, μ) and the
/// measure argument frozen.  Lipschitz constant carries over; the
/// dissipativity radius grows to √delta_bound·R.
pub fn kinetic_rescale(model: &ModelSpec, mu: &EmpiricalMeasure) -> Result<ModelSpec> {
    if model.kind != ModelKind::Kinetic {
        return Err(CoreError::UnsupportedModel(format!(
            "kinetic_rescale needs a kinetic model, got '{}'",
            model.name
        )));
    }
    let stats = measure_stats(model, mu)?;
    let s = match &model.diffusion {
        DiffusionSpec::ScalarMeasure { sigma } => sigma(&stats),
        DiffusionSpec::EllipticSplit { .. } => {
            return Err(CoreError::UnsupportedModel(
                "kinetic models carry scalar diffusion".into(),
            ))
        }
    };
    if s == 0.0 || !s.is_finite() {
        return Err(CoreError::Degenerate(format!(
            "sigma(mu) = {s}; rescaling needs a nonzero scalar diffusion"
        )));
    }
    let inner = Arc::clone(&model.drift);
    let dim = model.dim;
    let frozen_stats = stats;
    let drift: Arc<CoeffFn> = Arc::new(move |x, _stats, out| {
        let mut scaled = vec![0.0; 2 * dim];
        for (sc, &xi) in scaled.iter_mut().zip(x) {
            *sc = s * xi;
        }
        inner(&scaled, &frozen_stats, out);
        for o in out.iter_mut() {
            *o /= s;
        }
    });
    let sigma: Arc<ScalarFn> = Arc::new(|_stats| 1.0);
    let mut assumptions = model.assumptions;
    assumptions.r = model.assumptions.delta_bound.sqrt() * model.assumptions.r;
    ModelSpec::kinetic_custom(
        &format!("{}_rescaled", model.name),
        dim,
        model.noise,
        model.gamma.expect("kinetic models carry gamma"),
        vec![],
        drift,
        sigma,
        assumptions,
        model.params.clone(),
    )
}

/// Solve x̄ − (1/m)g(x̄) = x by damped fixed-point iteration (g one-sided
/// nonexpansive makes the map strongly monotone).  The residual target
/// scales with 1/m because the caller multiplies x̄ − x back by m.
fn resolvent_solve(
    g: &dyn Fn(&[f64], &mut [f64]),
    m: f64,
    x: &[f64],
    out: &mut [f64],
) -> Result<()> {
    let tol = (1e-10 / m).max(1e-15);
    let d = x.len();
    let mut xbar = x.to_vec();
    let mut gval = vec![0.0; d];
    let mut cand = vec![0.0; d];
    let mut gcand = vec![0.0; d];
    let residual = |xb: &[f64], gv: &[f64]| -> f64 {
        xb.iter()
            .zip(gv)
            .zip(x)
            .map(|((&xbi, &gi), &xi)| {
                let r = xbi - gi / m - xi;
                r * r
            })
            .sum::<f64>()
            .sqrt()
    };
    g(&xbar, &mut gval);
    let mut res = residual(&xbar, &gval);
    let mut theta = 1.0;
    for _ in 0..10_000 {
        if res <= tol {
            out.copy_from_slice(&xbar);
            return Ok(());
        }
        for i in 0..d {
            let r_i = xbar[i] - gval[i] / m - x[i];
            cand[i] = xbar[i] - theta * r_i;
        }
        g(&cand, &mut gcand);
        let res_new = residual(&cand, &gcand);
        if res_new.is_finite() && res_new < res {
            xbar.copy_from_slice(&cand);
            gval.copy_from_slice(&gcand);
            res = res_new;
            theta = (theta * 1.5).min(1.0);
        } else {
            theta *= 0.5;
            if theta < 1e-14 {
                break;
            }
        }
    }
    Err(CoreError::NonConvergence(format!(
        "resolvent iteration stalled at residual {res} (is the drift one-sided bounded?)"
    )))
}

/// Yosida-regularized model: with g(x, μ) = b(x, μ) − (K/2)x, the new drift
/// is m[(id − g/m)^{-1}(x) − x] + (K/2)x — globally Lipschitz, pointwise
/// convergent to b as m → ∞, and with the same one-sided constants.
pub fn yosida_regularize(model: &ModelSpec, m: u32, k: f64) -> Result<ModelSpec> {
    if m == 0 {
        return Err(CoreError::Parameter("m must be >= 1".into()));
    }
    if model.kind != ModelKind::FirstOrder {
        return Err(CoreError::UnsupportedModel(
            "yosida_regularize is defined for first-order models".into(),
        ));
    }
    if !k.is_finite() {
        return Err(CoreError::Parameter(format!("one-sided constant must be finite, got {k}")));
    }
    let inner = Arc::clone(&model.drift);
    let mf = m as f64;
    let drift: Arc<CoeffFn> = Arc::new(move |x, stats, out| {
        let d = x.len();
        let g = |xb: &[f64], gv: &mut [f64]| {
            inner(xb, stats, gv);
            for (gvi, &xbi) in gv.iter_mut().zip(xb) {
                *gvi -= 0.5 * k * xbi;
            }
        };
        let mut xbar = vec![0.0; d];
        match resolvent_solve(&g, mf, x, &mut xbar) {
            Ok(()) => {
                for i in 0..d {
                    out[i] = mf * (xbar[i] - x[i]) + 0.5 * k * x[i];
                }
            }
            Err(_) => out.fill(f64::NAN), // surfaces as an Inconsistency in eval
        }
    });
    let mut regular = model.clone();
    regular.name = format!("{}_yosida{m}", model.name);
    regular.drift = drift;
    Ok(regular)
}

// ───────────────────────────────── tests ─────────────────────────────────

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::w1_exact;
    use crate::noise::RngStream;
    use crate::rates::{phi_eval, PhiSpec};

    fn cloud(stream: &mut RngStream, dim: usize, n: usize, center: f64, spread: f64) -> EmpiricalMeasure {
        let mut data = Vec::with_capacity(n * dim);
        for _ in 0..n * dim {
            data.push(center + spread * stream.standard_normal());
        }
        EmpiricalMeasure::new(dim, data).unwrap()
    }

    #[test]
    fn example33_coefficients_at_origin_dirac() {
        let eps = 0.7;
        let model = example33(eps).unwrap();
        let mu = EmpiricalMeasure::dirac(&[0.0]).unwrap();
        let (drift, diff) = eval_coefficients(&model, &[0.0], &mu).unwrap();
        assert!((drift[0] - eps).abs() < 1e-15);
        match diff {
            DiffusionValue::Scalar(s) => assert!((s - eps).abs() < 1e-15),
            _ => panic!("expected scalar diffusion"),
        }
    }

    #[test]
    fn linear_drift_value() {
        let model = linear_stable(1, 1.0, 1.5).unwrap();
        let mu = EmpiricalMeasure::dirac(&[0.0]).unwrap();
        let (drift, _) = eval_coefficients(&model, &[3.0], &mu).unwrap();
        assert_eq!(drift[0], -3.0);
    }

    #[test]
    fn zero_interaction_reduces_to_confinement() {
        let spec = PhiSpec::new(1.0, 1.0, 1.0).unwrap();
        let with_kappa = piecewise_dissipative(2, spec, 1.0, 0.0).unwrap();
        let mut stream = RngStream::new(7, 0);
        let mu = cloud(&mut stream, 2, 16, 0.8, 1.0);
        // interaction coefficient is √(0.1·κ·l2) = 0 at κ = 0, so the drift
        // must be invariant under changing the cloud
        let nu = cloud(&mut stream, 2, 16, -2.0, 0.5);
        for x in [[0.0, 0.0], [1.0, -0.5], [3.0, 2.0]] {
            let (d1, _) = eval_coefficients(&with_kappa, &x, &mu).unwrap();
            let (d2, _) = eval_coefficients(&with_kappa, &x, &nu).unwrap();
            assert_eq!(d1, d2);
        }
    }

    #[test]
    fn eval_rejects_bad_shapes() {
        let model = example33(0.5).unwrap();
        let mu = EmpiricalMeasure::dirac(&[0.0]).unwrap();
        assert!(matches!(
            eval_coefficients(&model, &[0.0, 1.0], &mu),
            Err(CoreError::Shape(_))
        ));
        let mu2 = EmpiricalMeasure::dirac(&[0.0, 0.0]).unwrap();
        assert!(matches!(
            eval_coefficients(&model, &[0.0], &mu2),
            Err(CoreError::Shape(_))
        ));
    }

    #[test]
    fn measure_functionals_are_w1_lipschitz() {
        let mut stream = RngStream::new(33, 0);
        for func in [MeasureFunctional::MeanTanhProj, MeasureFunctional::MeanAbsPlusOne] {
            for trial in 0..60 {
                let d = 1 + trial % 3;
                let n = 2 + (trial % 5);
                let mu = cloud(&mut stream, d, n, 0.0, 1.5);
                let nu = cloud(&mut stream, d, n, 0.5, 1.5);
                let w1 = w1_exact(&mu, &nu).unwrap();
                let gap = (func.eval(&mu) - func.eval(&nu)).abs();
                assert!(
                    gap <= w1 + 1e-12,
                    "{func:?}: |ΔF| = {gap} > W1 = {w1} (d={d}, n={n})"
                );
            }
        }
    }

    /// The central drift/diffusion inequality of the first-order Brownian
    /// family, on random states and clouds.
    #[test]
    fn piecewise_dissipative_satisfies_radial_inequality() {
        let mut stream = RngStream::new(99, 0);
        for (l1, l2, r0, alpha, kappa) in [
            (1.0, 1.0, 1.0, 1.0, 0.0),
            (1.0, 1.0, 1.0, 1.0, 0.3),
            (0.5, 2.0, 1.5, 0.8, 0.05),
            (2.0, 0.7, 0.6, 1.2, 1.0),
        ] {
            let spec = PhiSpec::new(l1, l2, r0).unwrap();
            for trial in 0..150 {
                let d = 1 + trial % 3;
                let model = piecewise_dissipative(d, spec, alpha, kappa).unwrap();
                let n = 2 + trial % 6;
                let mu1 = cloud(&mut stream, d, n, 0.0, 2.0);
                let mu2 = cloud(&mut stream, d, n, 1.0, 2.0);
                let scale = 0.2 + 2.5 * stream.uniform_open01() * r0;
                let x: Vec<f64> = (0..d).map(|_| scale * stream.standard_normal()).collect();
                let y: Vec<f64> = (0..d).map(|_| scale * stream.standard_normal()).collect();
                let r: f64 = x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                if r < 1e-12 {
                    continue;
                }
                let (bx, dx) = eval_coefficients(&model, &x, &mu1).unwrap();
                let (by, dy) = eval_coefficients(&model, &y, &mu2).unwrap();
                let inner: f64 = bx
                    .iter()
                    .zip(&by)
                    .zip(x.iter().zip(&y))
                    .map(|((bxi, byi), (xi, yi))| (bxi - byi) * (xi - yi))
                    .sum();
                let hs2 = match (&dx, &dy) {
                    (
                        DiffusionValue::EllipticSplit { sigma_hat: sx, .. },
                        DiffusionValue::EllipticSplit { sigma_hat: sy, .. },
                    ) => sx.iter().zip(sy).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(),
                    _ => panic!("expected elliptic split"),
                };
                let w1 = w1_exact(&mu1, &mu2).unwrap();
                let lhs = inner + 0.5 * hs2;
                let rhs = phi_eval(&spec, r).unwrap() * r + kappa * w1 * w1;
                assert!(
                    lhs <= rhs + 1e-9,
                    "violated: lhs = {lhs}, rhs = {rhs} (d={d}, r={r}, kappa={kappa})"
                );
            }
        }
    }

    #[test]
    fn kinetic_family_constants_hold() {
        let mut stream = RngStream::new(123, 0);
        let (dim, kappa, k1, r, gamma, delta) = (2, 0.4, 1.0, 1.0, 8.0, 4.0);
        let model = kinetic(dim, kappa, k1, r, gamma, delta).unwrap();
        let lb = model.assumptions.l_b;
        assert_eq!(lb, 4.5 * k1);
        for trial in 0..200 {
            let n = 2 + trial % 5;
            let mu1 = cloud(&mut stream, 2 * dim, n, 0.0, 1.5);
            let mu2 = cloud(&mut stream, 2 * dim, n, 0.7, 1.5);
            let stats1 = measure_stats(&model, &mu1).unwrap();
            let stats2 = measure_stats(&model, &mu2).unwrap();
            let w1 = w1_exact(&mu1, &mu2).unwrap();
            // force-term Lipschitz bound in state and measure
            let x: Vec<f64> = (0..2 * dim).map(|_| 2.0 * stream.standard_normal()).collect();
            let y: Vec<f64> = (0..2 * dim).map(|_| 2.0 * stream.standard_normal()).collect();
            let mut bx = vec![0.0; dim];
            let mut by = vec![0.0; dim];
            model.drift_force(&x, &stats1, &mut bx);
            model.drift_force(&y, &stats2, &mut by);
            let db: f64 = bx.iter().zip(&by).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let dpos: f64 =
                x[..dim].iter().zip(&y[..dim]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            assert!(
                db <= lb * dpos + kappa.sqrt() * w1 + 1e-9,
                "Lipschitz violated: {db} vs {} (trial {trial})",
                lb * dpos + kappa.sqrt() * w1
            );
            // scalar diffusion Lipschitz and bounds: d·|Δσ|² ≤ κ·W1²
            let (s1, s2) = match (&model.diffusion, &model.diffusion) {
                (DiffusionSpec::ScalarMeasure { sigma }, _) => (sigma(&stats1), sigma(&stats2)),
                _ => unreachable!(),
            };
            assert!((dim as f64) * (s1 - s2).powi(2) <= kappa * w1 * w1 + 1e-9);
            for s in [s1, s2] {
                assert!(s * s >= 1.0 / delta - 1e-12 && s * s <= delta + 1e-12);
            }
        }
        // dissipativity beyond the radius, frozen measure
        let mu = cloud(&mut stream, 2 * dim, 8, 0.0, 1.0);
        let stats = measure_stats(&model, &mu).unwrap();
        for trial in 0..200 {
            let rad = r * (1.0 + 3.0 * stream.uniform_open01());
            let mut dir: Vec<f64> = (0..dim).map(|_| stream.standard_normal()).collect();
            let norm: f64 = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            dir.iter_mut().for_each(|v| *v *= rad / norm);
            let base: Vec<f64> = (0..2 * dim).map(|_| 2.0 * stream.standard_normal()).collect();
            let mut shifted = base.clone();
            for i in 0..dim {
                shifted[i] += dir[i];
            }
            let mut b1 = vec![0.0; dim];
            let mut b2 = vec![0.0; dim];
            model.drift_force(&base, &stats, &mut b1);
            model.drift_force(&shifted, &stats, &mut b2);
            let inner: f64 = (0..dim).map(|i| (b2[i] - b1[i]) * dir[i]).sum();
            assert!(
                inner <= -k1 * rad * rad + 1e-9,
                "dissipativity violated at radius {rad}: {inner} (trial {trial})"
            );
        }
        // friction condition satisfied by the defaults
        assert!(crate::rates::kinetic_condition_check(
            k1,
            lb,
            gamma,
            crate::rates::Regime::BrownianKinetic
        )
        .unwrap());
    }

    #[test]
    fn stable_family_two_sided_inequality() {
        let mut stream = RngStream::new(321, 0);
        let (dim, kappa) = (2, 0.5);
        let model = stable(dim, kappa, 1.5).unwrap();
        let a = &model.assumptions;
        assert_eq!((a.k1, a.k2, a.r), (2.0, 2.0, 1.0));
        for trial in 0..400 {
            let n = 2 + trial % 5;
            let mu1 = cloud(&mut stream, dim, n, 0.0, 1.2);
            let mu2 = cloud(&mut stream, dim, n, 0.6, 1.2);
            let w1 = w1_exact(&mu1, &mu2).unwrap();
            let scale = if trial % 2 == 0 { 0.4 } else { 2.5 };
            let x: Vec<f64> = (0..dim).map(|_| scale * stream.standard_normal()).collect();
            let y: Vec<f64> = (0..dim).map(|_| scale * stream.standard_normal()).collect();
            let r2: f64 = x.iter().zip(&y).map(|(p, q)| (p - q) * (p - q)).sum();
            let (bx, _) = eval_coefficients(&model, &x, &mu1).unwrap();
            let (by, _) = eval_coefficients(&model, &y, &mu2).unwrap();
            let inner: f64 = bx
                .iter()
                .zip(&by)
                .zip(x.iter().zip(&y))
                .map(|((bxi, byi), (xi, yi))| (bxi - byi) * (xi - yi))
                .sum();
            let rhs = if r2 <= a.r { a.k1 * r2 } else { -a.k2 * r2 } + kappa * w1 * w1;
            assert!(
                2.0 * inner <= rhs + 1e-9,
                "two-sided bound violated: {} vs {rhs} (r2 = {r2})",
                2.0 * inner
            );
            // HS Lipschitz of σ(μ)·I
            let s1 = match eval_coefficients(&model, &x, &mu1).unwrap().1 {
                DiffusionValue::Scalar(s) => s,
                _ => unreachable!(),
            };
            let s2 = match eval_coefficients(&model, &x, &mu2).unwrap().1 {
                DiffusionValue::Scalar(s) => s,
                _ => unreachable!(),
            };
            assert!((dim as f64) * (s1 - s2).powi(2) <= kappa * w1 * w1 + 1e-9);
        }
    }

    #[test]
    fn elliptic_decompose_cases() {
        // pure isotropic: root is zero
        let a = DMatrix::identity(3, 3) * 1.7;
        let root = elliptic_decompose(&a, 1.7).unwrap();
        assert!(root.amax() < 1e-12);
        // diagonal case
        let b = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 1.0]));
        let root = elliptic_decompose(&b, 1.0).unwrap();
        assert!((root[(0, 0)] - 1.0).abs() < 1e-12);
        assert!(root[(1, 1)].abs() < 1e-12);
        // random SPD reconstruction
        let mut stream = RngStream::new(5, 0);
        for _ in 0..20 {
            let d = 2 + (stream.next_u64() % 3) as usize;
            let m = DMatrix::from_fn(d, d, |_, _| stream.standard_normal());
            let alpha = 0.3;
            let spd = &m * m.transpose() + DMatrix::identity(d, d) * (alpha + 0.1);
            let root = elliptic_decompose(&spd, alpha).unwrap();
            let recon = DMatrix::identity(d, d) * alpha + &root * root.transpose();
            assert!((recon - spd).amax() < 1e-10);
        }
        // ellipticity violation
        let c = DMatrix::identity(2, 2) * 0.5;
        assert!(matches!(
            elliptic_decompose(&c, 1.0),
            Err(CoreError::Ellipticity(_))
        ));
    }

    #[test]
    fn kinetic_rescale_properties() {
        let mut stream = RngStream::new(42, 0);
        let model = kinetic(1, 0.4, 1.0, 1.0, 8.0, 4.0).unwrap();
        let mu = cloud(&mut stream, 2, 32, 0.5, 1.0);
        let stats = measure_stats(&model, &mu).unwrap();
        let s = match &model.diffusion {
            DiffusionSpec::ScalarMeasure { sigma } => sigma(&stats),
            _ => unreachable!(),
        };
        let rescaled = kinetic_rescale(&model, &mu).unwrap();
        // force transforms as b̄(x) = s^{-1} b(s x)
        for x in [[0.3, -0.2], [2.0, 1.0], [-1.5, 0.7]] {
            let mut expect = vec![0.0];
            let scaled: Vec<f64> = x.iter().map(|v| v * s).collect();
            model.drift_force(&scaled, &stats, &mut expect);
            expect[0] /= s;
            let mut got = vec![0.0];
            rescaled.drift_force(&x, &[], &mut got);
            assert!((got[0] - expect[0]).abs() < 1e-12);
        }
        // unit diffusion, scaled radius
        match &rescaled.diffusion {
            DiffusionSpec::ScalarMeasure { sigma } => assert_eq!(sigma(&[]), 1.0),
            _ => unreachable!(),
        }
        assert_eq!(rescaled.assumptions.r, 2.0 * model.assumptions.r);
        // inherited dissipativity at the scaled radius
        for trial in 0..100 {
            let rad = rescaled.assumptions.r * (1.0 + 2.0 * stream.uniform_open01());
            let base = [2.0 * stream.standard_normal(), 0.0];
            let shifted = [base[0] + rad, 0.0];
            let mut b1 = vec![0.0];
            let mut b2 = vec![0.0];
            rescaled.drift_force(&base, &[], &mut b1);
            rescaled.drift_force(&shifted, &[], &mut b2);
            let inner = (b2[0] - b1[0]) * rad;
            assert!(
                inner <= -model.assumptions.k1 * rad * rad + 1e-9,
                "trial {trial}: {inner}"
            );
        }
        // identity rescale when σ(μ) = 1: force values match the original
        let linear = linear_stable(1, 1.0, 1.5).unwrap();
        assert!(kinetic_rescale(&linear, &EmpiricalMeasure::dirac(&[0.0]).unwrap()).is_err());
    }

    #[test]
    fn yosida_linear_closed_form() {
        let lambda = 1.0;
        // drift −λx has one-sided constant 0 after removing (K/2)x with K = 0,
        // so g = b and the resolvent is linear
        let model = {
            let drift: Arc<CoeffFn> = Arc::new(move |x, _s, out| {
                for (o, &xi) in out.iter_mut().zip(x) {
                    *o = -lambda * xi;
                }
            });
            let sigma: Arc<ScalarFn> = Arc::new(|_| 1.0);
            ModelSpec::first_order_custom(
                "linear_test",
                1,
                NoiseKind::Brownian,
                vec![],
                drift,
                DiffusionSpec::ScalarMeasure { sigma },
                AssumptionParams::zeroed(),
                serde_json::json!({}),
            )
            .unwrap()
        };
        let mu = EmpiricalMeasure::dirac(&[0.0]).unwrap();
        for m in [1u32, 10, 100] {
            let reg = yosida_regularize(&model, m, 0.0).unwrap();
            for x in [-2.0, -0.5, 0.3, 1.7] {
                let (drift, _) = eval_coefficients(&reg, &[x], &mu).unwrap();
                let expect = -lambda * x / (1.0 + lambda / m as f64);
                assert!(
                    (drift[0] - expect).abs() < 1e-10,
                    "m = {m}, x = {x}: {} vs {expect}",
                    drift[0]
                );
            }
        }
    }

    fn cubic_model() -> ModelSpec {
        let drift: Arc<CoeffFn> = Arc::new(|x, _s, out| {
            for (o, &xi) in out.iter_mut().zip(x) {
                *o = -xi * xi * xi;
            }
        });
        let sigma: Arc<ScalarFn> = Arc::new(|_| 1.0);
        ModelSpec::first_order_custom(
            "cubic_test",
            1,
            NoiseKind::Brownian,
            vec![],
            drift,
            DiffusionSpec::ScalarMeasure { sigma },
            AssumptionParams::zeroed(),
            serde_json::json!({}),
        )
        .unwrap()
    }

    #[test]
    fn yosida_cubic_bounds_and_convergence() {
        let model = cubic_model();
        let mu = EmpiricalMeasure::dirac(&[0.0]).unwrap();
        // |regularized| ≤ |original| on a grid (K = 0 so the drift is its own
        // one-sided part)
        for m in [1u32, 10, 100] {
            let reg = yosida_regularize(&model, m, 0.0).unwrap();
            for i in 0..41 {
                let x = -2.0 + 0.1 * i as f64;
                let (dm, _) = eval_coefficients(&reg, &[x], &mu).unwrap();
                let (db, _) = eval_coefficients(&model, &[x], &mu).unwrap();
                assert!(
                    dm[0].abs() <= db[0].abs() + 1e-9,
                    "m = {m}, x = {x}: |{}| > |{}|",
                    dm[0],
                    db[0]
                );
            }
        }
        // monotone pointwise convergence at x = 0.5
        let x = 0.5;
        let (exact, _) = eval_coefficients(&model, &[x], &mu).unwrap();
        let mut last_err = f64::INFINITY;
        for m in [1u32, 10, 100, 1000] {
            let reg = yosida_regularize(&model, m, 0.0).unwrap();
            let (dm, _) = eval_coefficients(&reg, &[x], &mu).unwrap();
            let err = (dm[0] - exact[0]).abs();
            assert!(err <= last_err + 1e-12, "m = {m}: error {err} not monotone");
            last_err = err;
        }
        assert!(last_err < 1e-3);
    }

    #[test]
    fn yosida_one_sided_inequality_on_samples() {
        // 2⟨g^{(m)}(x, μ1) − g^{(m)}(y, μ2), x − y⟩ ≤ κ_1 W1² with
        // κ_1 = 2κ for the first-order Brownian family (strip K = 2·l1).
        let spec = PhiSpec::new(1.0, 1.0, 1.0).unwrap();
        let kappa = 0.3;
        let model = piecewise_dissipative(1, spec, 1.0, kappa).unwrap();
        let k = model.assumptions.one_sided_k.unwrap();
        let mut stream = RngStream::new(2024, 0);
        let m = 10u32;
        let reg = yosida_regularize(&model, m, k).unwrap();
        let mu_pairs: Vec<(EmpiricalMeasure, EmpiricalMeasure)> = (0..10)
            .map(|_| (cloud(&mut stream, 1, 6, 0.0, 1.0), cloud(&mut stream, 1, 6, 0.8, 1.0)))
            .collect();
        for trial in 0..1000 {
            let (mu1, mu2) = &mu_pairs[trial % mu_pairs.len()];
            let w1 = w1_exact(mu1, mu2).unwrap();
            let x = 3.0 * stream.standard_normal();
            let y = 3.0 * stream.standard_normal();
            let (bx, _) = eval_coefficients(&reg, &[x], mu1).unwrap();
            let (by, _) = eval_coefficients(&reg, &[y], mu2).unwrap();
            let gx = bx[0] - 0.5 * k * x;
            let gy = by[0] - 0.5 * k * y;
            let lhs = 2.0 * (gx - gy) * (x - y);
            assert!(
                lhs <= 2.0 * kappa * w1 * w1 + 1e-9,
                "trial {trial}: {lhs} vs {}",
                2.0 * kappa * w1 * w1
            );
        }
    }

    #[test]
    fn catalog_by_name() {
        let mut params = serde_json::Map::new();
        params.insert("epsilon".into(), serde_json::json!(0.5));
        let model = by_name("example33", &params).unwrap();
        assert_eq!(model.name, "example33");
        assert!(by_name("example33", &serde_json::Map::new()).is_err());
        let mut bad = serde_json::Map::new();
        bad.insert("epsilon".into(), serde_json::json!(0.5));
        bad.insert("zeta".into(), serde_json::json!(1.0));
        assert!(matches!(by_name("example33", &bad), Err(CoreError::Configuration(_))));
        assert!(by_name("nope", &serde_json::Map::new()).is_err());
        let defaults = by_name("piecewise_dissipative", &serde_json::Map::new()).unwrap();
        assert_eq!(defaults.dim, 1);
        assert!(defaults.phi_spec.is_some());
    }
}
