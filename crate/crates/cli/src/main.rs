//! `mkv` — batch driver for the mean-field SDE toolkit.
//!
//! One experiment per invocation.  Every run writes its artifacts (report
//! JSON, plot-ready CSV) plus a `manifest.json` that embeds the fully
//! resolved configuration; re-running with `--config manifest.json`
//! reproduces the CSV files byte for byte.
//!
//! Configuration is a flat dotted-key text file (`sim.h = 0.01`) or the
//! equivalent JSON object.  Precedence for the seed: `--seed` flag, then the
//! `MKV_SEED` environment variable, then the config file.
//!
//! Exit codes: 0 = completed (verdict passed or simple completion),
//! 2 = a verdict failed or the run failed its numerical criterion,
//! 3 = configuration, usage, or I/O error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::{Map, Value};

use mkv_core::analysis::{self, Example33Mode, Verdict};
use mkv_core::error::{CoreError, Result};
use mkv_core::measures::EmpiricalMeasure;
use mkv_core::models::{self, DiffusionSpec, ModelSpec};
use mkv_core::noise::{RngStream, StableParams};
use mkv_core::rates::{
    kinetic_condition_check, rate_profile, stable_moments, threshold_scan, PhiSpec, Psi,
    RateProfile, Regime, StableRateInfo, ThresholdParams,
};
use mkv_core::simulate::{gamma_fixed_point, run_mckean_vlasov, SimConfig};
use mkv_core::verify;

const DEFAULT_OUT_DIR: &str = "out";
const SUBORDINATOR_CONVENTION: &str =
    "E exp(-u S_t) = exp(-t u^(alpha/2)); one step of size h draws h^(2/alpha) * S_1";

#[derive(Parser)]
#[command(
    name = "mkv",
    version,
    about = "Mean-field SDE simulation, coupling contraction checks, and rate certificates",
    long_about = "Batch driver: each subcommand runs one experiment and writes a report JSON,\n\
        plot-ready CSV files, and a manifest.json into the output directory.\n\n\
        Config files use flat dotted keys (`sim.h = 0.01`, `model.name = ou`,\n\
        `phase.epsilon = 1.2`, lines starting with `#` are comments) or an\n\
        equivalent JSON object.  A manifest.json from an earlier run is also\n\
        accepted; its embedded resolved config reproduces the CSV output byte\n\
        for byte.  Seed precedence: --seed, then MKV_SEED, then the config."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment configuration file (dotted-key text, JSON, or a manifest.json)
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Random seed (overrides MKV_SEED and the config file)
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Output directory (default "out", or the config's output_dir)
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Restrict `verify` to the criteria of one module
    /// (measures, rates, simulate, analysis, noise, models)
    #[arg(long, global = true, value_name = "MODULE")]
    only: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Contraction-rate constants, the concave distance function, and
    /// interaction-strength thresholds for a dissipativity profile
    Rates,
    /// Interacting-particle run of a catalog model; series and cloud CSVs
    Simulate,
    /// Coupled two-start run with a contraction verdict (reflection route
    /// when the model supports it, synchronous otherwise)
    Couple,
    /// Iterate the frozen-measure map to its fixed point
    FixedPoint,
    /// Phase classification of the scalar model with measure-dependent noise
    Phase,
    /// Run the built-in acceptance criteria and print the table
    Verify,
}

impl Command {
    /// Experiment name: also the config's section key and `experiment` value.
    fn name(&self) -> &'static str {
        match self {
            Command::Rates => "rates",
            Command::Simulate => "simulate",
            Command::Couple => "couple",
            Command::FixedPoint => "fixed_point",
            Command::Phase => "phase",
            Command::Verify => "verify",
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("mkv: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn exit_code_for(e: &CoreError) -> u8 {
    match e {
        CoreError::Configuration(_)
        | CoreError::Parameter(_)
        | CoreError::UnsupportedModel(_)
        | CoreError::Io(_)
        | CoreError::Json(_) => 3,
        _ => 2,
    }
}

// ───────────────────────── config file parsing ─────────────────────────

/// Parse one scalar/array token: anything valid JSON is taken as JSON, a
/// bare comma list becomes an array, anything else is a string.
fn parse_token(token: &str) -> Value {
    if let Ok(v) = serde_json::from_str::<Value>(token) {
        return v;
    }
    if token.contains(',') {
        let items: Vec<Value> = token.split(',').map(|p| parse_token(p.trim())).collect();
        return Value::Array(items);
    }
    Value::String(token.to_string())
}

fn insert_dotted(root: &mut Map<String, Value>, key: &str, value: Value, lineno: usize) -> Result<()> {
    let segments: Vec<&str> = key.split('.').collect();
    if segments.iter().any(|s| s.is_empty()) {
        return Err(CoreError::Configuration(format!("line {lineno}: malformed key '{key}'")));
    }
    let mut map = root;
    for seg in &segments[..segments.len() - 1] {
        let entry = map
            .entry(seg.to_string())
            .or_insert_with(|| Value::Object(Map::new()));
        map = entry.as_object_mut().ok_or_else(|| {
            CoreError::Configuration(format!(
                "line {lineno}: key '{key}' descends into non-section '{seg}'"
            ))
        })?;
    }
    let last = segments[segments.len() - 1];
    if map.contains_key(last) {
        return Err(CoreError::Configuration(format!("line {lineno}: duplicate key '{key}'")));
    }
    map.insert(last.to_string(), value);
    Ok(())
}

fn parse_flat(text: &str) -> Result<Map<String, Value>> {
    let mut root = Map::new();
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CoreError::Configuration(format!("line {lineno}: expected 'key = value', got '{line}'"))
        })?;
        let key = key.trim();
        if key.is_empty()
            || !key
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
        {
            return Err(CoreError::Configuration(format!(
                "line {lineno}: key '{key}' may only contain letters, digits, '_' and '.'"
            )));
        }
        let mut value = value.trim();
        if value.starts_with('=') {
            return Err(CoreError::Configuration(format!(
                "line {lineno}: expected 'key = value', got '{line}'"
            )));
        }
        // inline comments, except inside JSON-style values
        if !(value.starts_with('"') || value.starts_with('[') || value.starts_with('{')) {
            if let Some(pos) = value.find('#') {
                value = value[..pos].trim_end();
            }
        }
        if value.is_empty() {
            return Err(CoreError::Configuration(format!("line {lineno}: key '{key}' has no value")));
        }
        insert_dotted(&mut root, key, parse_token(value), lineno)?;
    }
    Ok(root)
}

fn load_config(path: &Path) -> Result<Map<String, Value>> {
    let text = fs::read_to_string(path)
        .map_err(|e| CoreError::Configuration(format!("{}: {e}", path.display())))?;
    let mut root = if text.trim_start().starts_with('{') {
        let value: Value = serde_json::from_str(&text).map_err(|e| {
            CoreError::Configuration(format!("{}: {e}", path.display()))
        })?;
        value.as_object().cloned().ok_or_else(|| {
            CoreError::Configuration(format!("{}: top level must be a JSON object", path.display()))
        })?
    } else {
        parse_flat(&text).map_err(|e| match e {
            CoreError::Configuration(msg) => {
                CoreError::Configuration(format!("{}: {msg}", path.display()))
            }
            other => other,
        })?
    };
    // a manifest from an earlier run: use its embedded resolved config
    if let Some(inner) = root.get("resolved_config") {
        root = inner.as_object().cloned().ok_or_else(|| {
            CoreError::Configuration(format!(
                "{}: 'resolved_config' must be an object",
                path.display()
            ))
        })?;
    }
    Ok(root)
}

// ───────────────────────── resolved experiment ─────────────────────────

struct Prepared {
    experiment: &'static str,
    seed: u64,
    out_dir: PathBuf,
    sim: SimConfig,
    model_section: Map<String, Value>,
    init_section: Map<String, Value>,
    options: Map<String, Value>,
    resolved: Value,
}

const TOP_LEVEL_KEYS: &[&str] = &[
    "experiment", "seed", "output_dir", "model", "init", "sim",
    "rates", "simulate", "couple", "fixed_point", "phase", "verify",
];
const SIM_KEYS: &[&str] = &[
    "h", "T", "N", "seed", "couple_threshold", "burn_in", "window",
    "tol_stationary", "tol_window", "record_dt", "snapshot_times",
    "subordinator_discount",
];

fn section(root: &Map<String, Value>, key: &str) -> Result<Map<String, Value>> {
    match root.get(key) {
        None => Ok(Map::new()),
        Some(Value::Object(m)) => Ok(m.clone()),
        Some(other) => Err(CoreError::Configuration(format!(
            "'{key}' must be a section of dotted keys, got {other}"
        ))),
    }
}

fn prepare(cli: &Cli) -> Result<Prepared> {
    let experiment = cli.command.name();
    let root = match &cli.config {
        Some(path) => load_config(path)?,
        None => Map::new(),
    };
    for key in root.keys() {
        if !TOP_LEVEL_KEYS.contains(&key.as_str()) {
            return Err(CoreError::Configuration(format!(
                "unknown top-level key '{key}' (known: {})",
                TOP_LEVEL_KEYS.join(", ")
            )));
        }
    }
    if let Some(declared) = root.get("experiment") {
        let declared = declared.as_str().ok_or_else(|| {
            CoreError::Configuration("'experiment' must be a string".into())
        })?;
        if declared != experiment {
            return Err(CoreError::Configuration(format!(
                "config is for experiment '{declared}' but the subcommand is '{experiment}'"
            )));
        }
    }

    let mut sim_map = section(&root, "sim")?;
    for key in sim_map.keys() {
        if !SIM_KEYS.contains(&key.as_str()) {
            return Err(CoreError::Configuration(format!(
                "unknown sim key 'sim.{key}' (known: {})",
                SIM_KEYS.join(", ")
            )));
        }
    }

    // seed precedence: flag > environment > config
    let env_seed = match std::env::var("MKV_SEED") {
        Ok(s) => Some(s.parse::<u64>().map_err(|_| {
            CoreError::Configuration(format!("MKV_SEED must be an unsigned integer, got '{s}'"))
        })?),
        Err(_) => None,
    };
    let config_seed = match root.get("seed") {
        Some(v) => Some(v.as_u64().ok_or_else(|| {
            CoreError::Configuration(format!("'seed' must be an unsigned integer, got {v}"))
        })?),
        None => match sim_map.get("seed") {
            Some(v) => Some(v.as_u64().ok_or_else(|| {
                CoreError::Configuration(format!("'sim.seed' must be an unsigned integer, got {v}"))
            })?),
            None => None,
        },
    };
    let seed = cli.seed.or(env_seed).or(config_seed).unwrap_or(0);

    sim_map.entry("h".to_string()).or_insert(Value::from(0.01));
    sim_map.entry("T".to_string()).or_insert(Value::from(10.0));
    sim_map.entry("N".to_string()).or_insert(Value::from(1000));
    sim_map.insert("seed".to_string(), Value::from(seed));
    let sim: SimConfig = serde_json::from_value(Value::Object(sim_map)).map_err(|e| {
        CoreError::Configuration(format!("sim section: {e}"))
    })?;
    sim.validate()?;

    let out_dir = cli
        .out
        .clone()
        .or_else(|| root.get("output_dir").and_then(|v| v.as_str()).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
    fs::create_dir_all(&out_dir)?;

    let model_section = section(&root, "model")?;
    let init_section = section(&root, "init")?;
    let options = section(&root, experiment)?;

    // canonical nested config: feeding this back in reproduces the run
    let mut resolved = Map::new();
    resolved.insert("experiment".to_string(), Value::from(experiment));
    resolved.insert("seed".to_string(), Value::from(seed));
    resolved.insert(
        "output_dir".to_string(),
        Value::from(out_dir.to_string_lossy().to_string()),
    );
    if !model_section.is_empty() {
        resolved.insert("model".to_string(), Value::Object(model_section.clone()));
    }
    if !init_section.is_empty() {
        resolved.insert("init".to_string(), Value::Object(init_section.clone()));
    }
    resolved.insert("sim".to_string(), serde_json::to_value(&sim)?);
    if !options.is_empty() {
        resolved.insert(experiment.to_string(), Value::Object(options.clone()));
    }

    Ok(Prepared {
        experiment,
        seed,
        out_dir,
        sim,
        model_section,
        init_section,
        options,
        resolved: Value::Object(resolved),
    })
}

fn opt_f64(map: &Map<String, Value>, key: &str, default: f64) -> Result<f64> {
    match map.get(key) {
        None => Ok(default),
        Some(v) => v.as_f64().ok_or_else(|| {
            CoreError::Configuration(format!("'{key}' must be a number, got {v}"))
        }),
    }
}

fn opt_str<'a>(map: &'a Map<String, Value>, key: &str, default: &'a str) -> Result<&'a str> {
    match map.get(key) {
        None => Ok(default),
        Some(v) => v.as_str().ok_or_else(|| {
            CoreError::Configuration(format!("'{key}' must be a string, got {v}"))
        }),
    }
}

fn check_keys(map: &Map<String, Value>, section: &str, known: &[&str]) -> Result<()> {
    for key in map.keys() {
        if !known.contains(&key.as_str()) {
            return Err(CoreError::Configuration(format!(
                "unknown key '{section}.{key}' (known: {})",
                known.join(", ")
            )));
        }
    }
    Ok(())
}

fn build_model(section: &Map<String, Value>, default_name: &str) -> Result<ModelSpec> {
    let mut params = section.clone();
    let name = match params.remove("name") {
        Some(Value::String(s)) => s,
        Some(other) => {
            return Err(CoreError::Configuration(format!(
                "'model.name' must be a string, got {other}"
            )))
        }
        None => default_name.to_string(),
    };
    models::by_name(&name, &params)
}

/// Gaussian start: every coordinate `init.mean + init.sd * N(0,1)`.
fn initial_cloud(init: &Map<String, Value>, dim: usize, n: usize, seed: u64) -> Result<EmpiricalMeasure> {
    check_keys(init, "init", &["mean", "sd"])?;
    let mean = opt_f64(init, "mean", 0.0)?;
    let sd = opt_f64(init, "sd", 1.0)?;
    if !(sd.is_finite() && sd >= 0.0) {
        return Err(CoreError::Configuration(format!("'init.sd' must be >= 0, got {sd}")));
    }
    let mut stream = RngStream::new(seed ^ 0x5EED_1A17, 0);
    let mut data = vec![0.0; n * dim];
    stream.fill_standard_normal(&mut data);
    for v in data.iter_mut() {
        *v = mean + sd * *v;
    }
    EmpiricalMeasure::new(dim, data)
}

/// Contraction-rate profile for a model: its own certified radial profile
/// when it carries one, otherwise a neutral default (only the reflection
/// route reads it).
fn profile_for(model: &ModelSpec) -> Result<RateProfile> {
    let alpha = match &model.diffusion {
        DiffusionSpec::EllipticSplit { ellipticity_alpha, .. } => *ellipticity_alpha,
        _ => 1.0,
    };
    let spec = match model.phi_spec {
        Some(spec) => spec,
        None => PhiSpec::new(1.0, 1.0, 1.0)?,
    };
    rate_profile(&spec, alpha)
}

// ───────────────────────── artifact writers ─────────────────────────

struct Artifacts {
    out_dir: PathBuf,
    files: Vec<String>,
}

impl Artifacts {
    fn new(out_dir: &Path) -> Self {
        Artifacts { out_dir: out_dir.to_path_buf(), files: Vec::new() }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn write_csv<I: IntoIterator<Item = String>>(
        &mut self,
        name: &str,
        header: &str,
        rows: I,
    ) -> Result<()> {
        let mut text = String::with_capacity(4096);
        text.push_str(header);
        text.push('\n');
        for row in rows {
            text.push_str(&row);
            text.push('\n');
        }
        fs::write(self.path(name), text)?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn write_cloud(&mut self, name: &str, cloud: &EmpiricalMeasure) -> Result<()> {
        cloud.write_csv(&self.path(name))?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn write_report(&mut self, report: &Value) -> Result<()> {
        let text = serde_json::to_string_pretty(report)?;
        fs::write(self.path("report.json"), text)?;
        self.files.push("report.json".to_string());
        Ok(())
    }

    fn write_manifest(&mut self, prep: &Prepared, model: Option<&ModelSpec>) -> Result<()> {
        self.files.push("manifest.json".to_string());
        self.files.sort();
        self.files.dedup();
        let model_value = match model {
            Some(m) => serde_json::json!({ "name": m.name, "params": m.params }),
            None => Value::Null,
        };
        let manifest = serde_json::json!({
            "tool": "mkv",
            "version": env!("CARGO_PKG_VERSION"),
            "experiment": prep.experiment,
            "seed": prep.seed,
            "model": model_value,
            "subordinator_convention": SUBORDINATOR_CONVENTION,
            "resolved_config": prep.resolved,
            "files": self.files,
        });
        fs::write(self.path("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }
}

fn fmt_series(points: &[(f64, f64)]) -> Vec<String> {
    points.iter().map(|(t, v)| format!("{t},{v}")).collect()
}

// ───────────────────────── experiment runners ─────────────────────────

fn run(cli: &Cli) -> Result<bool> {
    let prep = prepare(cli)?;
    let mut artifacts = Artifacts::new(&prep.out_dir);
    let ok = match cli.command {
        Command::Rates => run_rates(&prep, &mut artifacts)?,
        Command::Simulate => run_simulate(&prep, &mut artifacts)?,
        Command::Couple => run_couple(&prep, &mut artifacts)?,
        Command::FixedPoint => run_fixed_point(&prep, &mut artifacts)?,
        Command::Phase => run_phase(&prep, &mut artifacts)?,
        Command::Verify => run_verify(cli, &prep, &mut artifacts)?,
    };
    println!("artifacts in {}", prep.out_dir.display());
    Ok(ok)
}

fn run_rates(prep: &Prepared, artifacts: &mut Artifacts) -> Result<bool> {
    let o = &prep.options;
    check_keys(o, "rates", &[
        "l1", "l2", "r0", "alpha", "regime", "drift_constant", "stable_alpha", "k1", "gamma",
    ])?;
    let l1 = opt_f64(o, "l1", 1.0)?;
    let l2 = opt_f64(o, "l2", 1.0)?;
    let r0 = opt_f64(o, "r0", 1.0)?;
    let alpha = opt_f64(o, "alpha", 1.0)?;
    let spec = PhiSpec::new(l1, l2, r0)?;
    let profile = rate_profile(&spec, alpha)?;
    let psi = Psi::new(&spec, alpha)?;

    let regime_name = opt_str(o, "regime", "brownian_first_order")?;
    let regime: Regime = serde_json::from_value(Value::from(regime_name)).map_err(|_| {
        CoreError::Configuration(format!(
            "unknown regime '{regime_name}' (brownian_first_order, brownian_kinetic, \
             stable_first_order, stable_kinetic)"
        ))
    })?;
    let drift_constant = opt_f64(o, "drift_constant", l1)?;
    let stable = match regime {
        Regime::StableFirstOrder | Regime::StableKinetic => {
            let stable_alpha = opt_f64(o, "stable_alpha", 1.5)?;
            let params = StableParams::new(stable_alpha)?;
            let moments = stable_moments(&params, prep.seed, 1000)?;
            Some(StableRateInfo { stable_alpha, e_sqrt_s1: moments.e_sqrt_s1 })
        }
        _ => None,
    };
    let thresholds = threshold_scan(&ThresholdParams {
        regime,
        drift_constant,
        c0: profile.c0,
        lambda0: profile.lambda0,
        stable,
    })?;
    let friction = match regime {
        Regime::BrownianKinetic | Regime::StableKinetic => {
            let k1 = opt_f64(o, "k1", 1.0)?;
            let gamma = opt_f64(o, "gamma", 8.0)?;
            Some(kinetic_condition_check(k1, drift_constant, gamma, regime)?)
        }
        _ => None,
    };

    let r_max = (4.0 * r0).max(2.0);
    let rows: Result<Vec<String>> = (0..=400)
        .map(|i| {
            let r = r_max * i as f64 / 400.0;
            Ok(if r == 0.0 {
                format!("{r},{},0,{},{}", psi.phi(r), psi.eval(1e-12)? / 1e-12, 0.0)
            } else {
                format!("{r},{},{},{},{}", psi.phi(r), psi.eval(r)?, psi.deriv(r)?, psi.second(r)?)
            })
        })
        .collect();
    artifacts.write_csv("psi_profile.csv", "r,phi,psi,psi_deriv,psi_second", rows?)?;

    let report = serde_json::json!({
        "inputs": { "l1": l1, "l2": l2, "r0": r0, "alpha": alpha,
                     "regime": regime, "drift_constant": drift_constant },
        "profile": {
            "C1": profile.c1,
            "C2": profile.c2,
            "K": profile.k,
            "c0": profile.c0,
            "lambda0": profile.lambda0,
            "ellipticity_alpha": profile.ellipticity_alpha,
        },
        "thresholds": thresholds,
        "stable": stable,
        "friction_condition_met": friction,
    });
    artifacts.write_report(&report)?;
    artifacts.write_manifest(prep, None)?;
    println!(
        "rates: C1 = {}, C2 = {:.6}, lambda0 = {:.6}; thresholds delta1 = {:.6}, \
         delta2 = {:.6}, delta0 = {:.6}",
        profile.c1, profile.c2, profile.lambda0,
        thresholds.delta1, thresholds.delta2, thresholds.delta0
    );
    Ok(true)
}

fn run_simulate(prep: &Prepared, artifacts: &mut Artifacts) -> Result<bool> {
    check_keys(&prep.options, "simulate", &[])?;
    let model = build_model(&prep.model_section, "ou")?;
    let eta0 = initial_cloud(
        &prep.init_section,
        model.state_dim(),
        prep.sim.n_particles,
        prep.seed,
    )?;
    let run = run_mckean_vlasov(&model, &eta0, &prep.sim)?;

    let mut header = "t,mean_norm".to_string();
    for f in &model.functionals {
        header.push_str(&format!(",{f:?}"));
    }
    let rows = run.series.iter().map(|p| {
        let mut row = format!("{},{}", p.t, p.mean_norm);
        for s in &p.stats {
            row.push_str(&format!(",{s}"));
        }
        row
    });
    artifacts.write_csv("series.csv", &header, rows)?;
    artifacts.write_cloud("terminal.csv", run.terminal())?;
    for (idx, (t, cloud)) in run.snapshots.iter().enumerate() {
        artifacts.write_cloud(&format!("snapshot_{idx:03}_t{t}.csv"), cloud)?;
    }

    let last = run.series.last();
    let report = serde_json::json!({
        "model": { "name": model.name, "params": model.params },
        "n_particles": prep.sim.n_particles,
        "t_final": prep.sim.t_final,
        "divergence": run.divergence,
        "terminal_mean_norm": last.map(|p| p.mean_norm),
        "terminal_stats": last.map(|p| p.stats.clone()),
        "series_points": run.series.len(),
        "snapshots": run.snapshots.iter().map(|(t, _)| *t).collect::<Vec<f64>>(),
    });
    artifacts.write_report(&report)?;
    artifacts.write_manifest(prep, Some(&model))?;
    match &run.divergence {
        Some(d) => println!(
            "simulate: model '{}' diverged at t = {:.4} ({}); last finite cloud written",
            model.name, d.time, d.detail
        ),
        None => println!(
            "simulate: model '{}', {} particles to t = {} ({} series points)",
            model.name,
            prep.sim.n_particles,
            prep.sim.t_final,
            run.series.len()
        ),
    }
    Ok(true)
}

fn run_couple(prep: &Prepared, artifacts: &mut Artifacts) -> Result<bool> {
    check_keys(&prep.options, "couple", &[])?;
    let model = build_model(&prep.model_section, "piecewise_dissipative")?;
    let profile = profile_for(&model)?;
    let report = analysis::contraction_report(&model, &profile, &prep.sim)?;

    artifacts.write_csv(
        "coupling_series.csv",
        "t,mean_dist",
        fmt_series(&report.mean_dist_series),
    )?;
    artifacts.write_report(&serde_json::to_value(&report)?)?;
    artifacts.write_manifest(prep, Some(&model))?;

    let rate = report
        .fit
        .as_ref()
        .map(|f| format!("{:.4}", f.lambda_hat))
        .unwrap_or_else(|| "n/a".to_string());
    println!(
        "couple: model '{}', route {:?}, verdict {}, fitted rate {rate}{}",
        model.name,
        report.route,
        report.verdict,
        report
            .analytic_lambda0
            .map(|l| format!(", certified rate {l:.4}"))
            .unwrap_or_default()
    );
    Ok(report.verdict != Verdict::Fail)
}

fn run_fixed_point(prep: &Prepared, artifacts: &mut Artifacts) -> Result<bool> {
    let o = &prep.options;
    check_keys(o, "fixed_point", &["max_iter"])?;
    let max_iter = match o.get("max_iter") {
        None => 12,
        Some(v) => v
            .as_u64()
            .filter(|&m| m >= 1)
            .ok_or_else(|| {
                CoreError::Configuration(format!(
                    "'fixed_point.max_iter' must be a positive integer, got {v}"
                ))
            })? as usize,
    };
    let model = build_model(&prep.model_section, "ou")?;
    let mu0 = initial_cloud(
        &prep.init_section,
        model.state_dim(),
        prep.sim.n_particles,
        prep.seed,
    )?;
    let result = gamma_fixed_point(&model, &mu0, &prep.sim, max_iter)?;

    artifacts.write_csv(
        "gaps.csv",
        "iteration,gap",
        result
            .gaps
            .iter()
            .enumerate()
            .map(|(i, g)| format!("{},{g}", i + 1)),
    )?;
    artifacts.write_cloud("fixed_point_measure.csv", &result.mu_star)?;
    let report = serde_json::json!({
        "model": { "name": model.name, "params": model.params },
        "converged": result.converged,
        "diverging": result.diverging,
        "iterations": result.iterations,
        "gaps": result.gaps,
        "tol_stationary": prep.sim.tol_stationary,
    });
    artifacts.write_report(&report)?;
    artifacts.write_manifest(prep, Some(&model))?;
    println!(
        "fixed-point: model '{}', {} iterations, converged = {}, diverging = {}, last gap {:.3e}",
        model.name,
        result.iterations,
        result.converged,
        result.diverging,
        result.gaps.last().copied().unwrap_or(f64::NAN)
    );
    Ok(result.converged && !result.diverging)
}

fn run_phase(prep: &Prepared, artifacts: &mut Artifacts) -> Result<bool> {
    let o = &prep.options;
    check_keys(o, "phase", &["epsilon", "mode"])?;
    if let Some(name) = prep.model_section.get("name").and_then(|v| v.as_str()) {
        if name != "example33" {
            return Err(CoreError::Configuration(format!(
                "'phase' runs the catalog model 'example33'; got model.name = '{name}'"
            )));
        }
    }
    let epsilon = match o.get("epsilon") {
        Some(v) => v.as_f64().ok_or_else(|| {
            CoreError::Configuration(format!("'phase.epsilon' must be a number, got {v}"))
        })?,
        None => opt_f64(&prep.model_section, "epsilon", 0.5)?,
    };
    let mode = match opt_str(o, "mode", "simulate")? {
        "simulate" => Example33Mode::Simulate,
        "closed_form" => Example33Mode::ClosedForm,
        other => {
            return Err(CoreError::Configuration(format!(
                "'phase.mode' must be 'simulate' or 'closed_form', got '{other}'"
            )))
        }
    };
    let report = analysis::example33(epsilon, mode, &prep.sim)?;

    if mode == Example33Mode::Simulate {
        artifacts.write_csv("m_hat.csv", "t,m_hat", fmt_series(&report.m_hat_series))?;
        artifacts.write_csv("mean_abs.csv", "t,mean_abs", fmt_series(&report.mean_abs_series))?;
    }
    artifacts.write_report(&serde_json::to_value(&report)?)?;
    artifacts.write_manifest(prep, None)?;

    let regime = if report.boundary_band {
        "within the critical band: classification withheld".to_string()
    } else if report.no_invariant_measure {
        "supercritical: no invariant measure".to_string()
    } else {
        format!(
            "subcritical: stationary mean {:.4}",
            report.stationary_mean.unwrap_or(f64::NAN)
        )
    };
    println!(
        "phase: epsilon = {epsilon} vs critical {:.4} — {regime}; verdict {}",
        report.epsilon_star, report.verdict
    );
    Ok(report.verdict != Verdict::Fail)
}

fn run_verify(cli: &Cli, prep: &Prepared, artifacts: &mut Artifacts) -> Result<bool> {
    let o = &prep.options;
    check_keys(o, "verify", &["only"])?;
    let only_owned = match &cli.only {
        Some(m) => Some(m.clone()),
        None => o.get("only").and_then(|v| v.as_str()).map(String::from),
    };
    let results = verify::run_module(only_owned.as_deref())?;
    let mut all_ok = true;
    for r in &results {
        println!(
            "criterion {:2} [{}] {} ({:.1}s) — {}",
            r.id,
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.seconds,
            r.details
        );
        all_ok &= r.passed;
    }
    let passed = results.iter().filter(|r| r.passed).count();
    println!("{passed}/{} criteria passed", results.len());
    artifacts.write_report(&serde_json::to_value(&results)?)?;
    artifacts.write_manifest(prep, None)?;
    Ok(all_ok)
}
