//! Experiment configuration: JSON schema and validation.
//!
//! ```json
//! {
//!   "system": { "A": [[0, 1], [0, 0]], "B": [[0], [1]], "C": [[1, 0]], "W0": [[1, 0], [0, 1]] },
//!   "modes": [
//!     { "delta": 0.01, "sigma": [[0.5]], "gain": [[-1.5, -3]], "penalty": 1, "cpu_fraction": 0.5 },
//!     { "delta": 0.1, "sigma": { "per_latency": 0.002 }, "gain": [[-1.5, -3]], "penalty": 1, "cpu_fraction": 0.5 }
//!   ],
//!   "cost": { "lambda_x": 1, "lambda_r": 0.05, "T_f": 10, "Q": [[2, 0], [0, 1]], "Q_f": [[2, 0], [0, 1]] },
//!   "policy": { "type": "balanced", "m": 5, "ell": 20, "lookahead": 2, "M0": [[3.53, -1.1], [-1.1, 1.36]] },
//!   "sim": { "h": 0.001, "paths": 100, "seed": 7, "x0": [1, 1], "P0": [[1, 0], [0, 1]] }
//! }
//! ```
//!
//! Matrices are row-major nested arrays. Numbers are parsed with correct
//! rounding, so a decimal written by any shortest-round-trip printer comes
//! back as the same `f64`.
//!
//! Field notes:
//! - `sigma` is a matrix or `{ "per_latency": b }` for `(b / delta) I`.
//! - `penalty > 0` and `0 < cpu_fraction < 1`; `cost.Q_f` defaults to `cost.Q`;
//!   `cost.moment_form` is `"exact"` (default) or `"decoupled"`.
//! - `policy.type` is `static`, `round_robin`, `fixed` or `balanced`.
//!   `static` needs `schedule` (1-based modes, repeated); `fixed` needs `set`
//!   (1-based). `m` (default 1), `ell` (default 20), `max_iters` (default
//!   10000) and `M0` (default identity) drive `build-sets`; `lookahead`
//!   (default 2) drives `balanced`.
//! - `sim` defaults: `h = 1e-3`, `paths = 100`, `seed = 0`, `x0 = 0`,
//!   `P0 = I`, `bins = 20` (a count or explicit increasing edges),
//!   `trajectory_stride = 0`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use perception_sched::belief::{CostConfig, GaussianBelief, MomentForm};
use perception_sched::linalg;
use perception_sched::linsys::{PerceptionMode, SystemModel};
use perception_sched::simlab::{latency_noise, Bins, Profile};
use serde::{Deserialize, Serialize};

/// Error carrying the JSON path of the offending field.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.path.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.path, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

fn err(path: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError { path: path.into(), message: message.into() }
}

type Matrix = Vec<Vec<f64>>;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawSystem {
    #[serde(rename = "A")]
    pub a: Matrix,
    #[serde(rename = "B")]
    pub b: Matrix,
    #[serde(rename = "C")]
    pub c: Matrix,
    #[serde(rename = "W0")]
    pub w0: Matrix,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RawSigma {
    Matrix(Matrix),
    PerLatency { per_latency: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawMode {
    pub delta: f64,
    pub sigma: RawSigma,
    pub gain: Matrix,
    pub penalty: f64,
    pub cpu_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RawMomentForm {
    #[default]
    Exact,
    Decoupled,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawCost {
    pub lambda_x: f64,
    pub lambda_r: f64,
    #[serde(rename = "T_f")]
    pub t_f: f64,
    #[serde(rename = "Q")]
    pub q: Matrix,
    #[serde(rename = "Q_f", default)]
    pub q_f: Option<Matrix>,
    #[serde(default)]
    pub moment_form: RawMomentForm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyType {
    Static,
    RoundRobin,
    Fixed,
    Balanced,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawPolicy {
    #[serde(rename = "type")]
    pub kind: PolicyType,
    #[serde(default)]
    pub schedule: Option<Vec<usize>>,
    #[serde(default)]
    pub set: Option<usize>,
    #[serde(default)]
    pub m: Option<usize>,
    #[serde(default)]
    pub ell: Option<usize>,
    #[serde(default)]
    pub max_iters: Option<usize>,
    #[serde(default)]
    pub lookahead: Option<f64>,
    #[serde(rename = "M0", default)]
    pub m0: Option<Matrix>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RawBins {
    Count(usize),
    Edges(Vec<f64>),
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawSim {
    #[serde(default)]
    pub h: Option<f64>,
    #[serde(default)]
    pub paths: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    #[serde(rename = "P0", default)]
    pub p0: Option<Matrix>,
    #[serde(default)]
    pub bins: Option<RawBins>,
    #[serde(default)]
    pub trajectory_stride: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub system: RawSystem,
    pub modes: Vec<RawMode>,
    pub cost: RawCost,
    pub policy: RawPolicy,
    #[serde(default)]
    pub sim: RawSim,
}

/// Policy settings after validation (mode and set indices are 0-based).
#[derive(Debug, Clone, PartialEq)]
pub enum PolicySpec {
    Static(Vec<usize>),
    RoundRobin,
    Fixed(usize),
    Balanced { lookahead: f64 },
}

#[derive(Debug, Clone)]
pub struct SetBuild {
    pub m: usize,
    pub ell: usize,
    pub max_iters: usize,
    pub m0: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct SimSettings {
    pub h: f64,
    pub paths: usize,
    pub seed: u64,
    pub bins: Bins,
    pub trajectory_stride: usize,
}

/// Fully validated experiment.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub model: SystemModel,
    pub modes: Vec<PerceptionMode>,
    pub cost: CostConfig,
    pub policy: PolicySpec,
    pub build: SetBuild,
    pub sim: SimSettings,
    pub belief0: GaussianBelief,
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub paths: Option<usize>,
    pub profile: Option<Profile>,
}

pub fn load(path: &Path, overrides: &Overrides) -> Result<Experiment, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| err("", format!("cannot read {}: {e}", path.display())))?;
    parse(&text, overrides)
}

pub fn parse(text: &str, overrides: &Overrides) -> Result<Experiment, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let raw: RawConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        err(if path == "." { String::new() } else { path }, e.into_inner().to_string())
    })?;
    validate(&raw, overrides)
}

fn matrix(m: &Matrix, path: &str) -> Result<DMatrix<f64>, ConfigError> {
    let rows = m.len();
    if rows == 0 {
        return Err(err(path, "matrix has no rows"));
    }
    let cols = m[0].len();
    if cols == 0 {
        return Err(err(path, "matrix has no columns"));
    }
    for (i, row) in m.iter().enumerate() {
        if row.len() != cols {
            return Err(err(format!("{path}[{i}]"), format!("row has {} entries, expected {cols}", row.len())));
        }
        if let Some(j) = row.iter().position(|v| !v.is_finite()) {
            return Err(err(format!("{path}[{i}][{j}]"), "not a finite number"));
        }
    }
    Ok(DMatrix::from_fn(rows, cols, |i, j| m[i][j]))
}

fn shape(m: &DMatrix<f64>, rows: usize, cols: usize, path: &str) -> Result<(), ConfigError> {
    if m.shape() != (rows, cols) {
        return Err(err(path, format!("expected {rows}x{cols}, got {}x{}", m.nrows(), m.ncols())));
    }
    Ok(())
}

fn psd(m: &DMatrix<f64>, path: &str) -> Result<(), ConfigError> {
    if !linalg::is_psd(m, 1e-12) {
        return Err(err(path, "not symmetric positive semi-definite"));
    }
    Ok(())
}

fn positive(v: f64, path: &str) -> Result<(), ConfigError> {
    if !(v.is_finite() && v > 0.0) {
        return Err(err(path, format!("must be positive, got {v}")));
    }
    Ok(())
}

fn one_based(v: usize, count: usize, path: &str) -> Result<usize, ConfigError> {
    if v == 0 || v > count {
        return Err(err(path, format!("index {v} out of range 1..={count}")));
    }
    Ok(v - 1)
}

pub fn validate(raw: &RawConfig, overrides: &Overrides) -> Result<Experiment, ConfigError> {
    let a = matrix(&raw.system.a, "system.A")?;
    let n = a.nrows();
    shape(&a, n, n, "system.A")?;
    let b = matrix(&raw.system.b, "system.B")?;
    if b.nrows() != n {
        return Err(err("system.B", format!("expected {n} rows, got {}", b.nrows())));
    }
    let c = matrix(&raw.system.c, "system.C")?;
    if c.ncols() != n {
        return Err(err("system.C", format!("expected {n} columns, got {}", c.ncols())));
    }
    let w0 = matrix(&raw.system.w0, "system.W0")?;
    shape(&w0, n, n, "system.W0")?;
    psd(&w0, "system.W0")?;
    let (nu, nz) = (b.ncols(), c.nrows());
    let model = SystemModel::new(a, b, c, w0).map_err(|e| err("system", e.to_string()))?;

    if raw.modes.is_empty() {
        return Err(err("modes", "at least one mode is required"));
    }
    let mut modes = Vec::with_capacity(raw.modes.len());
    for (i, m) in raw.modes.iter().enumerate() {
        let p = format!("modes[{i}]");
        positive(m.delta, &format!("{p}.delta"))?;
        let sigma = match &m.sigma {
            RawSigma::Matrix(s) => matrix(s, &format!("{p}.sigma"))?,
            RawSigma::PerLatency { per_latency } => {
                positive(*per_latency, &format!("{p}.sigma.per_latency"))?;
                latency_noise(m.delta, *per_latency, nz)
            }
        };
        shape(&sigma, nz, nz, &format!("{p}.sigma"))?;
        psd(&sigma, &format!("{p}.sigma"))?;
        let gain = matrix(&m.gain, &format!("{p}.gain"))?;
        shape(&gain, nu, n, &format!("{p}.gain"))?;
        positive(m.penalty, &format!("{p}.penalty"))?;
        if !(m.cpu_fraction > 0.0 && m.cpu_fraction < 1.0) {
            return Err(err(format!("{p}.cpu_fraction"), format!("must lie in (0, 1), got {}", m.cpu_fraction)));
        }
        let mode = PerceptionMode::new(m.delta, sigma, gain, m.penalty, m.cpu_fraction).map_err(|e| err(&p, e.to_string()))?;
        mode.check_against(&model).map_err(|e| err(&p, e.to_string()))?;
        modes.push(mode);
    }

    let profile = overrides.profile.map(Profile::settings);
    let rc = &raw.cost;
    let t_f = profile.map_or(rc.t_f, |s| s.1);
    positive(t_f, "cost.T_f")?;
    let q = matrix(&rc.q, "cost.Q")?;
    shape(&q, n, n, "cost.Q")?;
    psd(&q, "cost.Q")?;
    let q_f = match &rc.q_f {
        Some(m) => matrix(m, "cost.Q_f")?,
        None => q.clone(),
    };
    shape(&q_f, n, n, "cost.Q_f")?;
    psd(&q_f, "cost.Q_f")?;
    for (v, name) in [(rc.lambda_x, "cost.lambda_x"), (rc.lambda_r, "cost.lambda_r")] {
        if !(v.is_finite() && v >= 0.0) {
            return Err(err(name, format!("must be non-negative, got {v}")));
        }
    }
    let form = match rc.moment_form {
        RawMomentForm::Exact => MomentForm::Exact,
        RawMomentForm::Decoupled => MomentForm::Decoupled,
    };
    let cost = CostConfig::new(rc.lambda_x, rc.lambda_r, t_f, q, q_f)
        .map_err(|e| err("cost", e.to_string()))?
        .with_moment_form(form);

    let rp = &raw.policy;
    let m = rp.m.unwrap_or(1);
    if m == 0 {
        return Err(err("policy.m", "must be at least 1"));
    }
    let policy = match rp.kind {
        PolicyType::Static => {
            let s = rp.schedule.as_ref().ok_or_else(|| err("policy.schedule", "required for a static policy"))?;
            if s.is_empty() {
                return Err(err("policy.schedule", "must not be empty"));
            }
            let modes = s
                .iter()
                .enumerate()
                .map(|(i, &v)| one_based(v, raw.modes.len(), &format!("policy.schedule[{i}]")))
                .collect::<Result<Vec<_>, _>>()?;
            PolicySpec::Static(modes)
        }
        PolicyType::RoundRobin => PolicySpec::RoundRobin,
        PolicyType::Fixed => {
            let s = rp.set.ok_or_else(|| err("policy.set", "required for a fixed policy"))?;
            PolicySpec::Fixed(one_based(s, m, "policy.set")?)
        }
        PolicyType::Balanced => {
            let lookahead = rp.lookahead.unwrap_or(2.0);
            positive(lookahead, "policy.lookahead")?;
            PolicySpec::Balanced { lookahead }
        }
    };
    let m0 = match &rp.m0 {
        Some(mm) => {
            let m0 = matrix(mm, "policy.M0")?;
            shape(&m0, n, n, "policy.M0")?;
            if !linalg::is_pd(&m0) {
                return Err(err("policy.M0", "not symmetric positive definite"));
            }
            m0
        }
        None => DMatrix::identity(n, n),
    };
    let ell = rp.ell.unwrap_or(20);
    if ell == 0 {
        return Err(err("policy.ell", "must be at least 1"));
    }
    let max_iters = rp.max_iters.unwrap_or(10_000);
    if max_iters == 0 {
        return Err(err("policy.max_iters", "must be at least 1"));
    }
    let build = SetBuild { m, ell, max_iters, m0 };

    let rs = &raw.sim;
    let h = profile.map_or(rs.h.unwrap_or(1e-3), |s| s.0);
    positive(h, "sim.h")?;
    let min_delta = modes.iter().map(|m| m.delta()).fold(f64::INFINITY, f64::min);
    if h > min_delta / 10.0 * (1.0 + 1e-9) {
        return Err(err("sim.h", format!("{h} exceeds the smallest latency / 10 = {}", min_delta / 10.0)));
    }
    let paths = overrides.paths.or(profile.map(|s| s.2)).or(rs.paths).unwrap_or(100);
    if paths < 2 {
        return Err(err("sim.paths", "need at least two paths"));
    }
    let seed = overrides.seed.or(rs.seed).unwrap_or(0);
    let x0 = match &rs.x0 {
        Some(v) if v.len() != n => return Err(err("sim.x0", format!("expected {n} entries, got {}", v.len()))),
        Some(v) => {
            if let Some(i) = v.iter().position(|x| !x.is_finite()) {
                return Err(err(format!("sim.x0[{i}]"), "not a finite number"));
            }
            DVector::from_column_slice(v)
        }
        None => DVector::zeros(n),
    };
    let p0 = match &rs.p0 {
        Some(p) => matrix(p, "sim.P0")?,
        None => DMatrix::identity(n, n),
    };
    shape(&p0, n, n, "sim.P0")?;
    psd(&p0, "sim.P0")?;
    let belief0 = GaussianBelief::from_prior(x0, p0).map_err(|e| err("sim", e.to_string()))?;
    let bins = match &rs.bins {
        None => Bins::Uniform(20),
        Some(RawBins::Count(0)) => return Err(err("sim.bins", "need at least one bin")),
        Some(RawBins::Count(k)) => Bins::Uniform(*k),
        Some(RawBins::Edges(e)) => {
            if e.len() < 2 || e.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(err("sim.bins", "edges must be at least two strictly increasing numbers"));
            }
            Bins::Edges(e.clone())
        }
    };
    let sim = SimSettings { h, paths, seed, bins, trajectory_stride: rs.trajectory_stride.unwrap_or(0) };

    Ok(Experiment { model, modes, cost, policy, build, sim, belief0 })
}
