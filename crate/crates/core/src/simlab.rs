//! Stochastic closed-loop simulation and Monte Carlo campaigns.
//!
//! Each path integrates `dx = (Ax + Bu)dt + dw` with Euler–Maruyama. At a
//! sampling instant the policy picks a mode from the current prediction, the
//! sensor returns `z = Cx + n`, the control `u = L x̂[k|k-1]` is held over the
//! mode's latency and the predictor advances to `x̂[k+1|k]`. Sampling instants
//! are snapped to the integration grid.
//!
//! Randomness comes from ChaCha8 seeded with the campaign seed. Each path
//! owns three streams (`3·path`, `3·path + 1`, `3·path + 2`) for the initial
//! state, the process noise and the measurement noise, so every path is
//! reproducible on its own and two policies run with the same seed see the
//! same initial state and disturbance realization.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::bank::ModeBank;
use crate::belief::{before_horizon, kalman_predict, CostConfig, GaussianBelief, Predictor};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::linalg::{psd_sqrt, quad_form};
use crate::planner::BalancedSelector;
use crate::schedset::{sp2_step, EllipsoidSet, FixedSelector, PolicyState, RoundRobin, Selector};

/// States with a component beyond this magnitude count as diverged.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

/// How a new set is chosen at each SP² epoch boundary.
#[derive(Debug, Clone)]
pub enum SelectorKind {
    RoundRobin,
    Fixed(usize),
    /// Moving-horizon planning over `lookahead` seconds.
    Balanced { lookahead: f64 },
}

#[derive(Debug, Clone)]
pub enum Policy {
    /// Repeats the given mode pattern, e.g. `[1]` for "always mode 2".
    Static(Vec<usize>),
    Sp2 { sets: Arc<Vec<EllipsoidSet>>, selector: SelectorKind },
}

impl Policy {
    fn validate(&self, num_modes: usize) -> Result<()> {
        match self {
            Policy::Static(p) if p.is_empty() => Err(Error::Empty("static schedule")),
            Policy::Static(p) => match p.iter().find(|&&m| m >= num_modes) {
                Some(m) => Err(Error::InvalidParameter(format!("mode {} out of range", m + 1))),
                None => Ok(()),
            },
            Policy::Sp2 { sets, .. } if sets.is_empty() => Err(Error::Empty("schedule-set list")),
            Policy::Sp2 { .. } => Ok(()),
        }
    }
}

/// Histogram bin layout for Monte Carlo summaries.
#[derive(Debug, Clone, PartialEq)]
pub enum Bins {
    /// Equal-width bins spanning the observed cost range.
    Uniform(usize),
    /// Explicit increasing bin edges.
    Edges(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub h: f64,
    pub horizon: f64,
    pub seed: u64,
    pub num_paths: usize,
    pub initial_mean: DVector<f64>,
    pub initial_cov: DMatrix<f64>,
    /// Cost weights; the simulation horizon overrides `cost.horizon`.
    pub cost: CostConfig,
    pub bins: Bins,
    /// Keep every `stride`-th grid state of each path (0 keeps none).
    pub trajectory_stride: usize,
    pub exec: Execution,
}

/// Named step/horizon/path-count presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    /// `h = 1e-3`, `T_f = 10`, 100 paths.
    Desk,
    /// `h = 1e-5`, `T_f = 100`, 400 paths.
    Paper,
}

impl Profile {
    /// `(h, horizon, paths)`
    pub fn settings(self) -> (f64, f64, usize) {
        match self {
            Profile::Desk => (1e-3, 10.0, 100),
            Profile::Paper => (1e-5, 100.0, 400),
        }
    }
}

impl SimConfig {
    pub fn new(profile: Profile, seed: u64, belief0: &GaussianBelief, cost: CostConfig) -> Self {
        let (h, horizon, num_paths) = profile.settings();
        Self {
            h,
            horizon,
            seed,
            num_paths,
            initial_mean: belief0.mean.clone(),
            initial_cov: belief0.cov.clone(),
            cost,
            bins: Bins::Uniform(20),
            trajectory_stride: 0,
            exec: Execution::default(),
        }
    }

    fn validate(&self, bank: &ModeBank) -> Result<()> {
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(Error::InvalidParameter(format!("step h must be positive, got {}", self.h)));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::InvalidParameter(format!("horizon must be positive, got {}", self.horizon)));
        }
        if self.num_paths == 0 {
            return Err(Error::InvalidParameter("need at least one path".into()));
        }
        let min_delta = bank.modes().iter().map(|m| m.delta()).fold(f64::INFINITY, f64::min);
        if self.h > min_delta / 10.0 * (1.0 + 1e-9) {
            return Err(Error::InvalidParameter(format!("step h = {} exceeds min latency / 10 = {}", self.h, min_delta / 10.0)));
        }
        let n = bank.model().n();
        if self.initial_mean.len() != n || self.initial_cov.shape() != (n, n) {
            return Err(Error::Dimension(format!("initial belief must have dimension {n}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplePathResult {
    pub cost: f64,
    pub attention: usize,
    pub cpu_load: f64,
    /// Modes applied at the sampling instants in `[0, T_f)`.
    pub schedule: Vec<usize>,
    pub final_state: DVector<f64>,
    /// `(t, x(t))` every `trajectory_stride` grid steps.
    pub trajectory: Vec<(f64, DVector<f64>)>,
}

/// `(1/T_f) Σ f^{p_k} (min(τ_{k+1}, T_f) - τ_k)` over the nominal instants
/// of `schedule`, i.e. the share of the window spent computing.
pub fn cpu_load(schedule: &[usize], bank: &ModeBank, horizon: f64) -> f64 {
    let mut tau = 0.0;
    let mut busy = 0.0;
    for &p in schedule {
        if !before_horizon(tau, horizon) {
            break;
        }
        let mode = bank.mode(p);
        let next = tau + mode.delta();
        busy += mode.cpu_fraction() * (next.min(horizon) - tau);
        tau = next;
    }
    busy / horizon
}

/// Noise covariance `(b/Δ) I` of a perception pipeline whose precision grows
/// linearly with its computing time.
pub fn latency_noise(delta: f64, b: f64, n_z: usize) -> DMatrix<f64> {
    DMatrix::identity(n_z, n_z) * (b / delta)
}

fn make_selector(kind: &SelectorKind, bank: &Arc<ModeBank>, cost: &CostConfig) -> Result<Box<dyn Selector>> {
    Ok(match kind {
        SelectorKind::RoundRobin => Box::new(RoundRobin::default()),
        SelectorKind::Fixed(i) => Box::new(FixedSelector(*i)),
        SelectorKind::Balanced { lookahead } => Box::new(
            BalancedSelector::new(bank.clone(), cost.clone(), *lookahead)?
                .with_options(crate::planner::PlanOptions { prune: true, exec: Execution::Sequential }),
        ),
    })
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::<f64>::from_fn(n, |_, _| StandardNormal.sample(rng))
}

/// Simulates path `path_index` of a campaign.
pub fn simulate_path(bank: &Arc<ModeBank>, policy: &Policy, cfg: &SimConfig, path_index: usize) -> Result<SamplePathResult> {
    cfg.validate(bank)?;
    policy.validate(bank.num_modes())?;
    let model = bank.model();
    let n = model.n();
    let (a, b, c) = (model.a(), model.b(), model.c());
    let q = &cfg.cost.q;
    let h = cfg.h;
    let steps = (cfg.horizon / h).round() as usize;
    let diffusion = psd_sqrt(&(model.w0() * h));
    let noise_roots: Vec<DMatrix<f64>> = bank.modes().iter().map(|m| psd_sqrt(m.sigma())).collect();

    let stream = |k: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(3 * path_index as u64 + k);
        rng
    };
    let (mut init_rng, mut process_rng, mut sensor_rng) = (stream(0), stream(1), stream(2));
    let mut x = &cfg.initial_mean + psd_sqrt(&cfg.initial_cov) * gaussian(&mut init_rng, n);
    let mut pred = Predictor { estimate: cfg.initial_mean.clone(), cov: cfg.initial_cov.clone() };

    let mut selector = match policy {
        Policy::Sp2 { selector, .. } => Some(make_selector(selector, bank, &cfg.cost)?),
        Policy::Static(_) => None,
    };
    let mut state = PolicyState::default();

    let mut u = DVector::zeros(model.n_u());
    let mut nominal_tau = 0.0;
    let mut next_sample = 0usize;
    let mut schedule = Vec::new();
    let mut penalty = 0.0;
    let mut integral = 0.0;
    let mut trajectory = Vec::new();
    let mut running = quad_form(&x, q);

    for j in 0..=steps {
        if cfg.trajectory_stride > 0 && j % cfg.trajectory_stride == 0 {
            trajectory.push((j as f64 * h, x.clone()));
        }
        if j == steps {
            break;
        }
        if j == next_sample && before_horizon(nominal_tau, cfg.horizon) {
            let k = schedule.len();
            let p = match (policy, selector.as_mut()) {
                (Policy::Static(pattern), _) => pattern[k % pattern.len()],
                (Policy::Sp2 { sets, .. }, Some(sel)) => {
                    let belief = GaussianBelief { mean: pred.estimate.clone(), cov: pred.cov.clone(), pred_cov: pred.cov.clone() };
                    let (p, next) = sp2_step(&state, &belief, sets, sel.as_mut())?;
                    state = next;
                    p
                }
                (Policy::Sp2 { .. }, None) => unreachable!("selector is built for SP² policies"),
            };
            let mode = bank.mode(p);
            let z = c * &x + &noise_roots[p] * gaussian(&mut sensor_rng, model.n_z());
            u = mode.gain() * &pred.estimate;
            pred = kalman_predict(&pred, &bank.full(p).dm, mode, &z, &u, c)?;
            schedule.push(p);
            penalty += mode.penalty();
            nominal_tau += mode.delta();
            next_sample = ((nominal_tau / h).round() as usize).max(j + 1);
        }
        let drift = a * &x + b * &u;
        x += drift * h + &diffusion * gaussian(&mut process_rng, n);
        if x.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT) {
            return Err(Error::Diverged { step: j + 1 });
        }
        let next_running = quad_form(&x, q);
        integral += 0.5 * h * (running + next_running);
        running = next_running;
    }

    let t_f = cfg.horizon;
    let cost = cfg.cost.lambda_x * (integral / t_f + quad_form(&x, &cfg.cost.q_f)) + cfg.cost.lambda_r * penalty / t_f;
    Ok(SamplePathResult {
        cost,
        attention: schedule.len(),
        cpu_load: cpu_load(&schedule, bank, t_f),
        schedule,
        final_state: x,
        trajectory,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    fn build(values: &[f64], bins: &Bins) -> Self {
        let edges = match bins {
            Bins::Edges(e) => e.clone(),
            Bins::Uniform(k) => {
                let k = (*k).max(1);
                let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if !lo.is_finite() {
                    vec![0.0, 1.0]
                } else {
                    let width = if hi > lo { (hi - lo) / k as f64 } else { 1.0 };
                    (0..=k).map(|i| lo + width * i as f64).collect()
                }
            }
        };
        let mut counts = vec![0; edges.len().saturating_sub(1)];
        for &v in values {
            if counts.is_empty() || v < edges[0] || v > edges[edges.len() - 1] {
                continue;
            }
            // upper edge is inclusive for the last bin
            let idx = edges.partition_point(|&e| e <= v).saturating_sub(1).min(counts.len() - 1);
            counts[idx] += 1;
        }
        Self { edges, counts }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord {
    pub path: usize,
    pub result: SamplePathResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McSummary {
    pub mean_cost: f64,
    pub std_cost: f64,
    /// Standard error of `mean_cost`.
    pub std_error: f64,
    pub histogram: Histogram,
    pub mean_attention: f64,
    pub mean_cpu_load: f64,
    /// Successful paths in path-index order.
    pub records: Vec<PathRecord>,
    /// `(path, step)` of each diverged path; excluded from the statistics.
    pub diverged: Vec<(usize, usize)>,
}

impl McSummary {
    pub fn diverged_fraction(&self) -> f64 {
        self.diverged.len() as f64 / (self.diverged.len() + self.records.len()) as f64
    }
}

/// Runs `cfg.num_paths` independent paths and summarizes them.
pub fn monte_carlo(bank: &Arc<ModeBank>, policy: &Policy, cfg: &SimConfig) -> Result<McSummary> {
    if cfg.num_paths < 2 {
        return Err(Error::InvalidParameter("a Monte Carlo campaign needs at least two paths".into()));
    }
    cfg.validate(bank)?;
    policy.validate(bank.num_modes())?;
    let outcomes = cfg.exec.map(cfg.num_paths, |i| simulate_path(bank, policy, cfg, i));
    let mut records = Vec::with_capacity(cfg.num_paths);
    let mut diverged = Vec::new();
    for (path, out) in outcomes.into_iter().enumerate() {
        match out {
            Ok(result) => records.push(PathRecord { path, result }),
            Err(Error::Diverged { step }) => diverged.push((path, step)),
            Err(e) => return Err(e),
        }
    }
    let costs: Vec<f64> = records.iter().map(|r| r.result.cost).collect();
    let count = costs.len() as f64;
    let mean_cost = costs.iter().sum::<f64>() / count;
    let var = if costs.len() > 1 {
        costs.iter().map(|c| (c - mean_cost).powi(2)).sum::<f64>() / (count - 1.0)
    } else {
        0.0
    };
    let std_cost = var.sqrt();
    Ok(McSummary {
        mean_cost,
        std_cost,
        std_error: std_cost / count.sqrt(),
        histogram: Histogram::build(&costs, &cfg.bins),
        mean_attention: records.iter().map(|r| r.result.attention as f64).sum::<f64>() / count,
        mean_cpu_load: records.iter().map(|r| r.result.cpu_load).sum::<f64>() / count,
        records,
        diverged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linsys::{PerceptionMode, SystemModel};
    use approx::assert_relative_eq;

    fn bank(w0: f64, sigma: f64, a: f64, b: f64) -> Arc<ModeBank> {
        let model = SystemModel::new(
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, b),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, w0),
        )
        .unwrap();
        let modes = vec![
            PerceptionMode::new(0.05, DMatrix::from_element(1, 1, sigma), DMatrix::from_element(1, 1, -1.0), 1.0, 0.5)
                .unwrap(),
            PerceptionMode::new(0.2, DMatrix::from_element(1, 1, sigma), DMatrix::from_element(1, 1, -2.0), 2.0, 0.25)
                .unwrap(),
        ];
        Arc::new(ModeBank::new(model, modes, DMatrix::from_element(1, 1, 1.0)).unwrap())
    }

    fn config(x0: f64, p0: f64, horizon: f64) -> SimConfig {
        let q = DMatrix::from_element(1, 1, 1.0);
        let cost = CostConfig::new(1.0, 0.1, horizon, q.clone(), q).unwrap();
        let belief = GaussianBelief::from_prior(DVector::from_element(1, x0), DMatrix::from_element(1, 1, p0)).unwrap();
        let mut cfg = SimConfig::new(Profile::Desk, 42, &belief, cost);
        cfg.horizon = horizon;
        cfg.num_paths = 4;
        cfg
    }

    #[test]
    fn frozen_state_has_closed_form_cost() {
        let bank = bank(0.0, 0.0, 0.0, 0.0);
        let cfg = config(2.0, 0.0, 1.0);
        let res = simulate_path(&bank, &Policy::Static(vec![0]), &cfg, 0).unwrap();
        assert_relative_eq!(res.final_state[0], 2.0);
        // running 4, terminal 4, twenty samples of penalty 1
        assert_relative_eq!(res.cost, 4.0 + 4.0 + 0.1 * 20.0, epsilon = 1e-9);
        assert_eq!(res.attention, 20);
    }

    #[test]
    fn noiseless_path_tracks_discrete_recursion() {
        let bank = bank(0.0, 0.0, 0.3, 1.0);
        let mut cfg = config(1.0, 0.0, 2.0);
        cfg.trajectory_stride = 200;
        let res = simulate_path(&bank, &Policy::Static(vec![1]), &cfg, 0).unwrap();
        // with no noise the estimate is exact, so x[k+1] = Λ x[k]
        let lambda = bank.full(1).dm.closed_loop[(0, 0)];
        for (k, (_, x)) in res.trajectory.iter().enumerate() {
            let exact = lambda.powi(k as i32);
            assert!((x[0] - exact).abs() < 10.0 * cfg.h * 2.0, "k = {k}");
        }
    }

    #[test]
    fn cpu_and_attention_identities() {
        let bank = bank(0.5, 0.1, 0.0, 1.0);
        let cfg = config(1.0, 1.0, 1.0);
        let res = simulate_path(&bank, &Policy::Static(vec![0, 1, 1]), &cfg, 3).unwrap();
        assert_eq!(res.attention, res.schedule.len());
        assert_eq!(res.cpu_load, cpu_load(&res.schedule, &bank, cfg.horizon));
        // 0.05 + 0.2 + 0.2 per cycle: instants 0, .05, .25, .45, .5, .7, .9, .95
        assert_eq!(res.attention, 8);
        let busy = 0.5 * 0.05 * 3.0 + 0.25 * 0.2 * 4.0 + 0.25 * 0.05;
        assert_relative_eq!(res.cpu_load, busy, epsilon = 1e-12);
    }

    #[test]
    fn campaigns_are_reproducible_and_order_stable() {
        let bank = bank(0.5, 0.1, 0.0, 1.0);
        let mut cfg = config(1.0, 1.0, 1.0);
        cfg.exec = Execution::Sequential;
        let a = monte_carlo(&bank, &Policy::Static(vec![0]), &cfg).unwrap();
        cfg.exec = Execution::Parallel;
        let b = monte_carlo(&bank, &Policy::Static(vec![0]), &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.std_cost > 0.0);
        assert_eq!(a.histogram.counts.iter().sum::<usize>(), 4);
    }

    #[test]
    fn no_noise_means_no_spread() {
        let bank = bank(0.0, 0.0, 0.0, 1.0);
        let cfg = config(1.0, 0.0, 1.0);
        let s = monte_carlo(&bank, &Policy::Static(vec![1]), &cfg).unwrap();
        assert_eq!(s.std_cost, 0.0);
    }

    #[test]
    fn divergence_is_reported_with_step() {
        let bank = bank(0.0, 0.0, 60.0, 1.0);
        let cfg = config(1.0, 0.0, 1.0);
        let err = simulate_path(&bank, &Policy::Static(vec![0]), &cfg, 0).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }));
        let s = monte_carlo(&bank, &Policy::Static(vec![0]), &cfg).unwrap();
        assert_eq!(s.diverged.len(), 4);
        assert_eq!(s.diverged_fraction(), 1.0);
    }

    #[test]
    fn rejects_coarse_steps_and_bad_policies() {
        let bank = bank(0.0, 0.0, 0.0, 1.0);
        let mut cfg = config(1.0, 0.0, 1.0);
        cfg.h = 0.01;
        assert!(simulate_path(&bank, &Policy::Static(vec![0]), &cfg, 0).is_err());
        let cfg = config(1.0, 0.0, 1.0);
        assert!(simulate_path(&bank, &Policy::Static(vec![]), &cfg, 0).is_err());
        assert!(simulate_path(&bank, &Policy::Static(vec![5]), &cfg, 0).is_err());
    }

    #[test]
    fn histogram_edges() {
        let h = Histogram::build(&[0.0, 0.5, 1.0, 2.0], &Bins::Edges(vec![0.0, 1.0, 2.0]));
        assert_eq!(h.counts, vec![2, 2]);
        let h = Histogram::build(&[3.0, 3.0], &Bins::Uniform(4));
        assert_eq!(h.counts.iter().sum::<usize>(), 2);
    }
}
