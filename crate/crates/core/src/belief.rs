//! One-step Kalman predictor, closed-loop moment propagation and exact
//! evaluation of the latency–precision cost.
//!
//! The running cost over one inter-sample interval is linear in the second
//! moment `x̄x̄ᵀ + P` and in the predictor covariance `P̂`, so each interval
//! reduces to a handful of fixed weight matrices ([`IntervalWeights`]) that
//! are integrated once per mode by adaptive Gauss–Legendre quadrature.

use nalgebra::{DMatrix, DVector};

use crate::bank::{ModeBank, Step};
use crate::error::{Error, Result};
use crate::linalg::{self, inner, quad_form, symmetrize};
use crate::linsys::{discretize_over, DiscretizedMode, PerceptionMode, SystemModel};

/// Absolute tolerance of the per-interval quadrature.
pub const QUADRATURE_TOL: f64 = 1e-10;

/// Largest condition number accepted for the innovation covariance.
pub const MAX_INNOVATION_CONDITION: f64 = 1e12;

/// Mean and covariance of the state together with the covariance of the
/// one-step predictor error.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub pred_cov: DMatrix<f64>,
}

impl GaussianBelief {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>, pred_cov: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if cov.shape() != (n, n) || pred_cov.shape() != (n, n) {
            return Err(Error::Dimension(format!("belief covariances must be {n}x{n}")));
        }
        linalg::ensure_finite_vector(&mean, "belief mean")?;
        if !linalg::is_psd(&cov, 1e-10) || !linalg::is_psd(&pred_cov, 1e-10) {
            return Err(Error::InvalidParameter("belief covariances must be symmetric PSD".into()));
        }
        Ok(Self { mean, cov, pred_cov })
    }

    /// Initial belief `x(0) ~ N(x̄₀, P₀)` with the predictor seeded at
    /// `x̂[0|-1] = x̄₀`, `P̂[0] = P₀`.
    pub fn from_prior(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        Self::new(mean, cov.clone(), cov)
    }

    /// Belief carrying only a mean (all covariances zero).
    pub fn deterministic(mean: DVector<f64>) -> Self {
        let n = mean.len();
        Self { mean, cov: DMatrix::zeros(n, n), pred_cov: DMatrix::zeros(n, n) }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Predictor state `x̂[k|k-1]`, `P̂[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictor {
    pub estimate: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// How the state covariance accounts for the estimation error fed back
/// through the gain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MomentForm {
    /// Keeps the correlation between the state and the predictor error
    /// (`cov(x, x̂ - x) = -P̂`): `P⁺ = Λ(P - P̂)Λᵀ + A_d P̂ A_dᵀ + W_d`.
    #[default]
    Exact,
    /// Treats the predictor error as independent of the state:
    /// `P⁺ = Λ P Λᵀ + B_d L P̂ Lᵀ B_dᵀ + W_d`.
    Decoupled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostConfig {
    pub lambda_x: f64,
    pub lambda_r: f64,
    pub horizon: f64,
    pub q: DMatrix<f64>,
    pub q_f: DMatrix<f64>,
    pub moment_form: MomentForm,
}

impl CostConfig {
    pub fn new(lambda_x: f64, lambda_r: f64, horizon: f64, q: DMatrix<f64>, q_f: DMatrix<f64>) -> Result<Self> {
        if !(lambda_x >= 0.0 && lambda_r >= 0.0) {
            return Err(Error::InvalidParameter("cost weights must be non-negative".into()));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidParameter(format!("horizon must be positive, got {horizon}")));
        }
        if !q.is_square() || q.shape() != q_f.shape() {
            return Err(Error::Dimension("Q and Q_f must be square and equally sized".into()));
        }
        if !linalg::is_psd(&q, 1e-12) || !linalg::is_psd(&q_f, 1e-12) {
            return Err(Error::InvalidParameter("Q and Q_f must be symmetric PSD".into()));
        }
        Ok(Self { lambda_x, lambda_r, horizon, q, q_f, moment_form: MomentForm::Exact })
    }

    pub fn with_horizon(&self, horizon: f64) -> Self {
        Self { horizon, ..self.clone() }
    }

    pub fn with_moment_form(mut self, form: MomentForm) -> Self {
        self.moment_form = form;
        self
    }

    /// `λ_x (x̄ᵀQ_f x̄ + tr(Q_f P))`.
    pub fn terminal(&self, belief: &GaussianBelief) -> f64 {
        self.lambda_x * (quad_form(&belief.mean, &self.q_f) + inner(&self.q_f, &belief.cov))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostBreakdown {
    pub state_running: f64,
    pub state_terminal: f64,
    pub attention_penalty: f64,
    pub total: f64,
    pub attention_count: usize,
}

/// Integrals over `[0, len]` of the matrices the running cost is linear in.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalWeights {
    /// `∫ Λ(s)ᵀ Q Λ(s) ds`
    pub closed_loop: DMatrix<f64>,
    /// `∫ A_d(s)ᵀ Q A_d(s) ds`
    pub open_loop: DMatrix<f64>,
    /// `∫ Lᵀ B_d(s)ᵀ Q B_d(s) L ds`
    pub feedback: DMatrix<f64>,
    /// `∫ tr(Q W_d(s)) ds`
    pub noise: f64,
}

impl IntervalWeights {
    /// `∫ x̄(s)ᵀ Q x̄(s) + tr(Q P(s)) ds` over the interval starting at `belief`.
    pub fn running(&self, belief: &GaussianBelief, form: MomentForm) -> f64 {
        let mean_part = quad_form(&belief.mean, &self.closed_loop);
        let cov_part = match form {
            MomentForm::Exact => {
                inner(&(&belief.cov - &belief.pred_cov), &self.closed_loop) + inner(&belief.pred_cov, &self.open_loop)
            }
            MomentForm::Decoupled => inner(&belief.cov, &self.closed_loop) + inner(&belief.pred_cov, &self.feedback),
        };
        mean_part + cov_part + self.noise
    }
}

/// Integrates the running-cost weights of holding `gain` for `len` seconds.
pub fn interval_weights(model: &SystemModel, gain: &DMatrix<f64>, q: &DMatrix<f64>, len: f64) -> Result<IntervalWeights> {
    let n = model.n();
    let nn = n * n;
    if len <= 0.0 {
        return Ok(IntervalWeights {
            closed_loop: DMatrix::zeros(n, n),
            open_loop: DMatrix::zeros(n, n),
            feedback: DMatrix::zeros(n, n),
            noise: 0.0,
        });
    }
    // validate once so the integrand can unwrap
    discretize_over(model, gain, len)?;
    let integrand = |s: f64| -> Vec<f64> {
        let dm = discretize_over(model, gain, s).expect("validated discretization");
        let bl = &dm.bd * gain;
        let mut out = Vec::with_capacity(3 * nn + 1);
        out.extend((dm.closed_loop.transpose() * q * &dm.closed_loop).iter());
        out.extend((dm.ad.transpose() * q * &dm.ad).iter());
        out.extend((bl.transpose() * q * &bl).iter());
        out.push(inner(q, &dm.wd));
        out
    };
    let v = linalg::integrate_adaptive(&integrand, 0.0, len, QUADRATURE_TOL);
    let block = |k: usize| symmetrize(&DMatrix::from_column_slice(n, n, &v[k * nn..(k + 1) * nn]));
    Ok(IntervalWeights { closed_loop: block(0), open_loop: block(1), feedback: block(2), noise: v[3 * nn] })
}

/// Innovation gain `H` and updated predictor covariance for one interval.
pub fn riccati_step(
    pred_cov: &DMatrix<f64>,
    dm: &DiscretizedMode,
    sigma: &DMatrix<f64>,
    c: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let pct = pred_cov * c.transpose();
    let cross = &dm.ad * &pct;
    let gain = if cross.amax() == 0.0 {
        DMatrix::zeros(dm.ad.nrows(), c.nrows())
    } else {
        let innov = symmetrize(&(c * &pct + sigma));
        let eig = innov.symmetric_eigenvalues();
        let lo = eig.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
        if condition >= MAX_INNOVATION_CONDITION {
            return Err(Error::SingularInnovation { condition });
        }
        let inv = innov.cholesky().ok_or(Error::SingularInnovation { condition })?.inverse();
        cross * inv
    };
    let next = (&dm.ad - &gain * c) * pred_cov * dm.ad.transpose() + &dm.wd;
    Ok((gain, symmetrize(&next)))
}

/// One-step predictor: `x̂[k+1|k] = A_d x̂ + B_d u + H (z - C x̂)` and the
/// matching Riccati update of `P̂`.
pub fn kalman_predict(
    pred: &Predictor,
    dm: &DiscretizedMode,
    mode: &PerceptionMode,
    measurement: &DVector<f64>,
    control: &DVector<f64>,
    c: &DMatrix<f64>,
) -> Result<Predictor> {
    linalg::ensure_finite_vector(measurement, "measurement")?;
    let (gain, cov) = riccati_step(&pred.cov, dm, mode.sigma(), c)?;
    let innovation = measurement - c * &pred.estimate;
    let estimate = &dm.ad * &pred.estimate + &dm.bd * control + gain * innovation;
    Ok(Predictor { estimate, cov })
}

fn moments_with(belief: &GaussianBelief, dm: &DiscretizedMode, gain: &DMatrix<f64>, form: MomentForm) -> (DVector<f64>, DMatrix<f64>) {
    let lam = &dm.closed_loop;
    let mean = lam * &belief.mean;
    let cov = match form {
        MomentForm::Exact => {
            lam * (&belief.cov - &belief.pred_cov) * lam.transpose()
                + &dm.ad * &belief.pred_cov * dm.ad.transpose()
                + &dm.wd
        }
        MomentForm::Decoupled => {
            let bl = &dm.bd * gain;
            lam * &belief.cov * lam.transpose() + &bl * &belief.pred_cov * bl.transpose() + &dm.wd
        }
    };
    (mean, symmetrize(&cov))
}

/// Mean and covariance of the state `t_offset` seconds after a sampling
/// instant at which the belief was `belief`.
pub fn propagate_moments(
    belief: &GaussianBelief,
    model: &SystemModel,
    mode: &PerceptionMode,
    t_offset: f64,
    form: MomentForm,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if !(0.0..=mode.delta()).contains(&t_offset) {
        return Err(Error::OffsetOutOfRange { offset: t_offset, delta: mode.delta() });
    }
    let dm = discretize_over(model, mode.gain(), t_offset)?;
    Ok(moments_with(belief, &dm, mode.gain(), form))
}

/// Advances a belief over one (possibly partial) interval with the expected
/// measurement. `complete` says whether the interval ends at the next sampling
/// instant, in which case the predictor covariance is updated too.
pub fn advance(
    belief: &GaussianBelief,
    step: &Step,
    mode: &PerceptionMode,
    c: &DMatrix<f64>,
    form: MomentForm,
    complete: bool,
) -> Result<GaussianBelief> {
    let (mean, cov) = moments_with(belief, &step.dm, mode.gain(), form);
    let pred_cov = if complete {
        riccati_step(&belief.pred_cov, &step.dm, mode.sigma(), c)?.1
    } else {
        belief.pred_cov.clone()
    };
    Ok(GaussianBelief { mean, cov, pred_cov })
}

fn horizon_eps(horizon: f64) -> f64 {
    1e-9 * horizon.abs().max(1.0)
}

/// Whether a sampling instant at `tau` falls inside `[0, horizon)`.
pub fn before_horizon(tau: f64, horizon: f64) -> bool {
    tau < horizon - horizon_eps(horizon)
}

/// Outcome of running part of a schedule from `tau0` towards `horizon`.
#[derive(Debug, Clone)]
pub struct Segment {
    /// `∫ x̄ᵀQx̄ + tr(QP) dt` over the covered time (not normalized).
    pub integral: f64,
    /// `Σ r^{p_k}` over sampling instants before the horizon.
    pub penalty: f64,
    pub attention: usize,
    pub end: GaussianBelief,
    pub tau_end: f64,
    pub reached_horizon: bool,
}

/// Propagates `belief` through `schedule` starting at `tau0`, stopping at
/// `horizon` (mid-interval if needed).
pub fn rollout(
    bank: &ModeBank,
    belief: &GaussianBelief,
    schedule: &[usize],
    tau0: f64,
    horizon: f64,
    form: MomentForm,
) -> Result<Segment> {
    let c = bank.model().c();
    let mut cur = belief.clone();
    let mut tau = tau0;
    let mut integral = 0.0;
    let mut penalty = 0.0;
    let mut attention = 0;
    for &idx in schedule {
        if !before_horizon(tau, horizon) {
            break;
        }
        if idx >= bank.num_modes() {
            return Err(Error::InvalidParameter(format!("mode index {idx} out of range")));
        }
        let mode = bank.mode(idx);
        attention += 1;
        penalty += mode.penalty();
        let remaining = horizon - tau;
        let (step, complete, next_tau) = if mode.delta() <= remaining + horizon_eps(horizon) {
            (bank.full(idx).clone(), true, tau + mode.delta())
        } else {
            (bank.step(idx, remaining)?, false, horizon)
        };
        integral += step.weights.running(&cur, form);
        cur = advance(&cur, &step, mode, c, form, complete)?;
        tau = next_tau;
    }
    let reached_horizon = !before_horizon(tau, horizon);
    Ok(Segment { integral, penalty, attention, end: cur, tau_end: tau, reached_horizon })
}

/// Expected cost of `schedule` from `belief0` over `[0, cfg.horizon]`, with
/// measurements entering only through the predictor covariance.
pub fn evaluate_cost(schedule: &[usize], belief0: &GaussianBelief, bank: &ModeBank, cfg: &CostConfig) -> Result<CostBreakdown> {
    let seg = rollout(bank, belief0, schedule, 0.0, cfg.horizon, cfg.moment_form)?;
    if !seg.reached_horizon {
        return Err(Error::HorizonNotCovered { covered: seg.tau_end, horizon: cfg.horizon });
    }
    let state_running = cfg.lambda_x / cfg.horizon * seg.integral;
    let state_terminal = cfg.terminal(&seg.end);
    let attention_penalty = cfg.lambda_r / cfg.horizon * seg.penalty;
    Ok(CostBreakdown {
        state_running,
        state_terminal,
        attention_penalty,
        total: state_running + state_terminal + attention_penalty,
        attention_count: seg.attention,
    })
}
