//! Continuous-time plant, perception modes and exact zero-order-hold
//! discretization over a latency interval.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{self, expm, symmetrize};

/// Continuous-time plant `dx = (A x + B u) dt + dw`, measurement matrix `C`
/// and Wiener diffusion intensity `W0`.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    w0: DMatrix<f64>,
}

impl SystemModel {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, w0: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || !a.is_square() {
            return Err(Error::Dimension(format!("A must be square and non-empty, got {}x{}", a.nrows(), a.ncols())));
        }
        if b.nrows() != n || b.ncols() == 0 {
            return Err(Error::Dimension(format!("B must be {n}x(n_u>0), got {}x{}", b.nrows(), b.ncols())));
        }
        if c.ncols() != n || c.nrows() == 0 {
            return Err(Error::Dimension(format!("C must be (n_z>0)x{n}, got {}x{}", c.nrows(), c.ncols())));
        }
        if w0.nrows() != n || w0.ncols() != n {
            return Err(Error::Dimension(format!("W0 must be {n}x{n}, got {}x{}", w0.nrows(), w0.ncols())));
        }
        for (m, name) in [(&a, "A"), (&b, "B"), (&c, "C"), (&w0, "W0")] {
            linalg::ensure_finite_matrix(m, name)?;
        }
        if !linalg::is_psd(&w0, 1e-12) {
            return Err(Error::InvalidParameter("W0 must be symmetric positive semi-definite".into()));
        }
        Ok(Self { a, b, c, w0 })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn w0(&self) -> &DMatrix<f64> {
        &self.w0
    }

    /// State dimension `n`.
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_u(&self) -> usize {
        self.b.ncols()
    }

    pub fn n_z(&self) -> usize {
        self.c.nrows()
    }
}

/// One perception configuration: latency, measurement noise, feedback gain,
/// cost penalty and CPU fraction.
#[derive(Debug, Clone, PartialEq)]
pub struct PerceptionMode {
    delta: f64,
    sigma: DMatrix<f64>,
    gain: DMatrix<f64>,
    penalty: f64,
    cpu_fraction: f64,
}

impl PerceptionMode {
    pub fn new(delta: f64, sigma: DMatrix<f64>, gain: DMatrix<f64>, penalty: f64, cpu_fraction: f64) -> Result<Self> {
        if !(delta.is_finite() && delta > 0.0) {
            return Err(Error::InvalidParameter(format!("latency must be positive, got {delta}")));
        }
        if !(penalty.is_finite() && penalty > 0.0) {
            return Err(Error::InvalidParameter(format!("penalty must be positive, got {penalty}")));
        }
        if !(cpu_fraction > 0.0 && cpu_fraction < 1.0) {
            return Err(Error::InvalidParameter(format!("cpu fraction must lie in (0,1), got {cpu_fraction}")));
        }
        linalg::ensure_finite_matrix(&sigma, "sigma")?;
        linalg::ensure_finite_matrix(&gain, "gain")?;
        if !linalg::is_psd(&sigma, 1e-12) {
            return Err(Error::InvalidParameter("sigma must be symmetric positive semi-definite".into()));
        }
        Ok(Self { delta, sigma, gain, penalty, cpu_fraction })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn gain(&self) -> &DMatrix<f64> {
        &self.gain
    }

    pub fn penalty(&self) -> f64 {
        self.penalty
    }

    pub fn cpu_fraction(&self) -> f64 {
        self.cpu_fraction
    }

    /// Checks that the mode's matrices fit `model`.
    pub fn check_against(&self, model: &SystemModel) -> Result<()> {
        if self.gain.nrows() != model.n_u() || self.gain.ncols() != model.n() {
            return Err(Error::Dimension(format!(
                "gain must be {}x{}, got {}x{}",
                model.n_u(),
                model.n(),
                self.gain.nrows(),
                self.gain.ncols()
            )));
        }
        if self.sigma.nrows() != model.n_z() || self.sigma.ncols() != model.n_z() {
            return Err(Error::Dimension(format!(
                "sigma must be {0}x{0}, got {1}x{2}",
                model.n_z(),
                self.sigma.nrows(),
                self.sigma.ncols()
            )));
        }
        Ok(())
    }
}

/// Transition matrices of one mode over an interval of length `tau`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretizedMode {
    pub ad: DMatrix<f64>,
    pub bd: DMatrix<f64>,
    pub wd: DMatrix<f64>,
    /// Closed-loop matrix `A_d + B_d L`.
    pub closed_loop: DMatrix<f64>,
    pub mode_index: usize,
    pub tau: f64,
}

/// Discretizes `model` under `mode` over its full latency.
pub fn discretize(model: &SystemModel, mode: &PerceptionMode) -> Result<DiscretizedMode> {
    mode.check_against(model)?;
    discretize_over(model, mode.gain(), mode.delta())
}

/// Discretization over an arbitrary interval `tau >= 0` with feedback `gain`.
///
/// `A_d`, `B_d` come from `exp([[A, B], [0, 0]] tau)`; `W_d` from the
/// Van Loan block `exp([[-A, W0], [0, Aᵀ]] tau)` as `F22ᵀ F12`.
pub fn discretize_over(model: &SystemModel, gain: &DMatrix<f64>, tau: f64) -> Result<DiscretizedMode> {
    let n = model.n();
    let nu = model.n_u();
    if gain.nrows() != nu || gain.ncols() != n {
        return Err(Error::Dimension(format!("gain must be {nu}x{n}, got {}x{}", gain.nrows(), gain.ncols())));
    }
    if !tau.is_finite() || tau < 0.0 {
        return Err(Error::InvalidParameter(format!("interval length must be >= 0, got {tau}")));
    }
    linalg::ensure_finite_matrix(gain, "gain")?;

    let mut aug = DMatrix::zeros(n + nu, n + nu);
    aug.view_mut((0, 0), (n, n)).copy_from(&(model.a() * tau));
    aug.view_mut((0, n), (n, nu)).copy_from(&(model.b() * tau));
    let e = expm(&aug);
    let ad = e.view((0, 0), (n, n)).into_owned();
    let bd = e.view((0, n), (n, nu)).into_owned();

    let mut vl = DMatrix::zeros(2 * n, 2 * n);
    vl.view_mut((0, 0), (n, n)).copy_from(&(-model.a() * tau));
    vl.view_mut((0, n), (n, n)).copy_from(&(model.w0() * tau));
    vl.view_mut((n, n), (n, n)).copy_from(&(model.a().transpose() * tau));
    let f = expm(&vl);
    let f12 = f.view((0, n), (n, n));
    let f22 = f.view((n, n), (n, n));
    let wd = symmetrize(&(f22.transpose() * f12));

    let closed_loop = &ad + &bd * gain;
    for (m, name) in [(&ad, "A_d"), (&bd, "B_d"), (&wd, "W_d")] {
        linalg::ensure_finite_matrix(m, name)?;
    }
    Ok(DiscretizedMode { ad, bd, wd, closed_loop, mode_index: 0, tau })
}

/// `Λ(Δ_{last}) ··· Λ(Δ_{first})`: the closed-loop product with the last mode
/// leftmost.
pub fn chain_matrix<'a, I>(modes: I) -> Result<DMatrix<f64>>
where
    I: IntoIterator<Item = &'a DiscretizedMode>,
{
    let mut iter = modes.into_iter();
    let first = iter.next().ok_or(Error::Empty("mode sequence"))?;
    let n = first.closed_loop.nrows();
    let mut prod = first.closed_loop.clone();
    for dm in iter {
        if dm.closed_loop.nrows() != n {
            return Err(Error::Dimension("inconsistent closed-loop sizes in chain".into()));
        }
        prod = &dm.closed_loop * prod;
    }
    Ok(prod)
}
