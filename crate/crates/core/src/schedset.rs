//! Schedule sets, their pre-image ellipsoids, the argmin switching law, the
//! stability-preserving scheduling policy (SP²) and randomized construction
//! of admissible sets.

use std::collections::HashSet;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::belief::GaussianBelief;
use crate::error::{Error, Result};
use crate::linalg::{self, quad_form, symmetrize};
use crate::linsys::{chain_matrix, DiscretizedMode};

/// Smallest accepted `|det Λ^γ|`.
pub const MIN_CHAIN_DET: f64 = 1e-12;

/// Relative tolerance under which two switching-law values count as a tie.
const TIE_TOL: f64 = 1e-12;

/// Finite sequence of mode indices (0-based internally).
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    modes: Vec<usize>,
    total_latency: f64,
}

impl Schedule {
    /// Builds a schedule over modes whose latencies are `deltas`.
    pub fn new(modes: Vec<usize>, deltas: &[f64]) -> Result<Self> {
        if modes.is_empty() {
            return Err(Error::Empty("schedule"));
        }
        let mut total_latency = 0.0;
        for &m in &modes {
            let d = deltas
                .get(m)
                .ok_or_else(|| Error::InvalidParameter(format!("mode index {} out of range (D = {})", m + 1, deltas.len())))?;
            total_latency += d;
        }
        Ok(Self { modes, total_latency })
    }

    pub fn modes(&self) -> &[usize] {
        &self.modes
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn total_latency(&self) -> f64 {
        self.total_latency
    }
}

impl fmt::Display for Schedule {
    /// Prints 1-based mode labels, e.g. `{1,2,2}`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, m) in self.modes.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{}", m + 1)?;
        }
        write!(f, "}}")
    }
}

/// `M_γ = (Λ^γ)ᵀ M0 Λ^γ`.
pub fn ellipsoid_matrix(gamma: &Schedule, modes: &[DiscretizedMode], m0: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chain = chain_matrix(gamma.modes().iter().map(|&i| &modes[i]))?;
    let det = chain.determinant();
    if !(det.abs() > MIN_CHAIN_DET) {
        return Err(Error::SingularChain { det });
    }
    Ok(symmetrize(&(chain.transpose() * m0 * &chain)))
}

/// `√(xᵀ M x)`, the gauge of the ellipsoid `{x : xᵀMx ≤ 1}`.
pub fn gauge(x: &DVector<f64>, m: &DMatrix<f64>) -> f64 {
    quad_form(x, m).max(0.0).sqrt()
}

/// A schedule together with its ellipsoid matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Member {
    pub schedule: Schedule,
    pub matrix: DMatrix<f64>,
}

/// Schedule set Γ with the reference matrix `M0` and one `M_γ` per member.
#[derive(Debug, Clone, PartialEq)]
pub struct EllipsoidSet {
    m0: DMatrix<f64>,
    members: Vec<Member>,
}

impl EllipsoidSet {
    /// Computes `M_γ` for every schedule. Duplicate schedules are rejected.
    pub fn build(schedules: Vec<Schedule>, modes: &[DiscretizedMode], m0: DMatrix<f64>) -> Result<Self> {
        check_m0(&m0)?;
        let mut members = Vec::with_capacity(schedules.len());
        for s in schedules {
            if members.iter().any(|m: &Member| m.schedule.modes() == s.modes()) {
                return Err(Error::InvalidParameter(format!("duplicate schedule {s}")));
            }
            let matrix = ellipsoid_matrix(&s, modes, &m0)?;
            members.push(Member { schedule: s, matrix });
        }
        if members.is_empty() {
            return Err(Error::Empty("schedule set"));
        }
        Ok(Self { m0, members })
    }

    /// Assembles a set from precomputed matrices (no chain is evaluated).
    pub fn from_members(m0: DMatrix<f64>, members: Vec<Member>) -> Result<Self> {
        check_m0(&m0)?;
        if members.is_empty() {
            return Err(Error::Empty("schedule set"));
        }
        for (i, m) in members.iter().enumerate() {
            if m.matrix.shape() != m0.shape() {
                return Err(Error::Dimension(format!("member {i} matrix does not match M0")));
            }
        }
        Ok(Self { m0, members })
    }

    /// Set over raw ellipsoid matrices, with placeholder one-step schedules
    /// `{1}, {2}, …` of unit latency. Useful for geometry-only work.
    pub fn from_matrices(m0: DMatrix<f64>, matrices: Vec<DMatrix<f64>>) -> Result<Self> {
        let deltas = vec![1.0; matrices.len()];
        let members = matrices
            .into_iter()
            .enumerate()
            .map(|(i, matrix)| Ok(Member { schedule: Schedule::new(vec![i], &deltas)?, matrix }))
            .collect::<Result<Vec<_>>>()?;
        Self::from_members(m0, members)
    }

    pub fn m0(&self) -> &DMatrix<f64> {
        &self.m0
    }

    pub fn members(&self) -> &[Member] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.m0.nrows()
    }

    pub fn matrices(&self) -> Vec<&DMatrix<f64>> {
        self.members.iter().map(|m| &m.matrix).collect()
    }

    /// Shortest member latency.
    pub fn min_latency(&self) -> f64 {
        self.members.iter().map(|m| m.schedule.total_latency()).fold(f64::INFINITY, f64::min)
    }
}

fn check_m0(m0: &DMatrix<f64>) -> Result<()> {
    if !m0.is_square() || m0.nrows() == 0 {
        return Err(Error::Dimension("M0 must be square and non-empty".into()));
    }
    linalg::ensure_finite_matrix(m0, "M0")?;
    if !linalg::is_pd(m0) {
        return Err(Error::InvalidParameter("M0 must be symmetric positive definite".into()));
    }
    Ok(())
}

/// Index of the member minimizing `xᵀM_γx`; near-ties go to the lowest total
/// latency, then to the lexicographically smallest mode sequence.
pub fn switching_law(x: &DVector<f64>, set: &EllipsoidSet) -> usize {
    let values: Vec<f64> = set.members.iter().map(|m| quad_form(x, &m.matrix)).collect();
    let best = values.iter().copied().fold(f64::INFINITY, f64::min);
    let cutoff = best + TIE_TOL * best.abs().max(f64::MIN_POSITIVE);
    let mut winner: Option<usize> = None;
    for (i, v) in values.iter().enumerate() {
        if *v > cutoff {
            continue;
        }
        winner = Some(match winner {
            None => i,
            Some(w) => {
                let (a, b) = (&set.members[i].schedule, &set.members[w].schedule);
                let better = a
                    .total_latency()
                    .partial_cmp(&b.total_latency())
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then_with(|| a.modes().cmp(b.modes()))
                    .is_lt();
                if better {
                    i
                } else {
                    w
                }
            }
        });
    }
    winner.expect("non-empty set")
}

/// Chooses which schedule set the policy commits to at an epoch boundary.
pub trait Selector {
    fn select(&mut self, belief: &GaussianBelief, sets: &[EllipsoidSet]) -> Result<usize>;
}

/// Cycles through the sets in order.
#[derive(Debug, Clone, Default)]
pub struct RoundRobin {
    next: usize,
}

impl Selector for RoundRobin {
    fn select(&mut self, _belief: &GaussianBelief, sets: &[EllipsoidSet]) -> Result<usize> {
        let id = self.next % sets.len().max(1);
        self.next = id + 1;
        Ok(id)
    }
}

/// Always picks the same set.
#[derive(Debug, Clone, Copy)]
pub struct FixedSelector(pub usize);

impl Selector for FixedSelector {
    fn select(&mut self, _belief: &GaussianBelief, _sets: &[EllipsoidSet]) -> Result<usize> {
        Ok(self.0)
    }
}

/// Position of the SP² policy inside its current schedule.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PolicyState {
    pub active_schedule: Option<Schedule>,
    /// Number of modes of `active_schedule` already emitted.
    pub cursor: usize,
    pub active_set_id: Option<usize>,
}

impl PolicyState {
    /// Whether the next call to [`sp2_step`] starts a new schedule.
    pub fn at_boundary(&self) -> bool {
        self.active_schedule.as_ref().is_none_or(|s| self.cursor >= s.len())
    }
}

/// One SP² decision: keep consuming the active schedule, or at its end ask
/// the selector for a set and apply the switching law to `belief.mean`.
pub fn sp2_step(
    state: &PolicyState,
    belief: &GaussianBelief,
    sets: &[EllipsoidSet],
    selector: &mut dyn Selector,
) -> Result<(usize, PolicyState)> {
    if sets.is_empty() {
        return Err(Error::Empty("schedule-set list"));
    }
    if let Some(active) = &state.active_schedule {
        if state.cursor < active.len() {
            let mode = active.modes()[state.cursor];
            let next = PolicyState { cursor: state.cursor + 1, ..state.clone() };
            return Ok((mode, next));
        }
    }
    let id = selector.select(belief, sets)?;
    let set = sets.get(id).ok_or(Error::SelectorOutOfRange { id, count: sets.len() })?;
    let member = switching_law(&belief.mean, set);
    let schedule = set.members[member].schedule.clone();
    let mode = schedule.modes()[0];
    Ok((mode, PolicyState { active_schedule: Some(schedule), cursor: 1, active_set_id: Some(id) }))
}

/// Result of the randomized set construction.
#[derive(Debug, Clone)]
pub struct BuiltSet {
    pub set: EllipsoidSet,
    /// Number of candidate schedules drawn.
    pub iterations: usize,
    /// Admissibility value returned by the checker for the final set.
    pub r: f64,
    /// Maximum length reached (may exceed the requested one).
    pub ell: usize,
}

/// Largest number of sequences of one length that is enumerated outright
/// when sampling among the few not yet included.
const ENUMERATION_LIMIT: u128 = 1 << 16;

fn count_sequences(d: usize, len: usize) -> u128 {
    (d as u128).checked_pow(len as u32).unwrap_or(u128::MAX)
}

fn sequence_from_index(mut idx: u128, d: usize, len: usize) -> Vec<usize> {
    let mut seq = vec![0; len];
    for slot in seq.iter_mut().rev() {
        *slot = (idx % d as u128) as usize;
        idx /= d as u128;
    }
    seq
}

/// Randomized construction of an admissible schedule set: repeatedly add a
/// uniformly drawn, not yet included sequence of random length `ℓ' ≤ ℓ`
/// until `checker` reports `R > 1`. When every sequence of length `≤ ℓ` is
/// included, `ℓ` grows by one.
pub fn build_schedule_set<F>(
    ell: usize,
    modes: &[DiscretizedMode],
    m0: &DMatrix<f64>,
    seed: u64,
    mut checker: F,
    max_iters: usize,
) -> Result<BuiltSet>
where
    F: FnMut(&EllipsoidSet) -> Result<f64>,
{
    if ell == 0 {
        return Err(Error::InvalidParameter("ell must be at least 1".into()));
    }
    let d = modes.len();
    if d == 0 {
        return Err(Error::Empty("mode list"));
    }
    check_m0(m0)?;
    let deltas: Vec<f64> = modes.iter().map(|m| m.tau).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ell = ell;
    let mut included: HashSet<Vec<usize>> = HashSet::new();
    // count of included sequences per length (index = length)
    let mut per_len: Vec<u128> = vec![0; ell + 1];
    let mut members: Vec<Member> = Vec::new();
    let mut last_r = f64::NAN;

    for iteration in 1..=max_iters {
        let open: Vec<usize> = (1..=ell).filter(|&l| per_len[l] < count_sequences(d, l)).collect();
        if open.is_empty() {
            ell += 1;
            per_len.push(0);
        }
        let open: Vec<usize> = (1..=ell).filter(|&l| per_len[l] < count_sequences(d, l)).collect();
        let len = open[rng.random_range(0..open.len())];
        let total = count_sequences(d, len);
        let remaining = total - per_len[len];
        let seq = if total <= ENUMERATION_LIMIT && remaining * 4 <= total {
            let free: Vec<Vec<usize>> = (0..total)
                .map(|i| sequence_from_index(i, d, len))
                .filter(|s| !included.contains(s))
                .collect();
            free[rng.random_range(0..free.len())].clone()
        } else {
            loop {
                let s: Vec<usize> = (0..len).map(|_| rng.random_range(0..d)).collect();
                if !included.contains(&s) {
                    break s;
                }
            }
        };
        included.insert(seq.clone());
        per_len[len] += 1;

        let schedule = Schedule::new(seq, &deltas)?;
        let matrix = match ellipsoid_matrix(&schedule, modes, m0) {
            Ok(m) => m,
            Err(Error::SingularChain { det }) => {
                log::debug!("skipping {schedule}: singular chain (det {det:.3e})");
                continue;
            }
            Err(e) => return Err(e),
        };
        members.push(Member { schedule, matrix });
        let set = EllipsoidSet { m0: m0.clone(), members: members.clone() };
        let r = checker(&set)?;
        last_r = r;
        if r > 1.0 {
            return Ok(BuiltSet { set, iterations: iteration, r, ell });
        }
    }
    Err(Error::NotAdmissible { iterations: max_iters, last_r })
}
