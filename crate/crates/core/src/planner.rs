//! Dynamic-programming schedule optimization over a family of admissible
//! schedule sets, and the moving-horizon (balanced SP²) set selector.
//!
//! At every decision epoch each set proposes the schedule its switching law
//! picks for the current mean; the planner explores all combinations up to
//! the horizon. Branch-and-bound pruning against a shared incumbent never
//! changes the result, since every cost term is non-negative.

use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;

use crate::bank::ModeBank;
use crate::belief::{rollout, CostConfig, GaussianBelief};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::schedset::{switching_law, EllipsoidSet, Selector};

/// Relative slack applied before pruning against the incumbent.
const PRUNE_SLACK: f64 = 1e-12;

/// One decision: which set was used and which of its members was applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Piece {
    pub set_id: usize,
    pub member: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanResult {
    /// Concatenated mode indices of every chosen piece (the last piece is
    /// kept whole even when it overshoots the horizon).
    pub schedule: Vec<usize>,
    pub pieces: Vec<Piece>,
    pub cost: f64,
    /// Set chosen at the first epoch.
    pub chosen_set: usize,
    /// Number of recursive calls made (including the root).
    pub nodes: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct PlanOptions {
    pub prune: bool,
    pub exec: Execution,
}

impl Default for PlanOptions {
    fn default() -> Self {
        Self { prune: true, exec: Execution::default() }
    }
}

struct Search<'a> {
    horizon: f64,
    sets: &'a [EllipsoidSet],
    bank: &'a ModeBank,
    cfg: &'a CostConfig,
    prune: bool,
    depth_bound: usize,
    incumbent: AtomicU64,
    nodes: AtomicUsize,
}

struct Branch {
    total: f64,
    pieces: Vec<Piece>,
}

impl Search<'_> {
    fn incumbent(&self) -> f64 {
        f64::from_bits(self.incumbent.load(Ordering::Relaxed))
    }

    fn offer(&self, total: f64) {
        let mut cur = self.incumbent.load(Ordering::Relaxed);
        while total < f64::from_bits(cur) {
            match self.incumbent.compare_exchange_weak(cur, total.to_bits(), Ordering::Relaxed, Ordering::Relaxed) {
                Ok(_) => break,
                Err(actual) => cur = actual,
            }
        }
    }

    fn pruned(&self, lower: f64) -> bool {
        self.prune && lower > self.incumbent() * (1.0 + PRUNE_SLACK)
    }

    /// Cost of applying set `id` at `(tau, belief)` and the best completion.
    fn branch(&self, id: usize, tau: f64, belief: &GaussianBelief, acc: f64, depth: usize) -> Result<Option<Branch>> {
        let member = switching_law(&belief.mean, &self.sets[id]);
        let gamma = &self.sets[id].members()[member].schedule;
        let seg = rollout(self.bank, belief, gamma.modes(), tau, self.horizon, self.cfg.moment_form)?;
        let stage = (self.cfg.lambda_x * seg.integral + self.cfg.lambda_r * seg.penalty) / self.horizon;
        if self.pruned(acc + stage) {
            return Ok(None);
        }
        let piece = Piece { set_id: id, member };
        if seg.reached_horizon {
            let total = stage + self.cfg.terminal(&seg.end);
            self.offer(acc + total);
            return Ok(Some(Branch { total, pieces: vec![piece] }));
        }
        Ok(self.node(seg.tau_end, &seg.end, acc + stage, depth + 1)?.map(|rest| {
            let mut pieces = Vec::with_capacity(rest.pieces.len() + 1);
            pieces.push(piece);
            pieces.extend(rest.pieces);
            Branch { total: stage + rest.total, pieces }
        }))
    }

    fn node(&self, tau: f64, belief: &GaussianBelief, acc: f64, depth: usize) -> Result<Option<Branch>> {
        if depth > self.depth_bound {
            return Err(Error::RecursionDepth { depth, bound: self.depth_bound });
        }
        self.nodes.fetch_add(1, Ordering::Relaxed);
        let mut best: Option<Branch> = None;
        for id in 0..self.sets.len() {
            if let Some(b) = self.branch(id, tau, belief, acc, depth)? {
                if best.as_ref().is_none_or(|cur| b.total < cur.total) {
                    best = Some(b);
                }
            }
        }
        Ok(best)
    }
}

/// Optimal schedule over `[tau, horizon]` within the class of schedules
/// generated by the SP² policies of `sets`, starting from `belief`.
///
/// Running and attention costs are normalized by `horizon`; `cfg.horizon`
/// is not used. Among equal-cost branches the earliest set wins.
pub fn dynprog(
    horizon: f64,
    tau: f64,
    belief: &GaussianBelief,
    sets: &[EllipsoidSet],
    bank: &ModeBank,
    cfg: &CostConfig,
    opts: &PlanOptions,
) -> Result<PlanResult> {
    if sets.is_empty() {
        return Err(Error::Empty("schedule-set list"));
    }
    if !(horizon.is_finite() && horizon > 0.0 && tau < horizon) {
        return Err(Error::InvalidParameter(format!("need 0 < horizon and tau < horizon (tau {tau}, horizon {horizon})")));
    }
    let c = sets.iter().map(EllipsoidSet::min_latency).fold(f64::INFINITY, f64::min);
    let depth_bound = ((horizon - tau) / c).ceil() as usize + 1;
    let search = Search {
        horizon,
        sets,
        bank,
        cfg,
        prune: opts.prune,
        depth_bound,
        incumbent: AtomicU64::new(f64::INFINITY.to_bits()),
        nodes: AtomicUsize::new(1),
    };
    // the root's branches run concurrently; deeper levels are sequential
    let branches = opts.exec.map(sets.len(), |id| search.branch(id, tau, belief, 0.0, 0));
    let mut best: Option<Branch> = None;
    for b in branches {
        if let Some(b) = b? {
            if best.as_ref().is_none_or(|cur| b.total < cur.total) {
                best = Some(b);
            }
        }
    }
    let best = best.expect("the first complete branch is never pruned");
    let mut schedule = Vec::new();
    for p in &best.pieces {
        schedule.extend_from_slice(sets[p.set_id].members()[p.member].schedule.modes());
    }
    Ok(PlanResult {
        schedule,
        chosen_set: best.pieces[0].set_id,
        pieces: best.pieces,
        cost: best.total,
        nodes: search.nodes.load(Ordering::Relaxed),
    })
}

/// Moving-horizon set choice: plans over `lookahead` seconds from the
/// current belief and commits to the first set of the plan.
#[derive(Debug, Clone)]
pub struct BalancedSelector {
    bank: Arc<ModeBank>,
    cfg: CostConfig,
    lookahead: f64,
    opts: PlanOptions,
}

impl BalancedSelector {
    pub fn new(bank: Arc<ModeBank>, cfg: CostConfig, lookahead: f64) -> Result<Self> {
        if !(lookahead.is_finite() && lookahead > 0.0) {
            return Err(Error::InvalidParameter(format!("lookahead must be positive, got {lookahead}")));
        }
        Ok(Self { cfg: cfg.with_horizon(lookahead), bank, lookahead, opts: PlanOptions::default() })
    }

    pub fn with_options(mut self, opts: PlanOptions) -> Self {
        self.opts = opts;
        self
    }
}

impl Selector for BalancedSelector {
    fn select(&mut self, belief: &GaussianBelief, sets: &[EllipsoidSet]) -> Result<usize> {
        Ok(dynprog(self.lookahead, 0.0, belief, sets, &self.bank, &self.cfg, &self.opts)?.chosen_set)
    }
}
