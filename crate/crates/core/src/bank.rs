//! Per-mode discretization cache.
//!
//! Every consumer (cost evaluation, planner, simulator) steps the same few
//! modes millions of times, so the transition matrices and the running-cost
//! weights of each mode are computed once and shared. Partial intervals (the
//! last step before a horizon) are cached by their quantized length.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use nalgebra::DMatrix;

use crate::belief::{interval_weights, IntervalWeights};
use crate::error::{Error, Result};
use crate::linalg;
use crate::linsys::{discretize_over, DiscretizedMode, PerceptionMode, SystemModel};

/// Transition matrices and running-cost weights of one interval.
#[derive(Debug, Clone)]
pub struct Step {
    pub dm: DiscretizedMode,
    pub weights: IntervalWeights,
}

#[derive(Debug)]
pub struct ModeBank {
    model: SystemModel,
    modes: Vec<PerceptionMode>,
    q: DMatrix<f64>,
    full: Vec<Arc<Step>>,
    partial: RwLock<HashMap<(usize, u64), Arc<Step>>>,
}

fn length_key(len: f64) -> u64 {
    (len * 1e12).round() as u64
}

impl ModeBank {
    /// Discretizes every mode of `modes` for `model`; `q` is the running-cost
    /// weight used by the interval weights.
    pub fn new(model: SystemModel, modes: Vec<PerceptionMode>, q: DMatrix<f64>) -> Result<Self> {
        if modes.is_empty() {
            return Err(Error::Empty("mode list"));
        }
        let n = model.n();
        if q.nrows() != n || q.ncols() != n {
            return Err(Error::Dimension(format!("Q must be {n}x{n}")));
        }
        if !linalg::is_psd(&q, 1e-12) {
            return Err(Error::InvalidParameter("Q must be symmetric positive semi-definite".into()));
        }
        let mut full = Vec::with_capacity(modes.len());
        for (i, mode) in modes.iter().enumerate() {
            mode.check_against(&model)?;
            full.push(Arc::new(build_step(&model, mode, i, mode.delta(), &q)?));
        }
        Ok(Self { model, modes, q, full, partial: RwLock::new(HashMap::new()) })
    }

    pub fn model(&self) -> &SystemModel {
        &self.model
    }

    pub fn modes(&self) -> &[PerceptionMode] {
        &self.modes
    }

    pub fn mode(&self, idx: usize) -> &PerceptionMode {
        &self.modes[idx]
    }

    pub fn num_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    /// Full-latency discretization of mode `idx`.
    pub fn full(&self, idx: usize) -> &Arc<Step> {
        &self.full[idx]
    }

    pub fn discretized(&self) -> Vec<DiscretizedMode> {
        self.full.iter().map(|s| s.dm.clone()).collect()
    }

    /// Mode `idx` held for `len` seconds (`0 <= len`).
    pub fn step(&self, idx: usize, len: f64) -> Result<Arc<Step>> {
        let delta = self.modes[idx].delta();
        if (len - delta).abs() <= 1e-12 * delta.max(1.0) {
            return Ok(self.full[idx].clone());
        }
        let key = (idx, length_key(len));
        if let Some(step) = self.partial.read().expect("cache lock").get(&key) {
            return Ok(step.clone());
        }
        let step = Arc::new(build_step(&self.model, &self.modes[idx], idx, len, &self.q)?);
        self.partial.write().expect("cache lock").insert(key, step.clone());
        Ok(step)
    }
}

fn build_step(model: &SystemModel, mode: &PerceptionMode, idx: usize, len: f64, q: &DMatrix<f64>) -> Result<Step> {
    let mut dm = discretize_over(model, mode.gain(), len)?;
    dm.mode_index = idx;
    let weights = interval_weights(model, mode.gain(), q, len)?;
    Ok(Step { dm, weights })
}
