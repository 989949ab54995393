//! Schedule-set files.
//!
//! ```json
//! {
//!   "format": "perception-sched/schedule-set",
//!   "version": 1,
//!   "M0": [[3.53, -1.1], [-1.1, 1.36]],
//!   "schedules": [[1, 2, 2], [2]],
//!   "matrices": [[[..]], [[..]]],
//!   "provenance": { "seed": 24, "iterations": 37, "ell": 20, "R": 1.0018 }
//! }
//! ```
//!
//! Schedules use 1-based mode numbers. `matrices` holds `M_γ` as written;
//! on load they are recomputed from the experiment's modes and must agree,
//! which catches a set file paired with the wrong configuration.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use perception_sched::linsys::DiscretizedMode;
use perception_sched::schedset::{BuiltSet, EllipsoidSet, Schedule};
use serde::{Deserialize, Serialize};

pub const FORMAT: &str = "perception-sched/schedule-set";

/// Relative disagreement allowed between stored and recomputed `M_γ`.
pub const MATRIX_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub iterations: usize,
    pub ell: usize,
    #[serde(rename = "R")]
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetFile {
    pub format: String,
    pub version: u32,
    #[serde(rename = "M0")]
    pub m0: Vec<Vec<f64>>,
    pub schedules: Vec<Vec<usize>>,
    pub matrices: Vec<Vec<Vec<f64>>>,
    #[serde(default)]
    pub provenance: Option<Provenance>,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(r: &[Vec<f64>], what: &str) -> anyhow::Result<DMatrix<f64>> {
    let n = r.len();
    anyhow::ensure!(n > 0 && r.iter().all(|row| row.len() == n), "{what} must be a non-empty square matrix");
    Ok(DMatrix::from_fn(n, n, |i, j| r[i][j]))
}

impl SetFile {
    pub fn from_built(built: &BuiltSet, seed: u64) -> Self {
        let set = &built.set;
        Self {
            format: FORMAT.into(),
            version: 1,
            m0: rows(set.m0()),
            schedules: set.members().iter().map(|m| m.schedule.modes().iter().map(|p| p + 1).collect()).collect(),
            matrices: set.members().iter().map(|m| rows(&m.matrix)).collect(),
            provenance: Some(Provenance { seed, iterations: built.iterations, ell: built.ell, r: built.r }),
        }
    }

    /// Rebuilds the set against `modes`, checking the stored matrices.
    pub fn to_set(&self, modes: &[DiscretizedMode]) -> anyhow::Result<EllipsoidSet> {
        anyhow::ensure!(self.format == FORMAT, "format must be \"{FORMAT}\", got \"{}\"", self.format);
        anyhow::ensure!(self.version == 1, "unsupported version {}", self.version);
        anyhow::ensure!(!self.schedules.is_empty(), "schedules: at least one schedule is required");
        anyhow::ensure!(
            self.matrices.len() == self.schedules.len(),
            "matrices: expected {} entries, got {}",
            self.schedules.len(),
            self.matrices.len()
        );
        let m0 = from_rows(&self.m0, "M0")?;
        let deltas: Vec<f64> = modes.iter().map(|d| d.tau).collect();
        let mut schedules = Vec::with_capacity(self.schedules.len());
        for (i, s) in self.schedules.iter().enumerate() {
            anyhow::ensure!(!s.is_empty(), "schedules[{i}]: empty schedule");
            let zero: Vec<usize> = s
                .iter()
                .enumerate()
                .map(|(j, &p)| {
                    anyhow::ensure!(p >= 1 && p <= modes.len(), "schedules[{i}][{j}]: mode {p} out of range 1..={}", modes.len());
                    Ok(p - 1)
                })
                .collect::<anyhow::Result<_>>()?;
            schedules.push(Schedule::new(zero, &deltas)?);
        }
        let set = EllipsoidSet::build(schedules, modes, m0).map_err(|e| anyhow::anyhow!("{e}"))?;
        for (i, (member, stored)) in set.members().iter().zip(&self.matrices).enumerate() {
            let stored = from_rows(stored, &format!("matrices[{i}]"))?;
            anyhow::ensure!(stored.shape() == member.matrix.shape(), "matrices[{i}]: wrong dimension");
            let gap = (&stored - &member.matrix).amax() / member.matrix.amax().max(f64::MIN_POSITIVE);
            anyhow::ensure!(
                gap <= MATRIX_TOL,
                "matrices[{i}]: stored M differs from the one recomputed from the configuration (relative {gap:.2e})"
            );
        }
        Ok(set)
    }

    pub fn read(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| anyhow::anyhow!("cannot read {}: {e}", path.display()))?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        serde_path_to_error::deserialize(de).map_err(|e| anyhow::anyhow!("{}: {}: {}", path.display(), e.path(), e.inner()))
    }

    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| anyhow::anyhow!("cannot write {}: {e}", path.display()))
    }
}

/// File name of the `i`-th (0-based) set written by `build-sets`.
pub fn file_name(i: usize) -> String {
    format!("set-{:02}.json", i + 1)
}

/// A single file, or every `*.json` in a directory sorted by name.
pub fn discover(path: &Path) -> anyhow::Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let entries = std::fs::read_dir(path).map_err(|e| anyhow::anyhow!("cannot read {}: {e}", path.display()))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    anyhow::ensure!(!files.is_empty(), "no schedule-set files in {}", path.display());
    Ok(files)
}
