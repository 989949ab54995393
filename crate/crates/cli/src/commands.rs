//! Subcommand implementations. Each returns the process exit code.

use std::path::Path;
use std::sync::Arc;

use perception_sched::admiss::{admissibility_value, check_admissibility};
use perception_sched::bank::ModeBank;
use perception_sched::planner::{dynprog, PlanOptions};
use perception_sched::schedset::{build_schedule_set, EllipsoidSet};
use perception_sched::simlab::{monte_carlo, McSummary, Policy, SelectorKind, SimConfig};
use serde::Serialize;

use crate::config::{Experiment, PolicySpec};
use crate::setfile::{self, SetFile};

pub const OK: i32 = 0;
pub const NOT_ADMISSIBLE: i32 = 1;
pub const INVALID: i32 = 2;
pub const BUILD_FAILED: i32 = 3;
pub const DIVERGED: i32 = 4;

/// Largest share of diverged paths tolerated by `simulate`.
pub const MAX_DIVERGED: f64 = 0.01;

/// Error with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn invalid(error: impl Into<anyhow::Error>) -> Self {
        Self { code: INVALID, error: error.into() }
    }
}

pub type Outcome = Result<i32, Failure>;

fn bank(exp: &Experiment) -> Result<Arc<ModeBank>, Failure> {
    ModeBank::new(exp.model.clone(), exp.modes.clone(), exp.cost.q.clone()).map(Arc::new).map_err(Failure::invalid)
}

fn load_sets(path: &Path, bank: &ModeBank) -> Result<Vec<EllipsoidSet>, Failure> {
    let dms = bank.discretized();
    setfile::discover(path)
        .map_err(Failure::invalid)?
        .iter()
        .map(|p| {
            SetFile::read(p)
                .and_then(|f| f.to_set(&dms))
                .map_err(|e| Failure::invalid(e.context(format!("{}", p.display()))))
        })
        .collect()
}

fn fmt_schedule(modes: &[usize]) -> String {
    let parts: Vec<String> = modes.iter().map(|p| (p + 1).to_string()).collect();
    format!("{{{}}}", parts.join(","))
}

pub fn check(exp: &Experiment, sets: &Path) -> Outcome {
    let bank = bank(exp)?;
    let files = setfile::discover(sets).map_err(Failure::invalid)?;
    let all = load_sets(sets, &bank)?;
    let mut code = OK;
    for (file, set) in files.iter().zip(&all) {
        let report = check_admissibility(set).map_err(Failure::invalid)?;
        if all.len() > 1 {
            println!("{}", file.display());
        }
        println!("R={:.6} {}", report.r, if report.admissible { "admissible" } else { "not admissible" });
        println!("margin={:.6}", report.margin);
        println!("method={:?}", report.method);
        for s in &report.subsets {
            let members: Vec<String> = s.subset.iter().map(|i| (i + 1).to_string()).collect();
            match s.min_value {
                Some(v) => println!("subset {{{}}}: min {v:.6}", members.join(",")),
                None => println!("subset {{{}}}: no surviving critical point", members.join(",")),
            }
        }
        if !report.admissible {
            code = NOT_ADMISSIBLE;
        }
    }
    Ok(code)
}

pub fn build_sets(exp: &Experiment, out: &Path) -> Outcome {
    let bank = bank(exp)?;
    let dms = bank.discretized();
    let b = &exp.build;
    let seed = exp.sim.seed;
    println!("seed={seed}");
    std::fs::create_dir_all(out).map_err(|e| Failure::invalid(anyhow::anyhow!("cannot create {}: {e}", out.display())))?;
    for i in 0..b.m {
        let set_seed = seed.wrapping_add(i as u64);
        let built = build_schedule_set(b.ell, &dms, &b.m0, set_seed, admissibility_value, b.max_iters)
            .map_err(|e| Failure { code: BUILD_FAILED, error: anyhow::anyhow!("set {} (seed {set_seed}): {e}", i + 1) })?;
        let path = out.join(setfile::file_name(i));
        SetFile::from_built(&built, set_seed).write(&path).map_err(Failure::invalid)?;
        println!(
            "{}: {} schedules, R={:.6}, iterations={}, ell={}",
            path.display(),
            built.set.len(),
            built.r,
            built.iterations,
            built.ell
        );
    }
    Ok(OK)
}

fn sim_config(exp: &Experiment) -> SimConfig {
    let mut cfg = SimConfig::new(perception_sched::simlab::Profile::Desk, exp.sim.seed, &exp.belief0, exp.cost.clone());
    cfg.h = exp.sim.h;
    cfg.horizon = exp.cost.horizon;
    cfg.num_paths = exp.sim.paths;
    cfg.bins = exp.sim.bins.clone();
    cfg.trajectory_stride = exp.sim.trajectory_stride;
    cfg
}

fn verified_sets(exp: &Experiment, bank: &ModeBank, sets: Option<&Path>, trust: bool) -> Result<Vec<EllipsoidSet>, Failure> {
    let path = sets.ok_or_else(|| Failure::invalid(anyhow::anyhow!("policy {:?} needs --sets", exp.policy)))?;
    let all = load_sets(path, bank)?;
    if !trust {
        for (i, set) in all.iter().enumerate() {
            let report = check_admissibility(set).map_err(Failure::invalid)?;
            if !report.admissible {
                return Err(Failure {
                    code: NOT_ADMISSIBLE,
                    error: anyhow::anyhow!("set {} is not admissible (R={:.6})", i + 1, report.r),
                });
            }
        }
    }
    Ok(all)
}

#[derive(Serialize)]
struct Summary<'a> {
    seed: u64,
    paths: usize,
    h: f64,
    horizon: f64,
    policy: String,
    mean_cost: f64,
    std_cost: f64,
    std_error: f64,
    mean_attention: f64,
    mean_cpu_load: f64,
    diverged: &'a [(usize, usize)],
}

fn write_outputs(out: &Path, mc: &McSummary, summary: &Summary) -> anyhow::Result<()> {
    std::fs::create_dir_all(out)?;
    let mut w = csv::Writer::from_path(out.join("paths.csv"))?;
    w.write_record(["path", "cost", "attention", "cpu_load"])?;
    for r in &mc.records {
        w.write_record([r.path.to_string(), r.result.cost.to_string(), r.result.attention.to_string(), r.result.cpu_load.to_string()])?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(out.join("histogram.csv"))?;
    w.write_record(["bin_lo", "bin_hi", "count"])?;
    for (i, c) in mc.histogram.counts.iter().enumerate() {
        w.write_record([mc.histogram.edges[i].to_string(), mc.histogram.edges[i + 1].to_string(), c.to_string()])?;
    }
    w.flush()?;
    let mut text = serde_json::to_string_pretty(summary)?;
    text.push('\n');
    std::fs::write(out.join("summary.json"), text)?;
    Ok(())
}

pub fn simulate(exp: &Experiment, sets: Option<&Path>, out: &Path, trust: bool) -> Outcome {
    let bank = bank(exp)?;
    let (policy, label) = match &exp.policy {
        PolicySpec::Static(p) => (Policy::Static(p.clone()), format!("static {}", fmt_schedule(p))),
        spec => {
            let all = verified_sets(exp, &bank, sets, trust)?;
            let (selector, label) = match spec {
                PolicySpec::RoundRobin => (SelectorKind::RoundRobin, "round_robin".to_string()),
                PolicySpec::Fixed(i) => {
                    if *i >= all.len() {
                        return Err(Failure::invalid(anyhow::anyhow!("policy.set: set {} requested but {} loaded", i + 1, all.len())));
                    }
                    (SelectorKind::Fixed(*i), format!("fixed {}", i + 1))
                }
                PolicySpec::Balanced { lookahead } => (SelectorKind::Balanced { lookahead: *lookahead }, format!("balanced T={lookahead}")),
                PolicySpec::Static(_) => unreachable!(),
            };
            (Policy::Sp2 { sets: Arc::new(all), selector }, label)
        }
    };
    let cfg = sim_config(exp);
    println!("seed={}", cfg.seed);
    let mc = monte_carlo(&bank, &policy, &cfg).map_err(Failure::invalid)?;
    if !mc.records.is_empty() {
        let mean_norm = mc.records.iter().map(|r| r.result.final_state.norm()).sum::<f64>() / mc.records.len() as f64;
        log::info!("mean |x(T_f)| = {mean_norm:.6}");
    }
    let summary = Summary {
        seed: cfg.seed,
        paths: cfg.num_paths,
        h: cfg.h,
        horizon: cfg.horizon,
        policy: label,
        mean_cost: mc.mean_cost,
        std_cost: mc.std_cost,
        std_error: mc.std_error,
        mean_attention: mc.mean_attention,
        mean_cpu_load: mc.mean_cpu_load,
        diverged: &mc.diverged,
    };
    write_outputs(out, &mc, &summary).map_err(Failure::invalid)?;
    println!(
        "mean_cost={:.6} std={:.6} se={:.6} mean_attention={:.3} mean_cpu_load={:.6} diverged={}",
        mc.mean_cost,
        mc.std_cost,
        mc.std_error,
        mc.mean_attention,
        mc.mean_cpu_load,
        mc.diverged.len()
    );
    if mc.diverged_fraction() > MAX_DIVERGED {
        return Err(Failure {
            code: DIVERGED,
            error: anyhow::anyhow!("{} of {} paths diverged", mc.diverged.len(), cfg.num_paths),
        });
    }
    Ok(OK)
}

#[derive(Serialize)]
struct PlanOutput {
    schedule: Vec<usize>,
    pieces: Vec<(usize, usize)>,
    cost: f64,
    chosen_set: usize,
    nodes: usize,
}

pub fn plan(exp: &Experiment, sets: Option<&Path>, out: Option<&Path>, trust: bool) -> Outcome {
    let bank = bank(exp)?;
    let all = verified_sets(exp, &bank, sets, trust)?;
    let res = dynprog(exp.cost.horizon, 0.0, &exp.belief0, &all, &bank, &exp.cost, &PlanOptions::default()).map_err(Failure::invalid)?;
    println!("schedule={}", fmt_schedule(&res.schedule));
    println!("cost={:.9}", res.cost);
    println!("chosen_set={}", res.chosen_set + 1);
    println!("nodes={}", res.nodes);
    if let Some(out) = out {
        let output = PlanOutput {
            schedule: res.schedule.iter().map(|p| p + 1).collect(),
            pieces: res.pieces.iter().map(|p| (p.set_id + 1, p.member + 1)).collect(),
            cost: res.cost,
            chosen_set: res.chosen_set + 1,
            nodes: res.nodes,
        };
        let mut text = serde_json::to_string_pretty(&output).map_err(Failure::invalid)?;
        text.push('\n');
        std::fs::write(out, text).map_err(|e| Failure::invalid(anyhow::anyhow!("cannot write {}: {e}", out.display())))?;
    }
    Ok(OK)
}
