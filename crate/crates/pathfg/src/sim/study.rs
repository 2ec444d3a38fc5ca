//! Horizon comparison study: governed PathFG+MPC versus ungoverned MPC at
//! several prediction horizons.

use serde::Serialize;

use crate::sim::config::SimConfig;
use crate::sim::harness::{run_closed_loop, run_ungoverned, SimError, Verdict};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyMode {
    Governed,
    Ungoverned,
}

#[derive(Debug, Serialize)]
pub struct StudyEntry {
    pub mode: StudyMode,
    pub horizon: usize,
    pub verdict: Verdict,
    pub steps: usize,
    pub convergence_time_s: Option<f64>,
    pub mean_solve_time_s: f64,
    pub max_solve_time_s: f64,
    pub mean_governor_time_s: f64,
    pub violation_count: usize,
    pub infeasible_solve_count: usize,
}

#[derive(Debug, Serialize)]
pub struct StudyReport {
    pub entries: Vec<StudyEntry>,
}

pub fn run_horizon_study(
    cfg: &SimConfig,
    governed_ns: &[usize],
    ungoverned_ns: &[usize],
) -> Result<StudyReport, SimError> {
    let mut entries = Vec::new();
    for &n in governed_ns {
        let mut c = cfg.clone();
        c.horizon = n;
        let log = run_closed_loop(&c)?;
        entries.push(entry(StudyMode::Governed, n, &log));
    }
    for &n in ungoverned_ns {
        let mut c = cfg.clone();
        c.horizon = n;
        let log = run_ungoverned(&c)?;
        entries.push(entry(StudyMode::Ungoverned, n, &log));
    }
    Ok(StudyReport { entries })
}

fn entry(mode: StudyMode, horizon: usize, log: &crate::sim::harness::SimLog) -> StudyEntry {
    StudyEntry {
        mode,
        horizon,
        verdict: log.verdict,
        steps: log.records.last().map(|r| r.k).unwrap_or(0),
        convergence_time_s: log.convergence_time_s,
        mean_solve_time_s: log.mean_solve_time_s(),
        max_solve_time_s: log.max_solve_time_s(),
        mean_governor_time_s: log.mean_governor_time_s(),
        violation_count: log.violation_count,
        infeasible_solve_count: log.infeasible_solve_count,
    }
}
