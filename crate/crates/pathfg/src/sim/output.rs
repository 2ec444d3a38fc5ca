//! Run artifacts: trajectory CSV, planned-path CSV, and the JSON summary.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::sim::harness::SimLog;

pub const TRAJECTORY_HEADER: &str = "k,t,px,py,pz,vx,vy,vz,roll,pitch,yaw,thrust,wx,wy,wz,s,ref_x,ref_y,ref_z,err,cost,solve_time,gov_time,clearance,feasible";

#[derive(Debug, Serialize)]
pub struct Summary {
    pub verdict: crate::sim::harness::Verdict,
    pub steps: usize,
    pub convergence_time_s: Option<f64>,
    pub mean_solve_time_s: f64,
    pub max_solve_time_s: f64,
    pub mean_governor_time_s: f64,
    pub max_governor_evals: usize,
    pub violation_count: usize,
    pub backoff_count: usize,
    pub infeasible_solve_count: usize,
    pub final_s: f64,
    pub final_error_m: f64,
}

pub fn summarize(log: &SimLog) -> Summary {
    let last = log.records.last();
    Summary {
        verdict: log.verdict,
        steps: last.map(|r| r.k).unwrap_or(0),
        convergence_time_s: log.convergence_time_s,
        mean_solve_time_s: log.mean_solve_time_s(),
        max_solve_time_s: log.max_solve_time_s(),
        mean_governor_time_s: log.mean_governor_time_s(),
        max_governor_evals: log.max_governor_evals(),
        violation_count: log.violation_count,
        backoff_count: log.backoff_count,
        infeasible_solve_count: log.infeasible_solve_count,
        final_s: last.map(|r| r.s).unwrap_or(0.0),
        final_error_m: last.map(|r| r.error_m).unwrap_or(f64::NAN),
    }
}

/// Renders the trajectory CSV. The thrust column is the physical collective
/// thrust (input deviation plus hover thrust), Newtons.
pub fn trajectory_csv(log: &SimLog, hover_thrust_n: f64) -> String {
    let mut out = String::with_capacity(log.records.len() * 256 + 128);
    out.push_str(TRAJECTORY_HEADER);
    out.push('\n');
    for r in &log.records {
        let x = &r.state;
        let u = &r.input;
        let row = [
            r.t_s, x[0], x[1], x[2], x[3], x[4], x[5], x[6], x[7], x[8],
            u[0] + hover_thrust_n, u[1], u[2], u[3],
            r.s,
            r.reference[0], r.reference[1], r.reference[2],
            r.error_m, r.cost, r.solve_time_s, r.governor_time_s, r.clearance_m,
        ];
        out.push_str(&r.k.to_string());
        for v in row {
            out.push(',');
            out.push_str(&format_float(v));
        }
        out.push(',');
        out.push_str(if r.feasible { "true" } else { "false" });
        out.push('\n');
    }
    out
}

fn format_float(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v}")
    }
}

pub fn path_csv(log: &SimLog) -> String {
    let mut out = String::from("wx,wy,wz\n");
    if let Some(path) = &log.path {
        for w in &path.waypoints {
            out.push_str(&format!("{},{},{}\n", w[0], w[1], w[2]));
        }
    }
    out
}

/// Writes trajectory.csv, path.csv, and summary.json into `out_dir`
/// (created if absent).
pub fn write_outputs(
    log: &SimLog,
    hover_thrust_n: f64,
    out_dir: &Path,
) -> std::io::Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let mut f = std::fs::File::create(out_dir.join("trajectory.csv"))?;
    f.write_all(trajectory_csv(log, hover_thrust_n).as_bytes())?;
    let mut f = std::fs::File::create(out_dir.join("path.csv"))?;
    f.write_all(path_csv(log).as_bytes())?;
    let summary = summarize(log);
    let mut f = std::fs::File::create(out_dir.join("summary.json"))?;
    f.write_all(serde_json::to_string_pretty(&summary)?.as_bytes())?;
    f.write_all(b"\n")?;
    Ok(())
}
