//! CSV streams of a scenario run.
//!
//! Floats are written in Rust's shortest round-trip form, so identical
//! results give identical bytes.

use std::io::Write;

use relnav::estimator::clock_ids;
use relnav::lie::ExtendedPose;
use relnav::ranging::TransceiverId;

use crate::montecarlo::TrialSummary;
use crate::scenario::ScenarioResult;

const TANGENT: [&str; 9] = ["phi_x", "phi_y", "phi_z", "nu_x", "nu_y", "nu_z", "rho_x", "rho_y", "rho_z"];

pub fn error_columns() -> Vec<String> {
    let mut cols = vec!["step".to_string(), "time_s".into(), "robot".into()];
    cols.extend(TANGENT.iter().map(|c| format!("e_{c}")));
    cols.extend(TANGENT.iter().map(|c| format!("bound3_{c}")));
    cols
}

pub const CLOCK_COLUMNS: [&str; 9] = [
    "step", "time_s", "transceiver", "tau_true_ns", "gamma_true_ppb", "tau_error_ns", "gamma_error_ppb",
    "tau_bound3_ns", "gamma_bound3_ppb",
];

pub const POSE_COLUMNS: [&str; 12] = [
    "step", "time_s", "robot", "phi_x", "phi_y", "phi_z", "v_x", "v_y", "v_z", "r_x", "r_y", "r_z",
];

pub const NEES_COLUMNS: [&str; 4] = ["step", "time_s", "nees", "nees_per_dof"];

pub const SUMMARY_COLUMNS: [&str; 11] = [
    "trial", "seed", "mode", "mean_position_rmse_m", "clock_offset_rmse_ns", "transactions", "delivered",
    "accepted", "rejected", "skipped", "drops",
];

fn f(v: f64) -> String {
    v.to_string()
}

/// Pose errors and 3-sigma bounds per step and neighbour.
pub fn write_errors<W: Write>(out: W, r: &ScenarioResult) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(error_columns())?;
    for (k, (errs, stds)) in r.pose_errors.iter().zip(&r.pose_std).enumerate() {
        for (j, (e, s)) in errs.iter().zip(stds).enumerate() {
            let mut row = vec![(k + 1).to_string(), f(r.times[k]), (j + 1).to_string()];
            row.extend(e.iter().map(|v| f(*v)));
            row.extend(s.iter().map(|v| f(3.0 * v)));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Relative clock truth, errors and 3-sigma bounds in state order.
pub fn write_clocks<W: Write>(out: W, r: &ScenarioResult) -> csv::Result<()> {
    let ids: Vec<TransceiverId> = clock_ids(r.config.robots);
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CLOCK_COLUMNS)?;
    for k in 0..r.times.len() {
        for (c, id) in ids.iter().enumerate() {
            let (t, e, s) = (r.clock_truth[k][c], r.clock_errors[k][c], r.clock_std[k][c]);
            w.write_record([
                (k + 1).to_string(),
                f(r.times[k]),
                id.label(),
                f(t.tau),
                f(t.gamma),
                f(e.tau),
                f(e.gamma),
                f(3.0 * s.tau),
                f(3.0 * s.gamma),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_poses<W: Write>(out: W, times: &[f64], poses: &[Vec<ExtendedPose>]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(POSE_COLUMNS)?;
    for (k, step) in poses.iter().enumerate() {
        for (j, p) in step.iter().enumerate() {
            let mut row = vec![(k + 1).to_string(), f(times[k]), (j + 1).to_string()];
            row.extend(p.rotation.log().iter().map(|v| f(*v)));
            row.extend(p.velocity.iter().map(|v| f(*v)));
            row.extend(p.position.iter().map(|v| f(*v)));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// True relative poses; attitude as a rotation vector.
pub fn write_truth<W: Write>(out: W, r: &ScenarioResult) -> csv::Result<()> {
    write_poses(out, &r.times, &r.truth)
}

pub fn write_estimates<W: Write>(out: W, r: &ScenarioResult) -> csv::Result<()> {
    write_poses(out, &r.times, &r.estimates)
}

/// Full-state NEES of a single run.
pub fn write_nees<W: Write>(out: W, r: &ScenarioResult) -> csv::Result<()> {
    let dim = r.nees_dim() as f64;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(NEES_COLUMNS)?;
    for (k, v) in r.nees.iter().enumerate() {
        w.write_record([(k + 1).to_string(), f(r.times[k]), f(*v), f(v / dim)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summaries<W: Write>(out: W, trials: &[TrialSummary]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_COLUMNS)?;
    for t in trials {
        let c = &t.counters;
        w.write_record([
            t.trial.to_string(),
            t.seed.to_string(),
            t.mode.name().to_string(),
            f(t.mean_position_rmse),
            f(t.clock_offset_rmse),
            c.transactions.to_string(),
            c.delivered.to_string(),
            c.accepted.to_string(),
            c.rejected.to_string(),
            c.skipped.to_string(),
            c.drops.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{run_scenario, ScenarioConfig};

    #[test]
    fn streams_have_one_row_per_step_and_entity() {
        let cfg = ScenarioConfig {
            duration_s: 0.2,
            ..Default::default()
        };
        let r = run_scenario(&cfg).unwrap();
        let steps = r.times.len();
        let count = |buf: Vec<u8>| String::from_utf8(buf).unwrap().lines().count() - 1;
        let mut b = Vec::new();
        write_errors(&mut b, &r).unwrap();
        assert_eq!(count(b), steps * 2);
        let mut b = Vec::new();
        write_clocks(&mut b, &r).unwrap();
        assert_eq!(count(b), steps * 5);
        let mut b = Vec::new();
        write_truth(&mut b, &r).unwrap();
        assert_eq!(count(b), steps * 2);
        let mut b = Vec::new();
        write_estimates(&mut b, &r).unwrap();
        assert_eq!(count(b), steps * 2);
        let mut b = Vec::new();
        write_nees(&mut b, &r).unwrap();
        assert_eq!(count(b), steps);
    }

    #[test]
    fn header_widths_match_rows() {
        assert_eq!(error_columns().len(), 21);
        let cfg = ScenarioConfig {
            duration_s: 0.05,
            ..Default::default()
        };
        let r = run_scenario(&cfg).unwrap();
        let mut b = Vec::new();
        write_truth(&mut b, &r).unwrap();
        let text = String::from_utf8(b).unwrap();
        for line in text.lines() {
            assert_eq!(line.split(',').count(), POSE_COLUMNS.len());
        }
    }
}
