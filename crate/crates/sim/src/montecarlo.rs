//! Parallel Monte-Carlo campaigns with paired seeds.

use rayon::prelude::*;
use relnav::eval::{average_nees, NeesPoint};
use serde::{Deserialize, Serialize};

use crate::scenario::{run_scenario, Counters, Mode, ScenarioConfig, ScenarioError, ScenarioResult};

/// Seed of trial `trial`; shared by every mode of a campaign.
pub fn trial_seed(base: u64, trial: usize) -> u64 {
    base.wrapping_add(trial as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub trial: usize,
    pub seed: u64,
    pub mode: Mode,
    /// Position RMSE of each neighbour [m].
    pub position_rmse: Vec<f64>,
    pub mean_position_rmse: f64,
    pub clock_offset_rmse: f64,
    pub counters: Counters,
}

impl TrialSummary {
    pub fn from_result(trial: usize, r: &ScenarioResult) -> Self {
        Self {
            trial,
            seed: r.config.seed,
            mode: r.config.mode,
            position_rmse: r.position_rmse(),
            mean_position_rmse: r.mean_position_rmse(),
            clock_offset_rmse: r.clock_offset_rmse(),
            counters: r.counters,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloResult {
    pub config: ScenarioConfig,
    /// Sorted by trial index.
    pub trials: Vec<TrialSummary>,
    pub nees: Vec<NeesPoint>,
    /// Mean over trials of the per-trial position RMSE.
    pub position_armse: f64,
    pub clock_offset_armse: f64,
}

/// Runs `n_trials` seeds in parallel, handing each full result to
/// `visit` before it is dropped.
pub fn run_trials<F>(config: &ScenarioConfig, n_trials: usize, visit: F) -> Result<MonteCarloResult, ScenarioError>
where
    F: Fn(usize, &ScenarioResult) -> Result<(), ScenarioError> + Sync,
{
    if n_trials == 0 {
        return Err(ScenarioError::Config("at least one trial is required".into()));
    }
    config.validate()?;
    let per_trial: Vec<(TrialSummary, Vec<f64>)> = (0..n_trials)
        .into_par_iter()
        .map(|trial| {
            let cfg = ScenarioConfig {
                seed: trial_seed(config.seed, trial),
                ..config.clone()
            };
            let r = run_scenario(&cfg)?;
            visit(trial, &r)?;
            Ok((TrialSummary::from_result(trial, &r), r.nees))
        })
        .collect::<Result<_, ScenarioError>>()?;
    let (trials, streams): (Vec<_>, Vec<_>) = per_trial.into_iter().unzip();
    let dim = relnav::estimator::state_dim(config.robots);
    let nees = average_nees(&streams, dim).map_err(|e| ScenarioError::Numerical {
        step: 0,
        reason: e.to_string(),
    })?;
    let mean = |f: fn(&TrialSummary) -> f64| trials.iter().map(f).sum::<f64>() / trials.len() as f64;
    Ok(MonteCarloResult {
        config: config.clone(),
        position_armse: mean(|t| t.mean_position_rmse),
        clock_offset_armse: mean(|t| t.clock_offset_rmse),
        trials,
        nees,
    })
}

pub fn run_monte_carlo(config: &ScenarioConfig, n_trials: usize) -> Result<MonteCarloResult, ScenarioError> {
    run_trials(config, n_trials, |_, _| Ok(()))
}
