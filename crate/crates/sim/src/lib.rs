//! World simulation for cooperative relative navigation.

pub mod montecarlo;
pub mod output;
pub mod scenario;
pub mod schedule;
pub mod trajectory;

pub use montecarlo::{run_monte_carlo, run_trials, MonteCarloResult, TrialSummary};
pub use scenario::{run_scenario, Mode, Scenario, ScenarioConfig, ScenarioError, ScenarioResult};
