//! Whole-run drivers: execute a scenario under a named policy, or fan a
//! batch of runs across threads.

use thiserror::Error;

use crate::controllers::{build_controller, ControllerError};
use crate::env::{load_scenario, EnvError, Environment};
use crate::hydro::EngineConfig;
use crate::model::{ScenarioSpec, SimTrace};

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub controller: String,
    /// Total release budget handed to policies that track one, m³/s.
    pub release_goal_m3s: Option<f64>,
    pub engine: EngineConfig,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            controller: "uncontrolled".to_string(),
            release_goal_m3s: None,
            engine: EngineConfig::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("controller: {0}")]
    Controller(#[from] ControllerError),
}

pub struct RunResult {
    pub scenario: String,
    pub controller: String,
    pub trace: SimTrace,
    /// Water accounting error left at the end of the run, m³.
    pub mass_residual_m3: f64,
}

impl RunResult {
    pub fn performance(&self) -> f64 {
        self.trace.final_performance()
    }
}

/// Drive a scenario from start to finish with a built-in policy.
pub fn run_spec(spec: ScenarioSpec, options: &RunOptions) -> Result<RunResult, RunError> {
    let mut controller = build_controller(&options.controller, &spec, options.release_goal_m3s)?;
    let mut env = Environment::with_engine_config(spec, options.engine)?;
    while !env.done() {
        let observed = env.state();
        let actions = controller.act(&observed, env.current_time_s());
        env.step(&actions)?;
    }
    Ok(RunResult {
        scenario: env.spec().name.clone(),
        controller: controller.name().to_string(),
        mass_residual_m3: env.sim_state().mass_residual_m3(),
        trace: env.into_trace(),
    })
}

/// `run_spec` for a built-in scenario name or a config path.
pub fn run_named(scenario: &str, options: &RunOptions) -> Result<RunResult, RunError> {
    let loaded = load_scenario(scenario)?;
    run_spec(loaded.spec, options)
}

/// Run one scenario under each named controller. Runs are independent, so
/// the batch spreads across threads when the `parallel` feature is active.
pub fn compare(
    spec: &ScenarioSpec,
    controllers: &[String],
    release_goal_m3s: Option<f64>,
    engine: EngineConfig,
) -> Result<Vec<RunResult>, RunError> {
    let jobs: Vec<(ScenarioSpec, RunOptions)> = controllers
        .iter()
        .map(|name| {
            (
                spec.clone(),
                RunOptions {
                    controller: name.clone(),
                    release_goal_m3s,
                    engine,
                },
            )
        })
        .collect();
    map_ordered(jobs, |(spec, options)| run_spec(spec, &options))
        .into_iter()
        .collect()
}

/// Map a batch, keeping input order. Parallel when the `parallel` feature
/// is enabled; otherwise identical to [`map_ordered_sequential`].
#[cfg(feature = "parallel")]
pub fn map_ordered<T, R, F>(items: Vec<T>, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Send + Sync,
{
    use rayon::prelude::*;
    items.into_par_iter().map(f).collect()
}

/// Map a batch, keeping input order. Parallel when the `parallel` feature
/// is enabled; otherwise identical to [`map_ordered_sequential`].
#[cfg(not(feature = "parallel"))]
pub fn map_ordered<T, R, F>(items: Vec<T>, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Send + Sync,
{
    items.into_iter().map(f).collect()
}

/// Single-threaded batch map, independent of feature flags. Exists so the
/// two execution paths can be compared directly.
pub fn map_ordered_sequential<T, R, F>(items: Vec<T>, mut f: F) -> Vec<R>
where
    F: FnMut(T) -> R,
{
    items.into_iter().map(&mut f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uncontrolled_run_completes() {
        let result = run_named("theta", &RunOptions::default()).unwrap();
        assert_eq!(result.scenario, "theta");
        assert_eq!(result.controller, "uncontrolled");
        assert_eq!(result.trace.records.len(), 96);
        assert!(result.mass_residual_m3.abs() < 1e-6 * 1e4);
    }

    #[test]
    fn unknown_controller_is_rejected() {
        let options = RunOptions {
            controller: "pid".to_string(),
            ..RunOptions::default()
        };
        assert!(matches!(
            run_named("theta", &options),
            Err(RunError::Controller(ControllerError::Unknown { .. }))
        ));
    }

    #[test]
    fn compare_keeps_controller_order() {
        let spec = load_scenario("theta").unwrap().spec;
        let names: Vec<String> = ["equal-filling", "uncontrolled"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let results = compare(&spec, &names, None, EngineConfig::default()).unwrap();
        assert_eq!(results.len(), 2);
        assert_eq!(results[0].controller, "equal-filling");
        assert_eq!(results[1].controller, "uncontrolled");
    }

    #[test]
    fn parallel_and_sequential_batches_agree() {
        let items: Vec<u64> = (0..64).collect();
        let a = map_ordered(items.clone(), |x| x * x);
        let b = map_ordered_sequential(items, |x| x * x);
        assert_eq!(a, b);
    }
}
