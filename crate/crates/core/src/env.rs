//! The control loop: load a scenario, then alternate observing state and
//! applying settings until the event horizon, accumulating cost as you go.

use std::fs;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::hydro::{Engine, EngineConfig, EngineError, SimState};
use crate::inp::{self, InpError, Warning};
use crate::metrics::{MetricAccumulator, MetricConfig, MetricError};
use crate::model::{
    Network, ScenarioSpec, SimTrace, SpecError, StateQuery, StepRecord, Violation,
};

/// On-disk scenario description. The network lives in a separate file named
/// by `inp`, resolved relative to this config's directory.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub inp: String,
    pub control_timestep_s: f64,
    pub duration_s: f64,
    /// Queries exposed to controllers, in observation-vector order.
    pub states: Vec<StateQuery>,
    /// Controllable link ids, in action-vector order.
    pub actions: Vec<String>,
    pub metric: MetricConfig,
    /// Extra queries recorded in the trace only.
    #[serde(default)]
    pub log: Vec<StateQuery>,
}

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("scenario config: {0}")]
    Config(#[from] serde_yaml::Error),
    #[error("network file: {0}")]
    Inp(#[from] InpError),
    #[error("network is invalid: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    InvalidNetwork(Vec<Violation>),
    #[error("scenario: {0}")]
    Spec(#[from] SpecError),
    #[error("metric: {0}")]
    Metric(#[from] MetricError),
    #[error("engine: {0}")]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("unknown scenario {0:?}: not a built-in name and not a readable file")]
    UnknownScenario(String),
    #[error("expected {expected} action value(s), got {got}")]
    ActionCount { expected: usize, got: usize },
    #[error("action value {index} is not finite")]
    NonFiniteAction { index: usize },
    #[error("the run is already complete")]
    Done,
}

/// Scenarios compiled into the library, addressable by name.
const BUILTINS: [(&str, &str, &str); 2] = [
    (
        "theta",
        include_str!("../scenarios/theta.yaml"),
        include_str!("../scenarios/theta.inp"),
    ),
    (
        "gamma-mini",
        include_str!("../scenarios/gamma_mini.yaml"),
        include_str!("../scenarios/gamma_mini.inp"),
    ),
];

pub fn builtin_names() -> Vec<&'static str> {
    BUILTINS.iter().map(|(n, _, _)| *n).collect()
}

#[derive(Debug)]
pub struct LoadedScenario {
    pub spec: ScenarioSpec,
    pub warnings: Vec<Warning>,
}

/// Combine a parsed config with network text into a validated spec.
pub fn assemble_scenario(config: ScenarioConfig, inp_text: &str) -> Result<LoadedScenario, EnvError> {
    let parsed = inp::parse_inp(inp_text)?;
    let spec = ScenarioSpec {
        name: config.name,
        network: parsed.network,
        control_timestep_s: config.control_timestep_s,
        duration_s: config.duration_s,
        observable_states: config.states,
        controllable_assets: config.actions,
        metric: config.metric,
        log_extra: config.log,
    };
    spec.validate()?;
    Ok(LoadedScenario {
        spec,
        warnings: parsed.warnings,
    })
}

/// Resolve `name_or_path` as a built-in scenario name first, then as a path
/// to a YAML config on disk.
pub fn load_scenario(name_or_path: &str) -> Result<LoadedScenario, EnvError> {
    if let Some((_, yaml, inp_text)) = BUILTINS.iter().find(|(n, _, _)| *n == name_or_path) {
        let config: ScenarioConfig = serde_yaml::from_str(yaml)?;
        return assemble_scenario(config, inp_text);
    }
    let path = Path::new(name_or_path);
    if !path.is_file() {
        return Err(EnvError::UnknownScenario(name_or_path.to_string()));
    }
    let yaml = fs::read_to_string(path)?;
    let config: ScenarioConfig = serde_yaml::from_str(&yaml)?;
    let inp_path = path.parent().unwrap_or(Path::new(".")).join(&config.inp);
    let inp_text = fs::read_to_string(&inp_path)?;
    assemble_scenario(config, &inp_text)
}

/// What `Environment::step` hands back.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub observations: Vec<f64>,
    pub done: bool,
    pub performance: f64,
}

/// A single simulation run driven step by step from outside.
pub struct Environment {
    spec: ScenarioSpec,
    engine: Engine,
    state: SimState,
    accumulator: MetricAccumulator,
    trace: SimTrace,
    /// Link index per controllable asset.
    asset_links: Vec<usize>,
    /// Node indices that can flood / that terminate the system.
    flood_nodes: Vec<usize>,
    outfall_nodes: Vec<usize>,
    steps_done: usize,
    steps_total: usize,
}

impl Environment {
    pub fn new(spec: ScenarioSpec) -> Result<Self, EnvError> {
        Self::with_engine_config(spec, EngineConfig::default())
    }

    pub fn with_engine_config(spec: ScenarioSpec, config: EngineConfig) -> Result<Self, EnvError> {
        let violations = spec.network.validate();
        if !violations.is_empty() {
            return Err(EnvError::InvalidNetwork(violations));
        }
        spec.validate()?;
        let engine = Engine::new(&spec.network, config)?;
        let accumulator = MetricAccumulator::new(&spec.metric, &spec.network)?;
        let state = SimState::new(&spec.network);
        let net = &spec.network;
        let flood_nodes: Vec<usize> = (0..net.nodes().len())
            .filter(|&i| !net.nodes()[i].is_outfall())
            .collect();
        let outfall_nodes: Vec<usize> = (0..net.nodes().len())
            .filter(|&i| net.nodes()[i].is_outfall())
            .collect();
        let trace = SimTrace {
            observable_columns: spec
                .observable_states
                .iter()
                .map(StateQuery::column_name)
                .collect(),
            log_columns: spec.log_extra.iter().map(StateQuery::column_name).collect(),
            setting_columns: spec.controllable_assets.clone(),
            flood_nodes: flood_nodes.iter().map(|&i| net.nodes()[i].id.clone()).collect(),
            outfall_nodes: outfall_nodes.iter().map(|&i| net.nodes()[i].id.clone()).collect(),
            records: Vec::new(),
        };
        let asset_links = spec
            .controllable_assets
            .iter()
            .map(|id| net.link_index(id).expect("validated asset"))
            .collect();
        let steps_total = spec.steps();
        Ok(Environment {
            spec,
            engine,
            state,
            accumulator,
            trace,
            asset_links,
            flood_nodes,
            outfall_nodes,
            steps_done: 0,
            steps_total,
        })
    }

    pub fn spec(&self) -> &ScenarioSpec {
        &self.spec
    }

    pub fn sim_state(&self) -> &SimState {
        &self.state
    }

    pub fn current_time_s(&self) -> f64 {
        self.state.clock_s
    }

    pub fn done(&self) -> bool {
        self.steps_done >= self.steps_total
    }

    /// Total cost accumulated so far; lower is better.
    pub fn performance(&self) -> f64 {
        self.accumulator.total()
    }

    /// Current observation vector, in the order declared by the scenario.
    pub fn state(&self) -> Vec<f64> {
        self.read(&self.spec.observable_states)
    }

    fn read(&self, queries: &[StateQuery]) -> Vec<f64> {
        queries
            .iter()
            .map(|q| self.state.lookup(&self.spec.network, q).unwrap_or(0.0))
            .collect()
    }

    /// Apply one setting per controllable asset and advance one control
    /// step. Values outside [0, 1] are clamped with a warning; non-finite
    /// values are rejected.
    pub fn step(&mut self, actions: &[f64]) -> Result<StepOutcome, EnvError> {
        if self.done() {
            return Err(EnvError::Done);
        }
        if actions.len() != self.asset_links.len() {
            return Err(EnvError::ActionCount {
                expected: self.asset_links.len(),
                got: actions.len(),
            });
        }
        if let Some(index) = actions.iter().position(|a| !a.is_finite()) {
            return Err(EnvError::NonFiniteAction { index });
        }
        let mut applied = Vec::with_capacity(actions.len());
        for (k, (&link, &raw)) in self.asset_links.iter().zip(actions).enumerate() {
            let value = raw.clamp(0.0, 1.0);
            if value != raw {
                log::warn!(
                    "setting for {:?} clamped from {raw} to {value}",
                    self.spec.controllable_assets[k]
                );
            }
            self.state.set_setting(link, value);
            applied.push(value);
        }

        let dt = self.spec.control_timestep_s;
        self.engine.advance(&self.spec.network, &mut self.state, dt)?;
        self.accumulator.update(&self.state, &self.spec.network, dt);
        self.steps_done += 1;

        let observations = self.state();
        let performance = self.accumulator.total();
        self.trace.records.push(StepRecord {
            time_s: self.state.clock_s,
            observables: observations.clone(),
            log: self.read(&self.spec.log_extra),
            settings: applied,
            flood_m3: self
                .flood_nodes
                .iter()
                .map(|&i| self.state.flood_step_m3(i))
                .collect(),
            outfall_m3s: self
                .outfall_nodes
                .iter()
                .map(|&i| self.state.node_inflow_m3s(i))
                .collect(),
            performance_cumulative: performance,
        });

        Ok(StepOutcome {
            observations,
            done: self.done(),
            performance,
        })
    }

    pub fn trace(&self) -> &SimTrace {
        &self.trace
    }

    pub fn into_trace(self) -> SimTrace {
        self.trace
    }

    /// Convenience for policies that need the network.
    pub fn network(&self) -> &Network {
        &self.spec.network
    }
}
