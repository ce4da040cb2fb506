use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::network::{Network, NodeKind};
use crate::metrics::MetricConfig;

/// What a state query reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    /// Water depth at a node, m.
    Depth,
    /// Stored volume at a node, m³.
    Volume,
    /// Average flow through a link over the last control step, m³/s.
    Flow,
    /// Rate at which a node shed flood volume over the last control step, m³/s.
    FloodingRate,
    /// Current setting of a link, in [0, 1].
    Setting,
    /// Value of a named series at the current clock.
    ExternalSeries,
}

impl Quantity {
    pub fn as_str(self) -> &'static str {
        match self {
            Quantity::Depth => "depth",
            Quantity::Volume => "volume",
            Quantity::Flow => "flow",
            Quantity::FloodingRate => "flooding_rate",
            Quantity::Setting => "setting",
            Quantity::ExternalSeries => "external_series",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateQuery {
    /// Node, link, or series name, depending on the quantity.
    pub target: String,
    pub quantity: Quantity,
}

impl StateQuery {
    pub fn column_name(&self) -> String {
        format!("{}.{}", self.target, self.quantity.as_str())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SpecError {
    #[error("{list} entry {index}: {query} does not resolve: {reason}")]
    BadQuery {
        list: &'static str,
        index: usize,
        query: String,
        reason: String,
    },
    #[error("actions[{index}]: {reason}")]
    BadAsset { index: usize, reason: String },
    #[error("control timestep must be positive, got {0}")]
    BadTimestep(f64),
    #[error("duration {duration} is not a positive multiple of the control timestep {timestep}")]
    BadDuration { duration: f64, timestep: f64 },
    #[error("at least one observable state is required")]
    NoObservables,
}

/// Everything needed to run one control experiment: the network, the event
/// horizon, what a controller may see, and what it may move.
#[derive(Debug, Clone)]
pub struct ScenarioSpec {
    pub name: String,
    pub network: Network,
    pub control_timestep_s: f64,
    pub duration_s: f64,
    /// Queries answered by `Environment::state`, in order.
    pub observable_states: Vec<StateQuery>,
    /// Link ids a controller drives, in action-vector order.
    pub controllable_assets: Vec<String>,
    pub metric: MetricConfig,
    /// Extra queries recorded in the trace but not exposed to controllers.
    pub log_extra: Vec<StateQuery>,
}

impl ScenarioSpec {
    /// Structural checks beyond network validity.
    pub fn validate(&self) -> Result<(), SpecError> {
        if self.control_timestep_s <= 0.0 {
            return Err(SpecError::BadTimestep(self.control_timestep_s));
        }
        let steps = self.duration_s / self.control_timestep_s;
        if self.duration_s <= 0.0 || (steps - steps.round()).abs() > 1e-9 || steps.round() < 1.0 {
            return Err(SpecError::BadDuration {
                duration: self.duration_s,
                timestep: self.control_timestep_s,
            });
        }
        if self.observable_states.is_empty() {
            return Err(SpecError::NoObservables);
        }
        for (list, queries) in [
            ("states", &self.observable_states),
            ("log", &self.log_extra),
        ] {
            for (i, q) in queries.iter().enumerate() {
                if let Err(reason) = self.check_query(q) {
                    return Err(SpecError::BadQuery {
                        list,
                        index: i,
                        query: q.column_name(),
                        reason,
                    });
                }
            }
        }
        for (i, id) in self.controllable_assets.iter().enumerate() {
            match self.network.link_index(id) {
                None => {
                    return Err(SpecError::BadAsset {
                        index: i,
                        reason: format!("unknown link {id:?}"),
                    })
                }
                Some(idx) if !self.network.links()[idx].is_controllable() => {
                    return Err(SpecError::BadAsset {
                        index: i,
                        reason: format!("link {id:?} is a conduit and cannot be driven"),
                    })
                }
                Some(_) => {}
            }
        }
        Ok(())
    }

    fn check_query(&self, q: &StateQuery) -> Result<(), String> {
        let net = &self.network;
        match q.quantity {
            Quantity::Depth | Quantity::Volume | Quantity::FloodingRate => {
                match net.node_index(&q.target) {
                    None => Err(format!("unknown node {:?}", q.target)),
                    Some(i) if matches!(net.nodes()[i].kind, NodeKind::Outfall { .. }) => {
                        Err(format!("outfall {:?} holds no water", q.target))
                    }
                    Some(_) => Ok(()),
                }
            }
            Quantity::Flow | Quantity::Setting => {
                if net.link_index(&q.target).is_some() {
                    Ok(())
                } else {
                    Err(format!("unknown link {:?}", q.target))
                }
            }
            Quantity::ExternalSeries => {
                if net.timeseries().contains_key(&q.target) {
                    Ok(())
                } else {
                    Err(format!("unknown series {:?}", q.target))
                }
            }
        }
    }

    pub fn steps(&self) -> usize {
        (self.duration_s / self.control_timestep_s).round() as usize
    }
}
