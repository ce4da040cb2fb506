//! Performance metrics: pure per-step penalty functions and an accumulator
//! that evaluates one of them against the live state once per control step.
//!
//! Flow-shaped inputs accept either a link id (average flow through the
//! link) or a node id (total inflow arriving at the node, which for an
//! outfall is the discharge leaving the system there).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hydro::SimState;
use crate::model::Network;

/// Summed exceedance over any number of flows plus a fixed penalty per
/// flooded node. Flows and flood flags are independent lists: a step can be
/// charged for both at once.
pub fn flow_exceedance_step(
    flows_m3s: &[f64],
    flooded: &[bool],
    threshold: f64,
    flood_penalty: f64,
) -> f64 {
    let exceedance: f64 = flows_m3s.iter().map(|q| (q - threshold).max(0.0)).sum();
    exceedance + flood_penalty * flooded.iter().filter(|&&f| f).count() as f64
}

/// Per-location threshold penalty where flooding dominates: a flooded
/// location costs exactly `flood_penalty` regardless of its flow, otherwise
/// flow above the threshold costs the overage. `flows` and `flooded` pair up
/// index by index.
pub fn threshold_flood_step(
    flows_m3s: &[f64],
    flooded: &[bool],
    threshold: f64,
    flood_penalty: f64,
) -> f64 {
    flows_m3s
        .iter()
        .zip(flooded)
        .map(|(&q, &f)| {
            if f {
                flood_penalty
            } else {
                (q - threshold).max(0.0)
            }
        })
        .sum()
}

/// Untreated overflow volume plus heavily weighted flooding, both in m³.
pub fn cso_flood_step(cso_m3: &[f64], flood_m3: &[f64]) -> f64 {
    cso_m3.iter().sum::<f64>() + 1e6 * flood_m3.iter().sum::<f64>()
}

/// Plain summed flood volume, m³.
pub fn flood_volume_step(flood_m3: &[f64]) -> f64 {
    flood_m3.iter().sum()
}

/// Acceptable depth envelope around an ideal operating band. Depths inside
/// the ideal band cost nothing; between ideal and edge the cost climbs
/// exponentially from 0 to 10⁶; outside the edge it saturates at 10⁶.
/// The lower pair is optional for basins with no draw-down floor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthBands {
    pub edge_low: Option<f64>,
    pub ideal_low: Option<f64>,
    pub ideal_high: f64,
    pub edge_high: f64,
}

const BAND_CEILING: f64 = 1e6;

/// Penalty for one basin depth against its bands.
pub fn depth_band_penalty(depth_m: f64, bands: &DepthBands) -> f64 {
    let base = BAND_CEILING + 1.0;
    if depth_m > bands.ideal_high {
        if depth_m >= bands.edge_high {
            return BAND_CEILING;
        }
        let frac = (depth_m - bands.ideal_high) / (bands.edge_high - bands.ideal_high);
        return base.powf(frac) - 1.0;
    }
    if let (Some(edge), Some(ideal)) = (bands.edge_low, bands.ideal_low) {
        if depth_m < ideal {
            if depth_m <= edge {
                return BAND_CEILING;
            }
            let frac = (ideal - depth_m) / (ideal - edge);
            return base.powf(frac) - 1.0;
        }
    }
    0.0
}

/// Penalty on total outflow surges: free below the threshold, approaching
/// 1.0 as the outflow dwarfs it.
pub fn outflow_surge_penalty(outflow_m3s: f64, threshold_m3s: f64) -> f64 {
    if outflow_m3s <= threshold_m3s {
        0.0
    } else {
        (1.0 - threshold_m3s / outflow_m3s).powi(6)
    }
}

/// Depth-band holding cost across basins, plus 10⁶ per flooded node, plus
/// the outflow surge penalty.
pub fn band_hold_step(
    depths_m: &[f64],
    bands: &[DepthBands],
    flooded: &[bool],
    outflow_m3s: f64,
    outflow_threshold_m3s: f64,
) -> f64 {
    let band_cost: f64 = depths_m
        .iter()
        .zip(bands)
        .map(|(&d, b)| depth_band_penalty(d, b))
        .sum();
    band_cost
        + BAND_CEILING * flooded.iter().filter(|&&f| f).count() as f64
        + outflow_surge_penalty(outflow_m3s, outflow_threshold_m3s)
}

/// Pollutant-load threshold penalty where any flooding dominates.
pub fn load_threshold_step(load: f64, threshold: f64, any_flooded: bool) -> f64 {
    if any_flooded {
        1e6
    } else {
        (load - threshold).max(0.0)
    }
}

/// Weighted overflow cost: creek overflows count double, throttle movement
/// costs a little, and volume reaching treatment earns credit.
pub fn weighted_cso_step(
    river_cso_m3: &[f64],
    creek_cso_m3: &[f64],
    throttle_change_m3: &[f64],
    treated_m3: f64,
) -> f64 {
    river_cso_m3.iter().sum::<f64>()
        + 2.0 * creek_cso_m3.iter().sum::<f64>()
        + 0.01 * throttle_change_m3.iter().sum::<f64>()
        - 0.1 * treated_m3
}

fn default_outflow_threshold() -> f64 {
    12.0
}

fn default_load_threshold() -> f64 {
    1.05
}

/// Metric selection and parameters as they appear in scenario configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case", deny_unknown_fields)]
pub enum MetricConfig {
    /// Flow exceedance over a threshold plus flood penalties. With
    /// `paired: false` (default) the flows and flood nodes are independent
    /// lists and penalties add; with `paired: true` they zip up per
    /// location and flooding replaces the exceedance term.
    FlowThresholdFlood {
        threshold: f64,
        flood_penalty: f64,
        flows: Vec<String>,
        flood_nodes: Vec<String>,
        #[serde(default)]
        paired: bool,
    },
    /// Overflow volumes at the named nodes plus weighted flooding.
    CsoFlood {
        cso_nodes: Vec<String>,
        flood_nodes: Vec<String>,
    },
    /// Summed flood volume at the named nodes.
    FloodVolume { nodes: Vec<String> },
    /// Hold basin depths inside per-basin bands while limiting outflow.
    DeltaBands {
        basins: Vec<BasinBandConfig>,
        flood_nodes: Vec<String>,
        outflow: String,
        #[serde(default = "default_outflow_threshold")]
        outflow_threshold: f64,
    },
    /// Keep an externally supplied load series under a threshold.
    TssThreshold {
        series: String,
        #[serde(default = "default_load_threshold")]
        threshold: f64,
    },
    /// Weighted overflow volumes with a treatment credit.
    WeightedCso {
        river_nodes: Vec<String>,
        creek_nodes: Vec<String>,
        throttle_links: Vec<String>,
        wwtp_node: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasinBandConfig {
    pub node: String,
    pub edge_low: Option<f64>,
    pub ideal_low: Option<f64>,
    pub ideal_high: f64,
    pub edge_high: f64,
}

impl MetricConfig {
    /// The flow threshold this metric guards, if it has one. Used to pick a
    /// default release goal for controllers that need one.
    pub fn flow_threshold(&self) -> Option<f64> {
        match self {
            MetricConfig::FlowThresholdFlood { threshold, .. } => Some(*threshold),
            _ => None,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("metric {field}: {id:?} is neither a link nor a node")]
    UnknownFlowSource { field: &'static str, id: String },
    #[error("metric {field}: unknown node {id:?}")]
    UnknownNode { field: &'static str, id: String },
    #[error("metric {field}: unknown series {id:?}")]
    UnknownSeries { field: &'static str, id: String },
    #[error("metric requires equally long flows and flood_nodes when paired")]
    PairedLengthMismatch,
}

/// Where a flow-shaped metric input reads from.
#[derive(Debug, Clone, Copy)]
enum FlowSource {
    Link(usize),
    NodeInflow(usize),
}

impl FlowSource {
    fn read(self, state: &SimState) -> f64 {
        match self {
            FlowSource::Link(i) => state.link_flow_m3s(i),
            FlowSource::NodeInflow(i) => state.node_inflow_m3s(i),
        }
    }
}

fn resolve_flow(net: &Network, field: &'static str, id: &str) -> Result<FlowSource, MetricError> {
    if let Some(i) = net.link_index(id) {
        Ok(FlowSource::Link(i))
    } else if let Some(i) = net.node_index(id) {
        Ok(FlowSource::NodeInflow(i))
    } else {
        Err(MetricError::UnknownFlowSource {
            field,
            id: id.to_string(),
        })
    }
}

fn resolve_nodes(
    net: &Network,
    field: &'static str,
    ids: &[String],
) -> Result<Vec<usize>, MetricError> {
    ids.iter()
        .map(|id| {
            net.node_index(id).ok_or_else(|| MetricError::UnknownNode {
                field,
                id: id.clone(),
            })
        })
        .collect()
}

enum MetricPlan {
    FlowThresholdFlood {
        threshold: f64,
        flood_penalty: f64,
        flows: Vec<FlowSource>,
        flood_nodes: Vec<usize>,
        paired: bool,
    },
    CsoFlood {
        cso_nodes: Vec<usize>,
        flood_nodes: Vec<usize>,
    },
    FloodVolume {
        nodes: Vec<usize>,
    },
    DeltaBands {
        basin_nodes: Vec<usize>,
        bands: Vec<DepthBands>,
        flood_nodes: Vec<usize>,
        outflow: FlowSource,
        outflow_threshold: f64,
    },
    TssThreshold {
        series: String,
        threshold: f64,
    },
    WeightedCso {
        river_nodes: Vec<usize>,
        creek_nodes: Vec<usize>,
        throttle_links: Vec<usize>,
        wwtp_node: usize,
        prev_throttle_m3s: Vec<f64>,
    },
}

/// Evaluates a metric once per control step and keeps the running total.
pub struct MetricAccumulator {
    plan: MetricPlan,
    total: f64,
}

impl MetricAccumulator {
    pub fn new(config: &MetricConfig, net: &Network) -> Result<Self, MetricError> {
        let plan = match config {
            MetricConfig::FlowThresholdFlood {
                threshold,
                flood_penalty,
                flows,
                flood_nodes,
                paired,
            } => {
                if *paired && flows.len() != flood_nodes.len() {
                    return Err(MetricError::PairedLengthMismatch);
                }
                MetricPlan::FlowThresholdFlood {
                    threshold: *threshold,
                    flood_penalty: *flood_penalty,
                    flows: flows
                        .iter()
                        .map(|id| resolve_flow(net, "flows", id))
                        .collect::<Result<_, _>>()?,
                    flood_nodes: resolve_nodes(net, "flood_nodes", flood_nodes)?,
                    paired: *paired,
                }
            }
            MetricConfig::CsoFlood {
                cso_nodes,
                flood_nodes,
            } => MetricPlan::CsoFlood {
                cso_nodes: resolve_nodes(net, "cso_nodes", cso_nodes)?,
                flood_nodes: resolve_nodes(net, "flood_nodes", flood_nodes)?,
            },
            MetricConfig::FloodVolume { nodes } => MetricPlan::FloodVolume {
                nodes: resolve_nodes(net, "nodes", nodes)?,
            },
            MetricConfig::DeltaBands {
                basins,
                flood_nodes,
                outflow,
                outflow_threshold,
            } => MetricPlan::DeltaBands {
                basin_nodes: resolve_nodes(
                    net,
                    "basins",
                    &basins.iter().map(|b| b.node.clone()).collect::<Vec<_>>(),
                )?,
                bands: basins
                    .iter()
                    .map(|b| DepthBands {
                        edge_low: b.edge_low,
                        ideal_low: b.ideal_low,
                        ideal_high: b.ideal_high,
                        edge_high: b.edge_high,
                    })
                    .collect(),
                flood_nodes: resolve_nodes(net, "flood_nodes", flood_nodes)?,
                outflow: resolve_flow(net, "outflow", outflow)?,
                outflow_threshold: *outflow_threshold,
            },
            MetricConfig::TssThreshold { series, threshold } => {
                if !net.timeseries().contains_key(series) {
                    return Err(MetricError::UnknownSeries {
                        field: "series",
                        id: series.clone(),
                    });
                }
                MetricPlan::TssThreshold {
                    series: series.clone(),
                    threshold: *threshold,
                }
            }
            MetricConfig::WeightedCso {
                river_nodes,
                creek_nodes,
                throttle_links,
                wwtp_node,
            } => MetricPlan::WeightedCso {
                river_nodes: resolve_nodes(net, "river_nodes", river_nodes)?,
                creek_nodes: resolve_nodes(net, "creek_nodes", creek_nodes)?,
                throttle_links: throttle_links
                    .iter()
                    .map(|id| {
                        net.link_index(id).ok_or_else(|| MetricError::UnknownFlowSource {
                            field: "throttle_links",
                            id: id.clone(),
                        })
                    })
                    .collect::<Result<_, _>>()?,
                wwtp_node: net.node_index(wwtp_node).ok_or_else(|| {
                    MetricError::UnknownNode {
                        field: "wwtp_node",
                        id: wwtp_node.clone(),
                    }
                })?,
                prev_throttle_m3s: vec![0.0; throttle_links.len()],
            },
        };
        Ok(MetricAccumulator { plan, total: 0.0 })
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    /// Fold in one just-completed control step of length `dt_s`.
    pub fn update(&mut self, state: &SimState, net: &Network, dt_s: f64) {
        let flooded = |nodes: &[usize]| -> Vec<bool> {
            nodes.iter().map(|&n| state.flood_step_m3(n) > 0.0).collect()
        };
        let flood_volumes =
            |nodes: &[usize]| -> Vec<f64> { nodes.iter().map(|&n| state.flood_step_m3(n)).collect() };
        let step = match &mut self.plan {
            MetricPlan::FlowThresholdFlood {
                threshold,
                flood_penalty,
                flows,
                flood_nodes,
                paired,
            } => {
                let q: Vec<f64> = flows.iter().map(|f| f.read(state)).collect();
                let f = flooded(flood_nodes);
                if *paired {
                    threshold_flood_step(&q, &f, *threshold, *flood_penalty)
                } else {
                    flow_exceedance_step(&q, &f, *threshold, *flood_penalty)
                }
            }
            MetricPlan::CsoFlood {
                cso_nodes,
                flood_nodes,
            } => {
                let cso: Vec<f64> = cso_nodes.iter().map(|&n| state.inflow_step_m3(n)).collect();
                cso_flood_step(&cso, &flood_volumes(flood_nodes))
            }
            MetricPlan::FloodVolume { nodes } => flood_volume_step(&flood_volumes(nodes)),
            MetricPlan::DeltaBands {
                basin_nodes,
                bands,
                flood_nodes,
                outflow,
                outflow_threshold,
            } => {
                let depths: Vec<f64> = basin_nodes.iter().map(|&n| state.depth(n)).collect();
                band_hold_step(
                    &depths,
                    bands,
                    &flooded(flood_nodes),
                    outflow.read(state),
                    *outflow_threshold,
                )
            }
            MetricPlan::TssThreshold { series, threshold } => {
                let load = net
                    .timeseries()
                    .get(series)
                    .map(|ts| ts.value_at(state.clock_s))
                    .unwrap_or(0.0);
                let any = net
                    .nodes()
                    .iter()
                    .enumerate()
                    .any(|(i, _)| state.flood_step_m3(i) > 0.0);
                load_threshold_step(load, *threshold, any)
            }
            MetricPlan::WeightedCso {
                river_nodes,
                creek_nodes,
                throttle_links,
                wwtp_node,
                prev_throttle_m3s,
            } => {
                let river: Vec<f64> =
                    river_nodes.iter().map(|&n| state.inflow_step_m3(n)).collect();
                let creek: Vec<f64> =
                    creek_nodes.iter().map(|&n| state.inflow_step_m3(n)).collect();
                let change: Vec<f64> = throttle_links
                    .iter()
                    .zip(prev_throttle_m3s.iter())
                    .map(|(&l, &prev)| (state.link_flow_m3s(l) - prev).abs() * dt_s)
                    .collect();
                for (slot, &l) in prev_throttle_m3s.iter_mut().zip(throttle_links.iter()) {
                    *slot = state.link_flow_m3s(l);
                }
                weighted_cso_step(&river, &creek, &change, state.inflow_step_m3(*wwtp_node))
            }
        };
        self.total += step;
    }
}
