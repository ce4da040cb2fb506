//! Reduced-order hydraulics: storage routing on a DAG with explicit Euler
//! substeps.
//!
//! Each control step is split into substeps no longer than
//! [`EngineConfig::max_substep_s`]. Within a substep, nodes are visited in
//! topological order; outflows are computed from start-of-substep depths,
//! scaled down proportionally if they would overdraw the node, and delivered
//! downstream in the same substep (conduits convey instantly unless they
//! declare a whole-control-step delay). Water above a node's max depth
//! leaves the system as flood volume. Every m³ is tracked in a mass ledger:
//! inflow = Δstored + outfall + flooded, to within float rounding.

use std::collections::VecDeque;

use thiserror::Error;

use crate::model::{
    Curve, LinkKind, Network, NodeKind, OutfallBoundary, Quantity, StateQuery, TimeSeries,
};

pub const GRAVITY_M_S2: f64 = 9.80665;

/// Notional plan area of a junction, m². Junctions are modelled as shallow
/// stores so that orifices and weirs hung off them see a head and so that
/// excess inflow can pond up to max depth before flooding.
pub const JUNCTION_PLAN_AREA_M2: f64 = 10.0;

pub const DEFAULT_MAX_SUBSTEP_S: f64 = 30.0;

/// Runoff from a subcatchment, m³/s. Intensity is rainfall in mm/hr.
pub fn runoff_m3s(coefficient: f64, intensity_mm_hr: f64, area_m2: f64) -> f64 {
    coefficient * (intensity_mm_hr / 3.6e6) * area_m2
}

/// Sharp-edged orifice discharge, m³/s. The setting scales the open area;
/// non-positive head gives zero flow.
pub fn orifice_flow_m3s(cd: f64, full_open_area: f64, setting: f64, head_m: f64) -> f64 {
    if head_m <= 0.0 {
        return 0.0;
    }
    cd * (setting * full_open_area) * (2.0 * GRAVITY_M_S2 * head_m).sqrt()
}

/// Rectangular weir discharge, m³/s. The setting lowers the effective crest
/// from the upstream node's max depth (fully raised, 0.0) down to the
/// physical crest height (fully lowered, 1.0).
pub fn weir_flow_m3s(
    cw: f64,
    crest_length: f64,
    crest_height: f64,
    node_max_depth: f64,
    setting: f64,
    depth_m: f64,
) -> f64 {
    let effective_crest = crest_height + (1.0 - setting) * (node_max_depth - crest_height);
    let head = (depth_m - effective_crest).max(0.0);
    cw * crest_length * head.powf(1.5)
}

/// Pump discharge, m³/s. Pumps are binary: settings round to the nearest of
/// {0, 1} with ties going on. A dry upstream node pumps nothing; otherwise
/// the depth-to-flow curve is interpolated and clamped at its endpoints.
pub fn pump_flow_m3s(curve: &Curve, setting: f64, depth_m: f64) -> f64 {
    if setting < 0.5 || depth_m <= 0.0 {
        return 0.0;
    }
    curve.value_at(depth_m).max(0.0)
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("network is not runnable: {0}")]
    BadNetwork(String),
    #[error("non-finite water state at node {node:?} (t = {t_s} s)")]
    NonFinite { node: String, t_s: f64 },
}

#[derive(Debug, Clone, Copy)]
pub struct EngineConfig {
    /// Upper bound on the integration substep, s.
    pub max_substep_s: f64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            max_substep_s: DEFAULT_MAX_SUBSTEP_S,
        }
    }
}

/// Running totals of every m³ that entered or left the system.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MassLedger {
    pub inflow_m3: f64,
    pub outfall_m3: f64,
    pub flooded_m3: f64,
}

/// Mutable water state of one simulation. Indices align with the network's
/// node and link order.
#[derive(Debug, Clone)]
pub struct SimState {
    pub clock_s: f64,
    volume_m3: Vec<f64>,
    depth_m: Vec<f64>,
    setting: Vec<f64>,
    /// Volumes queued inside delayed conduits; one slot per pending step.
    pending_m3: Vec<VecDeque<f64>>,
    /// Per-step aggregates, reset at the start of each control step.
    inflow_step_m3: Vec<f64>,
    flood_step_m3: Vec<f64>,
    link_flow_step_m3: Vec<f64>,
    /// Control step length the aggregates were accumulated over, s.
    last_dt_s: f64,
    pub ledger: MassLedger,
}

impl SimState {
    /// Dry initial state: empty nodes, all settings at 1.0.
    pub fn new(network: &Network) -> Self {
        let n = network.nodes().len();
        let pending = network
            .links()
            .iter()
            .map(|l| match l.kind {
                LinkKind::Conduit { delay_steps, .. } if delay_steps > 0 => {
                    let mut q = VecDeque::with_capacity(delay_steps as usize);
                    q.extend(std::iter::repeat_n(0.0, delay_steps as usize));
                    q
                }
                _ => VecDeque::new(),
            })
            .collect();
        SimState {
            clock_s: 0.0,
            volume_m3: vec![0.0; n],
            depth_m: vec![0.0; n],
            setting: vec![1.0; network.links().len()],
            pending_m3: pending,
            inflow_step_m3: vec![0.0; n],
            flood_step_m3: vec![0.0; n],
            link_flow_step_m3: vec![0.0; network.links().len()],
            last_dt_s: 0.0,
            ledger: MassLedger::default(),
        }
    }

    pub fn depth(&self, node: usize) -> f64 {
        self.depth_m[node]
    }

    pub fn volume(&self, node: usize) -> f64 {
        self.volume_m3[node]
    }

    pub fn setting(&self, link: usize) -> f64 {
        self.setting[link]
    }

    pub fn set_setting(&mut self, link: usize, value: f64) {
        self.setting[link] = value;
    }

    /// Volume shed above max depth during the last control step, m³.
    pub fn flood_step_m3(&self, node: usize) -> f64 {
        self.flood_step_m3[node]
    }

    /// Volume that arrived at the node during the last control step, m³.
    pub fn inflow_step_m3(&self, node: usize) -> f64 {
        self.inflow_step_m3[node]
    }

    /// Average flow over the last control step, m³/s.
    pub fn link_flow_m3s(&self, link: usize) -> f64 {
        if self.last_dt_s > 0.0 {
            self.link_flow_step_m3[link] / self.last_dt_s
        } else {
            0.0
        }
    }

    /// Average inflow rate at a node over the last control step, m³/s.
    /// For outfalls this is the discharge leaving the system there.
    pub fn node_inflow_m3s(&self, node: usize) -> f64 {
        if self.last_dt_s > 0.0 {
            self.inflow_step_m3[node] / self.last_dt_s
        } else {
            0.0
        }
    }

    pub fn flooding_rate_m3s(&self, node: usize) -> f64 {
        if self.last_dt_s > 0.0 {
            self.flood_step_m3[node] / self.last_dt_s
        } else {
            0.0
        }
    }

    /// Water held anywhere in the system: node storage plus volumes in
    /// transit inside delayed conduits.
    pub fn total_stored_m3(&self) -> f64 {
        self.volume_m3.iter().sum::<f64>()
            + self
                .pending_m3
                .iter()
                .map(|q| q.iter().sum::<f64>())
                .sum::<f64>()
    }

    /// inflow − (Δstored + outfall + flooded); zero up to float rounding.
    /// The initial state is dry, so Δstored is the current store.
    pub fn mass_residual_m3(&self) -> f64 {
        self.ledger.inflow_m3
            - (self.total_stored_m3() + self.ledger.outfall_m3 + self.ledger.flooded_m3)
    }

    /// Answer a state query against this state. None if the target does not
    /// resolve; quantities reported per control step read 0.0 before the
    /// first step completes.
    pub fn lookup(&self, network: &Network, query: &StateQuery) -> Option<f64> {
        match query.quantity {
            Quantity::Depth => network.node_index(&query.target).map(|i| self.depth_m[i]),
            Quantity::Volume => network.node_index(&query.target).map(|i| self.volume_m3[i]),
            Quantity::FloodingRate => network
                .node_index(&query.target)
                .map(|i| self.flooding_rate_m3s(i)),
            Quantity::Flow => network
                .link_index(&query.target)
                .map(|i| self.link_flow_m3s(i)),
            Quantity::Setting => network.link_index(&query.target).map(|i| self.setting[i]),
            Quantity::ExternalSeries => network
                .timeseries()
                .get(&query.target)
                .map(|ts| ts.value_at(self.clock_s)),
        }
    }
}

#[derive(Debug, Clone)]
struct LinkPlan {
    to: usize,
    delayed: bool,
    /// Receiving-water stage at the downstream end, if the link discharges
    /// into a staged outfall.
    stage: Option<StagePlan>,
}

#[derive(Debug, Clone)]
enum StagePlan {
    Fixed(f64),
    Series(TimeSeries),
}

#[derive(Debug, Clone)]
struct RunoffPlan {
    outlet: usize,
    coefficient: f64,
    area_m2: f64,
    rain: TimeSeries,
}

/// Precomputed routing plan over an immutable network.
#[derive(Debug, Clone)]
pub struct Engine {
    config: EngineConfig,
    topo: Vec<usize>,
    outgoing: Vec<Vec<usize>>,
    link_plans: Vec<LinkPlan>,
    runoff_plans: Vec<RunoffPlan>,
    full_volume_m3: Vec<f64>,
}

impl Engine {
    pub fn new(network: &Network, config: EngineConfig) -> Result<Self, EngineError> {
        let topo = network
            .topological_order()
            .ok_or_else(|| EngineError::BadNetwork("links cycle or dangle".into()))?;
        let mut outgoing = vec![Vec::new(); network.nodes().len()];
        let mut link_plans = Vec::with_capacity(network.links().len());
        for (i, link) in network.links().iter().enumerate() {
            let from = network
                .node_index(&link.from)
                .ok_or_else(|| EngineError::BadNetwork(format!("link {:?} dangles", link.id)))?;
            let to = network
                .node_index(&link.to)
                .ok_or_else(|| EngineError::BadNetwork(format!("link {:?} dangles", link.id)))?;
            outgoing[from].push(i);
            let stage = match &network.nodes()[to].kind {
                NodeKind::Outfall {
                    boundary: OutfallBoundary::FixedStage(s),
                } => Some(StagePlan::Fixed(*s)),
                NodeKind::Outfall {
                    boundary: OutfallBoundary::TimeseriesStage(name),
                } => {
                    let ts = network.timeseries().get(name).ok_or_else(|| {
                        EngineError::BadNetwork(format!("stage series {name:?} missing"))
                    })?;
                    Some(StagePlan::Series(ts.clone()))
                }
                _ => None,
            };
            link_plans.push(LinkPlan {
                to,
                delayed: matches!(link.kind, LinkKind::Conduit { delay_steps, .. } if delay_steps > 0),
                stage,
            });
        }
        let mut runoff_plans = Vec::with_capacity(network.subcatchments().len());
        for sub in network.subcatchments() {
            let outlet = network.node_index(&sub.outlet).ok_or_else(|| {
                EngineError::BadNetwork(format!("subcatchment {:?} outlet missing", sub.id))
            })?;
            let series = network
                .raingages()
                .get(&sub.raingage)
                .and_then(|s| network.timeseries().get(s))
                .ok_or_else(|| {
                    EngineError::BadNetwork(format!("subcatchment {:?} raingage missing", sub.id))
                })?;
            runoff_plans.push(RunoffPlan {
                outlet,
                coefficient: sub.runoff_coefficient,
                area_m2: sub.area_m2,
                rain: series.clone(),
            });
        }
        let full_volume_m3 = network.nodes().iter().map(|n| network.full_volume(n)).collect();
        Ok(Engine {
            config,
            topo,
            outgoing,
            link_plans,
            runoff_plans,
            full_volume_m3,
        })
    }

    pub fn config(&self) -> EngineConfig {
        self.config
    }

    /// Advance one control step. Settings must already be applied to the
    /// state; they stay frozen for the whole step.
    pub fn advance(
        &self,
        network: &Network,
        state: &mut SimState,
        dt_control_s: f64,
    ) -> Result<(), EngineError> {
        let n_sub = (dt_control_s / self.config.max_substep_s).ceil().max(1.0) as usize;
        let dt = dt_control_s / n_sub as f64;
        let nodes = network.nodes();
        let links = network.links();

        state.inflow_step_m3.fill(0.0);
        state.flood_step_m3.fill(0.0);
        state.link_flow_step_m3.fill(0.0);
        state.last_dt_s = dt_control_s;

        // Volumes finishing their transit this step arrive at a steady rate.
        let mut arrival_rate = vec![0.0; links.len()];
        let mut pending_out = vec![0.0; links.len()];
        for (l, plan) in self.link_plans.iter().enumerate() {
            if plan.delayed {
                if let Some(v) = state.pending_m3[l].pop_front() {
                    arrival_rate[l] = v / dt_control_s;
                }
            }
        }

        let mut incoming = vec![0.0; nodes.len()];
        let mut outflows: Vec<(usize, f64)> = Vec::new();
        for sub in 0..n_sub {
            let t = state.clock_s + sub as f64 * dt;
            incoming.iter_mut().for_each(|v| *v = 0.0);
            for plan in &self.runoff_plans {
                let q = runoff_m3s(plan.coefficient, plan.rain.value_at(t), plan.area_m2);
                incoming[plan.outlet] += q * dt;
                state.ledger.inflow_m3 += q * dt;
            }
            for (l, plan) in self.link_plans.iter().enumerate() {
                if arrival_rate[l] > 0.0 {
                    incoming[plan.to] += arrival_rate[l] * dt;
                }
            }

            for &u in &self.topo {
                let node = &nodes[u];
                state.inflow_step_m3[u] += incoming[u];
                if node.is_outfall() {
                    state.ledger.outfall_m3 += incoming[u];
                    continue;
                }
                let depth0 = state.depth_m[u];
                let v_avail = state.volume_m3[u] + incoming[u];

                outflows.clear();
                let mut total_rate = 0.0;
                for &l in &self.outgoing[u] {
                    let plan = &self.link_plans[l];
                    let mut q = match &links[l].kind {
                        LinkKind::Conduit { capacity, .. } => {
                            capacity.unwrap_or(f64::INFINITY).min(v_avail / dt)
                        }
                        LinkKind::Orifice {
                            cd,
                            full_open_area,
                            crest_offset,
                        } => orifice_flow_m3s(
                            *cd,
                            *full_open_area,
                            state.setting[l],
                            depth0 - crest_offset,
                        ),
                        LinkKind::Weir {
                            cw,
                            crest_length,
                            crest_height,
                        } => weir_flow_m3s(
                            *cw,
                            *crest_length,
                            *crest_height,
                            node.max_depth,
                            state.setting[l],
                            depth0,
                        ),
                        LinkKind::Pump { curve } => {
                            pump_flow_m3s(curve, state.setting[l], depth0)
                        }
                    };
                    // Backwater gate: no discharge against a receiving stage
                    // higher than this node's water surface, and no reverse
                    // flow back in.
                    if let Some(stage) = &plan.stage {
                        let stage_el = match stage {
                            StagePlan::Fixed(s) => *s,
                            StagePlan::Series(ts) => ts.value_at(t),
                        };
                        if stage_el > node.invert_elevation + depth0 {
                            q = 0.0;
                        }
                    }
                    if q > 0.0 {
                        outflows.push((l, q));
                        total_rate += q;
                    }
                }

                // Competing demands share the available volume pro rata.
                let scale = if total_rate * dt > v_avail {
                    v_avail / (total_rate * dt)
                } else {
                    1.0
                };
                let mut out_m3 = 0.0;
                for &(l, q) in &outflows {
                    let vol = q * scale * dt;
                    state.link_flow_step_m3[l] += vol;
                    out_m3 += vol;
                    if self.link_plans[l].delayed {
                        pending_out[l] += vol;
                    } else {
                        incoming[self.link_plans[l].to] += vol;
                    }
                }

                let mut v_new = (v_avail - out_m3).max(0.0);
                let v_max = self.full_volume_m3[u];
                if v_new > v_max {
                    let flood = v_new - v_max;
                    state.flood_step_m3[u] += flood;
                    state.ledger.flooded_m3 += flood;
                    v_new = v_max;
                }
                state.volume_m3[u] = v_new;
                state.depth_m[u] = match &node.kind {
                    NodeKind::Junction => v_new / JUNCTION_PLAN_AREA_M2,
                    NodeKind::Storage { geometry } => geometry.depth_at(v_new),
                    NodeKind::Outfall { .. } => 0.0,
                };
            }
        }

        for (l, plan) in self.link_plans.iter().enumerate() {
            if plan.delayed {
                state.pending_m3[l].push_back(pending_out[l]);
            }
        }
        state.clock_s += dt_control_s;

        for (u, node) in nodes.iter().enumerate() {
            if !state.volume_m3[u].is_finite() || !state.depth_m[u].is_finite() {
                return Err(EngineError::NonFinite {
                    node: node.id.clone(),
                    t_s: state.clock_s,
                });
            }
        }
        debug_assert!(
            state.mass_residual_m3().abs() <= 1e-6 * state.ledger.inflow_m3.max(1.0),
            "mass ledger drifted: residual {}",
            state.mass_residual_m3()
        );
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Link, Node, StorageGeometry, Subcatchment};
    use approx::assert_relative_eq;

    fn storage(id: &str, area: f64, max_depth: f64) -> Node {
        Node {
            id: id.into(),
            kind: NodeKind::Storage {
                geometry: StorageGeometry::ConstantArea(area),
            },
            invert_elevation: 0.0,
            max_depth,
        }
    }

    fn free_outfall(id: &str) -> Node {
        Node {
            id: id.into(),
            kind: NodeKind::Outfall {
                boundary: OutfallBoundary::Free,
            },
            invert_elevation: 0.0,
            max_depth: 0.0,
        }
    }

    fn orifice(id: &str, from: &str, to: &str, area: f64) -> Link {
        Link {
            id: id.into(),
            from: from.into(),
            to: to.into(),
            kind: LinkKind::Orifice {
                cd: 0.65,
                full_open_area: area,
                crest_offset: 0.0,
            },
        }
    }

    /// One basin fed at exactly 1 m³/s: C = 1, A = 3.6e6 m², 1 mm/hr.
    fn basin_net(orifice_area: f64) -> Network {
        let mut net = Network::default();
        net.add_node(storage("tank", 500.0, 2.0));
        net.add_node(free_outfall("out"));
        net.add_link(orifice("o", "tank", "out", orifice_area));
        net.add_timeseries(
            "rain",
            TimeSeries::new(vec![(0.0, 1.0)]).unwrap(),
        );
        net.add_raingage("g", "rain");
        net.add_subcatchment(Subcatchment {
            id: "s".into(),
            area_m2: 3.6e6,
            runoff_coefficient: 1.0,
            raingage: "g".into(),
            outlet: "tank".into(),
        });
        net
    }

    #[test]
    fn runoff_scales_with_intensity_and_area() {
        assert_relative_eq!(
            runoff_m3s(1.0, 81.28, 1.0e6),
            22.577_777_8,
            max_relative = 1e-6
        );
        assert_eq!(runoff_m3s(0.5, 0.0, 1.0e6), 0.0);
        assert_eq!(runoff_m3s(0.0, 50.0, 1.0e6), 0.0);
    }

    #[test]
    fn orifice_flow_reference_point() {
        assert_relative_eq!(
            orifice_flow_m3s(0.65, 1.0, 1.0, 2.0),
            4.071,
            max_relative = 1e-3
        );
        assert_eq!(orifice_flow_m3s(0.65, 1.0, 1.0, 0.0), 0.0);
        assert_eq!(orifice_flow_m3s(0.65, 1.0, 1.0, -0.5), 0.0);
        assert_eq!(orifice_flow_m3s(0.65, 1.0, 0.0, 2.0), 0.0);
        // linear in setting, sqrt in head
        let q = orifice_flow_m3s(0.65, 1.0, 1.0, 1.0);
        assert_relative_eq!(orifice_flow_m3s(0.65, 1.0, 0.5, 1.0), q / 2.0);
        assert_relative_eq!(orifice_flow_m3s(0.65, 1.0, 1.0, 4.0), q * 2.0);
    }

    #[test]
    fn weir_flow_reference_point() {
        // crest 1.0 m, fully lowered, depth 1.5 m -> head 0.5 m
        assert_relative_eq!(
            weir_flow_m3s(1.84, 2.0, 1.0, 3.0, 1.0, 1.5),
            1.301,
            max_relative = 1e-3
        );
        // at the crest and below: nothing
        assert_eq!(weir_flow_m3s(1.84, 2.0, 1.0, 3.0, 1.0, 1.0), 0.0);
        assert_eq!(weir_flow_m3s(1.84, 2.0, 1.0, 3.0, 1.0, 0.2), 0.0);
        // fully raised the crest sits at max depth, sealing the weir
        assert_eq!(weir_flow_m3s(1.84, 2.0, 1.0, 3.0, 0.0, 2.9), 0.0);
    }

    #[test]
    fn pump_flow_follows_curve() {
        let curve = Curve::new(vec![(0.0, 0.0), (2.0, 1.0)]).unwrap();
        assert_eq!(pump_flow_m3s(&curve, 1.0, 1.0), 0.5);
        assert_eq!(pump_flow_m3s(&curve, 1.0, 5.0), 1.0); // clamped
        assert_eq!(pump_flow_m3s(&curve, 0.0, 1.0), 0.0); // off
        assert_eq!(pump_flow_m3s(&curve, 0.49, 1.0), 0.0); // rounds off
        assert_eq!(pump_flow_m3s(&curve, 0.5, 1.0), 0.5); // ties go on
        assert_eq!(pump_flow_m3s(&curve, 1.0, 0.0), 0.0); // dry
    }

    #[test]
    fn closed_outlet_stores_exactly_the_inflow() {
        let net = basin_net(1.0);
        let engine = Engine::new(&net, EngineConfig::default()).unwrap();
        let mut state = SimState::new(&net);
        state.set_setting(0, 0.0);
        engine.advance(&net, &mut state, 900.0).unwrap();
        let tank = net.node_index("tank").unwrap();
        assert_relative_eq!(state.volume(tank), 900.0, max_relative = 1e-12);
        assert_relative_eq!(state.depth(tank), 1.8, max_relative = 1e-12);
        assert_eq!(state.ledger.outfall_m3, 0.0);
        assert!(state.mass_residual_m3().abs() < 1e-9);
    }

    #[test]
    fn overfull_basin_floods_the_excess() {
        let net = basin_net(1.0);
        let engine = Engine::new(&net, EngineConfig::default()).unwrap();
        let mut state = SimState::new(&net);
        state.set_setting(0, 0.0);
        // 1 m³/s against 1000 m³ capacity: 1200 s in, 200 m³ must flood
        engine.advance(&net, &mut state, 900.0).unwrap();
        engine.advance(&net, &mut state, 300.0).unwrap();
        let tank = net.node_index("tank").unwrap();
        assert_relative_eq!(state.depth(tank), 2.0, max_relative = 1e-12);
        assert_relative_eq!(state.ledger.flooded_m3, 200.0, max_relative = 1e-9);
        assert_relative_eq!(state.flood_step_m3(tank), 200.0, max_relative = 1e-9);
        assert!(state.mass_residual_m3().abs() < 1e-9);
    }

    #[test]
    fn open_outlet_passes_flow_through() {
        let net = basin_net(1.0);
        let engine = Engine::new(&net, EngineConfig::default()).unwrap();
        let mut state = SimState::new(&net);
        for _ in 0..8 {
            engine.advance(&net, &mut state, 900.0).unwrap();
        }
        // the tank settles where outflow balances inflow:
        // cd·area·sqrt(2g·d) = 1  =>  d = (1 / (cd·area·sqrt(2g)))²
        let out = net.node_index("out").unwrap();
        assert_relative_eq!(state.node_inflow_m3s(out), 1.0, max_relative = 0.05);
        let d_eq = (1.0 / (0.65 * (2.0 * GRAVITY_M_S2).sqrt())).powi(2);
        assert_relative_eq!(
            state.depth(net.node_index("tank").unwrap()),
            d_eq,
            max_relative = 1e-6
        );
        assert!(state.mass_residual_m3().abs() <= 1e-6 * state.ledger.inflow_m3);
    }

    #[test]
    fn competing_outflows_share_pro_rata() {
        let mut net = basin_net(1.0);
        net.add_link(orifice("o2", "tank", "out", 3.0));
        let engine = Engine::new(&net, EngineConfig::default()).unwrap();
        let mut state = SimState::new(&net);
        engine.advance(&net, &mut state, 900.0).unwrap();
        // both orifices always want more than the tank holds; the 3 m² one
        // gets three times the share and nothing goes negative
        let q1 = state.link_flow_m3s(0);
        let q2 = state.link_flow_m3s(1);
        assert_relative_eq!(q2 / q1, 3.0, max_relative = 1e-9);
        assert!(state.volume(net.node_index("tank").unwrap()) >= 0.0);
        assert!(state.mass_residual_m3().abs() <= 1e-6 * state.ledger.inflow_m3);
    }

    #[test]
    fn high_stage_gates_the_outfall() {
        let mut net = Network::default();
        net.add_node(storage("tank", 500.0, 2.0));
        net.add_node(Node {
            id: "sea".into(),
            kind: NodeKind::Outfall {
                boundary: OutfallBoundary::TimeseriesStage("tide".into()),
            },
            invert_elevation: 0.0,
            max_depth: 0.0,
        });
        net.add_link(orifice("o", "tank", "sea", 1.0));
        net.add_timeseries("rain", TimeSeries::new(vec![(0.0, 1.0)]).unwrap());
        net.add_timeseries("tide", TimeSeries::new(vec![(0.0, 5.0)]).unwrap());
        net.add_raingage("g", "rain");
        net.add_subcatchment(Subcatchment {
            id: "s".into(),
            area_m2: 3.6e6,
            runoff_coefficient: 1.0,
            raingage: "g".into(),
            outlet: "tank".into(),
        });
        let engine = Engine::new(&net, EngineConfig::default()).unwrap();
        let mut state = SimState::new(&net);
        engine.advance(&net, &mut state, 900.0).unwrap();
        // stage of 5 m sits above the tank's surface; nothing discharges
        assert_eq!(state.ledger.outfall_m3, 0.0);
        assert_relative_eq!(
            state.volume(net.node_index("tank").unwrap()),
            900.0,
            max_relative = 1e-12
        );
        assert!(state.mass_residual_m3().abs() < 1e-9);
    }

    #[test]
    fn delayed_conduit_shifts_arrival_by_whole_steps() {
        let mut net = Network::default();
        net.add_node(storage("up", 500.0, 5.0));
        net.add_node(storage("down", 500.0, 5.0));
        net.add_node(free_outfall("out"));
        net.add_link(Link {
            id: "lag".into(),
            from: "up".into(),
            to: "down".into(),
            kind: LinkKind::Conduit {
                capacity: None,
                delay_steps: 2,
            },
        });
        net.add_link(Link {
            id: "drain".into(),
            from: "down".into(),
            to: "out".into(),
            kind: LinkKind::Conduit {
                capacity: None,
                delay_steps: 0,
            },
        });
        // rain only during the first control step
        net.add_timeseries(
            "rain",
            TimeSeries::new(vec![(0.0, 1.0), (900.0, 0.0)]).unwrap(),
        );
        net.add_raingage("g", "rain");
        net.add_subcatchment(Subcatchment {
            id: "s".into(),
            area_m2: 3.6e6,
            runoff_coefficient: 1.0,
            raingage: "g".into(),
            outlet: "up".into(),
        });
        let engine = Engine::new(&net, EngineConfig::default()).unwrap();
        let mut state = SimState::new(&net);
        let down = net.node_index("down").unwrap();

        engine.advance(&net, &mut state, 900.0).unwrap();
        assert_eq!(state.inflow_step_m3(down), 0.0);
        assert_relative_eq!(state.total_stored_m3(), 900.0, max_relative = 1e-9);

        engine.advance(&net, &mut state, 900.0).unwrap();
        assert_eq!(state.inflow_step_m3(down), 0.0);

        engine.advance(&net, &mut state, 900.0).unwrap();
        assert_relative_eq!(state.inflow_step_m3(down), 900.0, max_relative = 1e-9);
        assert_relative_eq!(state.ledger.outfall_m3, 900.0, max_relative = 1e-9);
        assert!(state.mass_residual_m3().abs() <= 1e-6 * state.ledger.inflow_m3);
    }

    #[test]
    fn settings_stay_frozen_within_a_step() {
        let net = basin_net(0.01);
        let engine = Engine::new(&net, EngineConfig::default()).unwrap();
        let mut state = SimState::new(&net);
        state.set_setting(0, 0.25);
        engine.advance(&net, &mut state, 900.0).unwrap();
        assert_eq!(state.setting(0), 0.25);
    }

    #[test]
    fn lookup_reads_zero_before_first_step() {
        let net = basin_net(1.0);
        let state = SimState::new(&net);
        let q = |target: &str, quantity| StateQuery {
            target: target.into(),
            quantity,
        };
        assert_eq!(state.lookup(&net, &q("tank", Quantity::Depth)), Some(0.0));
        assert_eq!(state.lookup(&net, &q("o", Quantity::Flow)), Some(0.0));
        assert_eq!(state.lookup(&net, &q("o", Quantity::Setting)), Some(1.0));
        assert_eq!(state.lookup(&net, &q("rain", Quantity::ExternalSeries)), Some(1.0));
        assert_eq!(state.lookup(&net, &q("ghost", Quantity::Depth)), None);
    }
}
