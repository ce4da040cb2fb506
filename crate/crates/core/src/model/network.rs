use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::series::{Curve, TimeSeries};

/// How a storage node converts depth to plan area.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum StorageGeometry {
    /// Vertical-walled basin with a fixed plan area in m².
    ConstantArea(f64),
    /// Depth (m) to plan area (m²) lookup, interpolated linearly.
    DepthArea(Curve),
}

impl StorageGeometry {
    pub fn area_at(&self, depth: f64) -> f64 {
        match self {
            StorageGeometry::ConstantArea(a) => *a,
            StorageGeometry::DepthArea(c) => c.value_at(depth),
        }
    }

    /// Stored volume below `depth`, integrating the area profile.
    pub fn volume_at(&self, depth: f64) -> f64 {
        if depth <= 0.0 {
            return 0.0;
        }
        match self {
            StorageGeometry::ConstantArea(a) => a * depth,
            StorageGeometry::DepthArea(c) => {
                // Trapezoid rule over the curve knots spanned by [0, depth];
                // the curve clamps outside its sampled range.
                let mut vol = 0.0;
                let mut x0 = 0.0;
                let mut a0 = c.value_at(0.0);
                for &(x, _) in c.points() {
                    if x <= 0.0 {
                        continue;
                    }
                    let x1 = x.min(depth);
                    if x1 > x0 {
                        let a1 = c.value_at(x1);
                        vol += 0.5 * (a0 + a1) * (x1 - x0);
                        x0 = x1;
                        a0 = a1;
                    }
                    if x >= depth {
                        break;
                    }
                }
                if depth > x0 {
                    vol += c.value_at(depth) * (depth - x0);
                }
                vol
            }
        }
    }

    /// Inverse of `volume_at`. Areas are validated positive, so volume is
    /// strictly increasing in depth and the inverse is unique.
    pub fn depth_at(&self, volume: f64) -> f64 {
        if volume <= 0.0 {
            return 0.0;
        }
        match self {
            StorageGeometry::ConstantArea(a) => volume / a,
            StorageGeometry::DepthArea(c) => {
                let mut x0 = 0.0;
                let mut a0 = c.value_at(0.0);
                let mut v0 = 0.0;
                for &(x, _) in c.points() {
                    if x <= 0.0 {
                        continue;
                    }
                    let a1 = c.value_at(x);
                    let seg = 0.5 * (a0 + a1) * (x - x0);
                    if v0 + seg >= volume {
                        return x0 + invert_segment(volume - v0, a0, a1, x - x0);
                    }
                    v0 += seg;
                    x0 = x;
                    a0 = a1;
                }
                // past the last knot the area stays clamped
                x0 + (volume - v0) / a0
            }
        }
    }
}

/// Solve for the depth offset within one linear-area segment holding `dv`.
fn invert_segment(dv: f64, a0: f64, a1: f64, len: f64) -> f64 {
    let k = (a1 - a0) / len;
    if k.abs() < 1e-12 {
        return dv / a0;
    }
    // 0.5*k*x^2 + a0*x - dv = 0, take the root in [0, len]
    let x = (-a0 + (a0 * a0 + 2.0 * k * dv).sqrt()) / k;
    x.clamp(0.0, len)
}

/// Downstream boundary applied at an outfall.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum OutfallBoundary {
    /// Discharges freely; never throttled.
    Free,
    /// Constant receiving-water surface elevation in m.
    FixedStage(f64),
    /// Receiving-water surface elevation driven by a named series.
    TimeseriesStage(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NodeKind {
    Junction,
    Storage { geometry: StorageGeometry },
    Outfall { boundary: OutfallBoundary },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: String,
    pub kind: NodeKind,
    /// Elevation of the node floor, m.
    pub invert_elevation: f64,
    /// Water depth above the invert at which the node overflows, m.
    /// Unused for outfalls.
    pub max_depth: f64,
}

impl Node {
    pub fn is_outfall(&self) -> bool {
        matches!(self.kind, NodeKind::Outfall { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LinkKind {
    Conduit {
        /// Conveyance ceiling in m³/s; None means unlimited.
        capacity: Option<f64>,
        /// Arrival lag in whole control timesteps.
        delay_steps: u32,
    },
    Orifice {
        cd: f64,
        /// Open area at setting 1.0, m².
        full_open_area: f64,
        /// Height of the orifice above the upstream node invert, m.
        crest_offset: f64,
    },
    Weir {
        cw: f64,
        crest_length: f64,
        /// Crest height above the upstream node invert at setting 1.0, m.
        crest_height: f64,
    },
    Pump {
        /// Upstream depth (m) to pumped flow (m³/s).
        curve: Curve,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub id: String,
    pub from: String,
    pub to: String,
    pub kind: LinkKind,
}

impl Link {
    /// Whether a controller may drive this link's setting.
    pub fn is_controllable(&self) -> bool {
        !matches!(self.kind, LinkKind::Conduit { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subcatchment {
    pub id: String,
    pub area_m2: f64,
    /// Fraction of rainfall converted to runoff, in [0, 1].
    pub runoff_coefficient: f64,
    pub raingage: String,
    /// Node receiving the runoff.
    pub outlet: String,
}

#[derive(Debug, Error, PartialEq)]
pub enum Violation {
    #[error("duplicate node id {0:?}")]
    DuplicateNode(String),
    #[error("duplicate link id {0:?}")]
    DuplicateLink(String),
    #[error("duplicate subcatchment id {0:?}")]
    DuplicateSubcatchment(String),
    #[error("link {link:?} references unknown node {node:?}")]
    UnknownLinkNode { link: String, node: String },
    #[error("link {0:?} connects a node to itself")]
    SelfLoop(String),
    #[error("link {0:?} leaves an outfall")]
    LinkFromOutfall(String),
    #[error("subcatchment {sub:?} drains to unknown node {node:?}")]
    UnknownOutlet { sub: String, node: String },
    #[error("subcatchment {sub:?} references unknown raingage {gage:?}")]
    UnknownRaingage { sub: String, gage: String },
    #[error("raingage {gage:?} references unknown series {series:?}")]
    UnknownGageSeries { gage: String, series: String },
    #[error("outfall {node:?} references unknown stage series {series:?}")]
    UnknownStageSeries { node: String, series: String },
    #[error("node {0:?} must have max_depth > 0")]
    NonPositiveMaxDepth(String),
    #[error("storage {0:?} must have plan area > 0")]
    NonPositiveArea(String),
    #[error("storage {node:?} area curve must cover depths 0 to {max_depth}")]
    CurveCoverage { node: String, max_depth: f64 },
    #[error("subcatchment {0:?} must have area > 0")]
    NonPositiveSubcatchmentArea(String),
    #[error("subcatchment {sub:?} runoff coefficient {value} outside [0, 1]")]
    RunoffCoefficientRange { sub: String, value: f64 },
    #[error("orifice {0:?} needs cd > 0, area > 0 and crest offset >= 0")]
    BadOrifice(String),
    #[error("weir {0:?} needs cw > 0, crest length > 0 and crest height >= 0")]
    BadWeir(String),
    #[error("pump {0:?} curve must have non-negative flows")]
    BadPumpCurve(String),
    #[error("network has no outfall")]
    NoOutfall,
    #[error("network contains a cycle through {0:?}")]
    Cycle(String),
}

/// A drainage network: nodes joined by links, fed by subcatchment runoff.
///
/// Construction never fails; `validate` reports everything that would make
/// the network unusable for simulation. Element order is preserved and is
/// part of the deterministic simulation contract.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Network {
    nodes: Vec<Node>,
    links: Vec<Link>,
    subcatchments: Vec<Subcatchment>,
    /// Raingage name to rainfall series name (mm/hr).
    raingages: BTreeMap<String, String>,
    timeseries: BTreeMap<String, TimeSeries>,
    #[serde(skip)]
    node_index: HashMap<String, usize>,
    #[serde(skip)]
    link_index: HashMap<String, usize>,
}

impl Network {
    pub fn add_node(&mut self, node: Node) {
        self.node_index.insert(node.id.clone(), self.nodes.len());
        self.nodes.push(node);
    }

    pub fn add_link(&mut self, link: Link) {
        self.link_index.insert(link.id.clone(), self.links.len());
        self.links.push(link);
    }

    pub fn add_subcatchment(&mut self, sub: Subcatchment) {
        self.subcatchments.push(sub);
    }

    pub fn add_raingage(&mut self, name: impl Into<String>, series: impl Into<String>) {
        self.raingages.insert(name.into(), series.into());
    }

    pub fn add_timeseries(&mut self, name: impl Into<String>, series: TimeSeries) {
        self.timeseries.insert(name.into(), series);
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn subcatchments(&self) -> &[Subcatchment] {
        &self.subcatchments
    }

    pub fn subcatchments_mut(&mut self) -> &mut [Subcatchment] {
        &mut self.subcatchments
    }

    pub fn raingages(&self) -> &BTreeMap<String, String> {
        &self.raingages
    }

    pub fn timeseries(&self) -> &BTreeMap<String, TimeSeries> {
        &self.timeseries
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.node_index.get(id).copied()
    }

    pub fn link_index(&self, id: &str) -> Option<usize> {
        self.link_index.get(id).copied()
    }

    /// Rebuild the id lookup tables, e.g. after deserialization.
    pub fn reindex(&mut self) {
        self.node_index = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.id.clone(), i))
            .collect();
        self.link_index = self
            .links
            .iter()
            .enumerate()
            .map(|(i, l)| (l.id.clone(), i))
            .collect();
    }

    /// Volume a node can hold before it overflows.
    pub fn full_volume(&self, node: &Node) -> f64 {
        match &node.kind {
            NodeKind::Junction => crate::hydro::JUNCTION_PLAN_AREA_M2 * node.max_depth,
            NodeKind::Storage { geometry } => geometry.volume_at(node.max_depth),
            NodeKind::Outfall { .. } => 0.0,
        }
    }

    /// Nodes in upstream-to-downstream order, or None if the links cycle.
    /// Ties break on insertion order so the result is deterministic.
    pub fn topological_order(&self) -> Option<Vec<usize>> {
        let n = self.nodes.len();
        let mut indegree = vec![0usize; n];
        let mut out: Vec<Vec<usize>> = vec![Vec::new(); n];
        for link in &self.links {
            let (Some(f), Some(t)) = (self.node_index(&link.from), self.node_index(&link.to))
            else {
                return None;
            };
            if f == t {
                return None;
            }
            out[f].push(t);
            indegree[t] += 1;
        }
        let mut ready: Vec<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
        ready.sort_unstable();
        let mut order = Vec::with_capacity(n);
        // lowest-index-first pop keeps the order stable
        while let Some(pos) = ready.iter().enumerate().min_by_key(|(_, &v)| v).map(|(p, _)| p) {
            let u = ready.swap_remove(pos);
            order.push(u);
            for &v in &out[u] {
                indegree[v] -= 1;
                if indegree[v] == 0 {
                    ready.push(v);
                }
            }
        }
        (order.len() == n).then_some(order)
    }

    /// Every rule the simulator depends on; an empty result means the
    /// network is ready to run.
    pub fn validate(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        let mut seen = HashMap::new();
        for node in &self.nodes {
            if seen.insert(node.id.as_str(), ()).is_some() {
                v.push(Violation::DuplicateNode(node.id.clone()));
            }
        }
        let mut seen = HashMap::new();
        for link in &self.links {
            if seen.insert(link.id.as_str(), ()).is_some() {
                v.push(Violation::DuplicateLink(link.id.clone()));
            }
        }
        let mut seen = HashMap::new();
        for sub in &self.subcatchments {
            if seen.insert(sub.id.as_str(), ()).is_some() {
                v.push(Violation::DuplicateSubcatchment(sub.id.clone()));
            }
        }

        for node in &self.nodes {
            match &node.kind {
                NodeKind::Junction => {
                    if node.max_depth <= 0.0 {
                        v.push(Violation::NonPositiveMaxDepth(node.id.clone()));
                    }
                }
                NodeKind::Storage { geometry } => {
                    if node.max_depth <= 0.0 {
                        v.push(Violation::NonPositiveMaxDepth(node.id.clone()));
                    }
                    match geometry {
                        StorageGeometry::ConstantArea(a) => {
                            if *a <= 0.0 {
                                v.push(Violation::NonPositiveArea(node.id.clone()));
                            }
                        }
                        StorageGeometry::DepthArea(curve) => {
                            if curve.min_y() <= 0.0 {
                                v.push(Violation::NonPositiveArea(node.id.clone()));
                            }
                            if curve.min_x() > 0.0 || curve.max_x() < node.max_depth {
                                v.push(Violation::CurveCoverage {
                                    node: node.id.clone(),
                                    max_depth: node.max_depth,
                                });
                            }
                        }
                    }
                }
                NodeKind::Outfall { boundary } => {
                    if let OutfallBoundary::TimeseriesStage(series) = boundary {
                        if !self.timeseries.contains_key(series) {
                            v.push(Violation::UnknownStageSeries {
                                node: node.id.clone(),
                                series: series.clone(),
                            });
                        }
                    }
                }
            }
        }

        for link in &self.links {
            for end in [&link.from, &link.to] {
                if self.node_index(end).is_none() {
                    v.push(Violation::UnknownLinkNode {
                        link: link.id.clone(),
                        node: end.clone(),
                    });
                }
            }
            if link.from == link.to {
                v.push(Violation::SelfLoop(link.id.clone()));
            }
            if let Some(f) = self.node_index(&link.from) {
                if self.nodes[f].is_outfall() {
                    v.push(Violation::LinkFromOutfall(link.id.clone()));
                }
            }
            match &link.kind {
                LinkKind::Conduit { .. } => {}
                LinkKind::Orifice {
                    cd,
                    full_open_area,
                    crest_offset,
                } => {
                    if *cd <= 0.0 || *full_open_area <= 0.0 || *crest_offset < 0.0 {
                        v.push(Violation::BadOrifice(link.id.clone()));
                    }
                }
                LinkKind::Weir {
                    cw,
                    crest_length,
                    crest_height,
                } => {
                    if *cw <= 0.0 || *crest_length <= 0.0 || *crest_height < 0.0 {
                        v.push(Violation::BadWeir(link.id.clone()));
                    }
                }
                LinkKind::Pump { curve } => {
                    if curve.min_y() < 0.0 {
                        v.push(Violation::BadPumpCurve(link.id.clone()));
                    }
                }
            }
        }

        for sub in &self.subcatchments {
            if sub.area_m2 <= 0.0 {
                v.push(Violation::NonPositiveSubcatchmentArea(sub.id.clone()));
            }
            if !(0.0..=1.0).contains(&sub.runoff_coefficient) {
                v.push(Violation::RunoffCoefficientRange {
                    sub: sub.id.clone(),
                    value: sub.runoff_coefficient,
                });
            }
            if self.node_index(&sub.outlet).is_none() {
                v.push(Violation::UnknownOutlet {
                    sub: sub.id.clone(),
                    node: sub.outlet.clone(),
                });
            }
            if !self.raingages.contains_key(&sub.raingage) {
                v.push(Violation::UnknownRaingage {
                    sub: sub.id.clone(),
                    gage: sub.raingage.clone(),
                });
            }
        }

        for (gage, series) in &self.raingages {
            if !self.timeseries.contains_key(series) {
                v.push(Violation::UnknownGageSeries {
                    gage: gage.clone(),
                    series: series.clone(),
                });
            }
        }

        if !self.nodes.iter().any(Node::is_outfall) {
            v.push(Violation::NoOutfall);
        }

        // Cycle detection only makes sense once all endpoints resolve.
        let endpoints_ok = self
            .links
            .iter()
            .all(|l| self.node_index(&l.from).is_some() && self.node_index(&l.to).is_some());
        if endpoints_ok && self.topological_order().is_none() {
            let id = self
                .links
                .iter()
                .map(|l| l.from.clone())
                .next()
                .unwrap_or_default();
            v.push(Violation::Cycle(id));
        }

        v
    }
}
