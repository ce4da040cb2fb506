//! Network elements, scenario description, and run records.

mod network;
mod scenario;
mod series;
mod trace;

pub use network::{
    Link, LinkKind, Network, Node, NodeKind, OutfallBoundary, StorageGeometry, Subcatchment,
    Violation,
};
pub use scenario::{Quantity, ScenarioSpec, SpecError, StateQuery};
pub use series::{Curve, SeriesError, TimeSeries};
pub use trace::{SimTrace, StepRecord};
