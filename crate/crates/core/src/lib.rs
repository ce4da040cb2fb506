//! Reduced-order simulation of controlled stormwater networks.
//!
//! The crate models a drainage system as a DAG of storage nodes connected by
//! flow links (conduits, orifices, weirs, pumps), driven by rainfall series
//! and evaluated by a scenario-defined cost metric. Control happens through
//! a gym-style loop: observe a state vector, choose settings in [0, 1] for
//! the controllable links, step the simulation, repeat, then read off the
//! accumulated performance.
//!
//! Modules, upstream to downstream:
//! - [`model`]: network elements, scenario description, run records
//! - [`inp`]: the text network format (parse, validate, write)
//! - [`hydro`]: the routing engine
//! - [`metrics`]: step cost functions and their accumulator
//! - [`controllers`]: built-in control policies
//! - [`env`]: the step-loop environment over a scenario
//! - [`runner`]: whole-run and batch drivers

pub mod controllers;
pub mod env;
pub mod hydro;
pub mod inp;
pub mod metrics;
pub mod model;
pub mod runner;

pub use env::{Environment, ScenarioConfig};
pub use model::{Network, ScenarioSpec, SimTrace};
