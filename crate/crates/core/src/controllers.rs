//! Baseline control policies. Controllers see only the scenario's observable
//! state vector plus static asset metadata resolved at construction; they
//! never reach into the simulation state.

use thiserror::Error;

use crate::hydro::GRAVITY_M_S2;
use crate::model::{LinkKind, Quantity, ScenarioSpec};

pub const CONTROLLER_NAMES: [&str; 3] = ["uncontrolled", "rule-based", "equal-filling"];

#[derive(Debug, Error, PartialEq)]
pub enum ControllerError {
    #[error("unknown controller {name:?}; valid names: {}", CONTROLLER_NAMES.join(", "))]
    Unknown { name: String },
    #[error("asset {link:?}: upstream node {node:?} depth must be an observable state")]
    MissingDepthObservable { link: String, node: String },
    #[error("asset {link:?} is not an orifice; equal-filling only drives orifices")]
    NotAnOrifice { link: String },
    #[error("equal-filling needs a release goal; the scenario metric has no flow threshold to derive one from")]
    MissingReleaseGoal,
}

pub trait Controller: Send {
    fn name(&self) -> &'static str;
    /// Map the observed state at time `time_s` to one setting per asset.
    fn act(&mut self, observed: &[f64], time_s: f64) -> Vec<f64>;
}

/// Static per-asset facts a policy may use.
#[derive(Debug, Clone)]
struct AssetContext {
    /// Index of the upstream node's depth in the observable state vector.
    depth_index: usize,
    max_depth: f64,
    /// Discharge coefficient times full-open area; zero for non-orifices.
    cd_area: f64,
    crest_offset: f64,
    is_orifice: bool,
}

fn asset_contexts(spec: &ScenarioSpec) -> Result<Vec<AssetContext>, ControllerError> {
    spec.controllable_assets
        .iter()
        .map(|id| {
            let link_idx = spec
                .network
                .link_index(id)
                .ok_or_else(|| ControllerError::Unknown { name: id.clone() })?;
            let link = &spec.network.links()[link_idx];
            let depth_index = spec
                .observable_states
                .iter()
                .position(|q| q.quantity == Quantity::Depth && q.target == link.from)
                .ok_or_else(|| ControllerError::MissingDepthObservable {
                    link: id.clone(),
                    node: link.from.clone(),
                })?;
            let from_idx = spec.network.node_index(&link.from).unwrap();
            let max_depth = spec.network.nodes()[from_idx].max_depth;
            let (cd_area, crest_offset, is_orifice) = match &link.kind {
                LinkKind::Orifice {
                    cd,
                    full_open_area,
                    crest_offset,
                } => (cd * full_open_area, *crest_offset, true),
                _ => (0.0, 0.0, false),
            };
            Ok(AssetContext {
                depth_index,
                max_depth,
                cd_area,
                crest_offset,
                is_orifice,
            })
        })
        .collect()
}

/// Leaves every asset wide open.
pub struct Uncontrolled {
    n: usize,
}

impl Controller for Uncontrolled {
    fn name(&self) -> &'static str {
        "uncontrolled"
    }

    fn act(&mut self, _observed: &[f64], _time_s: f64) -> Vec<f64> {
        vec![1.0; self.n]
    }
}

/// Opens each asset in proportion to how full its upstream basin is.
pub struct RuleBased {
    assets: Vec<AssetContext>,
}

impl Controller for RuleBased {
    fn name(&self) -> &'static str {
        "rule-based"
    }

    fn act(&mut self, observed: &[f64], _time_s: f64) -> Vec<f64> {
        self.assets
            .iter()
            .map(|a| (observed[a.depth_index] / a.max_depth).clamp(0.0, 1.0))
            .collect()
    }
}

/// Splits a shared release budget across basins by filling-degree deviation:
/// only basins fuller than the average release, each in proportion to its
/// excess. Equally full basins share the budget evenly; empty systems
/// release nothing.
pub fn equal_filling_flows(fillings: &[f64], release_goal_m3s: f64) -> Vec<f64> {
    let n = fillings.len();
    if n == 0 {
        return Vec::new();
    }
    let mean = fillings.iter().sum::<f64>() / n as f64;
    if mean <= 0.0 {
        return vec![0.0; n];
    }
    let deviations: Vec<f64> = fillings.iter().map(|f| (f - mean).max(0.0)).collect();
    let total: f64 = deviations.iter().sum();
    if total == 0.0 {
        return vec![release_goal_m3s / n as f64; n];
    }
    deviations
        .iter()
        .map(|d| d / total * release_goal_m3s)
        .collect()
}

/// Setting that makes an orifice pass `flow` under `head_m` of water,
/// clamped to [0, 1]. A dry orifice cannot be tuned and gets 0.
pub fn orifice_setting_for_flow(flow_m3s: f64, cd_area: f64, head_m: f64) -> f64 {
    if flow_m3s <= 0.0 || head_m <= 0.0 || cd_area <= 0.0 {
        return 0.0;
    }
    (flow_m3s / (cd_area * (2.0 * GRAVITY_M_S2 * head_m).sqrt())).clamp(0.0, 1.0)
}

pub struct EqualFilling {
    assets: Vec<AssetContext>,
    release_goal_m3s: f64,
    /// Depths seen at the previous decision, used to anticipate head growth.
    prev_depths: Vec<f64>,
}

impl Controller for EqualFilling {
    fn name(&self) -> &'static str {
        "equal-filling"
    }

    fn act(&mut self, observed: &[f64], _time_s: f64) -> Vec<f64> {
        let depths: Vec<f64> = self
            .assets
            .iter()
            .map(|a| observed[a.depth_index])
            .collect();
        let fillings: Vec<f64> = self
            .assets
            .iter()
            .zip(&depths)
            .map(|(a, d)| (d / a.max_depth).clamp(0.0, 1.0))
            .collect();
        let flows = equal_filling_flows(&fillings, self.release_goal_m3s);
        let settings = self
            .assets
            .iter()
            .zip(&depths)
            .zip(flows)
            .enumerate()
            .map(|(i, ((a, &d), q))| {
                // A setting stays frozen for the whole step while the head
                // keeps moving, so invert for the head expected at the end
                // of the step: current depth plus the rise seen over the
                // last step. Falling depths are not extrapolated; releasing
                // a little under the goal is the safe side.
                let rise = self
                    .prev_depths
                    .get(i)
                    .map_or(0.0, |&prev| (d - prev).max(0.0));
                let head = d + rise - a.crest_offset;
                orifice_setting_for_flow(q, a.cd_area, head)
            })
            .collect();
        self.prev_depths = depths;
        settings
    }
}

/// Fraction of a guarded flow threshold used as the default release goal.
/// Settings are frozen across a control step while the driving head keeps
/// moving, so releasing right at the threshold overshoots it whenever a
/// basin is filling; the margin absorbs that.
pub const DEFAULT_RELEASE_FRACTION: f64 = 0.7;

/// Build a named policy for a scenario. `release_goal_m3s` overrides the
/// default release budget used by equal-filling.
pub fn build_controller(
    name: &str,
    spec: &ScenarioSpec,
    release_goal_m3s: Option<f64>,
) -> Result<Box<dyn Controller>, ControllerError> {
    match name {
        "uncontrolled" => Ok(Box::new(Uncontrolled {
            n: spec.controllable_assets.len(),
        })),
        "rule-based" => Ok(Box::new(RuleBased {
            assets: asset_contexts(spec)?,
        })),
        "equal-filling" => {
            let assets = asset_contexts(spec)?;
            if let Some(bad) = assets.iter().position(|a| !a.is_orifice) {
                return Err(ControllerError::NotAnOrifice {
                    link: spec.controllable_assets[bad].clone(),
                });
            }
            let goal = release_goal_m3s
                .or_else(|| spec.metric.flow_threshold().map(|t| t * DEFAULT_RELEASE_FRACTION))
                .ok_or(ControllerError::MissingReleaseGoal)?;
            Ok(Box::new(EqualFilling {
                assets,
                release_goal_m3s: goal,
                prev_depths: Vec::new(),
            }))
        }
        other => Err(ControllerError::Unknown {
            name: other.to_string(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn uncontrolled_opens_everything() {
        let mut c = Uncontrolled { n: 2 };
        assert_eq!(c.act(&[0.4, 0.9], 0.0), vec![1.0, 1.0]);
        let mut empty = Uncontrolled { n: 0 };
        assert!(empty.act(&[], 0.0).is_empty());
    }

    fn two_basins() -> Vec<AssetContext> {
        vec![
            AssetContext {
                depth_index: 0,
                max_depth: 2.0,
                cd_area: 0.65,
                crest_offset: 0.0,
                is_orifice: true,
            },
            AssetContext {
                depth_index: 1,
                max_depth: 2.0,
                cd_area: 0.65,
                crest_offset: 0.0,
                is_orifice: true,
            },
        ]
    }

    #[test]
    fn rule_based_maps_filling_to_setting() {
        let mut c = RuleBased {
            assets: two_basins(),
        };
        assert_eq!(c.act(&[2.0, 1.0], 0.0), vec![1.0, 0.5]);
        assert_eq!(c.act(&[0.0, 0.0], 0.0), vec![0.0, 0.0]);
    }

    #[test]
    fn split_is_empty_release_when_dry() {
        assert_eq!(equal_filling_flows(&[0.0, 0.0], 0.5), vec![0.0, 0.0]);
        assert!(equal_filling_flows(&[], 0.5).is_empty());
    }

    #[test]
    fn split_shares_evenly_when_equal() {
        assert_eq!(equal_filling_flows(&[0.6, 0.6], 0.5), vec![0.25, 0.25]);
    }

    #[test]
    fn split_goes_only_to_above_average_basins() {
        let flows = equal_filling_flows(&[0.8, 0.4], 0.5);
        assert_relative_eq!(flows[0], 0.5, max_relative = 1e-12);
        assert_eq!(flows[1], 0.0);
    }

    #[test]
    fn inversion_matches_the_orifice_relation() {
        // release 0.5 m³/s through cd*area = 0.65 under 1.6 m of head
        let s = orifice_setting_for_flow(0.5, 0.65, 1.6);
        assert_relative_eq!(s, 0.1373, max_relative = 1e-3);
        // consistency: that setting produces that flow
        let q = crate::hydro::orifice_flow_m3s(0.65, 1.0, s, 1.6);
        assert_relative_eq!(q, 0.5, max_relative = 1e-12);
        // clamping and degenerate heads
        assert_eq!(orifice_setting_for_flow(99.0, 0.65, 1.6), 1.0);
        assert_eq!(orifice_setting_for_flow(0.5, 0.65, 0.0), 0.0);
        assert_eq!(orifice_setting_for_flow(0.0, 0.65, 1.6), 0.0);
    }

    #[test]
    fn equal_filling_closes_below_average_basins() {
        let mut c = EqualFilling {
            assets: two_basins(),
            release_goal_m3s: 0.5,
            prev_depths: Vec::new(),
        };
        let settings = c.act(&[1.6, 0.8], 0.0);
        assert_relative_eq!(settings[0], 0.1373, max_relative = 1e-3);
        assert_eq!(settings[1], 0.0);
    }

    #[test]
    fn equal_filling_anticipates_a_rising_head() {
        let mut c = EqualFilling {
            assets: two_basins(),
            release_goal_m3s: 0.5,
            prev_depths: Vec::new(),
        };
        // steady at 1.2 m: inversion sees the current head
        let steady = c.act(&[1.2, 1.2], 0.0);
        let expected = orifice_setting_for_flow(0.25, 0.65, 1.2);
        assert_relative_eq!(steady[0], expected, max_relative = 1e-12);

        // both basins rose 0.3 m since the last look: invert for 1.8 m
        let rising = c.act(&[1.5, 1.5], 900.0);
        let expected = orifice_setting_for_flow(0.25, 0.65, 1.8);
        assert_relative_eq!(rising[0], expected, max_relative = 1e-12);

        // falling depths are not extrapolated downward
        let falling = c.act(&[1.0, 1.0], 1800.0);
        let expected = orifice_setting_for_flow(0.25, 0.65, 1.0);
        assert_relative_eq!(falling[0], expected, max_relative = 1e-12);
    }
}
