//! Text network format modelled on SWMM .inp files, reduced to the sections
//! this simulator understands. Files are line-oriented: `[SECTION]` headers
//! (case-insensitive), whitespace-delimited fields, `;` starts a comment,
//! blank lines are skipped. All quantities are metric.
//!
//! Parsing is total: any input yields either a network or a diagnostic
//! carrying the offending line number. Sections that are not understood are
//! preserved in the raw document and reported as warnings, not errors.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use thiserror::Error;

use crate::model::{
    Curve, Link, LinkKind, Network, Node, NodeKind, OutfallBoundary, StorageGeometry,
    Subcatchment, TimeSeries, Violation,
};

pub const SUPPORTED_SECTIONS: [&str; 14] = [
    "TITLE",
    "OPTIONS",
    "RAINGAGES",
    "SUBCATCHMENTS",
    "SUBAREAS",
    "JUNCTIONS",
    "OUTFALLS",
    "STORAGE",
    "CONDUITS",
    "ORIFICES",
    "WEIRS",
    "PUMPS",
    "CURVES",
    "TIMESERIES",
];

#[derive(Debug, Clone, PartialEq)]
pub struct InpRow {
    pub line: usize,
    pub raw: String,
    pub tokens: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InpSection {
    /// Upper-cased section name without brackets.
    pub name: String,
    pub line: usize,
    pub rows: Vec<InpRow>,
}

/// Raw sectioned view of an .inp file, before any interpretation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InpDocument {
    pub sections: Vec<InpSection>,
}

impl InpDocument {
    pub fn section(&self, name: &str) -> Option<&InpSection> {
        self.sections.iter().find(|s| s.name == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Warning {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

/// A semantic violation tied back to the source line that declared the
/// offending element, when that line is known.
#[derive(Debug, PartialEq)]
pub struct LocatedViolation {
    pub line: Option<usize>,
    pub violation: Violation,
}

impl fmt::Display for LocatedViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "line {}: {}", line, self.violation),
            None => write!(f, "{}", self.violation),
        }
    }
}

#[derive(Debug, Error)]
pub enum InpError {
    #[error("no sections found")]
    NoSections,
    #[error("line {line}: content before any section header")]
    RowOutsideSection { line: usize },
    #[error("line {line}: malformed section header {header:?}")]
    BadHeader { line: usize, header: String },
    #[error("line {line} [{section}]: {message}")]
    Row {
        line: usize,
        section: String,
        message: String,
    },
    #[error("network is invalid:\n{}", .0.iter().map(|v| format!("  {v}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<LocatedViolation>),
}

impl InpError {
    /// The first source line this diagnostic points at, if any.
    pub fn line(&self) -> Option<usize> {
        match self {
            InpError::NoSections => None,
            InpError::RowOutsideSection { line }
            | InpError::BadHeader { line, .. }
            | InpError::Row { line, .. } => Some(*line),
            InpError::Invalid(violations) => violations.iter().find_map(|v| v.line),
        }
    }
}

/// Split a file into sections and tokenized rows. Grammar only; no meaning
/// is assigned to any field yet.
pub fn scan_inp(text: &str) -> Result<InpDocument, InpError> {
    let mut doc = InpDocument::default();
    for (i, raw_line) in text.lines().enumerate() {
        let line = i + 1;
        let stripped = raw_line.split(';').next().unwrap_or("").trim_end_matches('\r');
        let trimmed = stripped.trim();
        if trimmed.is_empty() {
            continue;
        }
        if trimmed.starts_with('[') {
            if !trimmed.ends_with(']') || trimmed.len() < 3 {
                return Err(InpError::BadHeader {
                    line,
                    header: trimmed.to_string(),
                });
            }
            let name = trimmed[1..trimmed.len() - 1].trim().to_ascii_uppercase();
            if name.is_empty() {
                return Err(InpError::BadHeader {
                    line,
                    header: trimmed.to_string(),
                });
            }
            doc.sections.push(InpSection {
                name,
                line,
                rows: Vec::new(),
            });
            continue;
        }
        let Some(section) = doc.sections.last_mut() else {
            return Err(InpError::RowOutsideSection { line });
        };
        section.rows.push(InpRow {
            line,
            raw: stripped.to_string(),
            tokens: trimmed.split_whitespace().map(str::to_string).collect(),
        });
    }
    if doc.sections.is_empty() {
        return Err(InpError::NoSections);
    }
    Ok(doc)
}

#[derive(Debug)]
pub struct ParsedNetwork {
    pub network: Network,
    pub warnings: Vec<Warning>,
}

/// Parse text all the way to a validated network. Grammar problems, lowering
/// problems, and semantic violations all come back as [`InpError`]s carrying
/// the source line.
pub fn parse_inp(text: &str) -> Result<ParsedNetwork, InpError> {
    let doc = scan_inp(text)?;
    let lowered = lower(&doc)?;
    let violations = lowered.network.validate();
    if !violations.is_empty() {
        return Err(InpError::Invalid(
            violations
                .into_iter()
                .map(|v| LocatedViolation {
                    line: lowered.locate(&v),
                    violation: v,
                })
                .collect(),
        ));
    }
    Ok(ParsedNetwork {
        network: lowered.network,
        warnings: lowered.warnings,
    })
}

struct Lowered {
    network: Network,
    warnings: Vec<Warning>,
    node_lines: HashMap<String, usize>,
    link_lines: HashMap<String, usize>,
    sub_lines: HashMap<String, usize>,
    gage_lines: HashMap<String, usize>,
}

impl Lowered {
    fn locate(&self, v: &Violation) -> Option<usize> {
        use Violation::*;
        let (map, id): (&HashMap<String, usize>, &str) = match v {
            DuplicateNode(id) | NonPositiveMaxDepth(id) | NonPositiveArea(id) => {
                (&self.node_lines, id)
            }
            CurveCoverage { node, .. } | UnknownStageSeries { node, .. } => {
                (&self.node_lines, node)
            }
            DuplicateLink(id) | SelfLoop(id) | LinkFromOutfall(id) | BadOrifice(id)
            | BadWeir(id) | BadPumpCurve(id) | Cycle(id) => (&self.link_lines, id),
            UnknownLinkNode { link, .. } => (&self.link_lines, link),
            DuplicateSubcatchment(id) | NonPositiveSubcatchmentArea(id) => (&self.sub_lines, id),
            RunoffCoefficientRange { sub, .. }
            | UnknownOutlet { sub, .. }
            | UnknownRaingage { sub, .. } => (&self.sub_lines, sub),
            UnknownGageSeries { gage, .. } => (&self.gage_lines, gage),
            NoOutfall => return None,
        };
        map.get(id).copied()
    }
}

fn row_err(row: &InpRow, section: &str, message: impl Into<String>) -> InpError {
    InpError::Row {
        line: row.line,
        section: section.to_string(),
        message: message.into(),
    }
}

fn need_tokens(row: &InpRow, section: &str, want: std::ops::RangeInclusive<usize>) -> Result<(), InpError> {
    if want.contains(&row.tokens.len()) {
        Ok(())
    } else {
        Err(row_err(
            row,
            section,
            format!(
                "expected {} field(s), found {}",
                if want.start() == want.end() {
                    want.start().to_string()
                } else {
                    format!("{} to {}", want.start(), want.end())
                },
                row.tokens.len()
            ),
        ))
    }
}

fn parse_num(row: &InpRow, section: &str, idx: usize, what: &str) -> Result<f64, InpError> {
    let tok = &row.tokens[idx];
    match tok.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(row_err(row, section, format!("bad number {tok:?} for {what}"))),
    }
}

fn parse_delay(row: &InpRow, section: &str, idx: usize) -> Result<u32, InpError> {
    let tok = &row.tokens[idx];
    tok.parse::<u32>()
        .map_err(|_| row_err(row, section, format!("bad delay {tok:?}; whole steps required")))
}

const US_FLOW_UNITS: [&str; 3] = ["CFS", "GPM", "MGD"];

fn lower(doc: &InpDocument) -> Result<Lowered, InpError> {
    let mut net = Network::default();
    let mut warnings = Vec::new();
    let mut node_lines: HashMap<String, usize> = HashMap::new();
    let mut link_lines: HashMap<String, usize> = HashMap::new();
    let mut sub_lines: HashMap<String, usize> = HashMap::new();
    let mut gage_lines: HashMap<String, usize> = HashMap::new();

    // Curves and series may be declared after the elements that use them,
    // so collect them before lowering anything else.
    let mut curves: BTreeMap<String, PointRows> = BTreeMap::new();
    let mut series: BTreeMap<String, PointRows> = BTreeMap::new();
    for section in &doc.sections {
        match section.name.as_str() {
            "CURVES" => collect_points(section, &mut curves)?,
            "TIMESERIES" => collect_points(section, &mut series)?,
            _ => {}
        }
    }
    let mut built_curves: BTreeMap<String, Curve> = BTreeMap::new();
    for (name, (points, lines)) in curves {
        let curve = Curve::new(points)
            .map_err(|e| point_group_err("CURVES", &name, &lines, e))?;
        built_curves.insert(name, curve);
    }
    for (name, (points, lines)) in series {
        let ts = TimeSeries::new(points)
            .map_err(|e| point_group_err("TIMESERIES", &name, &lines, e))?;
        net.add_timeseries(name, ts);
    }

    let mut subarea_overrides: Vec<(String, f64, usize)> = Vec::new();

    for section in &doc.sections {
        let sec = section.name.as_str();
        match sec {
            "TITLE" | "CURVES" | "TIMESERIES" => {}
            "OPTIONS" => {
                for row in &section.rows {
                    need_tokens(row, sec, 2..=2)?;
                    if row.tokens[0].eq_ignore_ascii_case("FLOW_UNITS") {
                        let units = row.tokens[1].to_ascii_uppercase();
                        if US_FLOW_UNITS.contains(&units.as_str()) {
                            warnings.push(Warning {
                                line: row.line,
                                message: format!(
                                    "flow units {units} are US customary; values are read as metric"
                                ),
                            });
                        }
                    }
                }
            }
            "RAINGAGES" => {
                for row in &section.rows {
                    need_tokens(row, sec, 2..=2)?;
                    gage_lines.insert(row.tokens[0].clone(), row.line);
                    net.add_raingage(row.tokens[0].clone(), row.tokens[1].clone());
                }
            }
            "SUBCATCHMENTS" => {
                for row in &section.rows {
                    need_tokens(row, sec, 5..=5)?;
                    let id = row.tokens[0].clone();
                    if let Some(first) = sub_lines.get(&id) {
                        return Err(row_err(
                            row,
                            sec,
                            format!("duplicate subcatchment {id:?} (first on line {first})"),
                        ));
                    }
                    sub_lines.insert(id.clone(), row.line);
                    net.add_subcatchment(Subcatchment {
                        id,
                        raingage: row.tokens[1].clone(),
                        outlet: row.tokens[2].clone(),
                        area_m2: parse_num(row, sec, 3, "area")?,
                        runoff_coefficient: parse_num(row, sec, 4, "runoff coefficient")?,
                    });
                }
            }
            "SUBAREAS" => {
                for row in &section.rows {
                    need_tokens(row, sec, 2..=2)?;
                    let frac = parse_num(row, sec, 1, "impervious fraction")?;
                    subarea_overrides.push((row.tokens[0].clone(), frac, row.line));
                }
            }
            "JUNCTIONS" => {
                for row in &section.rows {
                    need_tokens(row, sec, 3..=3)?;
                    add_node(
                        &mut net,
                        &mut node_lines,
                        row,
                        sec,
                        Node {
                            id: row.tokens[0].clone(),
                            kind: NodeKind::Junction,
                            invert_elevation: parse_num(row, sec, 1, "invert elevation")?,
                            max_depth: parse_num(row, sec, 2, "max depth")?,
                        },
                    )?;
                }
            }
            "OUTFALLS" => {
                for row in &section.rows {
                    need_tokens(row, sec, 3..=4)?;
                    let boundary = match row.tokens[2].to_ascii_uppercase().as_str() {
                        "FREE" => {
                            need_tokens(row, sec, 3..=3)?;
                            OutfallBoundary::Free
                        }
                        "FIXED" => {
                            need_tokens(row, sec, 4..=4)?;
                            OutfallBoundary::FixedStage(parse_num(row, sec, 3, "stage")?)
                        }
                        "TIMESERIES" => {
                            need_tokens(row, sec, 4..=4)?;
                            OutfallBoundary::TimeseriesStage(row.tokens[3].clone())
                        }
                        other => {
                            return Err(row_err(
                                row,
                                sec,
                                format!("unknown boundary {other:?}; expected FREE, FIXED or TIMESERIES"),
                            ))
                        }
                    };
                    add_node(
                        &mut net,
                        &mut node_lines,
                        row,
                        sec,
                        Node {
                            id: row.tokens[0].clone(),
                            kind: NodeKind::Outfall { boundary },
                            invert_elevation: parse_num(row, sec, 1, "invert elevation")?,
                            max_depth: 0.0,
                        },
                    )?;
                }
            }
            "STORAGE" => {
                for row in &section.rows {
                    need_tokens(row, sec, 5..=5)?;
                    let geometry = match row.tokens[3].to_ascii_uppercase().as_str() {
                        "FUNCTIONAL" => {
                            StorageGeometry::ConstantArea(parse_num(row, sec, 4, "plan area")?)
                        }
                        "TABULAR" => {
                            let name = &row.tokens[4];
                            let curve = built_curves.get(name).ok_or_else(|| {
                                row_err(row, sec, format!("unknown curve {name:?}"))
                            })?;
                            StorageGeometry::DepthArea(curve.clone())
                        }
                        other => {
                            return Err(row_err(
                                row,
                                sec,
                                format!("unknown geometry {other:?}; expected FUNCTIONAL or TABULAR"),
                            ))
                        }
                    };
                    add_node(
                        &mut net,
                        &mut node_lines,
                        row,
                        sec,
                        Node {
                            id: row.tokens[0].clone(),
                            kind: NodeKind::Storage { geometry },
                            invert_elevation: parse_num(row, sec, 1, "invert elevation")?,
                            max_depth: parse_num(row, sec, 2, "max depth")?,
                        },
                    )?;
                }
            }
            "CONDUITS" => {
                for row in &section.rows {
                    need_tokens(row, sec, 3..=5)?;
                    let capacity = match row.tokens.get(3).map(String::as_str) {
                        None | Some("*") => None,
                        Some(_) => Some(parse_num(row, sec, 3, "capacity")?),
                    };
                    let delay_steps = match row.tokens.get(4) {
                        None => 0,
                        Some(_) => parse_delay(row, sec, 4)?,
                    };
                    add_link(
                        &mut net,
                        &mut link_lines,
                        row,
                        sec,
                        LinkKind::Conduit {
                            capacity,
                            delay_steps,
                        },
                    )?;
                }
            }
            "ORIFICES" => {
                for row in &section.rows {
                    need_tokens(row, sec, 6..=6)?;
                    add_link(
                        &mut net,
                        &mut link_lines,
                        row,
                        sec,
                        LinkKind::Orifice {
                            cd: parse_num(row, sec, 3, "discharge coefficient")?,
                            full_open_area: parse_num(row, sec, 4, "open area")?,
                            crest_offset: parse_num(row, sec, 5, "crest offset")?,
                        },
                    )?;
                }
            }
            "WEIRS" => {
                for row in &section.rows {
                    need_tokens(row, sec, 6..=6)?;
                    add_link(
                        &mut net,
                        &mut link_lines,
                        row,
                        sec,
                        LinkKind::Weir {
                            cw: parse_num(row, sec, 3, "weir coefficient")?,
                            crest_length: parse_num(row, sec, 4, "crest length")?,
                            crest_height: parse_num(row, sec, 5, "crest height")?,
                        },
                    )?;
                }
            }
            "PUMPS" => {
                for row in &section.rows {
                    need_tokens(row, sec, 4..=4)?;
                    let name = &row.tokens[3];
                    let curve = built_curves
                        .get(name)
                        .ok_or_else(|| row_err(row, sec, format!("unknown curve {name:?}")))?;
                    add_link(
                        &mut net,
                        &mut link_lines,
                        row,
                        sec,
                        LinkKind::Pump {
                            curve: curve.clone(),
                        },
                    )?;
                }
            }
            other => {
                warnings.push(Warning {
                    line: section.line,
                    message: format!("section [{other}] is not supported; contents ignored"),
                });
            }
        }
    }

    for (sub_id, frac, line) in subarea_overrides {
        let sub = net
            .subcatchments_mut()
            .iter_mut()
            .find(|s| s.id == sub_id)
            .ok_or_else(|| InpError::Row {
                line,
                section: "SUBAREAS".to_string(),
                message: format!("unknown subcatchment {sub_id:?}"),
            })?;
        // the impervious fraction stands in for the runoff coefficient
        sub.runoff_coefficient = frac;
    }

    Ok(Lowered {
        network: net,
        warnings,
        node_lines,
        link_lines,
        sub_lines,
        gage_lines,
    })
}

/// Points gathered for one named curve or series, with the source line of
/// each point so lowering errors can name the offending row.
type PointRows = (Vec<(f64, f64)>, Vec<usize>);

fn collect_points(
    section: &InpSection,
    into: &mut BTreeMap<String, PointRows>,
) -> Result<(), InpError> {
    for row in &section.rows {
        need_tokens(row, &section.name, 3..=3)?;
        let x = parse_num(row, &section.name, 1, "x value")?;
        let y = parse_num(row, &section.name, 2, "y value")?;
        let entry = into.entry(row.tokens[0].clone()).or_default();
        entry.0.push((x, y));
        entry.1.push(row.line);
    }
    Ok(())
}

fn point_group_err(
    section: &str,
    name: &str,
    lines: &[usize],
    err: crate::model::SeriesError,
) -> InpError {
    use crate::model::SeriesError;
    let line = match err {
        SeriesError::NonFinite { index } | SeriesError::NotIncreasing { index } => {
            lines.get(index).copied().unwrap_or(lines[0])
        }
        SeriesError::Empty => lines.first().copied().unwrap_or(0),
    };
    InpError::Row {
        line,
        section: section.to_string(),
        message: format!("{name:?}: {err}"),
    }
}

fn add_node(
    net: &mut Network,
    lines: &mut HashMap<String, usize>,
    row: &InpRow,
    section: &str,
    node: Node,
) -> Result<(), InpError> {
    if let Some(first) = lines.get(&node.id) {
        return Err(row_err(
            row,
            section,
            format!("duplicate node id {:?} (first on line {first})", node.id),
        ));
    }
    lines.insert(node.id.clone(), row.line);
    net.add_node(node);
    Ok(())
}

fn add_link(
    net: &mut Network,
    lines: &mut HashMap<String, usize>,
    row: &InpRow,
    section: &str,
    kind: LinkKind,
) -> Result<(), InpError> {
    let id = row.tokens[0].clone();
    if let Some(first) = lines.get(&id) {
        return Err(row_err(
            row,
            section,
            format!("duplicate link id {id:?} (first on line {first})"),
        ));
    }
    lines.insert(id.clone(), row.line);
    net.add_link(Link {
        id,
        from: row.tokens[1].clone(),
        to: row.tokens[2].clone(),
        kind,
    });
    Ok(())
}

/// Render a network back to the canonical text form. Numbers use shortest
/// round-trip formatting, so a parse of the output reproduces the same
/// values bit for bit.
pub fn write_inp(net: &Network) -> String {
    let mut out = String::new();
    let mut push_section = |name: &str, rows: Vec<String>| {
        if rows.is_empty() && name != "OPTIONS" {
            return;
        }
        out.push('[');
        out.push_str(name);
        out.push_str("]\n");
        for row in rows {
            out.push_str(&row);
            out.push('\n');
        }
        out.push('\n');
    };

    push_section("OPTIONS", vec!["FLOW_UNITS CMS".to_string()]);
    push_section(
        "RAINGAGES",
        net.raingages()
            .iter()
            .map(|(g, s)| format!("{g} {s}"))
            .collect(),
    );
    push_section(
        "SUBCATCHMENTS",
        net.subcatchments()
            .iter()
            .map(|s| {
                format!(
                    "{} {} {} {} {}",
                    s.id, s.raingage, s.outlet, s.area_m2, s.runoff_coefficient
                )
            })
            .collect(),
    );

    let mut junctions = Vec::new();
    let mut outfalls = Vec::new();
    let mut storages = Vec::new();
    let mut curves: Vec<(String, &Curve)> = Vec::new();
    for node in net.nodes() {
        match &node.kind {
            NodeKind::Junction => junctions.push(format!(
                "{} {} {}",
                node.id, node.invert_elevation, node.max_depth
            )),
            NodeKind::Outfall { boundary } => outfalls.push(match boundary {
                OutfallBoundary::Free => {
                    format!("{} {} FREE", node.id, node.invert_elevation)
                }
                OutfallBoundary::FixedStage(s) => {
                    format!("{} {} FIXED {}", node.id, node.invert_elevation, s)
                }
                OutfallBoundary::TimeseriesStage(name) => {
                    format!("{} {} TIMESERIES {}", node.id, node.invert_elevation, name)
                }
            }),
            NodeKind::Storage { geometry } => storages.push(match geometry {
                StorageGeometry::ConstantArea(a) => format!(
                    "{} {} {} FUNCTIONAL {}",
                    node.id, node.invert_elevation, node.max_depth, a
                ),
                StorageGeometry::DepthArea(curve) => {
                    let name = format!("{}__area", node.id);
                    curves.push((name.clone(), curve));
                    format!(
                        "{} {} {} TABULAR {}",
                        node.id, node.invert_elevation, node.max_depth, name
                    )
                }
            }),
        }
    }
    push_section("JUNCTIONS", junctions);
    push_section("OUTFALLS", outfalls);
    push_section("STORAGE", storages);

    let mut conduits = Vec::new();
    let mut orifices = Vec::new();
    let mut weirs = Vec::new();
    let mut pumps = Vec::new();
    for link in net.links() {
        match &link.kind {
            LinkKind::Conduit {
                capacity,
                delay_steps,
            } => {
                let cap = capacity.map_or("*".to_string(), |c| format!("{c}"));
                conduits.push(format!(
                    "{} {} {} {cap} {delay_steps}",
                    link.id, link.from, link.to
                ));
            }
            LinkKind::Orifice {
                cd,
                full_open_area,
                crest_offset,
            } => orifices.push(format!(
                "{} {} {} {cd} {full_open_area} {crest_offset}",
                link.id, link.from, link.to
            )),
            LinkKind::Weir {
                cw,
                crest_length,
                crest_height,
            } => weirs.push(format!(
                "{} {} {} {cw} {crest_length} {crest_height}",
                link.id, link.from, link.to
            )),
            LinkKind::Pump { curve } => {
                let name = format!("{}__flow", link.id);
                pumps.push(format!("{} {} {} {name}", link.id, link.from, link.to));
                curves.push((name, curve));
            }
        }
    }
    push_section("CONDUITS", conduits);
    push_section("ORIFICES", orifices);
    push_section("WEIRS", weirs);
    push_section("PUMPS", pumps);

    push_section(
        "CURVES",
        curves
            .iter()
            .flat_map(|(name, curve)| {
                curve
                    .points()
                    .iter()
                    .map(move |(x, y)| format!("{name} {x} {y}"))
            })
            .collect(),
    );
    push_section(
        "TIMESERIES",
        net.timeseries()
            .iter()
            .flat_map(|(name, ts)| {
                ts.points()
                    .iter()
                    .map(move |(t, v)| format!("{name} {t} {v}"))
            })
            .collect(),
    );

    out
}
