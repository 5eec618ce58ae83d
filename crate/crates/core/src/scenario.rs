//! Coupled power/transportation scenario: domain types, file loading and
//! validation.
//!
//! All power quantities are per-unit on the system base `s_base_kva`; EV
//! battery quantities stay in kWh and are converted once when the fleet block
//! is assembled. Time is hourly and 1-based (`1..=horizon`), so energy and
//! power coincide numerically.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::ScenarioError;

pub type NodeId = u32;
pub type LineId = u32;
pub type LinkId = u32;
pub type Hour = usize;

/// A per-hour profile. Files may give a single constant or one value per hour;
/// loading always expands to `horizon` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum ProfileInput {
    Constant(f64),
    Hourly(Vec<f64>),
}

impl ProfileInput {
    fn expand(self, horizon: usize, field: &str) -> Result<Vec<f64>, ScenarioError> {
        match self {
            ProfileInput::Constant(v) => Ok(vec![v; horizon]),
            ProfileInput::Hourly(v) if v.len() == horizon => Ok(v),
            ProfileInput::Hourly(v) => Err(ScenarioError::Schema {
                field: field.to_string(),
                message: format!("expected {horizon} hourly values, found {}", v.len()),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistNode {
    pub id: NodeId,
    #[serde(rename = "load")]
    pub is_load: bool,
    #[serde(rename = "dg")]
    pub is_dg: bool,
    #[serde(rename = "cs")]
    pub is_cs: bool,
    /// Load priority weight ω ($/pu·h), per hour.
    pub weight: Vec<f64>,
    /// Expected active load (pu), per hour.
    pub p_load: Vec<f64>,
    /// Expected reactive load (pu), per hour.
    pub q_load: Vec<f64>,
    pub v_min: f64,
    pub v_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistLine {
    pub id: LineId,
    pub from: NodeId,
    pub to: NodeId,
    pub r: f64,
    pub x: f64,
    pub s_max: f64,
}

/// Outage of a line over the half-open hour window `[from_t, to_t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outage {
    pub line: LineId,
    pub from_t: Hour,
    pub to_t: Hour,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgUnit {
    pub node: NodeId,
    pub p_min: Vec<f64>,
    pub p_max: Vec<f64>,
    /// Linear cost coefficient ($/pu·h).
    pub c1: f64,
    /// Quadratic cost coefficient ($/pu²·h).
    pub c2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadLink {
    pub id: LinkId,
    pub from: NodeId,
    pub to: NodeId,
    /// Free-flow travel time (h).
    pub t0: f64,
    /// Capacity (veh/h).
    pub cap: f64,
    pub bpr_alpha: f64,
    pub bpr_beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvGroup {
    /// Origin transportation node.
    pub origin: NodeId,
    pub class: u32,
    pub arrival: Hour,
    pub departure: Hour,
    pub soc_arr: f64,
    pub soc_dep: f64,
    pub soc_min: f64,
    pub soc_max: f64,
    pub capacity_kwh: f64,
    /// Number of vehicles in the group.
    pub fleet: f64,
    /// Degradation cost per kWh discharged ($/kWh).
    pub deg_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackgroundOd {
    pub origin: NodeId,
    pub destination: NodeId,
    /// Demand (veh/h) keyed by hour.
    pub demand: BTreeMap<Hour, f64>,
}

/// Pairing of a charging-station feeder node with its road-network node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationLink {
    pub dist_node: NodeId,
    pub transport_node: NodeId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Behavior {
    /// Travel-time sensitivity (1/h).
    pub beta1: f64,
    /// Incentive sensitivity (1/$).
    pub beta2: f64,
    /// Station attractiveness keyed by transport node; missing stations are 0.
    pub beta0: BTreeMap<NodeId, f64>,
}

impl Default for Behavior {
    fn default() -> Self {
        Behavior {
            beta1: 1.0,
            beta2: 1.0,
            beta0: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    /// Relative duality-gap target.
    pub tol: f64,
    pub max_iter: u32,
    /// Per-vehicle charger power limit (kW); `None` leaves the rate unbounded.
    pub charger_kw: Option<f64>,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            tol: 1e-8,
            max_iter: 200,
            charger_kw: Some(10.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Base {
    pub s_base_kva: f64,
    pub horizon: usize,
    pub outages: Vec<Outage>,
}

/// The full coupled-system instance. Immutable once loaded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub base: Base,
    pub dist_nodes: Vec<DistNode>,
    pub dist_lines: Vec<DistLine>,
    pub dg_units: Vec<DgUnit>,
    pub road_links: Vec<RoadLink>,
    pub ev_groups: Vec<EvGroup>,
    pub background_od: Vec<BackgroundOd>,
    pub cs_map: Vec<StationLink>,
    pub behavior: Behavior,
    pub solver: SolverSettings,
}

// ---------------------------------------------------------------------------
// File schema. Optional fields carry defaults; `Scenario` is the expanded form.

fn default_horizon() -> usize {
    24
}
fn default_v_min() -> f64 {
    0.95
}
fn default_v_max() -> f64 {
    1.05
}
fn default_bpr_alpha() -> f64 {
    0.15
}
fn default_bpr_beta() -> f64 {
    4.0
}
fn default_soc_min() -> f64 {
    0.1
}
fn default_soc_max() -> f64 {
    1.0
}
fn default_deg_cost() -> f64 {
    0.03
}
fn zero_profile() -> ProfileInput {
    ProfileInput::Constant(0.0)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BaseFile {
    s_base_kva: f64,
    #[serde(default = "default_horizon")]
    horizon: usize,
    #[serde(default)]
    outages: Vec<Outage>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DistNodeFile {
    id: NodeId,
    #[serde(default)]
    load: Option<bool>,
    #[serde(default)]
    dg: bool,
    #[serde(default)]
    cs: bool,
    #[serde(default = "zero_profile")]
    weight: ProfileInput,
    #[serde(default = "zero_profile")]
    p_load: ProfileInput,
    #[serde(default = "zero_profile")]
    q_load: ProfileInput,
    #[serde(default = "default_v_min")]
    v_min: f64,
    #[serde(default = "default_v_max")]
    v_max: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DgUnitFile {
    node: NodeId,
    #[serde(default = "zero_profile")]
    p_min: ProfileInput,
    p_max: ProfileInput,
    c1: f64,
    #[serde(default)]
    c2: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RoadLinkFile {
    id: LinkId,
    from: NodeId,
    to: NodeId,
    t0: f64,
    cap: f64,
    #[serde(default = "default_bpr_alpha")]
    bpr_alpha: f64,
    #[serde(default = "default_bpr_beta")]
    bpr_beta: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EvGroupFile {
    origin: NodeId,
    class: u32,
    arrival: Hour,
    departure: Hour,
    soc_arr: f64,
    soc_dep: f64,
    #[serde(default = "default_soc_min")]
    soc_min: f64,
    #[serde(default = "default_soc_max")]
    soc_max: f64,
    capacity_kwh: f64,
    fleet: f64,
    #[serde(default = "default_deg_cost")]
    deg_cost: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BehaviorFile {
    #[serde(default = "one")]
    beta1: f64,
    #[serde(default = "one")]
    beta2: f64,
    #[serde(default)]
    beta0: BTreeMap<NodeId, f64>,
}

fn one() -> f64 {
    1.0
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SolverFile {
    #[serde(default)]
    tol: Option<f64>,
    #[serde(default)]
    max_iter: Option<u32>,
    #[serde(default = "default_charger")]
    charger_kw: Option<f64>,
}

fn default_charger() -> Option<f64> {
    SolverSettings::default().charger_kw
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    base: BaseFile,
    dist_nodes: Vec<DistNodeFile>,
    #[serde(default)]
    dist_lines: Vec<DistLine>,
    #[serde(default)]
    dg_units: Vec<DgUnitFile>,
    #[serde(default)]
    road_links: Vec<RoadLinkFile>,
    #[serde(default)]
    ev_groups: Vec<EvGroupFile>,
    #[serde(default)]
    background_od: Vec<BackgroundOd>,
    #[serde(default)]
    cs_map: Vec<StationLink>,
    #[serde(default)]
    behavior: Option<BehaviorFile>,
    #[serde(default)]
    solver: Option<SolverFile>,
}

/// Reads and expands a scenario file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_scenario(&text)
}

/// Parses scenario text. Accepts both the compact file form (defaults and
/// constant profiles) and the fully expanded form written by [`Scenario`]'s
/// serializer.
pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let file: ScenarioFile = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        if inner.is_syntax() || inner.is_eof() {
            ScenarioError::Parse {
                line: inner.line(),
                column: inner.column(),
                message: inner.to_string(),
            }
        } else {
            ScenarioError::Schema {
                field: path,
                message: inner.to_string(),
            }
        }
    })?;
    expand(file)
}

fn expand(file: ScenarioFile) -> Result<Scenario, ScenarioError> {
    let horizon = file.base.horizon;
    if horizon == 0 {
        return Err(ScenarioError::Schema {
            field: "base.horizon".into(),
            message: "horizon must be at least one hour".into(),
        });
    }

    let dg_nodes: BTreeSet<NodeId> = file.dg_units.iter().map(|u| u.node).collect();
    let cs_nodes: BTreeSet<NodeId> = file.cs_map.iter().map(|m| m.dist_node).collect();

    let mut dist_nodes = Vec::with_capacity(file.dist_nodes.len());
    for (k, n) in file.dist_nodes.into_iter().enumerate() {
        let field = |f: &str| format!("dist_nodes[{k}].{f}");
        let p_load = n.p_load.expand(horizon, &field("p_load"))?;
        let is_load = n.load.unwrap_or_else(|| p_load.iter().any(|&p| p > 0.0));
        dist_nodes.push(DistNode {
            id: n.id,
            is_load,
            is_dg: n.dg || dg_nodes.contains(&n.id),
            is_cs: n.cs || cs_nodes.contains(&n.id),
            weight: n.weight.expand(horizon, &field("weight"))?,
            p_load,
            q_load: n.q_load.expand(horizon, &field("q_load"))?,
            v_min: n.v_min,
            v_max: n.v_max,
        });
    }
    dist_nodes.sort_by_key(|n| n.id);

    let mut dist_lines = file.dist_lines;
    dist_lines.sort_by_key(|l| l.id);

    let mut dg_units = Vec::with_capacity(file.dg_units.len());
    for (k, u) in file.dg_units.into_iter().enumerate() {
        dg_units.push(DgUnit {
            node: u.node,
            p_min: u.p_min.expand(horizon, &format!("dg_units[{k}].p_min"))?,
            p_max: u.p_max.expand(horizon, &format!("dg_units[{k}].p_max"))?,
            c1: u.c1,
            c2: u.c2,
        });
    }
    dg_units.sort_by_key(|u| u.node);

    let mut road_links: Vec<RoadLink> = file
        .road_links
        .into_iter()
        .map(|l| RoadLink {
            id: l.id,
            from: l.from,
            to: l.to,
            t0: l.t0,
            cap: l.cap,
            bpr_alpha: l.bpr_alpha,
            bpr_beta: l.bpr_beta,
        })
        .collect();
    road_links.sort_by_key(|l| l.id);

    let mut ev_groups: Vec<EvGroup> = file
        .ev_groups
        .into_iter()
        .map(|g| EvGroup {
            origin: g.origin,
            class: g.class,
            arrival: g.arrival,
            departure: g.departure,
            soc_arr: g.soc_arr,
            soc_dep: g.soc_dep,
            soc_min: g.soc_min,
            soc_max: g.soc_max,
            capacity_kwh: g.capacity_kwh,
            fleet: g.fleet,
            deg_cost: g.deg_cost,
        })
        .collect();
    ev_groups.sort_by_key(|g| (g.origin, g.class));

    let mut background_od = file.background_od;
    background_od.sort_by_key(|od| (od.origin, od.destination));

    let mut cs_map = file.cs_map;
    cs_map.sort_by_key(|m| m.dist_node);

    let behavior = file
        .behavior
        .map(|b| Behavior {
            beta1: b.beta1,
            beta2: b.beta2,
            beta0: b.beta0,
        })
        .unwrap_or_default();
    let solver = file
        .solver
        .map(|s| {
            let d = SolverSettings::default();
            SolverSettings {
                tol: s.tol.unwrap_or(d.tol),
                max_iter: s.max_iter.unwrap_or(d.max_iter),
                charger_kw: s.charger_kw,
            }
        })
        .unwrap_or_default();

    let mut base = Base {
        s_base_kva: file.base.s_base_kva,
        horizon,
        outages: file.base.outages,
    };
    base.outages
        .sort_by_key(|o| (o.line, o.from_t, o.to_t));

    let scenario = Scenario {
        base,
        dist_nodes,
        dist_lines,
        dg_units,
        road_links,
        ev_groups,
        background_od,
        cs_map,
        behavior,
        solver,
    };
    check_references(&scenario)?;
    Ok(scenario)
}

fn dangling(what: &str, id: impl fmt::Display) -> ScenarioError {
    ScenarioError::Dangling {
        what: what.to_string(),
        id: id.to_string(),
    }
}

fn check_references(s: &Scenario) -> Result<(), ScenarioError> {
    let nodes: BTreeSet<NodeId> = s.dist_nodes.iter().map(|n| n.id).collect();
    let lines: BTreeSet<LineId> = s.dist_lines.iter().map(|l| l.id).collect();
    for l in &s.dist_lines {
        for end in [l.from, l.to] {
            if !nodes.contains(&end) {
                return Err(dangling(&format!("dist_lines[id={}] node", l.id), end));
            }
        }
    }
    for u in &s.dg_units {
        if !nodes.contains(&u.node) {
            return Err(dangling("dg_units node", u.node));
        }
    }
    for m in &s.cs_map {
        if !nodes.contains(&m.dist_node) {
            return Err(dangling("cs_map dist_node", m.dist_node));
        }
    }
    for o in &s.base.outages {
        if !lines.contains(&o.line) {
            return Err(dangling("base.outages line", o.line));
        }
    }
    let tnodes = s.transport_nodes();
    for g in &s.ev_groups {
        if !tnodes.contains(&g.origin) {
            return Err(dangling("ev_groups origin", g.origin));
        }
    }
    for od in &s.background_od {
        for end in [od.origin, od.destination] {
            if !tnodes.contains(&end) {
                return Err(dangling("background_od node", end));
            }
        }
    }
    Ok(())
}

impl Scenario {
    pub fn horizon(&self) -> usize {
        self.base.horizon
    }

    pub fn hours(&self) -> impl Iterator<Item = Hour> {
        1..=self.base.horizon
    }

    /// Position of a feeder node in `dist_nodes`.
    pub fn node_index(&self, id: NodeId) -> Option<usize> {
        self.dist_nodes.binary_search_by_key(&id, |n| n.id).ok()
    }

    pub fn line_index(&self, id: LineId) -> Option<usize> {
        self.dist_lines.binary_search_by_key(&id, |l| l.id).ok()
    }

    /// Road-network nodes: link endpoints plus any station or origin node.
    pub fn transport_nodes(&self) -> BTreeSet<NodeId> {
        let mut set = BTreeSet::new();
        for l in &self.road_links {
            set.insert(l.from);
            set.insert(l.to);
        }
        for m in &self.cs_map {
            set.insert(m.transport_node);
        }
        set
    }

    /// Hours at which some EV group or background OD enters the road network.
    pub fn arrival_hours(&self) -> BTreeSet<Hour> {
        let mut set: BTreeSet<Hour> = self.ev_groups.iter().map(|g| g.arrival).collect();
        for od in &self.background_od {
            set.extend(od.demand.keys().copied());
        }
        set
    }

    pub fn beta0(&self, station: NodeId) -> f64 {
        self.behavior.beta0.get(&station).copied().unwrap_or(0.0)
    }

    /// Nodes that clear energy with the DSO: DG nodes and charging stations.
    pub fn is_supply_node(&self, idx: usize) -> bool {
        let n = &self.dist_nodes[idx];
        n.is_dg || n.is_cs
    }

    /// Line status λ for `line` at hour `t`: 0 during a declared outage, 1
    /// otherwise.
    pub fn line_status(&self, line: LineId, t: Hour) -> Result<u8, ScenarioError> {
        if self.line_index(line).is_none() {
            return Err(ScenarioError::OutOfRange(format!("line {line}")));
        }
        if t == 0 || t > self.base.horizon {
            return Err(ScenarioError::OutOfRange(format!("hour {t}")));
        }
        let out = self
            .base
            .outages
            .iter()
            .any(|o| o.line == line && o.from_t <= t && t < o.to_t);
        Ok(if out { 0 } else { 1 })
    }

    pub(crate) fn status_by_index(&self, line_idx: usize, t: Hour) -> u8 {
        let id = self.dist_lines[line_idx].id;
        let out = self
            .base
            .outages
            .iter()
            .any(|o| o.line == id && o.from_t <= t && t < o.to_t);
        if out {
            0
        } else {
            1
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// Sets the minimum departure SOC of every group.
    pub fn with_departure_soc(mut self, soc: f64) -> Self {
        for g in &mut self.ev_groups {
            g.soc_dep = soc;
        }
        self
    }
}

/// One failed invariant, reported as data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

/// Checks every type invariant; returns an empty list iff the scenario is
/// valid.
pub fn validate_scenario(s: &Scenario) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |field: String, message: &str| {
        out.push(Violation {
            field,
            message: message.to_string(),
        })
    };

    if !(s.base.s_base_kva > 0.0) {
        push("base.s_base_kva".into(), "system base must be positive");
    }
    let horizon = s.horizon();
    for (k, o) in s.base.outages.iter().enumerate() {
        if o.from_t < 1 || o.to_t < o.from_t || o.to_t > horizon + 1 {
            push(format!("base.outages[{k}]"), "outage window outside horizon");
        }
    }

    let mut seen = BTreeSet::new();
    for n in &s.dist_nodes {
        let f = |x: &str| format!("dist_nodes[id={}].{x}", n.id);
        if !seen.insert(n.id) {
            push(f("id"), "duplicate node id");
        }
        if !(n.v_min < n.v_max) {
            push(f("v_min"), "voltage band empty");
        }
        if n.v_min < 0.0 {
            push(f("v_min"), "negative voltage bound");
        }
        if n.p_load.iter().any(|&p| p < 0.0) {
            push(f("p_load"), "negative expected load");
        }
        if n.weight.iter().any(|&w| w < 0.0) {
            push(f("weight"), "negative priority weight");
        }
        if n
            .p_load
            .iter()
            .zip(&n.q_load)
            .any(|(&p, &q)| p == 0.0 && q != 0.0)
        {
            push(f("q_load"), "reactive load without active load (undefined power factor)");
        }
    }

    let mut seen = BTreeSet::new();
    for l in &s.dist_lines {
        let f = |x: &str| format!("dist_lines[id={}].{x}", l.id);
        if !seen.insert(l.id) {
            push(f("id"), "duplicate line id");
        }
        if l.r < 0.0 || l.x < 0.0 {
            push(f("r"), "negative impedance");
        }
        if !(l.s_max > 0.0) {
            push(f("s_max"), "line capacity must be positive");
        }
        if l.from == l.to {
            push(f("to"), "line is a self-loop");
        }
    }

    let mut seen = BTreeSet::new();
    for u in &s.dg_units {
        let f = |x: &str| format!("dg_units[node={}].{x}", u.node);
        if !seen.insert(u.node) {
            push(f("node"), "more than one DG unit at a node");
        }
        if u.p_min.iter().zip(&u.p_max).any(|(lo, hi)| lo > hi) {
            push(f("p_min"), "generation bounds crossed");
        }
        if u.p_min.iter().any(|&p| p < 0.0) {
            push(f("p_min"), "negative generation bound");
        }
        if u.c2 < 0.0 {
            push(f("c2"), "non-convex cost (negative quadratic coefficient)");
        }
    }

    let mut seen = BTreeSet::new();
    for l in &s.road_links {
        let f = |x: &str| format!("road_links[id={}].{x}", l.id);
        if !seen.insert(l.id) {
            push(f("id"), "duplicate link id");
        }
        if !(l.t0 > 0.0) {
            push(f("t0"), "free-flow time must be positive");
        }
        if !(l.cap > 0.0) {
            push(f("cap"), "capacity must be positive");
        }
        if l.bpr_alpha < 0.0 {
            push(f("bpr_alpha"), "negative BPR coefficient");
        }
        if l.bpr_beta < 1.0 {
            push(f("bpr_beta"), "BPR exponent below 1");
        }
    }

    let stations: BTreeSet<NodeId> = s.cs_map.iter().map(|m| m.transport_node).collect();
    let mut seen = BTreeSet::new();
    for g in &s.ev_groups {
        let f = |x: &str| format!("ev_groups[origin={},class={}].{x}", g.origin, g.class);
        if !seen.insert((g.origin, g.class)) {
            push(f("class"), "duplicate (origin, class) group");
        }
        if g.arrival >= g.departure {
            push(f("departure"), "empty dwell window");
        }
        if g.arrival < 1 || g.departure > horizon {
            push(f("arrival"), "dwell window outside horizon");
        }
        if !(g.soc_min <= g.soc_arr && g.soc_arr <= g.soc_max) {
            push(f("soc_arr"), "arrival SOC outside battery limits");
        }
        if !(g.soc_min <= g.soc_dep && g.soc_dep <= g.soc_max) {
            push(f("soc_dep"), "departure SOC outside battery limits");
        }
        if !(0.0..=1.0).contains(&g.soc_min) || !(0.0..=1.0).contains(&g.soc_max) {
            push(f("soc_min"), "SOC limits outside [0, 1]");
        }
        if !(g.capacity_kwh > 0.0) {
            push(f("capacity_kwh"), "battery capacity must be positive");
        }
        if g.fleet < 0.0 {
            push(f("fleet"), "negative fleet size");
        }
        if g.deg_cost < 0.0 {
            push(f("deg_cost"), "negative degradation cost");
        }
        if !s.ev_groups.is_empty() && stations.is_empty() {
            push(f("origin"), "EV group without any charging station");
        }
    }

    for od in &s.background_od {
        if od.demand.values().any(|&d| d < 0.0) {
            push(
                format!("background_od[{}->{}].demand", od.origin, od.destination),
                "negative demand",
            );
        }
        if od.demand.keys().any(|&h| h < 1 || h > horizon) {
            push(
                format!("background_od[{}->{}].demand", od.origin, od.destination),
                "demand hour outside horizon",
            );
        }
    }

    // CS <-> transport bijection.
    let mut dist_seen = BTreeSet::new();
    let mut trans_seen = BTreeSet::new();
    for m in &s.cs_map {
        if !dist_seen.insert(m.dist_node) {
            push(format!("cs_map[dist_node={}]", m.dist_node), "station mapped twice");
        }
        if !trans_seen.insert(m.transport_node) {
            push(
                format!("cs_map[transport_node={}]", m.transport_node),
                "transport node mapped twice",
            );
        }
    }
    for n in &s.dist_nodes {
        if n.is_cs && !dist_seen.contains(&n.id) {
            push(format!("dist_nodes[id={}].is_cs", n.id), "charging station has no transport node");
        }
    }
    for m in &s.cs_map {
        if let Some(k) = s.node_index(m.dist_node) {
            if !s.dist_nodes[k].is_cs {
                push(format!("cs_map[dist_node={}]", m.dist_node), "mapped node is not a charging station");
            }
        }
    }
    for n in &s.dist_nodes {
        if n.is_dg && !s.dg_units.iter().any(|u| u.node == n.id) {
            push(format!("dist_nodes[id={}].is_dg", n.id), "DG node without a DG unit");
        }
    }

    if !(s.behavior.beta1 > 0.0) {
        push("behavior.beta1".into(), "beta1 must be positive");
    }
    if !(s.behavior.beta2 > 0.0) {
        push("behavior.beta2".into(), "beta2 must be positive");
    }
    if !(s.solver.tol > 0.0) {
        push("solver.tol".into(), "tolerance must be positive");
    }

    if !feeder_connected(s) {
        push("dist_lines".into(), "feeder graph is not connected");
    }
    out
}

fn feeder_connected(s: &Scenario) -> bool {
    let n = s.dist_nodes.len();
    if n <= 1 {
        return true;
    }
    let mut adj = vec![Vec::new(); n];
    for l in &s.dist_lines {
        if let (Some(a), Some(b)) = (s.node_index(l.from), s.node_index(l.to)) {
            adj[a].push(b);
            adj[b].push(a);
        }
    }
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(u) = stack.pop() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                stack.push(v);
            }
        }
    }
    seen.into_iter().all(|b| b)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "base": {"s_base_kva": 1000, "horizon": 2},
        "dist_nodes": [{"id": 1}],
        "dist_lines": [], "dg_units": [], "road_links": [], "ev_groups": [],
        "background_od": [], "cs_map": [], "behavior": {}, "solver": {}
    }"#;

    #[test]
    fn minimal_file_is_valid() {
        let s = parse_scenario(MINIMAL).unwrap();
        assert_eq!(s.dist_nodes.len(), 1);
        assert_eq!(s.dist_nodes[0].p_load, vec![0.0, 0.0]);
        assert_eq!(s.behavior.beta1, 1.0);
        assert!(validate_scenario(&s).is_empty());
    }

    #[test]
    fn dangling_line_reference() {
        let text = r#"{
            "base": {"s_base_kva": 1000},
            "dist_nodes": [{"id": 1}, {"id": 2}, {"id": 3}, {"id": 4}],
            "dist_lines": [{"id": 1, "from": 1, "to": 9, "r": 0.01, "x": 0.01, "s_max": 2}]
        }"#;
        match parse_scenario(text) {
            Err(ScenarioError::Dangling { id, .. }) => assert_eq!(id, "9"),
            other => panic!("expected dangling reference, got {other:?}"),
        }
    }

    #[test]
    fn schema_error_names_field() {
        let text = r#"{"base": {"s_base_kva": 1000}, "dist_nodes": [{"id": 1, "v_min": "low"}]}"#;
        match parse_scenario(text) {
            Err(ScenarioError::Schema { field, .. }) => assert_eq!(field, "dist_nodes[0].v_min"),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn syntax_error_has_locus() {
        let text = "{\n  \"base\": {\"s_base_kva\": 1000,\n}";
        match parse_scenario(text) {
            Err(ScenarioError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn empty_voltage_band_is_reported() {
        let mut s = parse_scenario(MINIMAL).unwrap();
        s.dist_nodes[0].v_min = 1.0;
        s.dist_nodes[0].v_max = 1.0;
        let v = validate_scenario(&s);
        assert!(v.iter().any(|v| v.message == "voltage band empty"), "{v:?}");
    }

    #[test]
    fn empty_dwell_window_is_reported() {
        let mut s = parse_scenario(MINIMAL).unwrap();
        s.ev_groups.push(EvGroup {
            origin: 1,
            class: 1,
            arrival: 2,
            departure: 2,
            soc_arr: 0.5,
            soc_dep: 0.5,
            soc_min: 0.1,
            soc_max: 1.0,
            capacity_kwh: 50.0,
            fleet: 1.0,
            deg_cost: 0.03,
        });
        let v = validate_scenario(&s);
        assert!(v.iter().any(|v| v.message == "empty dwell window"), "{v:?}");
    }

    #[test]
    fn line_status_defaults_to_in_service() {
        let text = r#"{
            "base": {"s_base_kva": 1000, "horizon": 4, "outages": [{"line": 1, "from_t": 2, "to_t": 4}]},
            "dist_nodes": [{"id": 1}, {"id": 2}, {"id": 3}],
            "dist_lines": [
                {"id": 1, "from": 1, "to": 2, "r": 0.01, "x": 0.01, "s_max": 2},
                {"id": 2, "from": 2, "to": 3, "r": 0.01, "x": 0.01, "s_max": 2}
            ]
        }"#;
        let s = parse_scenario(text).unwrap();
        assert_eq!(s.line_status(1, 1).unwrap(), 1);
        assert_eq!(s.line_status(1, 2).unwrap(), 0);
        assert_eq!(s.line_status(1, 3).unwrap(), 0);
        assert_eq!(s.line_status(1, 4).unwrap(), 1);
        for t in 1..=4 {
            assert_eq!(s.line_status(2, t).unwrap(), 1);
        }
        assert!(s.line_status(7, 1).is_err());
        assert!(s.line_status(1, 5).is_err());
        assert!(s.line_status(1, 0).is_err());
    }
}
