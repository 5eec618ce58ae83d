//! Equilibrium recovery and certification.
//!
//! Prices, incentives and travel times are read off the combined solve's
//! duals. Each agent's own problem is then solved (or evaluated in closed
//! form) at those prices and compared with the combined solution's
//! restriction to that agent. Objective values are compared rather than
//! argmins because agent optima need not be unique.

use std::collections::BTreeMap;

use petgraph::algo::dijkstra;
use petgraph::graph::{DiGraph, NodeIndex};
use serde::{Deserialize, Serialize};

use crate::assemble::{add_fleet, add_power, assemble, solve_options, traffic_demand, CombinedProgram};
use crate::error::ModelError;
use crate::par;
use crate::power::{dg_cost, dg_marginal_cost};
use crate::program::ConvexProgram;
use crate::scenario::{Hour, NodeId, Scenario};
use crate::solve::{relative_gap, solve_program, SolutionBundle, Status, PRIMAL_FEAS_TOL};
use crate::traffic::{bpr_time, logit_shares, wardrop_check, WardropViolation};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceValue {
    pub node: NodeId,
    pub t: Hour,
    /// $/pu·h
    pub rho: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IncentiveValue {
    pub origin: NodeId,
    /// Station transport node.
    pub destination: NodeId,
    pub class: u32,
    /// $/veh; positive means the aggregator pays drivers.
    pub alpha: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TravelTime {
    pub tau: Hour,
    pub origin: NodeId,
    pub destination: NodeId,
    /// Hours, from the conservation-row duals.
    pub tt: f64,
    /// Hours, shortest path on congested link times.
    pub shortest_path: f64,
    /// False for background traffic.
    pub ev: bool,
}

/// Relative gap for agent re-solves.
const AGENT_GAP: f64 = 1e-9;

fn require_optimal(b: &SolutionBundle) -> Result<(), ModelError> {
    if b.status != Status::Optimal {
        return Err(ModelError::NotOptimal(b.status));
    }
    Ok(())
}

fn dual(p: &CombinedProgram, b: &SolutionBundle, row: crate::program::RowId) -> Result<f64, ModelError> {
    b.row_duals
        .get(row.0)
        .copied()
        .ok_or_else(|| ModelError::MissingDual(p.program.rows[row.0].name.clone()))
}

/// ρ per supply node and hour.
pub fn recover_prices(p: &CombinedProgram, b: &SolutionBundle) -> Result<Vec<PriceValue>, ModelError> {
    require_optimal(b)?;
    p.clear_p
        .iter()
        .map(|c| {
            Ok(PriceValue {
                node: c.node,
                t: c.t,
                rho: dual(p, b, c.row)?,
            })
        })
        .collect()
}

/// α per (origin, station, class).
pub fn recover_incentives(p: &CombinedProgram, b: &SolutionBundle) -> Result<Vec<IncentiveValue>, ModelError> {
    require_optimal(b)?;
    p.clear_q
        .iter()
        .map(|c| {
            Ok(IncentiveValue {
                origin: c.origin,
                destination: c.destination,
                class: c.class,
                alpha: dual(p, b, c.row)?,
            })
        })
        .collect()
}

/// Congested link times `tt_a(v*)` of one arrival-hour block.
fn link_times(p: &CombinedProgram, block: usize, primal: &[f64]) -> Result<Vec<f64>, ModelError> {
    let tb = &p.traffic[block];
    p.scenario
        .road_links
        .iter()
        .zip(&tb.link_totals)
        .map(|(l, v)| bpr_time(l, primal[v.0].max(0.0)))
        .collect()
}

fn shortest_paths(s: &Scenario, nodes: &[NodeId], times: &[f64], origin: NodeId) -> BTreeMap<NodeId, f64> {
    let mut g = DiGraph::<NodeId, f64>::new();
    let idx: Vec<NodeIndex> = nodes.iter().map(|&n| g.add_node(n)).collect();
    let pos = |n: NodeId| idx[nodes.binary_search(&n).expect("transport node")];
    for (l, &t) in s.road_links.iter().zip(times) {
        if l.from != l.to {
            g.add_edge(pos(l.from), pos(l.to), t);
        }
    }
    dijkstra(&g, pos(origin), None, |e| *e.weight())
        .into_iter()
        .map(|(k, d)| (g[k], d))
        .collect()
}

/// Node potentials (hours) per OD of one block, in `all_ods()` order.
fn potentials(p: &CombinedProgram, block: usize, b: &SolutionBundle) -> Result<Vec<Vec<f64>>, ModelError> {
    let scale = p.scenario.behavior.beta2 / p.scenario.behavior.beta1;
    p.traffic[block]
        .all_ods()
        .map(|od| {
            od.conservation
                .iter()
                .map(|&r| Ok(scale * dual(p, b, r)?))
                .collect()
        })
        .collect()
}

/// tt per OD and arrival hour, cross-checked against shortest paths.
pub fn recover_travel_times(p: &CombinedProgram, b: &SolutionBundle) -> Result<Vec<TravelTime>, ModelError> {
    require_optimal(b)?;
    let mut out = Vec::new();
    for (k, tb) in p.traffic.iter().enumerate() {
        let eta = potentials(p, k, b)?;
        let times = link_times(p, k, &b.primal)?;
        let pos = |n: NodeId| tb.nodes.binary_search(&n).expect("transport node");
        for (j, od) in tb.all_ods().enumerate() {
            let (tt, sp) = if od.origin == od.destination {
                (0.0, 0.0)
            } else {
                let dist = shortest_paths(&p.scenario, &tb.nodes, &times, od.origin);
                let sp = *dist.get(&od.destination).ok_or(ModelError::Disconnected {
                    origin: od.origin,
                    destination: od.destination,
                })?;
                (eta[j][pos(od.origin)] - eta[j][pos(od.destination)], sp)
            };
            out.push(TravelTime {
                tau: tb.tau,
                origin: od.origin,
                destination: od.destination,
                tt,
                shortest_path: sp,
                ev: j < tb.ev_ods.len(),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Agent {
    Dg,
    Dso,
    Csa,
    Ev,
}

impl Agent {
    pub const ALL: [Agent; 4] = [Agent::Dg, Agent::Dso, Agent::Csa, Agent::Ev];

    pub fn name(self) -> &'static str {
        match self {
            Agent::Dg => "DG",
            Agent::Dso => "DSO",
            Agent::Csa => "CSA",
            Agent::Ev => "EV",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentResidual {
    pub agent: Agent,
    /// Optimal objective of the agent's own problem at the recovered prices.
    pub agent_optimal: f64,
    /// The agent's objective at the combined solution.
    pub combined: f64,
    pub residual: f64,
}

fn price_map(p: &CombinedProgram, b: &SolutionBundle) -> Result<BTreeMap<(NodeId, Hour), f64>, ModelError> {
    Ok(recover_prices(p, b)?
        .into_iter()
        .map(|v| ((v.node, v.t), v.rho))
        .collect())
}

fn incentive_vec(p: &CombinedProgram, b: &SolutionBundle) -> Result<Vec<f64>, ModelError> {
    Ok(recover_incentives(p, b)?.into_iter().map(|v| v.alpha).collect())
}

/// DG owners: maximize `Σ_t ρ·p − C(p)` over `[P̲, P̄]`, solved per hour in
/// closed form.
fn dg_residual(p: &CombinedProgram, b: &SolutionBundle) -> Result<AgentResidual, ModelError> {
    let s = &p.scenario;
    let rho = price_map(p, b)?;
    let (mut best, mut at) = (0.0, 0.0);
    for (u, unit) in s.dg_units.iter().enumerate() {
        for t in s.hours() {
            let r = rho[&(unit.node, t)];
            let (lo, hi) = (unit.p_min[t - 1], unit.p_max[t - 1]);
            let opt = if unit.c2 > 0.0 {
                ((r - unit.c1) / (2.0 * unit.c2)).clamp(lo, hi)
            } else if r > unit.c1 {
                hi
            } else {
                lo
            };
            best += r * opt - dg_cost(unit, opt);
            let x = b.primal[p.dg.output[u][t - 1].0];
            at += r * x - dg_cost(unit, x);
        }
    }
    Ok(AgentResidual {
        agent: Agent::Dg,
        agent_optimal: best,
        combined: at,
        residual: (best - at).abs() / (1.0 + best.abs()),
    })
}

/// DSO: maximize `Σ ω·p^d − Σ ρ·p^s` over the power rows.
fn dso_residual(p: &CombinedProgram, b: &SolutionBundle) -> Result<AgentResidual, ModelError> {
    let s = &p.scenario;
    let rho = price_map(p, b)?;
    let mut prog = ConvexProgram::new();
    let blocks = add_power(&mut prog, s)?;
    let mut at = 0.0;
    for (ti, (own, comb)) in blocks.iter().zip(&p.power).enumerate() {
        let t = ti + 1;
        for &(v, w) in &comb.load_value {
            at += w * b.primal[v.0];
        }
        for (i, n) in s.dist_nodes.iter().enumerate() {
            if let (Some(ps_own), Some(ps)) = (own.purchase[i], comb.purchase[i]) {
                let r = rho[&(n.id, t)];
                prog.add_linear(ps_own, -r);
                at -= r * b.primal[ps.0];
            }
        }
    }
    let sol = solve_program(&prog, &solve_options(s, AGENT_GAP))?;
    if sol.status != Status::Optimal {
        return Err(ModelError::AgentSubproblem {
            agent: "DSO",
            status: sol.status,
        });
    }
    let best = sol.primal_objective;
    Ok(AgentResidual {
        agent: Agent::Dso,
        agent_optimal: best,
        combined: at,
        residual: (best - at).abs() / (1.0 + best.abs()),
    })
}

/// Charging-station aggregator: maximize `Σ ρ·p^CS − Σ α·q′ − Σ d` over the
/// fleet rows. The feasible set is a cone, so `q′` is boxed by the fleet size
/// to keep the problem bounded; the equilibrium profit is zero.
fn csa_residual(p: &CombinedProgram, b: &SolutionBundle) -> Result<AgentResidual, ModelError> {
    let s = &p.scenario;
    let rho = price_map(p, b)?;
    let alpha = incentive_vec(p, b)?;
    let mut prog = ConvexProgram::new();
    let fleet = add_fleet(&mut prog, s)?;
    let mut at = 0.0;
    for (k, m) in s.cs_map.iter().enumerate() {
        for t in s.hours() {
            let r = rho[&(m.dist_node, t)];
            prog.add_linear(fleet.injection[k][t - 1], r);
            at += r * b.primal[p.fleet.injection[k][t - 1].0];
        }
    }
    for (c, &a) in p.clear_q.iter().zip(&alpha) {
        let own = fleet.groups[c.group].demand[c.station];
        prog.add_linear(own, -a);
        prog.vars[own.0].upper = Some(s.ev_groups[c.group].fleet);
        at -= a * b.primal[p.fleet.groups[c.group].demand[c.station].0];
    }
    for d in p.fleet.degradation_vars() {
        at -= b.primal[d.0];
    }
    let sol = solve_program(&prog, &solve_options(s, AGENT_GAP))?;
    if sol.status != Status::Optimal {
        return Err(ModelError::AgentSubproblem {
            agent: "CSA",
            status: sol.status,
        });
    }
    let best = sol.primal_objective;
    Ok(AgentResidual {
        agent: Agent::Csa,
        agent_optimal: best,
        combined: at,
        residual: (best - at).abs() / (1.0 + best.abs()),
    })
}

/// Per-group station utilities `β₀ − β₁·tt + β₂·α` inputs: (tt, α, β₀) per
/// station, in `cs_map` order.
fn group_inputs(
    p: &CombinedProgram,
    tts: &[TravelTime],
    alpha: &[f64],
    g: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let s = &p.scenario;
    let grp = &s.ev_groups[g];
    let mut tt = Vec::new();
    let mut al = Vec::new();
    let mut b0 = Vec::new();
    for (k, m) in s.cs_map.iter().enumerate() {
        let t = tts
            .iter()
            .find(|x| x.ev && x.tau == grp.arrival && x.origin == grp.origin && x.destination == m.transport_node)
            .map_or(0.0, |x| x.tt);
        tt.push(t);
        let idx = p
            .clear_q
            .iter()
            .position(|c| c.group == g && c.station == k)
            .expect("clearing row per group and station");
        al.push(alpha[idx]);
        b0.push(s.beta0(m.transport_node));
    }
    (tt, al, b0)
}

/// EV drivers: for fixed route times, each group's destination choice
/// minimizes `Σ_s [tt·q + (1/β₁) q(ln q − 1 − β₀) − (β₂/β₁) α·q]` over
/// `Σ q = Q`, whose optimum is `(Q/β₁)(ln Q − ln Z − 1)` with `Z` the logit
/// partition sum.
fn ev_residual(p: &CombinedProgram, b: &SolutionBundle, tts: &[TravelTime]) -> Result<AgentResidual, ModelError> {
    let s = &p.scenario;
    let alpha = incentive_vec(p, b)?;
    let (b1, b2) = (s.behavior.beta1, s.behavior.beta2);
    let (mut best, mut at) = (0.0, 0.0);
    for (g, grp) in s.ev_groups.iter().enumerate() {
        let (tt, al, b0) = group_inputs(p, tts, &alpha, g);
        let u: Vec<f64> = (0..tt.len()).map(|k| b0[k] - b1 * tt[k] + b2 * al[k]).collect();
        let umax = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let ln_z = umax + u.iter().map(|x| (x - umax).exp()).sum::<f64>().ln();
        let qtot = grp.fleet;
        if qtot > 0.0 {
            best += qtot / b1 * (qtot.ln() - ln_z - 1.0);
        }
        for k in 0..tt.len() {
            let q = b.primal[traffic_demand(&p.traffic, s, g, k).0].max(0.0);
            let ent = if q > 0.0 { q * (q.ln() - 1.0 - b0[k]) } else { 0.0 };
            at += tt[k] * q + ent / b1 - b2 / b1 * al[k] * q;
        }
    }
    Ok(AgentResidual {
        agent: Agent::Ev,
        agent_optimal: best,
        combined: at,
        residual: (best - at).abs() / (1.0 + best.abs()),
    })
}

/// Best-response residual of one agent at the recovered prices.
pub fn verify_agent_best_response(
    agent: Agent,
    p: &CombinedProgram,
    b: &SolutionBundle,
) -> Result<AgentResidual, ModelError> {
    require_optimal(b)?;
    match agent {
        Agent::Dg => dg_residual(p, b),
        Agent::Dso => dso_residual(p, b),
        Agent::Csa => csa_residual(p, b),
        Agent::Ev => {
            let tts = recover_travel_times(p, b)?;
            ev_residual(p, b, &tts)
        }
    }
}

/// Largest `|q − Q·logit(tt, α)| / Q` over groups and stations.
pub fn logit_residual(p: &CombinedProgram, b: &SolutionBundle, tts: &[TravelTime]) -> Result<f64, ModelError> {
    let s = &p.scenario;
    let alpha = incentive_vec(p, b)?;
    let mut worst: f64 = 0.0;
    for (g, grp) in s.ev_groups.iter().enumerate() {
        if grp.fleet <= 0.0 {
            continue;
        }
        let (tt, al, b0) = group_inputs(p, tts, &alpha, g);
        let shares = logit_shares(&tt, &al, &b0, s.behavior.beta1, s.behavior.beta2);
        for (k, share) in shares.iter().enumerate() {
            let q = b.primal[traffic_demand(&p.traffic, s, g, k).0];
            worst = worst.max((q - grp.fleet * share).abs() / grp.fleet);
        }
    }
    Ok(worst)
}

/// Tolerances of every certificate check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    pub gap_tol: f64,
    pub feasibility_tol: f64,
    pub clearing_tol: f64,
    pub agent_tol: f64,
    pub logit_tol: f64,
    pub wardrop_tol: f64,
    /// Dual travel time vs. shortest path on congested link times, relative
    /// to `1 + path time`.
    pub path_tol: f64,
    pub price_tol: f64,
    /// Re-solve with loads perturbed by this amount to probe dual degeneracy;
    /// `None` skips the probe.
    pub degeneracy_probe: Option<f64>,
    /// ρ shift (in $/pu·h) above which the probe flags degeneracy.
    pub degeneracy_shift: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            gap_tol: 1e-8,
            feasibility_tol: PRIMAL_FEAS_TOL,
            clearing_tol: 1e-8,
            agent_tol: 1e-6,
            logit_tol: 1e-4,
            wardrop_tol: 1e-4,
            path_tol: 1e-6,
            price_tol: 1e-6,
            degeneracy_probe: Some(1e-6),
            degeneracy_shift: 1e-2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub residual: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Check {
    fn new(name: &str, residual: f64, tolerance: f64) -> Self {
        Check {
            name: name.to_string(),
            residual,
            tolerance,
            pass: residual <= tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumReport {
    pub prices: Vec<PriceValue>,
    pub incentives: Vec<IncentiveValue>,
    pub travel_times: Vec<TravelTime>,
    pub agents: Vec<AgentResidual>,
    pub wardrop_violations: Vec<WardropViolation>,
    pub checks: Vec<Check>,
    /// Set when a small load perturbation moves some ρ by more than the
    /// configured shift. Informational; does not fail the report.
    pub degenerate: bool,
    pub max_price_shift: Option<f64>,
    pub pass: bool,
}

impl EquilibriumReport {
    pub fn failed_checks(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.pass)
    }

    /// One line per check: name, residual, tolerance, verdict.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            out.push_str(&format!(
                "{:<20} residual={:<12.3e} tol={:<8.1e} {}\n",
                c.name,
                c.residual,
                c.tolerance,
                if c.pass { "PASS" } else { "FAIL" }
            ));
        }
        if self.degenerate {
            out.push_str("note: degenerate clearing duals (prices not unique)\n");
        }
        out.push_str(if self.pass { "overall PASS\n" } else { "overall FAIL\n" });
        out
    }
}

fn price_consistency(p: &CombinedProgram, b: &SolutionBundle) -> Result<f64, ModelError> {
    let s = &p.scenario;
    let rho = price_map(p, b)?;
    let margin = 1e-5;
    let mut worst: f64 = 0.0;
    for (u, unit) in s.dg_units.iter().enumerate() {
        for t in s.hours() {
            let x = b.primal[p.dg.output[u][t - 1].0];
            if x > unit.p_min[t - 1] + margin && x < unit.p_max[t - 1] - margin {
                worst = worst.max((rho[&(unit.node, t)] - dg_marginal_cost(unit, x)).abs());
            }
        }
    }
    Ok(worst)
}

fn wardrop_residual(p: &CombinedProgram, b: &SolutionBundle, tol: f64) -> Result<(f64, Vec<WardropViolation>), ModelError> {
    let mut all = Vec::new();
    for k in 0..p.traffic.len() {
        let eta = potentials(p, k, b)?;
        all.extend(wardrop_check(&p.traffic[k], &p.scenario, &b.primal, &eta, tol)?);
    }
    let worst = all
        .iter()
        .map(|v| {
            if v.flow > tol {
                (v.link_time - v.potential_drop).abs()
            } else {
                v.potential_drop - v.link_time
            }
        })
        .fold(0.0, f64::max);
    Ok((worst, all))
}

fn degeneracy_probe(p: &CombinedProgram, b: &SolutionBundle, delta: f64) -> Result<f64, ModelError> {
    let mut s = p.scenario.clone();
    for n in &mut s.dist_nodes {
        for t in 0..n.p_load.len() {
            if n.p_load[t] > 0.0 {
                let ratio = n.q_load[t] / n.p_load[t];
                n.p_load[t] += delta;
                n.q_load[t] = ratio * n.p_load[t];
            }
        }
    }
    let q = assemble(&s)?;
    let bb = crate::assemble::solve(&q, 1e-8)?;
    require_optimal(&bb)?;
    let a = recover_prices(p, b)?;
    let c = recover_prices(&q, &bb)?;
    Ok(a.iter().zip(&c).map(|(x, y)| (x.rho - y.rho).abs()).fold(0.0, f64::max))
}

/// Runs every certificate check over an optimal bundle.
pub fn equilibrium_report(
    p: &CombinedProgram,
    b: &SolutionBundle,
    opts: &VerifyOptions,
) -> Result<EquilibriumReport, ModelError> {
    require_optimal(b)?;
    let prices = recover_prices(p, b)?;
    let incentives = recover_incentives(p, b)?;
    let travel_times = recover_travel_times(p, b)?;

    let agents: Vec<AgentResidual> = par::map(&Agent::ALL, |&a| match a {
        Agent::Ev => ev_residual(p, b, &travel_times),
        _ => verify_agent_best_response(a, p, b),
    })
    .into_iter()
    .collect::<Result<_, _>>()?;

    let mut checks = vec![
        Check::new(
            "duality_gap",
            relative_gap(b.primal_objective, b.dual_objective),
            opts.gap_tol,
        ),
        Check::new(
            "primal_feasibility",
            p.program.max_scaled_violation(&b.primal),
            opts.feasibility_tol,
        ),
        Check::new(
            "clearing",
            p.clearing_residuals(&b.primal)
                .iter()
                .map(|(_, r)| r.abs())
                .fold(0.0, f64::max),
            opts.clearing_tol,
        ),
    ];
    for a in &agents {
        checks.push(Check::new(
            &format!("best_response_{}", a.agent.name().to_lowercase()),
            a.residual,
            opts.agent_tol,
        ));
    }
    checks.push(Check::new("logit", logit_residual(p, b, &travel_times)?, opts.logit_tol));
    let (wardrop, wardrop_violations) = wardrop_residual(p, b, opts.wardrop_tol)?;
    checks.push(Check::new("wardrop", wardrop, opts.wardrop_tol));
    checks.push(Check::new(
        "shortest_path",
        travel_times
            .iter()
            .map(|t| (t.tt - t.shortest_path).abs() / (1.0 + t.shortest_path.abs()))
            .fold(0.0, f64::max),
        opts.path_tol,
    ));
    checks.push(Check::new("price_consistency", price_consistency(p, b)?, opts.price_tol));

    let max_price_shift = match opts.degeneracy_probe {
        Some(delta) => Some(degeneracy_probe(p, b, delta)?),
        None => None,
    };
    let degenerate = max_price_shift.is_some_and(|d| d > opts.degeneracy_shift);
    let pass = checks.iter().all(|c| c.pass);
    Ok(EquilibriumReport {
        prices,
        incentives,
        travel_times,
        agents,
        wardrop_violations,
        checks,
        degenerate,
        max_price_shift,
        pass,
    })
}
