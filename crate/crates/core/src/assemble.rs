//! The combined convex program whose optimum is the market equilibrium.
//!
//! Objective (maximize):
//!
//! ```text
//! Σ ω·p^d − Σ C(p^DG) − Σ d − (β₁/β₂) Σ ∫tt − (1/β₂) Σ q(ln q − 1 − β₀)
//! ```
//!
//! Energy purchases and incentive payments are internal transfers and cancel;
//! they reappear as the duals of the clearing rows
//! `clear_p[i,t]: p^s − p^DG − p^CS = 0` (ρ, $/pu·h) and
//! `clear_q[r,s,e]: q′ − q = 0` (α, $/veh).

use crate::error::{ModelError, ScenarioError};
use crate::fleet::{build_fleet_block, degradation_cost_rows, FleetBlock};
use crate::power::{build_dg_block, build_power_block, DgBlock, PowerBlock};
use crate::program::{ConvexProgram, RowId, Sense, VarId};
use crate::scenario::{validate_scenario, Hour, NodeId, Scenario};
use crate::solve::{solve_program, SolutionBundle, SolveOptions};
use crate::traffic::{build_traffic_block, TrafficBlock};

/// One energy clearing row.
#[derive(Debug, Clone)]
pub struct PriceRow {
    pub node: NodeId,
    pub node_index: usize,
    pub t: Hour,
    pub row: RowId,
}

/// One EV-flow clearing row.
#[derive(Debug, Clone)]
pub struct IncentiveRow {
    /// Index into `scenario.ev_groups`.
    pub group: usize,
    /// Index into `scenario.cs_map`.
    pub station: usize,
    pub origin: NodeId,
    /// Transport node of the station.
    pub destination: NodeId,
    pub class: u32,
    pub row: RowId,
}

#[derive(Debug, Clone)]
pub struct CombinedProgram {
    pub scenario: Scenario,
    pub program: ConvexProgram,
    pub power: Vec<PowerBlock>,
    pub dg: DgBlock,
    pub fleet: FleetBlock,
    pub traffic: Vec<TrafficBlock>,
    pub clear_p: Vec<PriceRow>,
    pub clear_q: Vec<IncentiveRow>,
}

/// Power rows for every hour, with the load value added to the objective.
pub(crate) fn add_power(prog: &mut ConvexProgram, s: &Scenario) -> Result<Vec<PowerBlock>, ModelError> {
    let mut out = Vec::with_capacity(s.horizon());
    for t in s.hours() {
        let pb = build_power_block(prog, s, t)?;
        for &(v, w) in &pb.load_value {
            prog.add_linear(v, w);
        }
        out.push(pb);
    }
    Ok(out)
}

pub(crate) fn add_dg(prog: &mut ConvexProgram, s: &Scenario) -> DgBlock {
    let dg = build_dg_block(prog, s);
    dg.add_cost(prog);
    dg
}

pub(crate) fn add_fleet(prog: &mut ConvexProgram, s: &Scenario) -> Result<FleetBlock, ModelError> {
    let mut fleet = build_fleet_block(prog, s)?;
    degradation_cost_rows(prog, s, &mut fleet);
    for d in fleet.degradation_vars().collect::<Vec<_>>() {
        prog.add_linear(d, -1.0);
    }
    Ok(fleet)
}

/// Traffic rows for every arrival hour, with the driver objective scaled by
/// `β₁/β₂` into welfare units.
pub(crate) fn add_traffic(prog: &mut ConvexProgram, s: &Scenario) -> Result<Vec<TrafficBlock>, ModelError> {
    let scale = s.behavior.beta1 / s.behavior.beta2;
    let mut out = Vec::new();
    for tau in s.arrival_hours() {
        let tb = build_traffic_block(prog, s, tau)?;
        for term in &tb.objective {
            prog.add_concave(term.scaled(scale));
        }
        out.push(tb);
    }
    Ok(out)
}

/// Variable of the traffic demand `q[r,s,e]` for group `g` and station `k`.
pub(crate) fn traffic_demand(traffic: &[TrafficBlock], s: &Scenario, g: usize, k: usize) -> VarId {
    let tau = s.ev_groups[g].arrival;
    traffic
        .iter()
        .find(|b| b.tau == tau)
        .and_then(|b| b.demand_var(g, k))
        .expect("every EV group has a traffic block at its arrival hour")
}

/// Builds the combined program. Fails on an invalid scenario.
pub fn assemble(s: &Scenario) -> Result<CombinedProgram, ModelError> {
    let violations = validate_scenario(s);
    if !violations.is_empty() {
        return Err(ScenarioError::Invalid(violations).into());
    }
    let mut prog = ConvexProgram::new();
    let power = add_power(&mut prog, s)?;
    let dg = add_dg(&mut prog, s);
    let fleet = add_fleet(&mut prog, s)?;
    let traffic = add_traffic(&mut prog, s)?;

    let mut clear_p = Vec::new();
    for (i, n) in s.dist_nodes.iter().enumerate() {
        if !s.is_supply_node(i) {
            continue;
        }
        for t in s.hours() {
            let ps = power[t - 1].purchase[i].expect("supply node has a purchase variable");
            let mut terms = vec![(ps, 1.0)];
            for (u, unit) in s.dg_units.iter().enumerate() {
                if unit.node == n.id {
                    terms.push((dg.output[u][t - 1], -1.0));
                }
            }
            for (k, m) in s.cs_map.iter().enumerate() {
                if m.dist_node == n.id {
                    terms.push((fleet.injection[k][t - 1], -1.0));
                }
            }
            let row = prog.add_row(format!("clear_p[{},{t}]", n.id), terms, Sense::Eq, 0.0);
            clear_p.push(PriceRow {
                node: n.id,
                node_index: i,
                t,
                row,
            });
        }
    }

    let mut clear_q = Vec::new();
    for (g, grp) in s.ev_groups.iter().enumerate() {
        for (k, m) in s.cs_map.iter().enumerate() {
            let qp = fleet.groups[g].demand[k];
            let q = traffic_demand(&traffic, s, g, k);
            let row = prog.add_row(
                format!("clear_q[{},{},{}]", grp.origin, m.transport_node, grp.class),
                vec![(qp, 1.0), (q, -1.0)],
                Sense::Eq,
                0.0,
            );
            clear_q.push(IncentiveRow {
                group: g,
                station: k,
                origin: grp.origin,
                destination: m.transport_node,
                class: grp.class,
                row,
            });
        }
    }

    Ok(CombinedProgram {
        scenario: s.clone(),
        program: prog,
        power,
        dg,
        fleet,
        traffic,
        clear_p,
        clear_q,
    })
}

/// Solve options derived from the scenario's solver block and a gap target.
pub fn solve_options(s: &Scenario, tol: f64) -> SolveOptions {
    SolveOptions {
        gap_tol: tol,
        max_iter: s.solver.max_iter,
        ..SolveOptions::default()
    }
}

/// Solves the combined program to relative duality gap `tol`.
pub fn solve(p: &CombinedProgram, tol: f64) -> Result<SolutionBundle, ModelError> {
    solve_program(&p.program, &solve_options(&p.scenario, tol))
}

impl CombinedProgram {
    /// Served load `p^d[node][t − 1]` from a primal vector.
    pub fn served_load(&self, primal: &[f64]) -> Vec<Vec<f64>> {
        (0..self.scenario.dist_nodes.len())
            .map(|i| self.power.iter().map(|pb| primal[pb.served[i].0]).collect())
            .collect()
    }

    /// Activity of every clearing row at `primal` (should be zero).
    pub fn clearing_residuals(&self, primal: &[f64]) -> Vec<(String, f64)> {
        self.clear_p
            .iter()
            .map(|c| c.row)
            .chain(self.clear_q.iter().map(|c| c.row))
            .map(|r| {
                let row = &self.program.rows[r.0];
                (row.name.clone(), row.activity(primal) - row.rhs)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::parse_scenario;
    use crate::solve::Status;

    /// One DG and one load on a single node; hand KKT: serve min(P̄ᵈ, P̄ᴰᴳ)
    /// and ρ = c₁ while generation capacity is slack.
    #[test]
    fn toy_lp_matches_hand_kkt() {
        let s = parse_scenario(
            r#"{"base": {"s_base_kva": 1000, "horizon": 1},
                "dist_nodes": [{"id": 1, "p_load": 0.8, "weight": 50}],
                "dg_units": [{"node": 1, "p_max": 1.0, "c1": 2}]}"#,
        )
        .unwrap();
        let p = assemble(&s).unwrap();
        assert_eq!(p.clear_p.len(), 1);
        let b = solve(&p, 1e-8).unwrap();
        assert_eq!(b.status, Status::Optimal);
        assert!((b.primal[p.power[0].served[0].0] - 0.8).abs() < 1e-7);
        assert!((b.row_duals[p.clear_p[0].row.0] - 2.0).abs() < 1e-6);
        assert!((b.primal_objective - (50.0 - 2.0) * 0.8).abs() < 1e-6);

        // Capacity binding: ρ rises to the load value.
        let s2 = parse_scenario(
            r#"{"base": {"s_base_kva": 1000, "horizon": 1},
                "dist_nodes": [{"id": 1, "p_load": 1.5, "weight": 50}],
                "dg_units": [{"node": 1, "p_max": 1.0, "c1": 2}]}"#,
        )
        .unwrap();
        let p2 = assemble(&s2).unwrap();
        let b2 = solve(&p2, 1e-8).unwrap();
        assert!((b2.primal[p2.power[0].served[0].0] - 1.0).abs() < 1e-7);
        assert!((b2.row_duals[p2.clear_p[0].row.0] - 50.0).abs() < 1e-6);
    }

    #[test]
    fn no_ev_scenario_has_no_traffic_terms() {
        let s = parse_scenario(
            r#"{"base": {"s_base_kva": 1000, "horizon": 2},
                "dist_nodes": [{"id": 1, "p_load": 0.5, "weight": 10}],
                "dg_units": [{"node": 1, "p_max": 1.0, "c1": 1, "c2": 0.5}]}"#,
        )
        .unwrap();
        let p = assemble(&s).unwrap();
        assert!(p.traffic.is_empty());
        assert!(p.clear_q.is_empty());
        let b = solve(&p, 1e-8).unwrap();
        // welfare = Σ (10·0.5 − 0.5 − 0.5·0.25)
        assert!((b.primal_objective - 2.0 * (5.0 - 0.5 - 0.125)).abs() < 1e-6);
    }

    #[test]
    fn invalid_scenario_is_rejected() {
        let mut s = parse_scenario(
            r#"{"base": {"s_base_kva": 1000, "horizon": 1}, "dist_nodes": [{"id": 1}]}"#,
        )
        .unwrap();
        s.dist_nodes[0].v_min = 1.2;
        assert!(matches!(
            assemble(&s),
            Err(ModelError::Scenario(ScenarioError::Invalid(_)))
        ));
    }
}
