//! Best-response iteration used to cross-check the combined solve on tiny
//! instances.
//!
//! The agents are split into two blocks that share the clearing rows: the
//! DSO with the EV drivers, and the DG owners with the charging-station
//! aggregator. Each round solves block A at the current prices, then block B
//! against A's new quantities, then moves the prices along the clearing
//! excess. A quadratic proximity term on the clearing residual (weight
//! `penalty`) keeps both blocks bounded when agent problems are linear.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::assemble::{add_dg, add_fleet, add_power, add_traffic, solve_options, CombinedProgram};
use crate::error::ModelError;
use crate::program::{ConcaveTerm, ConvexProgram, VarId};
use crate::scenario::{validate_scenario, Scenario};
use crate::solve::{solve_program, SolutionBundle, Status};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleOptions {
    pub max_iter: usize,
    /// Price step as a multiple of `penalty`; 1 is the undamped step.
    pub damping: f64,
    /// Proximity weight σ.
    pub penalty: f64,
    /// Stop when both the clearing residual and the change in block-B
    /// quantities (times σ) fall below this.
    pub tol: f64,
    /// Declare oscillation when the residual has not reached a new minimum
    /// for this many rounds.
    pub window: usize,
}

impl Default for OracleOptions {
    fn default() -> Self {
        OracleOptions {
            max_iter: 500,
            damping: 1.0,
            penalty: 20.0,
            tol: 1e-7,
            window: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleOutcome {
    Converged,
    Oscillating,
    IterationLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub outcome: OracleOutcome,
    pub iterations: usize,
    /// Primal values by variable name, from whichever block owns the variable.
    pub primal: BTreeMap<String, f64>,
    /// Final ρ by `clear_p` row name.
    pub prices: BTreeMap<String, f64>,
    /// Final α by `clear_q` row name.
    pub incentives: BTreeMap<String, f64>,
    /// `max(primal, dual)` residual per round.
    pub history: Vec<f64>,
}

/// Limits for which the oracle is meant: at most 2 supply nodes, 2 stations
/// and 3 hours.
pub fn check_tiny(s: &Scenario) -> Result<(), ModelError> {
    let supply = (0..s.dist_nodes.len()).filter(|&i| s.is_supply_node(i)).count();
    if supply > 2 || s.cs_map.len() > 2 || s.horizon() > 3 {
        return Err(ModelError::NotTiny(format!(
            "{supply} supply nodes, {} stations, {} hours",
            s.cs_map.len(),
            s.horizon()
        )));
    }
    Ok(())
}

/// One clearing relation expressed by variable names.
struct Coupling {
    row: String,
    /// Name of the block-A side (`p^s` or `q`).
    a: String,
    /// Names of the block-B side (`p^DG`, `p^CS`, or `q′`).
    b: Vec<String>,
    /// `residual = sign·(a − Σb)`; +1 for energy, −1 for EV flow so that the
    /// residual is `q′ − q`.
    sign: f64,
}

fn couplings(s: &Scenario) -> Vec<Coupling> {
    let mut out = Vec::new();
    for (i, n) in s.dist_nodes.iter().enumerate() {
        if !s.is_supply_node(i) {
            continue;
        }
        for t in s.hours() {
            let mut b = Vec::new();
            if s.dg_units.iter().any(|u| u.node == n.id) {
                b.push(format!("pdg[{},{t}]", n.id));
            }
            if s.cs_map.iter().any(|m| m.dist_node == n.id) {
                b.push(format!("pcs[{},{t}]", n.id));
            }
            out.push(Coupling {
                row: format!("clear_p[{},{t}]", n.id),
                a: format!("ps[{},{t}]", n.id),
                b,
                sign: 1.0,
            });
        }
    }
    for g in &s.ev_groups {
        for m in &s.cs_map {
            let key = format!("{},{},{}", g.origin, m.transport_node, g.class);
            out.push(Coupling {
                row: format!("clear_q[{key}]"),
                a: format!("q[{key}]"),
                b: vec![format!("qp[{key}]")],
                sign: -1.0,
            });
        }
    }
    out
}

fn ids(prog: &ConvexProgram, names: &[String]) -> Vec<VarId> {
    names
        .iter()
        .map(|n| prog.var(n).unwrap_or_else(|| panic!("block variable {n}")))
        .collect()
}

fn solve_block(prog: &ConvexProgram, s: &Scenario, agent: &'static str) -> Result<SolutionBundle, ModelError> {
    let b = solve_program(prog, &solve_options(s, 1e-10))?;
    if b.status != Status::Optimal {
        return Err(ModelError::AgentSubproblem { agent, status: b.status });
    }
    Ok(b)
}

/// Runs the damped best-response iteration; prices move by
/// `damping·penalty` times the clearing excess each round.
pub fn fixed_point_oracle(s: &Scenario, max_iter: usize, damping: f64) -> Result<OracleResult, ModelError> {
    fixed_point_oracle_with(
        s,
        &OracleOptions {
            max_iter,
            damping,
            ..OracleOptions::default()
        },
    )
}

pub fn fixed_point_oracle_with(s: &Scenario, opts: &OracleOptions) -> Result<OracleResult, ModelError> {
    let violations = validate_scenario(s);
    if !violations.is_empty() {
        return Err(crate::error::ScenarioError::Invalid(violations).into());
    }
    check_tiny(s)?;

    let mut base_a = ConvexProgram::new();
    add_power(&mut base_a, s)?;
    add_traffic(&mut base_a, s)?;
    let mut base_b = ConvexProgram::new();
    add_dg(&mut base_b, s);
    add_fleet(&mut base_b, s)?;

    let cps = couplings(s);
    let a_ids: Vec<VarId> = cps.iter().map(|c| ids(&base_a, std::slice::from_ref(&c.a))[0]).collect();
    let b_ids: Vec<Vec<VarId>> = cps.iter().map(|c| ids(&base_b, &c.b)).collect();

    let sigma = opts.penalty;
    let mut price = vec![0.0; cps.len()];
    let mut a_val = vec![0.0; cps.len()];
    let mut b_val = vec![0.0; cps.len()];
    let mut history = Vec::new();
    let mut best = f64::INFINITY;
    let mut best_at = 0;
    let mut last: Option<(SolutionBundle, SolutionBundle)> = None;
    let mut outcome = OracleOutcome::IterationLimit;
    let mut iterations = 0;

    for it in 1..=opts.max_iter {
        iterations = it;
        // Block A: DSO + EV drivers. Energy: −ρ·p^s; EV flow: +α·q.
        let mut pa = base_a.clone();
        for (k, c) in cps.iter().enumerate() {
            let v = a_ids[k];
            pa.add_linear(v, -c.sign * price[k]);
            pa.add_concave(ConcaveTerm::Square {
                weight: sigma / 2.0,
                terms: vec![(v, 1.0)],
                constant: -b_val[k],
            });
        }
        let Ok(sa) = solve_block(&pa, s, "DSO/EV") else {
            outcome = OracleOutcome::Oscillating;
            break;
        };
        for k in 0..cps.len() {
            a_val[k] = sa.primal[a_ids[k].0];
        }

        // Block B: DG + aggregator. Energy: +ρ·(p^DG + p^CS); EV flow: −α·q′.
        let mut pb = base_b.clone();
        for (k, c) in cps.iter().enumerate() {
            let terms: Vec<(VarId, f64)> = b_ids[k].iter().map(|&v| (v, 1.0)).collect();
            for &(v, _) in &terms {
                pb.add_linear(v, c.sign * price[k]);
            }
            if !terms.is_empty() {
                pb.add_concave(ConcaveTerm::Square {
                    weight: sigma / 2.0,
                    terms,
                    constant: -a_val[k],
                });
            }
        }
        let Ok(sb) = solve_block(&pb, s, "DG/CSA") else {
            outcome = OracleOutcome::Oscillating;
            break;
        };
        let mut dual_res: f64 = 0.0;
        let mut primal_res: f64 = 0.0;
        for k in 0..cps.len() {
            let nb: f64 = b_ids[k].iter().map(|v| sb.primal[v.0]).sum();
            dual_res = dual_res.max(sigma * (nb - b_val[k]).abs());
            b_val[k] = nb;
            let r = cps[k].sign * (a_val[k] - nb);
            primal_res = primal_res.max(r.abs());
            price[k] += opts.damping * sigma * r;
        }
        last = Some((sa, sb));

        let res = primal_res.max(dual_res);
        history.push(res);
        if res <= opts.tol {
            outcome = OracleOutcome::Converged;
            break;
        }
        // A blow-up or a block that no longer solves means the prices have
        // run away; both count as oscillation.
        if !res.is_finite() || res > 1e8 {
            outcome = OracleOutcome::Oscillating;
            break;
        }
        if res < best * (1.0 - 1e-3) {
            best = res;
            best_at = it;
        } else if it - best_at >= opts.window {
            outcome = OracleOutcome::Oscillating;
            break;
        }
    }

    let mut primal = BTreeMap::new();
    if let Some((sa, sb)) = &last {
        for (prog, sol) in [(&base_a, sa), (&base_b, sb)] {
            for (v, x) in prog.vars.iter().zip(&sol.primal) {
                primal.insert(v.name.clone(), *x);
            }
        }
    }
    let mut prices = BTreeMap::new();
    let mut incentives = BTreeMap::new();
    for (c, &y) in cps.iter().zip(&price) {
        if c.sign > 0.0 {
            prices.insert(c.row.clone(), y);
        } else {
            incentives.insert(c.row.clone(), y);
        }
    }
    Ok(OracleResult {
        outcome,
        iterations,
        primal,
        prices,
        incentives,
        history,
    })
}

/// Variable-name prefixes of the economic quantities compared between the
/// oracle and the combined solve. Voltages, reactive quantities, branch flows
/// and degradation epigraphs are excluded: they can be non-unique at an
/// equilibrium without affecting any agent.
pub const ECONOMIC_PREFIXES: [&str; 9] = ["pd[", "pdg[", "ps[", "pcs[", "q[", "qp[", "soc[", "p[", "v["];

/// Largest absolute difference over the economic variables, with the name
/// of the worst one.
pub fn compare_with_combined(o: &OracleResult, p: &CombinedProgram, b: &SolutionBundle) -> (f64, String) {
    let mut worst = (0.0, String::new());
    for (name, &x) in &o.primal {
        if !ECONOMIC_PREFIXES.iter().any(|pre| name.starts_with(pre)) {
            continue;
        }
        if let Some(v) = p.program.var(name) {
            let d = (b.primal[v.0] - x).abs();
            if d > worst.0 {
                worst = (d, name.clone());
            }
        }
    }
    worst
}
