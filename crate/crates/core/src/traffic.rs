//! Combined distribution and assignment (CDA) building blocks: BPR link
//! costs, per-OD link-node flow conservation, the entropy destination-choice
//! terms, and the post-solve logit and Wardrop checks.

use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::program::{bpr_integral_raw, ConcaveTerm, ConvexProgram, RowId, Sense, VarId};
use crate::scenario::{Hour, NodeId, RoadLink, Scenario};

/// BPR travel time `t0·(1 + α(v/cap)^β)` in hours.
pub fn bpr_time(link: &RoadLink, v: f64) -> Result<f64, ModelError> {
    if v < 0.0 {
        return Err(ModelError::NegativeFlow(v));
    }
    Ok(link.t0 * (1.0 + link.bpr_alpha * (v / link.cap).powf(link.bpr_beta)))
}

/// `∫₀ᵛ bpr_time(u) du` in veh·h.
pub fn bpr_integral(link: &RoadLink, v: f64) -> Result<f64, ModelError> {
    if v < 0.0 {
        return Err(ModelError::NegativeFlow(v));
    }
    Ok(bpr_integral_raw(link.t0, link.cap, link.bpr_alpha, link.bpr_beta, v))
}

/// Link flows of one origin-destination pair and its conservation rows.
#[derive(Debug, Clone)]
pub struct OdFlows {
    pub origin: NodeId,
    pub destination: NodeId,
    /// One flow variable per road link, in `scenario.road_links` order.
    pub links: Vec<VarId>,
    /// One conservation row per transport node, in `TrafficBlock::nodes` order.
    pub conservation: Vec<RowId>,
}

/// EV flow from a group's origin to one station.
#[derive(Debug, Clone, Copy)]
pub struct DemandVar {
    /// Index into `scenario.ev_groups`.
    pub group: usize,
    /// Index into `scenario.cs_map`.
    pub station: usize,
    pub var: VarId,
}

/// Variables and rows of the CDA program for one arrival hour.
#[derive(Debug, Clone)]
pub struct TrafficBlock {
    pub tau: Hour,
    pub nodes: Vec<NodeId>,
    pub ev_ods: Vec<OdFlows>,
    pub background: Vec<OdFlows>,
    /// Total flow per road link.
    pub link_totals: Vec<VarId>,
    pub aggregation: Vec<RowId>,
    pub demand: Vec<DemandVar>,
    /// `(group index, row)` for `Σ_s q = Q`.
    pub demand_totals: Vec<(usize, RowId)>,
    /// Objective in driver (minimization) form, stored as concave terms:
    /// `Σ ∫tt + (1/β₁) Σ q(ln q − 1 − β₀)`. The incentive part `−(β₂/β₁)α·q`
    /// is added by whoever fixes α.
    pub objective: Vec<ConcaveTerm>,
}

impl TrafficBlock {
    /// Total OD count (EV then background), matching the potential layout
    /// expected by [`wardrop_check`].
    pub fn all_ods(&self) -> impl Iterator<Item = &OdFlows> {
        self.ev_ods.iter().chain(self.background.iter())
    }

    pub fn demand_var(&self, group: usize, station: usize) -> Option<VarId> {
        self.demand
            .iter()
            .find(|d| d.group == group && d.station == station)
            .map(|d| d.var)
    }
}

fn road_endpoints(s: &Scenario) -> std::collections::BTreeSet<NodeId> {
    s.road_links.iter().flat_map(|l| [l.from, l.to]).collect()
}

/// Adds the CDA rows for arrival hour `tau` to `prog`.
pub fn build_traffic_block(prog: &mut ConvexProgram, s: &Scenario, tau: Hour) -> Result<TrafficBlock, ModelError> {
    let nodes: Vec<NodeId> = s.transport_nodes().into_iter().collect();
    let endpoints = road_endpoints(s);
    let beta1 = s.behavior.beta1;

    let groups: Vec<usize> = (0..s.ev_groups.len())
        .filter(|&g| s.ev_groups[g].arrival == tau)
        .collect();
    let mut origins: Vec<NodeId> = groups.iter().map(|&g| s.ev_groups[g].origin).collect();
    origins.sort_unstable();
    origins.dedup();

    let check = |n: NodeId| {
        if endpoints.contains(&n) {
            Ok(())
        } else {
            Err(ModelError::UnknownRoadNode(n))
        }
    };

    let mut objective = Vec::new();

    // Destination demand per (group, station).
    let mut demand = Vec::new();
    for &g in &groups {
        let grp = &s.ev_groups[g];
        for (k, st) in s.cs_map.iter().enumerate() {
            let var = prog.nonneg(format!("q[{},{},{}]", grp.origin, st.transport_node, grp.class));
            objective.push(ConcaveTerm::Entropy {
                weight: 1.0 / beta1,
                var,
                shift: s.beta0(st.transport_node),
            });
            demand.push(DemandVar {
                group: g,
                station: k,
                var,
            });
        }
    }

    let add_od = |prog: &mut ConvexProgram,
                      prefix: &str,
                      origin: NodeId,
                      dest: NodeId|
     -> OdFlows {
        let links: Vec<VarId> = s
            .road_links
            .iter()
            .map(|l| prog.nonneg(format!("{prefix}[{tau},{origin},{dest},{}]", l.id)))
            .collect();
        OdFlows {
            origin,
            destination: dest,
            links,
            conservation: Vec::new(),
        }
    };

    // Conservation rows are written as `E_rs·q − A·x = 0` so that the
    // potential drop η_r − η_s along an OD is a positive travel cost.
    let incidence = |n: NodeId, x: &[VarId]| -> Vec<(VarId, f64)> {
        let mut terms = Vec::new();
        for (a, l) in s.road_links.iter().enumerate() {
            if l.from == l.to {
                continue;
            }
            if l.from == n {
                terms.push((x[a], -1.0));
            } else if l.to == n {
                terms.push((x[a], 1.0));
            }
        }
        terms
    };

    let mut ev_ods = Vec::new();
    for &r in &origins {
        for st in &s.cs_map {
            let dest = st.transport_node;
            if r != dest {
                check(r)?;
                check(dest)?;
            }
            let mut od = add_od(prog, "x", r, dest);
            for &n in &nodes {
                let mut terms = incidence(n, &od.links);
                let sign = if r == dest {
                    0.0
                } else if n == r {
                    1.0
                } else if n == dest {
                    -1.0
                } else {
                    0.0
                };
                if sign != 0.0 {
                    for d in demand.iter().filter(|d| {
                        s.ev_groups[d.group].origin == r && s.cs_map[d.station].transport_node == dest
                    }) {
                        terms.push((d.var, sign));
                    }
                }
                od.conservation
                    .push(prog.add_row(format!("evflow[{tau},{r},{dest},{n}]"), terms, Sense::Eq, 0.0));
            }
            ev_ods.push(od);
        }
    }

    let mut background = Vec::new();
    for bg in &s.background_od {
        let Some(&flow) = bg.demand.get(&tau) else {
            continue;
        };
        let (r, dest) = (bg.origin, bg.destination);
        if r != dest {
            check(r)?;
            check(dest)?;
        }
        let mut od = add_od(prog, "xb", r, dest);
        for &n in &nodes {
            let terms = incidence(n, &od.links);
            let e = if r == dest {
                0.0
            } else if n == r {
                1.0
            } else if n == dest {
                -1.0
            } else {
                0.0
            };
            od.conservation
                .push(prog.add_row(format!("bgflow[{tau},{r},{dest},{n}]"), terms, Sense::Eq, -flow * e));
        }
        background.push(od);
    }

    let mut link_totals = Vec::with_capacity(s.road_links.len());
    let mut aggregation = Vec::with_capacity(s.road_links.len());
    for (a, l) in s.road_links.iter().enumerate() {
        let v = prog.nonneg(format!("v[{tau},{}]", l.id));
        let mut terms = vec![(v, 1.0)];
        for od in ev_ods.iter().chain(background.iter()) {
            terms.push((od.links[a], -1.0));
        }
        aggregation.push(prog.add_row(format!("vagg[{tau},{}]", l.id), terms, Sense::Eq, 0.0));
        objective.push(ConcaveTerm::BprIntegral {
            weight: 1.0,
            var: v,
            t0: l.t0,
            cap: l.cap,
            alpha: l.bpr_alpha,
            beta: l.bpr_beta,
        });
        link_totals.push(v);
    }

    let mut demand_totals = Vec::new();
    for &g in &groups {
        let grp = &s.ev_groups[g];
        let terms = demand
            .iter()
            .filter(|d| d.group == g)
            .map(|d| (d.var, 1.0))
            .collect();
        let row = prog.add_row(
            format!("qtot[{tau},{},{}]", grp.origin, grp.class),
            terms,
            Sense::Eq,
            grp.fleet,
        );
        demand_totals.push((g, row));
    }

    Ok(TrafficBlock {
        tau,
        nodes,
        ev_ods,
        background,
        link_totals,
        aggregation,
        demand,
        demand_totals,
        objective,
    })
}

/// Multinomial logit station shares for utilities
/// `β₀,s − β₁·tt_s + β₂·α_s`.
pub fn logit_shares(tt: &[f64], alpha: &[f64], beta0: &[f64], beta1: f64, beta2: f64) -> Vec<f64> {
    let u: Vec<f64> = tt
        .iter()
        .zip(alpha)
        .zip(beta0)
        .map(|((t, a), b0)| b0 - beta1 * t + beta2 * a)
        .collect();
    let max = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = u.iter().map(|x| (x - max).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WardropViolation {
    pub tau: Hour,
    pub origin: NodeId,
    pub destination: NodeId,
    pub link: u32,
    pub flow: f64,
    pub link_time: f64,
    /// `η_from − η_to` in hours.
    pub potential_drop: f64,
}

/// Checks the link-level Wardrop conditions. `potentials[k][n]` is the node
/// potential (hours) of OD `k` in `block.all_ods()` order. A used link must
/// have cost equal to the potential drop across it; an unused link must not
/// be cheaper than the drop.
pub fn wardrop_check(
    block: &TrafficBlock,
    s: &Scenario,
    primal: &[f64],
    potentials: &[Vec<f64>],
    tol: f64,
) -> Result<Vec<WardropViolation>, ModelError> {
    let node_pos = |n: NodeId| block.nodes.binary_search(&n).expect("transport node");
    let mut out = Vec::new();
    let times: Vec<f64> = s
        .road_links
        .iter()
        .zip(&block.link_totals)
        .map(|(l, v)| bpr_time(l, primal[v.0].max(0.0)))
        .collect::<Result<_, _>>()?;
    for (k, od) in block.all_ods().enumerate() {
        let eta = potentials
            .get(k)
            .ok_or_else(|| ModelError::MissingDual(format!("potential of OD {k} at hour {}", block.tau)))?;
        if od.origin == od.destination {
            continue;
        }
        for (a, l) in s.road_links.iter().enumerate() {
            let drop = eta[node_pos(l.from)] - eta[node_pos(l.to)];
            let flow = primal[od.links[a].0];
            let ok = if flow > tol {
                (times[a] - drop).abs() <= tol
            } else {
                times[a] >= drop - tol
            };
            if !ok {
                out.push(WardropViolation {
                    tau: block.tau,
                    origin: od.origin,
                    destination: od.destination,
                    link: l.id,
                    flow,
                    link_time: times[a],
                    potential_drop: drop,
                });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn link(t0: f64, cap: f64) -> RoadLink {
        RoadLink {
            id: 1,
            from: 1,
            to: 2,
            t0,
            cap,
            bpr_alpha: 0.15,
            bpr_beta: 4.0,
        }
    }

    #[test]
    fn bpr_time_values() {
        let l = link(1.0, 20.0);
        assert_eq!(bpr_time(&l, 0.0).unwrap(), 1.0);
        assert!((bpr_time(&l, 20.0).unwrap() - 1.15).abs() < 1e-12);
        assert!((bpr_time(&l, 40.0).unwrap() - 3.4).abs() < 1e-12);
        assert!(bpr_time(&l, -1.0).is_err());
    }

    #[test]
    fn bpr_integral_values() {
        let l = link(1.0, 20.0);
        assert_eq!(bpr_integral(&l, 0.0).unwrap(), 0.0);
        assert!((bpr_integral(&l, 20.0).unwrap() - 20.6).abs() < 1e-12);
        assert!(bpr_integral(&l, -0.5).is_err());
    }

    #[test]
    fn bpr_integral_derivative_is_link_time() {
        let l = link(1.0, 20.0);
        let h = 1e-4;
        for v in [5.0, 15.0, 35.0] {
            let fd = (bpr_integral(&l, v + h).unwrap() - bpr_integral(&l, v - h).unwrap()) / (2.0 * h);
            assert!((fd - bpr_time(&l, v).unwrap()).abs() < 1e-8, "v={v}");
        }
    }

    #[test]
    fn logit_symmetry_and_values() {
        let s = logit_shares(&[1.0, 1.0], &[0.3, 0.3], &[0.0, 0.0], 1.0, 1.0);
        assert!((s[0] - 0.5).abs() < 1e-15);
        let s = logit_shares(&[1.0, 2.0], &[0.0, 0.0], &[0.0, 0.0], 1.0, 1.0);
        let e1 = (-1f64).exp();
        let e2 = (-2f64).exp();
        assert!((s[0] - e1 / (e1 + e2)).abs() < 1e-15);
        assert!((s[0] - 0.7311).abs() < 1e-4);
        assert!((s[1] - 0.2689).abs() < 1e-4);
    }

    #[test]
    fn logit_incentive_is_monotone() {
        let mut prev = 0.0;
        for d in [0.0, 1.0, 5.0, 20.0, 100.0, 1000.0] {
            let s = logit_shares(&[1.0, 2.0], &[0.0, d], &[0.0, 0.0], 1.0, 1.0);
            assert!(s[1] >= prev);
            assert!((s[0] + s[1] - 1.0).abs() < 1e-12);
            prev = s[1];
        }
        assert!(prev > 1.0 - 1e-12);
    }
}
