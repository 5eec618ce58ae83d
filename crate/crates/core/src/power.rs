//! Dist-Flow rows of the distribution operator and the DG feasible set.
//!
//! Squared voltages `v`, branch flows `pf`/`qf` and a big-K voltage-drop pair
//! that collapses to an equality on in-service lines and is vacuous on
//! outaged ones. There is no slack bus; an islanded feeder is held only by the
//! voltage band.

use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::program::{ConcaveTerm, ConeId, ConvexProgram, RowId, Sense, VarId};
use crate::scenario::{DgUnit, DistLine, DistNode, Hour, NodeId, Scenario};

/// DSO variables and rows for one hour.
#[derive(Debug, Clone)]
pub struct PowerBlock {
    pub t: Hour,
    /// Served active load `p^d`, per node.
    pub served: Vec<VarId>,
    /// Served reactive load `q^d`, per node.
    pub reactive: Vec<VarId>,
    /// Energy purchase `p^s`; present on DG and charging-station nodes.
    pub purchase: Vec<Option<VarId>>,
    /// Reactive support `q^s`; present on DG and charging-station nodes.
    pub support: Vec<Option<VarId>>,
    /// Squared voltage magnitude, per node.
    pub voltage: Vec<VarId>,
    pub pf: Vec<VarId>,
    pub qf: Vec<VarId>,
    pub pbal: Vec<RowId>,
    pub qbal: Vec<RowId>,
    pub load_cap: Vec<RowId>,
    pub power_factor: Vec<RowId>,
    pub cones: Vec<ConeId>,
    pub vdrop_upper: Vec<RowId>,
    pub vdrop_lower: Vec<RowId>,
    pub vmin: Vec<RowId>,
    pub vmax: Vec<RowId>,
    /// Big-K constant per line.
    pub big_k: Vec<f64>,
    /// Priority value `ω·p^d` of served load, as linear objective terms.
    pub load_value: Vec<(VarId, f64)>,
}

/// Smallest constant that keeps both voltage-drop rows slack on an outaged
/// line for every band-feasible voltage pair and `|pf|, |qf| ≤ S_max`.
pub fn compute_big_k(line: &DistLine, from: &DistNode, to: &DistNode) -> f64 {
    let vmax2 = from.v_max.max(to.v_max).powi(2);
    let vmin2 = from.v_min.min(to.v_min).powi(2);
    (vmax2 - vmin2) + 2.0 * (line.r + line.x) * std::f64::consts::SQRT_2 * line.s_max
}

/// Adds the DSO rows for hour `t`.
pub fn build_power_block(prog: &mut ConvexProgram, s: &Scenario, t: Hour) -> Result<PowerBlock, ModelError> {
    let ti = t - 1;
    let nn = s.dist_nodes.len();
    let mut served = Vec::with_capacity(nn);
    let mut reactive = Vec::with_capacity(nn);
    let mut purchase = Vec::with_capacity(nn);
    let mut support = Vec::with_capacity(nn);
    let mut voltage = Vec::with_capacity(nn);
    let mut load_value = Vec::new();

    for (i, n) in s.dist_nodes.iter().enumerate() {
        let id = n.id;
        let pd = prog.nonneg(format!("pd[{id},{t}]"));
        served.push(pd);
        reactive.push(prog.free(format!("qd[{id},{t}]")));
        voltage.push(prog.nonneg(format!("vsq[{id},{t}]")));
        if s.is_supply_node(i) {
            purchase.push(Some(prog.free(format!("ps[{id},{t}]"))));
            support.push(Some(prog.free(format!("qs[{id},{t}]"))));
        } else {
            purchase.push(None);
            support.push(None);
        }
        if n.is_load && n.weight[ti] != 0.0 {
            load_value.push((pd, n.weight[ti]));
        }
    }

    let mut pf = Vec::with_capacity(s.dist_lines.len());
    let mut qf = Vec::with_capacity(s.dist_lines.len());
    for l in &s.dist_lines {
        pf.push(prog.free(format!("pf[{},{t}]", l.id)));
        qf.push(prog.free(format!("qf[{},{t}]", l.id)));
    }

    let mut pbal = Vec::with_capacity(nn);
    let mut qbal = Vec::with_capacity(nn);
    let mut load_cap = Vec::with_capacity(nn);
    let mut power_factor = Vec::with_capacity(nn);
    let mut vmin = Vec::with_capacity(nn);
    let mut vmax = Vec::with_capacity(nn);
    for (i, n) in s.dist_nodes.iter().enumerate() {
        let id = n.id;
        // inflow − outflow = p^d − p^s
        let mut pt = Vec::new();
        let mut qt = Vec::new();
        for (k, l) in s.dist_lines.iter().enumerate() {
            if l.to == id {
                pt.push((pf[k], 1.0));
                qt.push((qf[k], 1.0));
            }
            if l.from == id {
                pt.push((pf[k], -1.0));
                qt.push((qf[k], -1.0));
            }
        }
        pt.push((served[i], -1.0));
        qt.push((reactive[i], -1.0));
        if let Some(ps) = purchase[i] {
            pt.push((ps, 1.0));
        }
        if let Some(qs) = support[i] {
            qt.push((qs, 1.0));
        }
        pbal.push(prog.add_row(format!("pbal[{id},{t}]"), pt, Sense::Eq, 0.0));
        qbal.push(prog.add_row(format!("qbal[{id},{t}]"), qt, Sense::Eq, 0.0));

        let p_bar = n.p_load[ti];
        let q_bar = n.q_load[ti];
        load_cap.push(prog.add_row(format!("dcap[{id},{t}]"), vec![(served[i], 1.0)], Sense::Le, p_bar));
        let ratio = if p_bar > 0.0 {
            q_bar / p_bar
        } else if q_bar != 0.0 {
            return Err(ModelError::UndefinedPowerFactor { node: id, t, q: q_bar });
        } else {
            0.0
        };
        power_factor.push(prog.add_row(
            format!("pfac[{id},{t}]"),
            vec![(reactive[i], 1.0), (served[i], -ratio)],
            Sense::Eq,
            0.0,
        ));
        vmin.push(prog.add_row(format!("vmin[{id},{t}]"), vec![(voltage[i], 1.0)], Sense::Ge, n.v_min * n.v_min));
        vmax.push(prog.add_row(format!("vmax[{id},{t}]"), vec![(voltage[i], 1.0)], Sense::Le, n.v_max * n.v_max));
    }

    let mut cones = Vec::with_capacity(s.dist_lines.len());
    let mut vdrop_upper = Vec::with_capacity(s.dist_lines.len());
    let mut vdrop_lower = Vec::with_capacity(s.dist_lines.len());
    let mut big_k = Vec::with_capacity(s.dist_lines.len());
    for (k, l) in s.dist_lines.iter().enumerate() {
        let lambda = f64::from(s.status_by_index(k, t));
        let fi = s.node_index(l.from).expect("validated line endpoint");
        let ti_ = s.node_index(l.to).expect("validated line endpoint");
        let kk = compute_big_k(l, &s.dist_nodes[fi], &s.dist_nodes[ti_]);
        big_k.push(kk);
        cones.push(prog.add_disk(format!("cone[{},{t}]", l.id), pf[k], qf[k], lambda.sqrt() * l.s_max));
        let terms = vec![
            (voltage[fi], 1.0),
            (voltage[ti_], -1.0),
            (pf[k], -2.0 * l.r),
            (qf[k], -2.0 * l.x),
        ];
        vdrop_upper.push(prog.add_row(format!("vdu[{},{t}]", l.id), terms.clone(), Sense::Le, (1.0 - lambda) * kk));
        vdrop_lower.push(prog.add_row(format!("vdl[{},{t}]", l.id), terms, Sense::Ge, (lambda - 1.0) * kk));
    }

    Ok(PowerBlock {
        t,
        served,
        reactive,
        purchase,
        support,
        voltage,
        pf,
        qf,
        pbal,
        qbal,
        load_cap,
        power_factor,
        cones,
        vdrop_upper,
        vdrop_lower,
        vmin,
        vmax,
        big_k,
        load_value,
    })
}

/// DG output variables and bound rows over the horizon.
#[derive(Debug, Clone)]
pub struct DgBlock {
    /// `output[unit][t-1]`.
    pub output: Vec<Vec<VarId>>,
    pub min_rows: Vec<Vec<RowId>>,
    pub max_rows: Vec<Vec<RowId>>,
    /// `C(p)` per unit-hour as (linear coefficient, concave quadratic term).
    pub cost_linear: Vec<(VarId, f64)>,
    pub cost_quadratic: Vec<ConcaveTerm>,
}

pub fn build_dg_block(prog: &mut ConvexProgram, s: &Scenario) -> DgBlock {
    let mut output = Vec::new();
    let mut min_rows = Vec::new();
    let mut max_rows = Vec::new();
    let mut cost_linear = Vec::new();
    let mut cost_quadratic = Vec::new();
    for u in &s.dg_units {
        let mut o = Vec::new();
        let mut lo = Vec::new();
        let mut hi = Vec::new();
        for t in s.hours() {
            let p = prog.nonneg(format!("pdg[{},{t}]", u.node));
            lo.push(prog.add_row(format!("dgmin[{},{t}]", u.node), vec![(p, 1.0)], Sense::Ge, u.p_min[t - 1]));
            hi.push(prog.add_row(format!("dgmax[{},{t}]", u.node), vec![(p, 1.0)], Sense::Le, u.p_max[t - 1]));
            if u.c1 != 0.0 {
                cost_linear.push((p, u.c1));
            }
            if u.c2 > 0.0 {
                cost_quadratic.push(ConcaveTerm::Square {
                    weight: u.c2,
                    terms: vec![(p, 1.0)],
                    constant: 0.0,
                });
            }
            o.push(p);
        }
        output.push(o);
        min_rows.push(lo);
        max_rows.push(hi);
    }
    DgBlock {
        output,
        min_rows,
        max_rows,
        cost_linear,
        cost_quadratic,
    }
}

impl DgBlock {
    /// Subtracts generation cost from the program objective.
    pub fn add_cost(&self, prog: &mut ConvexProgram) {
        for &(v, c) in &self.cost_linear {
            prog.add_linear(v, -c);
        }
        for term in &self.cost_quadratic {
            prog.add_concave(term.clone());
        }
    }
}

/// Generation cost `c₁p + c₂p²` ($/h).
pub fn dg_cost(u: &DgUnit, p: f64) -> f64 {
    u.c1 * p + u.c2 * p * p
}

/// Marginal generation cost `c₁ + 2c₂p`.
pub fn dg_marginal_cost(u: &DgUnit, p: f64) -> f64 {
    u.c1 + 2.0 * u.c2 * p
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeLoadSeries {
    pub node: NodeId,
    pub expected: Vec<f64>,
    pub served: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadMetrics {
    /// `Σ_t Σ_{i∈load} (P̄ᵈ − p^d)` in pu·h.
    pub total_load_loss: f64,
    /// `Σ ω·p^d` in $.
    pub weighted_served: f64,
    pub per_node: Vec<NodeLoadSeries>,
}

/// Load-loss metrics from served load `served[node][t-1]`.
pub fn served_load_metrics(s: &Scenario, served: &[Vec<f64>]) -> LoadMetrics {
    let mut total = 0.0;
    let mut weighted = 0.0;
    let mut per_node = Vec::new();
    for (i, n) in s.dist_nodes.iter().enumerate() {
        if !n.is_load {
            continue;
        }
        for (ti, &pd) in served[i].iter().enumerate() {
            total += n.p_load[ti] - pd;
            weighted += n.weight[ti] * pd;
        }
        per_node.push(NodeLoadSeries {
            node: n.id,
            expected: n.p_load.clone(),
            served: served[i].clone(),
        });
    }
    LoadMetrics {
        total_load_loss: total,
        weighted_served: weighted,
        per_node,
    }
}
