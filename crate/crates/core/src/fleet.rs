//! Charging-station aggregator rows: pooled SOC dynamics per EV group,
//! arrival and departure SOC requirements, station injection and the
//! degradation epigraph.
//!
//! `soc` is a vehicle-weighted SOC sum, so its bounds scale with the number
//! of vehicles `q′` the group sends to the stations. Power `p` is in kWh/h
//! with positive values discharging into the feeder.

use crate::error::ModelError;
use crate::program::{ConvexProgram, RowId, Sense, VarId};
use crate::scenario::{Hour, Scenario};

/// Variables and rows of one EV group `(r, e)`.
#[derive(Debug, Clone)]
pub struct GroupFleet {
    /// Index into `scenario.ev_groups`.
    pub group: usize,
    pub arrival: Hour,
    pub departure: Hour,
    /// `soc[t − arrival]` for `t ∈ [arrival, departure]`.
    pub soc: Vec<VarId>,
    /// `power[k][t − arrival − 1]` for station `k` and `t ∈ (arrival, departure]`.
    pub power: Vec<Vec<VarId>>,
    /// `q′` per station, in `cs_map` order.
    pub demand: Vec<VarId>,
    /// Dynamics rows, one per `t ∈ (arrival, departure]`.
    pub dynamics: Vec<RowId>,
    pub soc_min: Vec<RowId>,
    pub soc_max: Vec<RowId>,
    pub arrival_row: RowId,
    pub departure_row: RowId,
    /// Charger limits `(lower, upper)` per station and hour, when enabled.
    pub charger: Vec<Vec<(RowId, RowId)>>,
    /// Degradation epigraph variables, same layout as `power`.
    pub degradation: Vec<Vec<VarId>>,
    pub degradation_rows: Vec<Vec<RowId>>,
}

impl GroupFleet {
    pub fn soc_at(&self, t: Hour) -> Option<VarId> {
        (self.arrival..=self.departure).contains(&t).then(|| self.soc[t - self.arrival])
    }

    pub fn power_at(&self, station: usize, t: Hour) -> Option<VarId> {
        (t > self.arrival && t <= self.departure).then(|| self.power[station][t - self.arrival - 1])
    }
}

#[derive(Debug, Clone)]
pub struct FleetBlock {
    pub groups: Vec<GroupFleet>,
    /// `p^CS` in pu, `injection[k][t − 1]` per station in `cs_map` order.
    pub injection: Vec<Vec<VarId>>,
    pub aggregation: Vec<Vec<RowId>>,
}

impl FleetBlock {
    /// All degradation variables; each enters the objective with coefficient −1.
    pub fn degradation_vars(&self) -> impl Iterator<Item = VarId> + '_ {
        self.groups
            .iter()
            .flat_map(|g| g.degradation.iter().flatten().copied())
    }
}

/// Adds the SOC, aggregation and optional charger-limit rows. Degradation
/// rows are added separately by [`degradation_cost_rows`].
pub fn build_fleet_block(prog: &mut ConvexProgram, s: &Scenario) -> Result<FleetBlock, ModelError> {
    for m in &s.cs_map {
        let is_cs = s
            .node_index(m.dist_node)
            .map(|k| s.dist_nodes[k].is_cs)
            .unwrap_or(false);
        if !is_cs {
            let g = s.ev_groups.first();
            return Err(ModelError::NotAStation {
                origin: g.map_or(0, |g| g.origin),
                class: g.map_or(0, |g| g.class),
            });
        }
    }
    let sbase = s.base.s_base_kva;
    let mut groups = Vec::with_capacity(s.ev_groups.len());
    for (gi, g) in s.ev_groups.iter().enumerate() {
        let (r, e) = (g.origin, g.class);
        let demand: Vec<VarId> = s
            .cs_map
            .iter()
            .map(|m| prog.nonneg(format!("qp[{r},{},{e}]", m.transport_node)))
            .collect();
        let soc: Vec<VarId> = (g.arrival..=g.departure)
            .map(|t| prog.free(format!("soc[{r},{e},{t}]")))
            .collect();
        let power: Vec<Vec<VarId>> = s
            .cs_map
            .iter()
            .map(|m| {
                ((g.arrival + 1)..=g.departure)
                    .map(|t| prog.free(format!("p[{},{r},{e},{t}]", m.dist_node)))
                    .collect()
            })
            .collect();

        // soc_t − soc_{t−1} + Σ_i p/Cap = 0
        let mut dynamics = Vec::new();
        for t in (g.arrival + 1)..=g.departure {
            let j = t - g.arrival;
            let mut terms = vec![(soc[j], 1.0), (soc[j - 1], -1.0)];
            for pk in &power {
                terms.push((pk[j - 1], 1.0 / g.capacity_kwh));
            }
            dynamics.push(prog.add_row(format!("soc[{r},{e},{t}]"), terms, Sense::Eq, 0.0));
        }

        let mut soc_min = Vec::new();
        let mut soc_max = Vec::new();
        for (j, t) in (g.arrival..=g.departure).enumerate() {
            let mut lo = vec![(soc[j], 1.0)];
            let mut hi = vec![(soc[j], 1.0)];
            for &q in &demand {
                lo.push((q, -g.soc_min));
                hi.push((q, -g.soc_max));
            }
            soc_min.push(prog.add_row(format!("socmin[{r},{e},{t}]"), lo, Sense::Ge, 0.0));
            soc_max.push(prog.add_row(format!("socmax[{r},{e},{t}]"), hi, Sense::Le, 0.0));
        }

        let mut arr = vec![(soc[0], 1.0)];
        let mut dep = vec![(*soc.last().expect("non-empty dwell"), 1.0)];
        for &q in &demand {
            arr.push((q, -g.soc_arr));
            dep.push((q, -g.soc_dep));
        }
        let arrival_row = prog.add_row(format!("socarr[{r},{e}]"), arr, Sense::Eq, 0.0);
        let departure_row = prog.add_row(format!("dep[{r},{e}]"), dep, Sense::Ge, 0.0);

        let mut charger = Vec::new();
        if let Some(kw) = s.solver.charger_kw {
            for (k, m) in s.cs_map.iter().enumerate() {
                let mut rows = Vec::new();
                for (j, t) in ((g.arrival + 1)..=g.departure).enumerate() {
                    let p = power[k][j];
                    let i = m.dist_node;
                    let lo = prog.add_row(
                        format!("chglo[{i},{r},{e},{t}]"),
                        vec![(p, 1.0), (demand[k], kw)],
                        Sense::Ge,
                        0.0,
                    );
                    let hi = prog.add_row(
                        format!("chghi[{i},{r},{e},{t}]"),
                        vec![(p, 1.0), (demand[k], -kw)],
                        Sense::Le,
                        0.0,
                    );
                    rows.push((lo, hi));
                }
                charger.push(rows);
            }
        }

        groups.push(GroupFleet {
            group: gi,
            arrival: g.arrival,
            departure: g.departure,
            soc,
            power,
            demand,
            dynamics,
            soc_min,
            soc_max,
            arrival_row,
            departure_row,
            charger,
            degradation: Vec::new(),
            degradation_rows: Vec::new(),
        });
    }

    // p^CS_{i,t} − Σ_{r,e} p/S_base = 0
    let mut injection = Vec::with_capacity(s.cs_map.len());
    let mut aggregation = Vec::with_capacity(s.cs_map.len());
    for (k, m) in s.cs_map.iter().enumerate() {
        let mut inj = Vec::new();
        let mut agg = Vec::new();
        for t in s.hours() {
            let pcs = prog.free(format!("pcs[{},{t}]", m.dist_node));
            let mut terms = vec![(pcs, 1.0)];
            for g in &groups {
                if let Some(p) = g.power_at(k, t) {
                    terms.push((p, -1.0 / sbase));
                }
            }
            agg.push(prog.add_row(format!("csagg[{},{t}]", m.dist_node), terms, Sense::Eq, 0.0));
            inj.push(pcs);
        }
        injection.push(inj);
        aggregation.push(agg);
    }

    Ok(FleetBlock {
        groups,
        injection,
        aggregation,
    })
}

/// Adds `d ≥ c^deg·p`, `d ≥ 0` for every group, station and dwell hour.
/// Only discharge throughput is charged.
pub fn degradation_cost_rows(prog: &mut ConvexProgram, s: &Scenario, fleet: &mut FleetBlock) {
    for g in &mut fleet.groups {
        let grp = &s.ev_groups[g.group];
        let (r, e, c) = (grp.origin, grp.class, grp.deg_cost);
        g.degradation.clear();
        g.degradation_rows.clear();
        for (k, m) in s.cs_map.iter().enumerate() {
            let mut vars = Vec::new();
            let mut rows = Vec::new();
            for (j, t) in ((g.arrival + 1)..=g.departure).enumerate() {
                let i = m.dist_node;
                let d = prog.nonneg(format!("d[{i},{r},{e},{t}]"));
                rows.push(prog.add_row(
                    format!("deg[{i},{r},{e},{t}]"),
                    vec![(d, 1.0), (g.power[k][j], -c)],
                    Sense::Ge,
                    0.0,
                ));
                vars.push(d);
            }
            g.degradation.push(vars);
            g.degradation_rows.push(rows);
        }
    }
}

/// `p^CS` per station and hour (pu, positive = injection into the feeder),
/// read from a primal vector.
pub fn station_injection_series(fleet: &FleetBlock, primal: &[f64]) -> Vec<Vec<f64>> {
    fleet
        .injection
        .iter()
        .map(|row| row.iter().map(|v| primal[v.0]).collect())
        .collect()
}
