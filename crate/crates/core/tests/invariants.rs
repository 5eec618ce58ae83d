//! Structural invariants of optimal solutions on every shipped scenario.

use resq_core::assemble::{assemble, solve, CombinedProgram};
use resq_core::scenario::{parse_scenario, Scenario};
use resq_core::solve::{SolutionBundle, Status};

const SCENARIOS: [(&str, &str); 5] = [
    ("reference", include_str!("../../../scenarios/reference.json")),
    ("minimal", include_str!("../../../scenarios/minimal.json")),
    ("tiny_dg_load", include_str!("../../../scenarios/tiny_dg_load.json")),
    ("tiny_two_stations", include_str!("../../../scenarios/tiny_two_stations.json")),
    ("tiny_v2g", include_str!("../../../scenarios/tiny_v2g.json")),
];

const TOL: f64 = 1e-8;

fn solved_cases() -> Vec<(String, CombinedProgram, SolutionBundle)> {
    let mut out = Vec::new();
    for (name, text) in SCENARIOS {
        let s = parse_scenario(text).unwrap();
        let mut variants = vec![(name.to_string(), s.clone())];
        if name == "reference" {
            variants.push(("reference@0.5".to_string(), s.with_departure_soc(0.5)));
        }
        for (label, s) in variants {
            let p = assemble(&s).unwrap();
            let b = solve(&p, 1e-8).unwrap();
            assert_eq!(b.status, Status::Optimal, "{label}");
            out.push((label, p, b));
        }
    }
    out
}

fn x(b: &SolutionBundle, v: resq_core::program::VarId) -> f64 {
    b.primal[v.0]
}

fn worst(label: &str, what: &str, values: impl IntoIterator<Item = f64>, tol: f64) {
    let w = values.into_iter().fold(0.0, f64::max);
    assert!(w <= tol, "{label}: {what} residual {w:e} > {tol:e}");
}

fn power_invariants(label: &str, s: &Scenario, p: &CombinedProgram, b: &SolutionBundle) {
    let rows = &p.program.rows;
    for pb in &p.power {
        let t = pb.t;
        worst(
            label,
            "nodal balance",
            pb.pbal.iter().chain(&pb.qbal).map(|r| rows[r.0].violation(&b.primal)),
            TOL,
        );
        for (k, l) in s.dist_lines.iter().enumerate() {
            let (pf, qf) = (x(b, pb.pf[k]), x(b, pb.qf[k]));
            if s.line_status(l.id, t).unwrap() == 0 {
                worst(label, "outaged line flow", [pf.abs(), qf.abs()], TOL);
            } else {
                let fi = s.node_index(l.from).unwrap();
                let ti = s.node_index(l.to).unwrap();
                let drop = x(b, pb.voltage[fi]) - x(b, pb.voltage[ti]) - 2.0 * (l.r * pf + l.x * qf);
                worst(label, "voltage drop", [drop.abs()], TOL);
                worst(label, "line disk", [pf * pf + qf * qf - l.s_max * l.s_max], TOL);
            }
        }
        for (i, n) in s.dist_nodes.iter().enumerate() {
            let (pbar, qbar) = (n.p_load[t - 1], n.q_load[t - 1]);
            if pbar > 0.0 {
                let r = x(b, pb.reactive[i]) * pbar - x(b, pb.served[i]) * qbar;
                worst(label, "power factor", [r.abs()], TOL);
            }
        }
    }
}

fn fleet_invariants(label: &str, s: &Scenario, p: &CombinedProgram, b: &SolutionBundle) {
    for (g, gf) in p.fleet.groups.iter().enumerate() {
        let grp = &s.ev_groups[g];
        let first = x(b, gf.soc[0]);
        let last = x(b, *gf.soc.last().unwrap());
        let drawn: f64 = gf.power.iter().flatten().map(|&v| x(b, v)).sum::<f64>() / grp.capacity_kwh;
        worst(label, "SOC telescoping", [(last - first + drawn).abs()], TOL);

        let fleet: f64 = gf.demand.iter().map(|&v| x(b, v)).sum();
        worst(label, "departure SOC", [fleet * grp.soc_dep - last], TOL);

        for (k, row) in gf.power.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                let d = x(b, gf.degradation[k][j]);
                let want = (grp.deg_cost * x(b, v)).max(0.0);
                worst(label, "degradation epigraph", [(d - want).abs()], TOL);
            }
        }
    }
    let sbase = s.base.s_base_kva;
    for (k, m) in s.cs_map.iter().enumerate() {
        for t in s.hours() {
            let total: f64 = p
                .fleet
                .groups
                .iter()
                .filter_map(|gf| gf.power_at(k, t))
                .map(|v| x(b, v))
                .sum();
            let pcs = x(b, p.fleet.injection[k][t - 1]);
            worst(
                label,
                &format!("station aggregation at {} hour {t}", m.dist_node),
                [(pcs * sbase - total).abs()],
                TOL,
            );
        }
    }
}

#[test]
fn optimal_solutions_satisfy_structural_invariants() {
    for (label, p, b) in solved_cases() {
        let s = p.scenario.clone();
        power_invariants(&label, &s, &p, &b);
        fleet_invariants(&label, &s, &p, &b);
        worst(
            &label,
            "clearing",
            p.clearing_residuals(&b.primal).into_iter().map(|(_, r)| r.abs()),
            TOL,
        );
        assert!(b.gap.unwrap() <= 1e-8, "{label}: gap {:?}", b.gap);
    }
}

#[test]
fn reference_clearing_row_counts() {
    let s = parse_scenario(SCENARIOS[0].1).unwrap();
    let p = assemble(&s).unwrap();
    let supply = (0..s.dist_nodes.len()).filter(|&i| s.is_supply_node(i)).count();
    assert_eq!(p.clear_p.len(), supply * s.horizon());
    // 2 origins × 3 classes × 2 stations.
    assert_eq!(p.clear_q.len(), 12);
    // One balance pair per node, one disk and one drop pair per line, one band per node.
    let pb = &p.power[0];
    assert_eq!((pb.pbal.len(), pb.qbal.len()), (4, 4));
    assert_eq!(pb.cones.len(), 3);
    assert_eq!(pb.vdrop_upper.len() + pb.vdrop_lower.len(), 6);
    assert_eq!(pb.vmin.len(), 4);
}
