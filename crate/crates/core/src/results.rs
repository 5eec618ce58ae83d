//! Result tables, `solution.json`, and reloading a saved solution for
//! verification.
//!
//! Numbers in CSV files are rounded to 9 significant digits and values below
//! 1e-9 in magnitude are written as `0`, so repeated runs produce identical
//! bytes. `solution.json` keeps full precision.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::assemble::{assemble, traffic_demand, CombinedProgram};
use crate::equilibrium::{recover_incentives, recover_prices, EquilibriumReport, IncentiveValue, PriceValue};
use crate::error::{ModelError, ResultsError};
use crate::fleet::station_injection_series;
use crate::power::served_load_metrics;
use crate::scenario::{validate_scenario, Hour, NodeId, Scenario};
use crate::solve::{SolutionBundle, Status};

pub const SOLUTION_FORMAT: &str = "resq-solution/1";

/// Names of the CSV files written by [`write_tables`], in write order.
pub const TABLE_FILES: [&str; 7] = [
    "load_served.csv",
    "station_power.csv",
    "prices.csv",
    "incentives.csv",
    "ev_flows.csv",
    "soc.csv",
    "metrics.csv",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadServedRow {
    pub node: NodeId,
    pub t: Hour,
    pub expected: f64,
    pub served: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationPowerRow {
    pub node: NodeId,
    pub t: Hour,
    /// Positive when the station injects into the feeder (pu).
    pub p_cs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvFlowRow {
    pub origin: NodeId,
    pub destination: NodeId,
    pub class: u32,
    pub q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SocRow {
    pub origin: NodeId,
    pub class: u32,
    pub t: Hour,
    /// Group SOC-sum in vehicle units.
    pub soc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// pu·h
    pub total_load_loss: f64,
    /// $
    pub objective: f64,
    pub gap: Option<f64>,
    pub iterations: u32,
    /// Seconds. Kept out of `metrics.csv` so that file is reproducible.
    pub solve_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsTables {
    pub load_served: Vec<LoadServedRow>,
    pub station_power: Vec<StationPowerRow>,
    pub prices: Vec<PriceValue>,
    pub incentives: Vec<IncentiveValue>,
    pub ev_flows: Vec<EvFlowRow>,
    pub soc: Vec<SocRow>,
    pub metrics: Metrics,
}

pub fn metrics(p: &CombinedProgram, b: &SolutionBundle) -> Metrics {
    let served = p.served_load(&b.primal);
    Metrics {
        total_load_loss: served_load_metrics(&p.scenario, &served).total_load_loss,
        objective: b.primal_objective,
        gap: b.gap,
        iterations: b.iterations,
        solve_time: b.solve_time,
    }
}

/// Collects every table from an optimal bundle.
pub fn results_tables(p: &CombinedProgram, b: &SolutionBundle) -> Result<ResultsTables, ModelError> {
    let s = &p.scenario;
    let served = p.served_load(&b.primal);
    let mut load_served = Vec::new();
    for (i, n) in s.dist_nodes.iter().enumerate() {
        for t in s.hours() {
            load_served.push(LoadServedRow {
                node: n.id,
                t,
                expected: n.p_load[t - 1],
                served: served[i][t - 1],
            });
        }
    }

    let injection = station_injection_series(&p.fleet, &b.primal);
    let mut station_power = Vec::new();
    for (k, m) in s.cs_map.iter().enumerate() {
        for t in s.hours() {
            station_power.push(StationPowerRow {
                node: m.dist_node,
                t,
                p_cs: injection[k][t - 1],
            });
        }
    }

    let mut ev_flows = Vec::new();
    let mut soc = Vec::new();
    for (g, grp) in s.ev_groups.iter().enumerate() {
        for (k, m) in s.cs_map.iter().enumerate() {
            let q = traffic_demand(&p.traffic, s, g, k);
            ev_flows.push(EvFlowRow {
                origin: grp.origin,
                destination: m.transport_node,
                class: grp.class,
                q: b.primal[q.0],
            });
        }
        let gf = &p.fleet.groups[g];
        for t in gf.arrival..=gf.departure {
            let v = gf.soc_at(t).expect("hour inside the dwell window");
            soc.push(SocRow {
                origin: grp.origin,
                class: grp.class,
                t,
                soc: b.primal[v.0],
            });
        }
    }

    Ok(ResultsTables {
        load_served,
        station_power,
        prices: recover_prices(p, b)?,
        incentives: recover_incentives(p, b)?,
        ev_flows,
        soc,
        metrics: metrics(p, b),
    })
}

/// 9 significant digits in plain decimal notation; `|x| < 1e-9` becomes `0`.
pub fn format_value(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    if x.abs() < 1e-9 {
        return "0".to_string();
    }
    let rounded: f64 = format!("{x:.8e}").parse().expect("formatted float parses");
    format!("{rounded}")
}

fn write_csv(dir: &Path, name: &str, header: &[&str], rows: Vec<Vec<String>>) -> Result<PathBuf, ResultsError> {
    let path = dir.join(name);
    let err = |e: csv::Error| ResultsError::Write {
        path: path.display().to_string(),
        source: e.into(),
    };
    let mut w = csv::Writer::from_path(&path).map_err(err)?;
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(&r).map_err(err)?;
    }
    w.flush().map_err(|e| ResultsError::Write {
        path: path.display().to_string(),
        source: e,
    })?;
    Ok(path)
}

/// Writes the seven CSV tables into `dir` (created if missing).
pub fn write_tables(dir: &Path, t: &ResultsTables) -> Result<Vec<PathBuf>, ResultsError> {
    fs::create_dir_all(dir).map_err(|e| ResultsError::Write {
        path: dir.display().to_string(),
        source: e,
    })?;
    let f = format_value;
    let mut out = Vec::with_capacity(TABLE_FILES.len());
    out.push(write_csv(
        dir,
        TABLE_FILES[0],
        &["node", "hour", "expected_pu", "served_pu"],
        t.load_served
            .iter()
            .map(|r| vec![r.node.to_string(), r.t.to_string(), f(r.expected), f(r.served)])
            .collect(),
    )?);
    out.push(write_csv(
        dir,
        TABLE_FILES[1],
        &["node", "hour", "p_cs_pu"],
        t.station_power
            .iter()
            .map(|r| vec![r.node.to_string(), r.t.to_string(), f(r.p_cs)])
            .collect(),
    )?);
    out.push(write_csv(
        dir,
        TABLE_FILES[2],
        &["node", "hour", "rho_usd_per_puh"],
        t.prices
            .iter()
            .map(|r| vec![r.node.to_string(), r.t.to_string(), f(r.rho)])
            .collect(),
    )?);
    out.push(write_csv(
        dir,
        TABLE_FILES[3],
        &["origin", "station", "class", "alpha_usd_per_veh"],
        t.incentives
            .iter()
            .map(|r| {
                vec![
                    r.origin.to_string(),
                    r.destination.to_string(),
                    r.class.to_string(),
                    f(r.alpha),
                ]
            })
            .collect(),
    )?);
    out.push(write_csv(
        dir,
        TABLE_FILES[4],
        &["origin", "station", "class", "q_veh"],
        t.ev_flows
            .iter()
            .map(|r| {
                vec![
                    r.origin.to_string(),
                    r.destination.to_string(),
                    r.class.to_string(),
                    f(r.q),
                ]
            })
            .collect(),
    )?);
    out.push(write_csv(
        dir,
        TABLE_FILES[5],
        &["origin", "class", "hour", "soc_veh"],
        t.soc
            .iter()
            .map(|r| vec![r.origin.to_string(), r.class.to_string(), r.t.to_string(), f(r.soc)])
            .collect(),
    )?);
    out.push(write_csv(dir, TABLE_FILES[6], &["metric", "value"], metrics_rows(&t.metrics))?);
    Ok(out)
}

/// `(name, value)` pairs of the reproducible metrics.
pub fn metrics_rows(m: &Metrics) -> Vec<Vec<String>> {
    vec![
        vec!["total_load_loss_puh".into(), format_value(m.total_load_loss)],
        vec!["objective_usd".into(), format_value(m.objective)],
        vec!["duality_gap".into(), m.gap.map(format_value).unwrap_or_default()],
        vec!["iterations".into(), m.iterations.to_string()],
    ]
}

/// Everything needed to re-run verification without re-solving.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionFile {
    pub format: String,
    pub scenario: Scenario,
    pub status: Status,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub gap: Option<f64>,
    pub iterations: u32,
    pub solve_time: f64,
    pub infeasibility_hint: Vec<String>,
    pub primal: BTreeMap<String, f64>,
    pub row_duals: BTreeMap<String, f64>,
    pub cone_duals: BTreeMap<String, f64>,
    pub report: Option<EquilibriumReport>,
}

impl SolutionFile {
    pub fn new(p: &CombinedProgram, b: &SolutionBundle, report: Option<&EquilibriumReport>) -> Self {
        let prog = &p.program;
        SolutionFile {
            format: SOLUTION_FORMAT.to_string(),
            scenario: p.scenario.clone(),
            status: b.status,
            primal_objective: b.primal_objective,
            dual_objective: b.dual_objective,
            gap: b.gap,
            iterations: b.iterations,
            solve_time: b.solve_time,
            infeasibility_hint: b.infeasibility_hint.clone(),
            primal: prog.vars.iter().map(|v| v.name.clone()).zip(b.primal.iter().copied()).collect(),
            row_duals: prog.rows.iter().map(|r| r.name.clone()).zip(b.row_duals.iter().copied()).collect(),
            cone_duals: prog.cones.iter().map(|c| c.name.clone()).zip(b.cone_duals.iter().copied()).collect(),
            report: report.cloned(),
        }
    }

    /// Re-assembles the scenario and maps the stored values back onto it by
    /// name.
    pub fn rebuild(&self) -> Result<(CombinedProgram, SolutionBundle), ModelError> {
        let p = assemble(&self.scenario)?;
        let prog = &p.program;
        let lookup = |map: &BTreeMap<String, f64>, name: &str, err: fn(String) -> ModelError| {
            map.get(name).copied().ok_or_else(|| err(name.to_string()))
        };
        let primal = prog
            .vars
            .iter()
            .map(|v| lookup(&self.primal, &v.name, ModelError::MissingPrimal))
            .collect::<Result<_, _>>()?;
        let row_duals = if self.status == Status::Optimal {
            prog.rows
                .iter()
                .map(|r| lookup(&self.row_duals, &r.name, ModelError::MissingDual))
                .collect::<Result<_, _>>()?
        } else {
            Vec::new()
        };
        let cone_duals = prog
            .cones
            .iter()
            .map(|c| self.cone_duals.get(&c.name).copied().unwrap_or(0.0))
            .collect();
        let b = SolutionBundle {
            status: self.status,
            primal,
            row_duals,
            cone_duals,
            primal_objective: self.primal_objective,
            dual_objective: self.dual_objective,
            gap: self.gap,
            iterations: self.iterations,
            solve_time: self.solve_time,
            infeasibility_hint: self.infeasibility_hint.clone(),
        };
        Ok((p, b))
    }
}

pub fn write_solution(path: &Path, sol: &SolutionFile) -> Result<(), ResultsError> {
    let text = serde_json::to_string_pretty(sol).expect("solution serializes");
    fs::write(path, text + "\n").map_err(|e| ResultsError::Write {
        path: path.display().to_string(),
        source: e,
    })
}

pub fn parse_solution(text: &str) -> Result<SolutionFile, ResultsError> {
    let sol: SolutionFile = serde_json::from_str(text).map_err(|e| ResultsError::Malformed {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    if sol.format != SOLUTION_FORMAT {
        return Err(ResultsError::Malformed {
            line: 1,
            column: 1,
            message: format!("unsupported format `{}`", sol.format),
        });
    }
    let violations = validate_scenario(&sol.scenario);
    if !violations.is_empty() {
        return Err(ModelError::from(crate::error::ScenarioError::Invalid(violations)).into());
    }
    Ok(sol)
}

pub fn read_solution(path: &Path) -> Result<SolutionFile, ResultsError> {
    let text = fs::read_to_string(path).map_err(|e| ResultsError::Read {
        path: path.display().to_string(),
        source: e,
    })?;
    parse_solution(&text)
}

/// Writes the CSV tables and `solution.json`; returns every path written.
pub fn write_outputs(
    dir: &Path,
    p: &CombinedProgram,
    b: &SolutionBundle,
    report: Option<&EquilibriumReport>,
) -> Result<Vec<PathBuf>, ResultsError> {
    let mut paths = if b.status == Status::Optimal {
        write_tables(dir, &results_tables(p, b)?)?
    } else {
        fs::create_dir_all(dir).map_err(|e| ResultsError::Write {
            path: dir.display().to_string(),
            source: e,
        })?;
        Vec::new()
    };
    let sol = dir.join("solution.json");
    write_solution(&sol, &SolutionFile::new(p, b, report))?;
    paths.push(sol);
    Ok(paths)
}
