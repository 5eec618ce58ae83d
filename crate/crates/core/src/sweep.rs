//! One-parameter sweeps, solved concurrently.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::assemble::{assemble, solve};
use crate::equilibrium::{equilibrium_report, VerifyOptions};
use crate::error::{ModelError, ResultsError};
use crate::par;
use crate::results::{format_value, metrics, Metrics};
use crate::scenario::Scenario;
use crate::solve::Status;

/// Environment variable capping sweep parallelism.
pub const THREADS_ENV: &str = "RESQ_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKey {
    SocDep,
    Beta1,
    Beta2,
    Cdeg,
}

impl SweepKey {
    pub fn name(self) -> &'static str {
        match self {
            SweepKey::SocDep => "soc_dep",
            SweepKey::Beta1 => "beta1",
            SweepKey::Beta2 => "beta2",
            SweepKey::Cdeg => "cdeg",
        }
    }

    /// Copy of `s` with this parameter set to `v` (for every EV group where
    /// the parameter is per group).
    pub fn apply(self, s: &Scenario, v: f64) -> Scenario {
        let mut s = s.clone();
        match self {
            SweepKey::SocDep => s = s.with_departure_soc(v),
            SweepKey::Beta1 => s.behavior.beta1 = v,
            SweepKey::Beta2 => s.behavior.beta2 = v,
            SweepKey::Cdeg => s.ev_groups.iter_mut().for_each(|g| g.deg_cost = v),
        }
        s
    }
}

impl fmt::Display for SweepKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub key: SweepKey,
    pub values: Vec<f64>,
}

impl FromStr for SweepSpec {
    type Err = String;

    /// Parses `key=v1,v2,...`.
    fn from_str(text: &str) -> Result<Self, String> {
        let (key, values) = text
            .split_once('=')
            .ok_or_else(|| format!("expected key=v1,v2,..., got `{text}`"))?;
        let key = match key.trim() {
            "soc_dep" => SweepKey::SocDep,
            "beta1" => SweepKey::Beta1,
            "beta2" => SweepKey::Beta2,
            "cdeg" => SweepKey::Cdeg,
            other => return Err(format!("unknown sweep key `{other}` (expected soc_dep, beta1, beta2 or cdeg)")),
        };
        let values = values
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| format!("bad value `{v}`"))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(SweepSpec { key, values })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub key: SweepKey,
    pub value: f64,
    pub status: Status,
    /// Present for optimal solves.
    pub metrics: Option<Metrics>,
    /// Whether the certificate suite passed; `None` when not optimal.
    pub verified: Option<bool>,
}

fn run_point(s: &Scenario, key: SweepKey, v: f64, tol: f64, verify: &VerifyOptions) -> Result<SweepRow, ModelError> {
    let scenario = key.apply(s, v);
    let p = assemble(&scenario)?;
    let b = solve(&p, tol)?;
    if b.status != Status::Optimal {
        return Ok(SweepRow {
            key,
            value: v,
            status: b.status,
            metrics: None,
            verified: None,
        });
    }
    let report = equilibrium_report(&p, &b, verify)?;
    Ok(SweepRow {
        key,
        value: v,
        status: b.status,
        metrics: Some(metrics(&p, &b)),
        verified: Some(report.pass),
    })
}

/// Solves every sweep point, at most `threads` at a time. Rows come back in
/// the order of `spec.values`.
pub fn run_sweep(
    s: &Scenario,
    spec: &SweepSpec,
    tol: f64,
    threads: Option<usize>,
    verify: &VerifyOptions,
) -> Result<Vec<SweepRow>, ModelError> {
    par::with_threads(threads, || {
        par::map(&spec.values, |&v| run_point(s, spec.key, v, tol, verify))
    })
    .into_iter()
    .collect()
}

/// Thread cap from `RESQ_THREADS`, if set to a positive integer.
pub fn threads_from_env() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
}

pub const SWEEP_HEADER: [&str; 7] = [
    "key",
    "value",
    "status",
    "total_load_loss_puh",
    "objective_usd",
    "duality_gap",
    "verified",
];

fn status_name(s: Status) -> &'static str {
    match s {
        Status::Optimal => "optimal",
        Status::Infeasible => "infeasible",
        Status::Unbounded => "unbounded",
        Status::IterationLimit => "iteration-limit",
    }
}

pub fn sweep_record(r: &SweepRow) -> Vec<String> {
    let m = r.metrics.as_ref();
    vec![
        r.key.name().to_string(),
        format_value(r.value),
        status_name(r.status).to_string(),
        m.map(|m| format_value(m.total_load_loss)).unwrap_or_default(),
        m.map(|m| format_value(m.objective)).unwrap_or_default(),
        m.and_then(|m| m.gap).map(format_value).unwrap_or_default(),
        r.verified.map(|v| v.to_string()).unwrap_or_default(),
    ]
}

/// Writes `sweep.csv` into `dir`.
pub fn write_sweep(dir: &Path, rows: &[SweepRow]) -> Result<PathBuf, ResultsError> {
    let path = dir.join("sweep.csv");
    let werr = |e: std::io::Error| ResultsError::Write {
        path: path.display().to_string(),
        source: e,
    };
    std::fs::create_dir_all(dir).map_err(werr)?;
    let mut w = csv::Writer::from_path(&path).map_err(|e| werr(e.into()))?;
    w.write_record(SWEEP_HEADER).map_err(|e| werr(e.into()))?;
    for r in rows {
        w.write_record(sweep_record(r)).map_err(|e| werr(e.into()))?;
    }
    w.flush().map_err(werr)?;
    Ok(path)
}
