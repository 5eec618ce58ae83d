use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("schema violation in `{field}`: {message}")]
    Schema { field: String, message: String },
    #[error("dangling reference: {what} {id} does not exist")]
    Dangling { what: String, id: String },
    #[error("out of range: {0}")]
    OutOfRange(String),
    #[error("invalid scenario: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<crate::scenario::Violation>),
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("node {node} has reactive load {q} but no active load at hour {t} (undefined power factor)")]
    UndefinedPowerFactor { node: u32, t: usize, q: f64 },
    #[error("negative flow {0} passed to a link cost function")]
    NegativeFlow(f64),
    #[error("OD endpoint {0} is not in the road graph")]
    UnknownRoadNode(u32),
    #[error("EV group ({origin},{class}) references a station that is not a charging station")]
    NotAStation { origin: u32, class: u32 },
    #[error("no origin-destination path from {origin} to {destination}")]
    Disconnected { origin: u32, destination: u32 },
    #[error("missing dual for row `{0}`")]
    MissingDual(String),
    #[error("missing value for variable `{0}`")]
    MissingPrimal(String),
    #[error("solver setup failed: {0}")]
    Solver(String),
    #[error("bundle is not optimal (status {0:?})")]
    NotOptimal(crate::solve::Status),
    #[error("instance too large for the fixed-point oracle: {0}")]
    NotTiny(String),
    #[error("{agent} subproblem did not solve to optimality (status {status:?})")]
    AgentSubproblem {
        agent: &'static str,
        status: crate::solve::Status,
    },
}

#[derive(Debug, Error)]
pub enum ResultsError {
    #[error("cannot write {path}: {source}")]
    Write {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed solution file at line {line}, column {column}: {message}")]
    Malformed {
        line: usize,
        column: usize,
        message: String,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}
