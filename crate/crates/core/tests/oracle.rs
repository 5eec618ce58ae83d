use resq_core::assemble::{assemble, solve};
use resq_core::error::ModelError;
use resq_core::oracle::{check_tiny, compare_with_combined, fixed_point_oracle, OracleOutcome};
use resq_core::scenario::{parse_scenario, Scenario};
use resq_core::solve::Status;

const TINY_DG_LOAD: &str = include_str!("../../../scenarios/tiny_dg_load.json");
const TWO_STATIONS: &str = include_str!("../../../scenarios/tiny_two_stations.json");
const V2G: &str = include_str!("../../../scenarios/tiny_v2g.json");
const REFERENCE: &str = include_str!("../../../scenarios/reference.json");

fn scenario(text: &str) -> Scenario {
    parse_scenario(text).unwrap()
}

fn agrees(text: &str) -> usize {
    let s = scenario(text);
    let o = fixed_point_oracle(&s, 500, 1.0).unwrap();
    assert_eq!(o.outcome, OracleOutcome::Converged, "{:?}", o.history.last());
    let p = assemble(&s).unwrap();
    let b = solve(&p, 1e-8).unwrap();
    assert_eq!(b.status, Status::Optimal);
    let (diff, name) = compare_with_combined(&o, &p, &b);
    assert!(diff <= 1e-4, "{name} differs by {diff}");
    for c in &p.clear_p {
        let name = &p.program.rows[c.row.0].name;
        let d = (o.prices[name] - b.row_duals[c.row.0]).abs();
        assert!(d <= 1e-3, "{name}: oracle {} vs combined {}", o.prices[name], b.row_duals[c.row.0]);
    }
    o.iterations
}

#[test]
fn dg_load_converges_fast_to_the_toy_solution() {
    let it = agrees(TINY_DG_LOAD);
    assert!(it <= 5, "{it} rounds");
    let o = fixed_point_oracle(&scenario(TINY_DG_LOAD), 500, 1.0).unwrap();
    assert!((o.primal["pd[1,1]"] - 0.8).abs() < 1e-6);
    assert!((o.prices["clear_p[1,1]"] - 2.0).abs() < 1e-6);
}

#[test]
fn symmetric_stations_converge_to_even_split() {
    agrees(TWO_STATIONS);
    let o = fixed_point_oracle(&scenario(TWO_STATIONS), 500, 1.0).unwrap();
    assert!((o.primal["q[3,1,1]"] - 5.0).abs() < 1e-4);
    assert!((o.primal["q[3,2,1]"] - 5.0).abs() < 1e-4);
}

#[test]
fn v2g_window_agrees() {
    agrees(V2G);
}

#[test]
fn large_step_is_reported_as_oscillation() {
    for text in [TINY_DG_LOAD, TWO_STATIONS, V2G] {
        let o = fixed_point_oracle(&scenario(text), 500, 10.0).unwrap();
        assert_eq!(o.outcome, OracleOutcome::Oscillating);
        assert!(o.iterations < 500);
    }
}

#[test]
fn reference_is_not_tiny() {
    let s = scenario(REFERENCE);
    assert!(matches!(check_tiny(&s), Err(ModelError::NotTiny(_))));
    assert!(matches!(fixed_point_oracle(&s, 10, 1.0), Err(ModelError::NotTiny(_))));
}

#[test]
fn iteration_cap_is_not_fatal() {
    let o = fixed_point_oracle(&scenario(TWO_STATIONS), 2, 1.0).unwrap();
    assert_eq!(o.outcome, OracleOutcome::IterationLimit);
    assert_eq!(o.iterations, 2);
    assert_eq!(o.history.len(), 2);
}
