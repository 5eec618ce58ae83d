//! Parallel vs single-worker throughput on a departure-SOC sweep and on the
//! certificate report. Build with `--no-default-features` to time the
//! sequential fallback itself; with `parallel` on, `threads = 1` pins the
//! rayon pool to one worker for an in-process comparison.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use resq_core::assemble::{assemble, solve};
use resq_core::equilibrium::{equilibrium_report, VerifyOptions};
use resq_core::par;
use resq_core::scenario::parse_scenario;
use resq_core::sweep::{run_sweep, SweepSpec};

const REFERENCE: &str = include_str!("../../../scenarios/reference.json");

fn modes() -> [(&'static str, Option<usize>); 2] {
    let label = if cfg!(feature = "parallel") { "parallel" } else { "sequential-build" };
    [(label, None), ("one-worker", Some(1))]
}

fn sweep(c: &mut Criterion) {
    let s = parse_scenario(REFERENCE).unwrap();
    let spec: SweepSpec = "soc_dep=0.4,0.5,0.6,0.7".parse().unwrap();
    let opts = VerifyOptions::default();
    let mut g = c.benchmark_group("soc_sweep");
    g.sample_size(10);
    for (label, threads) in modes() {
        g.bench_with_input(BenchmarkId::from_parameter(label), &threads, |bch, &t| {
            bch.iter(|| run_sweep(&s, &spec, 1e-8, t, &opts).unwrap())
        });
    }
    g.finish();
}

fn report(c: &mut Criterion) {
    let p = assemble(&parse_scenario(REFERENCE).unwrap()).unwrap();
    let b = solve(&p, 1e-8).unwrap();
    let opts = VerifyOptions::default();
    let mut g = c.benchmark_group("equilibrium_report");
    g.sample_size(10);
    for (label, threads) in modes() {
        g.bench_with_input(BenchmarkId::from_parameter(label), &threads, |bch, &t| {
            bch.iter(|| par::with_threads(t, || equilibrium_report(&p, &b, &opts).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, sweep, report);
criterion_main!(benches);
