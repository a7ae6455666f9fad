use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use vcgmpc::bounds;
use vcgmpc::harness::random_unit_states;
use vcgmpc::mechanism::{misreport_search, GridSpec};
use vcgmpc::{Execution, Horizon, Scenario};

fn scenario() -> Scenario {
    let mut s = Scenario::two_area_table1();
    s.horizon = Horizon::Finite(20);
    s.sim_steps = 300;
    s
}

fn misreport(c: &mut Criterion) {
    let setup = scenario().mechanism().unwrap();
    let grid = GridSpec::default();
    let mut group = c.benchmark_group("misreport_search");
    group.sample_size(10);
    for exec in [Execution::Sequential, Execution::Parallel] {
        group.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &exec, |b, &exec| {
            b.iter(|| misreport_search(&setup, 0, &grid, 0, exec).unwrap())
        });
    }
    group.finish();
}

fn sandwich(c: &mut Criterion) {
    let s = scenario();
    let plant = s.plant().unwrap();
    let truth = s.nominal_profile().unwrap();
    let samples = random_unit_states(plant.state_dim(), 20_000, 1);
    let mut group = c.benchmark_group("sandwich_samples");
    for exec in [Execution::Sequential, Execution::Parallel] {
        group.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &exec, |b, &exec| {
            b.iter(|| bounds::sandwich_samples(&plant, &truth, 20, &samples, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, misreport, sandwich);
criterion_main!(benches);
