use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use nlim::lim::default_gamma_grid;
use nlim::nonlinear::QRefine;
use nlim::validate::{run_table1, Table1Config};
use nlim::{
    estimate_moments, forward_derivatives, gamma_select, simulate, DiffScheme, Execution, MomentOptions, NoiseSpec,
    QuadModel, SimPlan, WallSpec,
};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn realizations(c: &mut Criterion) {
    let mut g = c.benchmark_group("table1_realizations");
    g.sample_size(10);
    for (name, exec) in MODES {
        let mut cfg = Table1Config::new(NoiseSpec::White, 50.0, 8, 1);
        cfg.reference_multiplier = 0.0;
        cfg.refine = QRefine::disabled();
        cfg.exec = exec;
        g.bench_with_input(BenchmarkId::from_parameter(name), &cfg, |b, cfg| {
            b.iter(|| run_table1(cfg).unwrap())
        });
    }
    g.finish();
}

fn gamma_scan(c: &mut Criterion) {
    let model = QuadModel::two_dimensional_benchmark(NoiseSpec::colored(0.5).unwrap());
    let data = simulate(&model, &WallSpec::disabled(2), &SimPlan::new(2, 0.001, 200.0, 10, 3))
        .unwrap()
        .trajectory;
    let m = estimate_moments(&data, MomentOptions::new(200, 1)).unwrap();
    let d = forward_derivatives(&m, DiffScheme::Forward).unwrap();
    let grid = default_gamma_grid();
    let mut g = c.benchmark_group("gamma_scan");
    for (name, exec) in MODES {
        g.bench_function(name, |b| b.iter(|| gamma_select(&m, &d, &grid, 2.0, exec).unwrap()));
    }
    g.finish();
}

fn moments(c: &mut Criterion) {
    let model = QuadModel::two_dimensional_benchmark(NoiseSpec::White);
    let data = simulate(&model, &WallSpec::disabled(2), &SimPlan::new(2, 0.001, 500.0, 10, 4))
        .unwrap()
        .trajectory;
    let mut g = c.benchmark_group("lagged_moments");
    for (name, exec) in MODES {
        let mut opts = MomentOptions::new(40, 2);
        opts.exec = exec;
        g.bench_function(name, |b| b.iter(|| estimate_moments(&data, opts).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, realizations, gamma_scan, moments);
criterion_main!(benches);
