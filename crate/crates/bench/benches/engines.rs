use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use stefan_bench::{gamma_setup, staircase, sub_density};
use stefan_core::{
    m1_graph_distance, physical_jump_size, rate_bound, run_grid_scheme, run_particle_scheme,
    sup_error, GridConfig, InitialLaw,
};

fn particle(c: &mut Criterion) {
    let (law, alpha, horizon) = gamma_setup();
    let mut group = c.benchmark_group("particle_scheme");
    group.sample_size(10);
    for n_particles in [10_000usize, 100_000] {
        group.bench_with_input(BenchmarkId::from_parameter(n_particles), &n_particles, |b, &n| {
            b.iter(|| run_particle_scheme(&law, alpha, horizon / 100.0, horizon, n, 1, 1).unwrap())
        });
    }
    group.finish();
}

fn grid(c: &mut Criterion) {
    let (law, alpha, horizon) = gamma_setup();
    let mut group = c.benchmark_group("grid_scheme");
    group.sample_size(10);
    for n in [50usize, 100] {
        let config = GridConfig::new(alpha, horizon / n as f64, horizon);
        group.bench_with_input(BenchmarkId::from_parameter(n), &config, |b, cfg| {
            b.iter(|| run_grid_scheme(&law, cfg).unwrap())
        });
    }
    group.finish();
}

fn theory(c: &mut Criterion) {
    let law = InitialLaw::monomial_deficit_default(1.0, 1.0).unwrap();
    let profile = law.psi_profile().unwrap();
    let f_sup = law.sup_norm();
    c.bench_function("rate_bound_monomial", |b| {
        b.iter(|| rate_bound(1.0, f_sup, &profile, 1e-14, black_box(1e-15)).unwrap())
    });
    let density = sub_density(1000, 1.0);
    c.bench_function("physical_jump_1000_nodes", |b| {
        b.iter(|| physical_jump_size(black_box(&density), 1.0).unwrap())
    });
}

fn analysis(c: &mut Criterion) {
    let a = staircase(800, 1.0, 1);
    let b = staircase(800, 1.0, 2);
    c.bench_function("sup_error_800", |bch| bch.iter(|| sup_error(&a, &b, false).unwrap()));
    c.bench_function("m1_graph_distance_800", |bch| {
        bch.iter(|| m1_graph_distance(black_box(&a), black_box(&b)).unwrap())
    });
}

criterion_group!(benches, particle, grid, theory, analysis);
criterion_main!(benches);
