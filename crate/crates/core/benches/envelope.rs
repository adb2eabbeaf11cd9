use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use spinbath::dynamics::{envelope, envelope_sequential, FieldPoint, TimeGrid};
use spinbath::geometry::{generate_lattice_sites, sample_configuration, LatticeSpec};
use spinbath::hyperfine::{couplings_for, PhysicalConstants};
use spinbath::oracle::fid_bruteforce;

fn envelope_paths(c: &mut Criterion) {
    let constants = PhysicalConstants::default();
    let sites = generate_lattice_sites(&LatticeSpec::default()).unwrap();
    let field = FieldPoint::from_gauss(100.0).unwrap();
    let grid = TimeGrid::uniform(10e-6, 2000).unwrap();

    let mut group = c.benchmark_group("envelope");
    for n_keep in [50, 500] {
        let config = sample_configuration(&sites, 0.011, n_keep, 1).unwrap();
        let couplings = couplings_for(&config, &constants).unwrap();
        group.bench_with_input(BenchmarkId::new("parallel", n_keep), &couplings, |b, a| {
            b.iter(|| envelope(black_box(a), field, &grid, &constants).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("sequential", n_keep), &couplings, |b, a| {
            b.iter(|| envelope_sequential(black_box(a), field, &grid, &constants).unwrap())
        });
    }
    group.finish();
}

fn oracle_reference(c: &mut Criterion) {
    let constants = PhysicalConstants::default();
    let sites = generate_lattice_sites(&LatticeSpec::default()).unwrap();
    let field = FieldPoint::from_gauss(100.0).unwrap();
    let grid = TimeGrid::uniform(10e-6, 200).unwrap();
    let config = sample_configuration(&sites, 0.011, 6, 1).unwrap();
    let couplings = couplings_for(&config, &constants).unwrap();

    let mut group = c.benchmark_group("oracle");
    group.sample_size(10);
    group.bench_function("bruteforce_6_spins", |b| {
        b.iter(|| fid_bruteforce(black_box(&couplings), field, &grid, &constants).unwrap())
    });
    group.bench_function("product_6_spins", |b| {
        b.iter(|| envelope_sequential(black_box(&couplings), field, &grid, &constants).unwrap())
    });
    group.finish();
}

criterion_group!(benches, envelope_paths, oracle_reference);
criterion_main!(benches);
