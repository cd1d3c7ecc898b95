use bifluid_bench::smooth_field;
use bifluid_core::closure;
use bifluid_core::diagnostics::{self as diag, KernelConfig};
use bifluid_core::grid::{maximal, poisson_solve};
use bifluid_core::ModelParams;
use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

fn closure_roots(c: &mut Criterion) {
    let p = ModelParams::new(1.5, 3.0, 1.0, 1.0, 1.0, f64::INFINITY).unwrap();
    let pairs: Vec<(f64, f64)> = (0..1000).map(|i| (0.01 + i as f64 * 0.5, 100.0 - i as f64 * 0.09)).collect();
    c.bench_function("closure/solve_z x1000", |b| {
        b.iter(|| {
            pairs
                .iter()
                .map(|&(r, q)| closure::solve_z(black_box(r), black_box(q), &p).unwrap())
                .sum::<f64>()
        })
    });
}

fn poisson(c: &mut Criterion) {
    let mut group = c.benchmark_group("poisson");
    for n in [32, 64, 128] {
        let f = smooth_field(n);
        let f = f.map(|v| v - f.mean());
        group.bench_with_input(BenchmarkId::from_parameter(n), &f, |b, f| b.iter(|| poisson_solve(black_box(f))));
    }
    group.finish();
}

fn maximal_function(c: &mut Criterion) {
    let mut group = c.benchmark_group("maximal");
    group.sample_size(10);
    for n in [32, 64] {
        let f = smooth_field(n);
        group.bench_with_input(BenchmarkId::from_parameter(n), &f, |b, f| b.iter(|| maximal(black_box(f)).unwrap()));
    }
    group.finish();
}

fn pair_sum(c: &mut Criterion) {
    let mut group = c.benchmark_group("oscillation");
    group.sample_size(10);
    for n in [32, 64] {
        let r = smooth_field(n);
        let z = r.map(|v| 2.0 * v);
        let w = r.map(|v| (-v).exp());
        let cfg = KernelConfig::default();
        let k = diag::build_k_h0(&cfg, r.grid).unwrap();
        group.bench_with_input(BenchmarkId::new("exact", n), &n, |b, _| {
            b.iter(|| diag::oscillation_functional(&r, &z, &w, &k, &cfg, 0).unwrap())
        });
        let sampled = KernelConfig { exact_limit: 0, ..cfg };
        group.bench_with_input(BenchmarkId::new("sampled", n), &n, |b, _| {
            b.iter(|| diag::oscillation_functional(&r, &z, &w, &k, &sampled, 0).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, closure_roots, poisson, maximal_function, pair_sum);
criterion_main!(benches);
