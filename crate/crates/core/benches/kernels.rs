use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use l1pca::data::gen_synthetic;
use l1pca::kernels;
use ndarray::Array2;

fn matmul(c: &mut Criterion) {
    let mut group = c.benchmark_group("matmul");
    for &(d, n, k) in &[(200, 500, 5), (1000, 2000, 20), (2000, 62, 10)] {
        let (x, truth) = gen_synthetic(d, n, k, 0.5, 0).unwrap();
        // X'Q is the dominant product of an iteration
        let xt: Array2<f64> = x.values().t().to_owned();
        let q = truth.q_true.values().to_owned();
        let label = format!("{n}x{d}x{k}");
        group.bench_with_input(BenchmarkId::new("sequential", &label), &(), |b, _| {
            b.iter(|| kernels::sequential::matmul(xt.view(), q.view()))
        });
        #[cfg(feature = "parallel")]
        group.bench_with_input(BenchmarkId::new("parallel", &label), &(), |b, _| {
            b.iter(|| kernels::parallel::matmul(xt.view(), q.view()))
        });
    }
    group.finish();
}

fn map_indexed(c: &mut Criterion) {
    let mut group = c.benchmark_group("map_indexed");
    let work = |i: usize| (0..20_000).fold(i as f64, |acc, j| (acc + j as f64).sqrt());
    group.bench_function("sequential", |b| {
        b.iter(|| kernels::sequential::map_indexed(64, work))
    });
    #[cfg(feature = "parallel")]
    group.bench_function("parallel", |b| {
        b.iter(|| kernels::parallel::map_indexed(64, work))
    });
    group.finish();
}

criterion_group!(benches, matmul, map_indexed);
criterion_main!(benches);
