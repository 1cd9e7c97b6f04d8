use advdrop::distributions::{compare_approximations, mean_mask, ModelFreeDist};
use advdrop::Graph;
use advdrop_bench::matrix;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use std::hint::black_box;

fn matmul(c: &mut Criterion) {
    let mut group = c.benchmark_group("matmul");
    for &(n, k, m) in &[(256, 784, 800), (256, 800, 800), (64, 64, 64)] {
        let a = matrix(n, k, 1);
        let b = matrix(k, m, 2);
        group.bench_with_input(BenchmarkId::from_parameter(format!("{n}x{k}x{m}")), &(a, b), |bench, (a, b)| {
            bench.iter(|| black_box(a.matmul(b).unwrap()))
        });
    }
    group.finish();
}

fn backward(c: &mut Criterion) {
    let x = matrix(256, 784, 3);
    let w = matrix(800, 784, 4);
    c.bench_function("matmul_t_relu_backward_256x784x800", |bench| {
        bench.iter(|| {
            let mut g = Graph::new();
            let xv = g.constant(x.clone());
            let wv = g.leaf(w.clone(), true);
            let h = g.matmul_t(xv, wv).unwrap();
            let r = g.relu(h);
            let l = g.mean(r, None).unwrap();
            g.backward(l).unwrap();
            black_box(g.grad(wv).map(|t| t.numel()))
        })
    });
}

fn masks(c: &mut Criterion) {
    let d = ModelFreeDist::new(0.0, 3.0);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    c.bench_function("sample_mask_204800", |bench| {
        bench.iter(|| black_box(d.sample_mask(256 * 800, &mut rng)))
    });
    c.bench_function("mean_mask", |bench| bench.iter(|| black_box(mean_mask(black_box(1.3), black_box(2.0)))));
}

fn approximations(c: &mut Criterion) {
    let mut group = c.benchmark_group("distributions");
    group.sample_size(10);
    group.bench_function("compare_approximations_fig_targets", |bench| {
        bench.iter(|| black_box(compare_approximations(&[(5.0, 0.1), (8.0, 0.1), (2.0, 0.5)]).unwrap()))
    });
    group.finish();
}

criterion_group!(benches, matmul, backward, masks, approximations);
criterion_main!(benches);
