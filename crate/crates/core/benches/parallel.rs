//! Parallel vs sequential throughput for the row-mapped kernels that
//! dominate batch forward/backward work, plus an end-to-end gradient
//! benchmark (which uses the parallel path internally when beneficial).

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use eoslab::linalg::DenseMatrix;
use eoslab::netfwd::{init_params, loss_and_grad, Activation, LabeledBatch, MlpSpec};
use eoslab::parallel::{map_rows, map_rows_seq};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn row_kernel(n: usize, k: usize, out: &mut [f64], seq: bool) {
    let f = |i: usize, row: &mut [f64]| {
        let mut acc = (i as f64).sin();
        for (j, x) in row.iter_mut().enumerate() {
            acc = acc.mul_add(0.999, (j as f64) * 1e-6);
            *x = acc;
        }
    };
    if seq {
        map_rows_seq(out, n, k, f);
    } else {
        map_rows(out, n, k, f);
    }
}

fn bench_map_rows(c: &mut Criterion) {
    let mut group = c.benchmark_group("map_rows");
    for &(n, k) in &[(256usize, 64usize), (2048, 256)] {
        let mut buf = vec![0.0; n * k];
        group.bench_with_input(BenchmarkId::new("parallel", n * k), &(n, k), |b, &(n, k)| {
            b.iter(|| row_kernel(n, k, &mut buf, false))
        });
        group.bench_with_input(BenchmarkId::new("sequential", n * k), &(n, k), |b, &(n, k)| {
            b.iter(|| row_kernel(n, k, &mut buf, true))
        });
    }
    group.finish();
}

fn bench_gradient(c: &mut Criterion) {
    let spec = MlpSpec::new(vec![64, 32, 32, 10], Activation::Relu, 0).unwrap();
    let params = init_params(&spec);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let inputs = DenseMatrix::from_fn(500, 64, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
    let mut targets = DenseMatrix::zeros(500, 10);
    for i in 0..500 {
        let j = rng.gen_range(0..10);
        targets.set(i, j, 1.0);
    }
    let batch = LabeledBatch::new(inputs, targets).unwrap();
    c.bench_function("full_batch_gradient_desk_scale", |b| {
        b.iter(|| loss_and_grad(&params, &batch, &spec).unwrap())
    });
}

criterion_group!(benches, bench_map_rows, bench_gradient);
criterion_main!(benches);
