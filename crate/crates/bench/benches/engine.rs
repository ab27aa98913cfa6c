use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

use codistill_bench::{lenet_batch, synthetic_clients};
use codistill_core::federation::{run_codistillation, run_fedavg, ExchangeChannel, FederationConfig, Schedule};
use codistill_core::nn::{backward, cross_entropy, forward};

fn lenet(c: &mut Criterion) {
    let (model, x, labels) = lenet_batch(32, 0);
    let mut g = c.benchmark_group("lenet_batch32");
    g.sample_size(20);
    g.bench_function("forward", |b| b.iter(|| forward(black_box(&model), black_box(&x)).unwrap()));
    g.bench_function("forward_backward", |b| {
        b.iter(|| {
            let trace = forward(&model, &x).unwrap();
            let (_, d) = cross_entropy(&trace.logits, &labels).unwrap();
            backward(&model, &trace, &d).unwrap()
        })
    });
    g.finish();
}

fn rounds(c: &mut Criterion) {
    let clients = synthetic_clients(4, 50, 60, 0);
    let cfg = FederationConfig {
        schedule: Schedule::Sequential,
        ..FederationConfig::default()
    };
    let mut g = c.benchmark_group("round_4_clients");
    g.sample_size(10);
    g.bench_function("codistill", |b| {
        b.iter_batched(
            || clients.clone(),
            |mut cs| run_codistillation(&mut cs, 1, &cfg, 0, &mut ExchangeChannel::new()).unwrap(),
            BatchSize::LargeInput,
        )
    });
    g.bench_function("fedavg", |b| {
        b.iter_batched(
            || clients.clone(),
            |mut cs| run_fedavg(&mut cs, 1, &cfg, 0, &mut ExchangeChannel::new()).unwrap(),
            BatchSize::LargeInput,
        )
    });
    g.finish();
}

criterion_group!(benches, lenet, rounds);
criterion_main!(benches);
