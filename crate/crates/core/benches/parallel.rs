//! Compares the rayon-parallel entry points against their sequential
//! references: batch ERF estimation and sweep generation.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rfscope::erf::{estimate_erf, estimate_erf_seq, ErfLocation, Tensor4, WeightInit};
use rfscope::ir::parse_network;
use rfscope::presets::build_rn_base;
use rfscope::transforms::{sweep, SweepStrategy};
use rfscope::NetworkSpec;

fn bench_net() -> NetworkSpec {
    parse_network(
        "network bench in_channels=1\n\
         conv k=5x5 s=2x2 c=8\n\
         conv k=3x3 s=1x1 c=8\n\
         pool max k=2x2 s=2x2\n\
         conv k=3x3 s=1x1 c=16\n\
         conv k=3x3 s=1x1 c=16\n\
         pool max k=2x2 s=2x2\n\
         conv k=3x3 s=1x1 c=16\n",
    )
    .unwrap()
}

fn erf_batch(c: &mut Criterion) {
    let net = bench_net();
    let init = WeightInit::Seeded { seed: 11, scale: 0.3 };
    let mut group = c.benchmark_group("erf_batch");
    group.sample_size(10);
    for batch in [4usize, 16] {
        let inputs = Tensor4::filled([batch, 1, 96, 96], 0.5);
        group.bench_with_input(BenchmarkId::new("parallel", batch), &inputs, |b, inputs| {
            b.iter(|| estimate_erf(&net, &init, inputs, ErfLocation::Center).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("sequential", batch), &inputs, |b, inputs| {
            b.iter(|| estimate_erf_seq(&net, &init, inputs, ErfLocation::Center).unwrap())
        });
    }
    group.finish();
}

fn sweep_points(c: &mut Criterion) {
    let net = build_rn_base();
    let mut group = c.benchmark_group("sweep_convert_both");
    group.bench_function("parallel", |b| {
        b.iter(|| sweep(&net, SweepStrategy::ConvertBoth).unwrap())
    });
    group.finish();
}

criterion_group!(benches, erf_batch, sweep_points);
criterion_main!(benches);
