use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;
use streamwait::latency::{oracle_gammas, stream_metrics, LatencyConfig};
use streamwait_bench::wait_k_stream;

fn bench(c: &mut Criterion) {
    let mut group = c.benchmark_group("stream_metrics");
    for sentences in [100, 1000] {
        let (trace, seg, src_total) = wait_k_stream(sentences, 3, 2);
        let delays = trace.delays();
        let gammas = oracle_gammas(&seg, src_total, delays.len()).unwrap();
        group.bench_function(BenchmarkId::from_parameter(sentences), |b| {
            b.iter(|| stream_metrics(black_box(&delays), &seg, src_total, &gammas, LatencyConfig::default()).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
