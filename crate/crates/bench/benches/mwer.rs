use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;
use streamwait::reseg::mwer_resegment;
use streamwait_bench::mwer_instance;

fn bench(c: &mut Criterion) {
    let mut group = c.benchmark_group("mwer_resegment");
    for sentences in [10, 50, 200] {
        let (hyp, refs) = mwer_instance(sentences, 1);
        group.bench_with_input(BenchmarkId::from_parameter(sentences), &(hyp, refs), |b, (h, r)| {
            b.iter(|| mwer_resegment(black_box(h), black_box(r)))
        });
    }
    group.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
