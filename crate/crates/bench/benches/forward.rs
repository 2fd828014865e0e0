use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;
use streamwait::model::{forward, incremental_encode, EncoderCache, ModelMasks};
use streamwait::EncoderKind;
use streamwait_bench::{token_ids, toy_model};

fn bench(c: &mut Criterion) {
    let mut group = c.benchmark_group("toy_model");
    for kind in EncoderKind::ALL {
        let (config, params) = toy_model(kind);
        let (src, tgt) = (token_ids(40, 1), token_ids(40, 2));
        let masks = ModelMasks::for_prefix(kind, src.len(), tgt.len());
        group.bench_function(BenchmarkId::new("forward", kind.name()), |b| {
            b.iter(|| forward(&params, &config, black_box(&src), &tgt, &masks).unwrap())
        });
    }
    let (config, params) = toy_model(EncoderKind::Unidirectional);
    let src = token_ids(40, 3);
    let mut cache = EncoderCache::new();
    for &t in &src[..39] {
        cache = incremental_encode(&params, &config, &cache, t).unwrap();
    }
    group.bench_function("incremental_step_at_40", |b| {
        b.iter(|| incremental_encode(&params, &config, black_box(&cache), src[39]).unwrap())
    });
    group.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
