use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use std::hint::black_box;
use tdbench_core::codec::CodecConfig;

fn codecs(c: &mut Criterion) {
    let frame = tdbench_bench::frame(7);
    let labels = [
        "p0", "p1", "p2", "p3", "800", "1100", "905", "1105", "910", "1110",
    ];
    let mut enc = c.benchmark_group("encode");
    enc.throughput(Throughput::Elements(frame.cloud.len() as u64));
    for label in labels {
        let cfg: CodecConfig = label.parse().unwrap();
        enc.bench_with_input(BenchmarkId::from_parameter(label), &cfg, |b, cfg| {
            b.iter(|| cfg.encode(black_box(&frame.cloud)).unwrap())
        });
    }
    enc.finish();

    let mut dec = c.benchmark_group("decode");
    for label in labels {
        let cfg: CodecConfig = label.parse().unwrap();
        let bs = cfg.encode(&frame.cloud).unwrap();
        dec.throughput(Throughput::Bytes(bs.len() as u64));
        dec.bench_with_input(BenchmarkId::from_parameter(label), &bs, |b, bs| {
            b.iter(|| cfg.decode(black_box(bs)).unwrap())
        });
    }
    dec.finish();
}

criterion_group!(benches, codecs);
criterion_main!(benches);
