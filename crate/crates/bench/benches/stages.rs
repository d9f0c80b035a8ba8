use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;
use tdbench_core::codec::CodecConfig;
use tdbench_core::detect::{Detector, DetectorParams};
use tdbench_core::eval::{average_precision, d1_distortion, iou3d, match_detections, ApConfig};
use tdbench_core::netsim::{simulate, NetworkScenario, StageTimes};
use tdbench_core::pc::ClassLabel;

fn stages(c: &mut Criterion) {
    let frame = tdbench_bench::frame(7);

    let mut detector = Detector::new(DetectorParams::default());
    c.bench_function("detect/raw", |b| {
        b.iter(|| detector.run(black_box(&frame.cloud)))
    });

    let dets = detector.run(&frame.cloud);
    let ap = ApConfig::default();
    c.bench_function("ap/frame", |b| {
        b.iter(|| {
            let curve = match_detections(black_box(&dets), &frame.gt_boxes, ClassLabel::Car, &ap);
            average_precision(&curve, &ap)
        })
    });

    let (a, g) = (&dets[0].bbox, &frame.gt_boxes[0]);
    c.bench_function("iou3d", |b| b.iter(|| iou3d(black_box(a), black_box(g))));

    let cfg: CodecConfig = "p3".parse().unwrap();
    let decoded = cfg.decode(&cfg.encode(&frame.cloud).unwrap()).unwrap();
    let mut group = c.benchmark_group("distortion");
    group.sample_size(10);
    group.bench_function("d1/p3", |b| {
        b.iter(|| d1_distortion(black_box(&frame.cloud), &decoded).unwrap())
    });
    group.finish();

    let scenario = NetworkScenario {
        sim_duration_s: 10.0,
        ..NetworkScenario::default()
    };
    let sizes = vec![vec![30_000u64, 31_000, 29_500]; scenario.n_vehicles];
    let times = StageTimes {
        encode_ms: vec![8.0],
        decode_ms: vec![4.0],
        inference_ms: vec![20.0],
    };
    c.bench_function("netsim/10s", |b| {
        b.iter(|| simulate(black_box(&scenario), &sizes, &times).unwrap())
    });
}

criterion_group!(benches, stages);
criterion_main!(benches);
