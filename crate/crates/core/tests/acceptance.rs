//! Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
//! criterion fails. Every tolerance is a named constant below.
//!
//! Criteria 5, 6, 8 and 9 share one run of the default experiment on the
//! 30-frame seed-7 corpus.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use tdbench_core::codec::{CodecConfig, QuantConfig};
use tdbench_core::detect::Detection;
use tdbench_core::eval::{average_precision, iou3d, match_detections, ApConfig};
use tdbench_core::netsim::{
    self, check_compliance, simulate, NetworkScenario, SimSummary, StageTimes, Stat,
};
use tdbench_core::pipeline::tables::{self, strip_measured};
use tdbench_core::pipeline::{
    run_pipeline, Bundle, ExperimentSpec, CHARTS_DIR, CHART_FILES, SUMMARY_JSON,
};
use tdbench_core::scenegen;
use tdbench_core::{Box3D, ClassLabel, LabeledFrame, Point3, PointCloud};

// Criterion 1
const AP_INSTANCES: usize = 1000;
const AP_MAX_GT: usize = 10;
const AP_MAX_DETS: usize = 20;
const AP_TOL: f64 = 1e-12;
const AP_RUNTIME_S: f64 = 10.0;
// Criterion 3
const IOU_PAIRS: usize = 200;
const IOU_SAMPLES: usize = 1_000_000;
const IOU_TOL: f64 = 5e-3;
const IOU_RUNTIME_S: f64 = 60.0;
// Criterion 4
const FUZZ_CLOUDS: usize = 500;
const FUZZ_MAX_POINTS: usize = 400;
/// Floating-point slack on the quantizer bound, relative to the axis extent.
const QUANT_REL_EPS: f64 = 1e-9;
const FUZZ_RUNTIME_S: f64 = 120.0;
// Criterion 5
const OCTREE_SIZE_RATIO: f64 = 5.0;
// Criterion 6
const SPEED_REPETITIONS: usize = 5;
const QUANT_MEDIAN_LIMIT_MS: f64 = 50.0;
// Criterion 7
const NETSIM_REL_TOL: f64 = 1e-9;
// Criterion 8
const DELAY_DROP_MIN: f64 = 0.40;
const RATE_RATIO_MIN: f64 = 5.0;
// Criterion 9
const AP_STEP_SLACK: f64 = 0.02;
// Criterion 10
const DETERMINISM_FRAMES: usize = 3;
// Whole suite
const SUITE_RUNTIME_S: f64 = 600.0;

type Outcome = Result<String, String>;
/// (id, delay ms, uplink Mbps, range m, reliability %)
type ProfileRow = (
    &'static str,
    Option<f64>,
    Option<f64>,
    Option<f64>,
    Option<f64>,
);

struct Report {
    passed: usize,
    failed: usize,
}

impl Report {
    fn record(&mut self, id: u32, name: &str, started: Instant, outcome: Outcome) {
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => {
                self.passed += 1;
                println!("PASS {id:>2} {name}: {detail} [{secs:.1} s]");
            }
            Err(why) => {
                self.failed += 1;
                println!("FAIL {id:>2} {name}: {why} [{secs:.1} s]");
            }
        }
    }
}

fn check(ok: bool, failures: &mut Vec<String>, msg: impl FnOnce() -> String) {
    if !ok {
        failures.push(msg());
    }
}

fn verdict(failures: Vec<String>, detail: String) -> Outcome {
    if failures.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{}; {detail}", failures.join("; ")))
    }
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn random_box(rng: &mut ChaCha8Rng, class: ClassLabel, spread: f64) -> Box3D {
    let dims = match class {
        ClassLabel::Car => [
            rng.random_range(3.5..5.5),
            rng.random_range(1.6..2.1),
            rng.random_range(1.4..1.9),
        ],
        ClassLabel::Pedestrian => [
            rng.random_range(0.4..0.8),
            rng.random_range(0.35..0.7),
            rng.random_range(1.5..1.9),
        ],
    };
    let center = [
        rng.random_range(-spread..spread),
        rng.random_range(-spread..spread),
        0.5 * dims[2],
    ];
    Box3D::new(center, dims, rng.random_range(-3.1..3.1), class).unwrap()
}

fn jitter(rng: &mut ChaCha8Rng, b: &Box3D, amount: f64) -> Box3D {
    let c = [
        b.center[0] + rng.random_range(-amount..amount),
        b.center[1] + rng.random_range(-amount..amount),
        b.center[2] + rng.random_range(-0.3 * amount..0.3 * amount),
    ];
    let d = b
        .dims
        .map(|x| x * rng.random_range(1.0 - 0.3 * amount..1.0 + 0.3 * amount));
    Box3D::new(c, d, b.yaw + rng.random_range(-amount..amount), b.class).unwrap()
}

/// Greedy matching and interpolated AP written directly from the definition:
/// rank by score (ties keep input order), give each detection the unmatched
/// box of highest IoU when it reaches the threshold, then for each recall
/// threshold take the best precision over every prefix reaching it.
fn oracle_ap(dets: &[Detection], gts: &[Box3D], class: ClassLabel, thr: f64) -> f64 {
    let gts: Vec<&Box3D> = gts.iter().filter(|g| g.class == class).collect();
    let mut order: Vec<usize> = (0..dets.len())
        .filter(|&i| dets[i].class == class)
        .collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
    let mut used = vec![false; gts.len()];
    let mut prefix = Vec::new();
    let (mut tp, mut n) = (0usize, 0usize);
    for i in order {
        let mut best: Option<(usize, f64)> = None;
        for (j, g) in gts.iter().enumerate() {
            if used[j] {
                continue;
            }
            let iou = iou3d(&dets[i].bbox, g);
            if best.is_none_or(|(_, b)| iou > b) {
                best = Some((j, iou));
            }
        }
        n += 1;
        if let Some((j, iou)) = best.filter(|&(_, iou)| iou >= thr) {
            let _ = iou;
            used[j] = true;
            tp += 1;
        }
        prefix.push((tp as f64 / gts.len().max(1) as f64, tp as f64 / n as f64));
    }
    let mut sum = 0.0;
    for k in 1..=40 {
        let r = k as f64 / 40.0;
        let p = prefix
            .iter()
            .filter(|(rec, _)| *rec >= r)
            .map(|(_, p)| *p)
            .fold(0.0, f64::max);
        sum += p;
    }
    if gts.is_empty() {
        0.0
    } else {
        sum / 40.0
    }
}

fn criterion_1() -> Outcome {
    let started = Instant::now();
    let cfg = ApConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    let mut nontrivial = 0;
    for _ in 0..AP_INSTANCES {
        let class = if rng.random_bool(0.5) {
            ClassLabel::Car
        } else {
            ClassLabel::Pedestrian
        };
        let n_gt = rng.random_range(1..=AP_MAX_GT);
        let spread = rng.random_range(3.0..20.0);
        let mut gts: Vec<Box3D> = (0..n_gt)
            .map(|_| random_box(&mut rng, class, spread))
            .collect();
        // A few boxes of the other class must be ignored.
        if rng.random_bool(0.3) {
            let other = if class == ClassLabel::Car {
                ClassLabel::Pedestrian
            } else {
                ClassLabel::Car
            };
            gts.push(random_box(&mut rng, other, spread));
        }
        let n_det = rng.random_range(0..=AP_MAX_DETS);
        let tie_scores = [0.25, 0.5, 0.75];
        let dets: Vec<Detection> = (0..n_det)
            .map(|_| {
                let bbox = if rng.random_bool(0.6) {
                    let g = gts[rng.random_range(0..gts.len())];
                    let amount = rng.random_range(0.02..0.6);
                    jitter(&mut rng, &g, amount)
                } else {
                    random_box(&mut rng, class, spread)
                };
                let score = if rng.random_bool(0.2) {
                    tie_scores[rng.random_range(0..3)]
                } else {
                    rng.random_range(0.0..1.0)
                };
                Detection {
                    bbox,
                    score,
                    class: bbox.class,
                }
            })
            .collect();
        let got = average_precision(&match_detections(&dets, &gts, class, &cfg), &cfg).ap;
        let want = oracle_ap(&dets, &gts, class, cfg.iou_threshold(class));
        if want > 0.0 && want < 1.0 {
            nontrivial += 1;
        }
        worst = worst.max((got - want).abs());
    }
    let secs = started.elapsed().as_secs_f64();
    let mut f = Vec::new();
    check(worst <= AP_TOL, &mut f, || {
        format!("max |AP - oracle| = {worst:e} > {AP_TOL:e}")
    });
    check(secs < AP_RUNTIME_S, &mut f, || {
        format!("runtime {secs:.1} s over {AP_RUNTIME_S} s")
    });
    check(nontrivial > AP_INSTANCES / 4, &mut f, || {
        format!("only {nontrivial} instances have 0 < AP < 1")
    });
    verdict(f, format!("{AP_INSTANCES} instances ({nontrivial} with 0 < AP < 1), max |AP - oracle| = {worst:e}"))
}

fn criterion_2() -> Outcome {
    let cfg = ApConfig::default();
    let car = |x: f64| Box3D::new([x, 0.0, 0.8], [4.2, 1.8, 1.6], 0.3, ClassLabel::Car).unwrap();
    let gts = vec![car(0.0), car(10.0), car(20.0)];
    let perfect: Vec<Detection> = gts
        .iter()
        .enumerate()
        .map(|(i, g)| Detection {
            bbox: *g,
            score: 0.9 - 0.1 * i as f64,
            class: g.class,
        })
        .collect();
    let ap_perfect = average_precision(
        &match_detections(&perfect, &gts, ClassLabel::Car, &cfg),
        &cfg,
    )
    .ap;
    // Two boxes; one true positive ranked above one false positive.
    let two = vec![car(0.0), car(10.0)];
    let dets = vec![
        Detection {
            bbox: car(0.0),
            score: 0.9,
            class: ClassLabel::Car,
        },
        Detection {
            bbox: car(40.0),
            score: 0.8,
            class: ClassLabel::Car,
        },
    ];
    let ap_half = average_precision(&match_detections(&dets, &two, ClassLabel::Car, &cfg), &cfg).ap;
    let mut f = Vec::new();
    check(ap_perfect == 1.0, &mut f, || {
        format!("perfect detector AP = {ap_perfect}")
    });
    check(ap_half == 0.5, &mut f, || {
        format!("TP+FP case AP = {ap_half}")
    });
    verdict(f, format!("perfect = {ap_perfect}, TP+FP = {ap_half}"))
}

/// Fraction of uniform samples in `a` that fall in `b`, turned into an IoU.
fn monte_carlo_iou(a: &Box3D, b: &Box3D, samples: usize, rng: &mut ChaCha8Rng) -> f64 {
    let (s, c) = a.yaw.sin_cos();
    let mut inside = 0usize;
    for _ in 0..samples {
        let lx = (rng.random::<f64>() - 0.5) * a.dims[0];
        let ly = (rng.random::<f64>() - 0.5) * a.dims[1];
        let lz = (rng.random::<f64>() - 0.5) * a.dims[2];
        let p = Point3::new(
            a.center[0] + c * lx - s * ly,
            a.center[1] + s * lx + c * ly,
            a.center[2] + lz,
        );
        if b.contains(&p) {
            inside += 1;
        }
    }
    let inter = inside as f64 / samples as f64 * a.volume();
    inter / (a.volume() + b.volume() - inter)
}

fn criterion_3() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pairs: Vec<(Box3D, Box3D, u64)> = (0..IOU_PAIRS)
        .map(|i| {
            let class = if i % 3 == 0 {
                ClassLabel::Pedestrian
            } else {
                ClassLabel::Car
            };
            let a = random_box(&mut rng, class, 5.0);
            let amount = rng.random_range(0.05..1.5);
            let b = if i % 10 == 0 {
                random_box(&mut rng, class, 5.0)
            } else {
                jitter(&mut rng, &a, amount)
            };
            (a, b, rng.random())
        })
        .collect();
    let results: Vec<(f64, bool, bool)> = pairs
        .par_iter()
        .map(|(a, b, seed)| {
            let mut r = ChaCha8Rng::seed_from_u64(*seed);
            let exact = iou3d(a, b);
            let mc = monte_carlo_iou(a, b, IOU_SAMPLES, &mut r);
            (
                (exact - mc).abs(),
                exact == iou3d(b, a),
                iou3d(a, a) == 1.0 && iou3d(b, b) == 1.0,
            )
        })
        .collect();
    let worst = results.iter().map(|r| r.0).fold(0.0, f64::max);
    let asym = results.iter().filter(|r| !r.1).count();
    let not_one = results.iter().filter(|r| !r.2).count();
    let overlapping = pairs.iter().filter(|(a, b, _)| iou3d(a, b) > 0.0).count();
    let secs = started.elapsed().as_secs_f64();
    let mut f = Vec::new();
    check(worst <= IOU_TOL, &mut f, || {
        format!("max |iou - MC| = {worst:.2e} > {IOU_TOL:e}")
    });
    check(asym == 0, &mut f, || format!("{asym} asymmetric pairs"));
    check(not_one == 0, &mut f, || {
        format!("{not_one} pairs with self-IoU != 1")
    });
    check(secs < IOU_RUNTIME_S, &mut f, || {
        format!("runtime {secs:.1} s over {IOU_RUNTIME_S} s")
    });
    verdict(f, format!("{IOU_PAIRS} pairs ({overlapping} overlapping) x {IOU_SAMPLES} samples, max |iou - MC| = {worst:.2e}"))
}

fn fuzz_cloud(rng: &mut ChaCha8Rng) -> PointCloud {
    let n = rng.random_range(1..=FUZZ_MAX_POINTS);
    let extent = 10f64.powf(rng.random_range(-2.0..2.3));
    let offset: [f64; 3] = std::array::from_fn(|_| rng.random_range(-500.0..500.0));
    let kind = rng.random_range(0..6);
    let uniques = rng.random_range(1..=8usize);
    let seeds: Vec<[f64; 3]> = (0..uniques)
        .map(|_| std::array::from_fn(|i| offset[i] + rng.random_range(0.0..extent)))
        .collect();
    let points = (0..n)
        .map(|k| {
            let u: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..extent));
            let p = match kind {
                0 => std::array::from_fn(|i| offset[i] + u[i]),
                // Flat along z.
                1 => [offset[0] + u[0], offset[1] + u[1], offset[2]],
                // Every point identical.
                2 => seeds[0],
                // A few distinct points, heavily duplicated.
                3 => seeds[k % uniques],
                // Tight clusters inside a wide box.
                4 => {
                    let s = seeds[k % uniques];
                    std::array::from_fn(|i| s[i] + 1e-3 * extent * (u[i] / extent - 0.5))
                }
                // A ring like one LiDAR beam.
                _ => {
                    let t = u[0] / extent * std::f64::consts::TAU;
                    [
                        offset[0] + extent * t.cos(),
                        offset[1] + extent * t.sin(),
                        offset[2] + 0.01 * u[2],
                    ]
                }
            };
            Point3::new(p[0], p[1], p[2]).with_intensity(rng.random())
        })
        .collect();
    PointCloud::new(points)
}

/// Largest per-axis distance from any point of `from` to its closest point
/// of `to` in the Chebyshev sense, measured axis by axis against `bound`.
/// Returns the worst ratio error/bound over both directions.
fn worst_bound_ratio(a: &PointCloud, b: &PointCloud, bound: [f64; 3]) -> f64 {
    let ratio = |p: &Point3, q: &Point3| {
        let (pc, qc) = (p.coords(), q.coords());
        (0..3)
            .map(|i| {
                let e = (pc[i] - qc[i]).abs();
                if bound[i] > 0.0 {
                    e / bound[i]
                } else if e == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            })
            .fold(0.0, f64::max)
    };
    let directed = |from: &PointCloud, to: &PointCloud| {
        from.points
            .iter()
            .map(|p| {
                to.points
                    .iter()
                    .map(|q| ratio(p, q))
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max)
    };
    directed(a, b).max(directed(b, a))
}

fn criterion_4() -> Outcome {
    let started = Instant::now();
    let configs = CodecConfig::standard_grid();
    let per_config: Vec<(String, usize, f64, f64)> = configs
        .par_iter()
        .enumerate()
        .map(|(ci, cfg)| {
            let mut rng = ChaCha8Rng::seed_from_u64(4000 + ci as u64);
            let mut violations = 0usize;
            let (mut worst, mut worst_tight) = (0.0f64, 0.0f64);
            for _ in 0..FUZZ_CLOUDS {
                let cloud = fuzz_cloud(&mut rng);
                let Ok(bs) = cfg.encode(&cloud) else {
                    violations += 1;
                    continue;
                };
                let Ok(out) = cfg.decode(&bs) else {
                    violations += 1;
                    continue;
                };
                let (lo, hi) = cloud.bounds().unwrap();
                match cfg {
                    CodecConfig::Octree(o) => {
                        let loose = worst_bound_ratio(&cloud, &out, [0.5 / o.pqs; 3]);
                        let tight = worst_bound_ratio(
                            &cloud,
                            &out,
                            [0.5 * o.voxel_size() * (1.0 + QUANT_REL_EPS); 3],
                        );
                        worst = worst.max(loose);
                        worst_tight = worst_tight.max(tight);
                        violations += (loose > 1.0 || tight > 1.0 || out.is_empty()) as usize;
                    }
                    CodecConfig::Quant(q) => {
                        let steps = ((1u64 << q.q_bits) - 1) as f64;
                        let bound: [f64; 3] = std::array::from_fn(|i| {
                            let ext = hi[i] - lo[i];
                            ext / steps / 2.0 + QUANT_REL_EPS * ext.max(f64::MIN_POSITIVE)
                        });
                        let r = worst_bound_ratio(&cloud, &out, bound);
                        worst = worst.max(r);
                        violations += (r > 1.0 || out.len() != cloud.len()) as usize;
                    }
                }
            }
            (cfg.label(), violations, worst, worst_tight)
        })
        .collect();
    let total: usize = per_config.iter().map(|c| c.1).sum();
    let secs = started.elapsed().as_secs_f64();
    let oct_worst = per_config
        .iter()
        .filter(|c| c.0.starts_with('p'))
        .map(|c| c.2)
        .fold(0.0, f64::max);
    let oct_tight = per_config
        .iter()
        .filter(|c| c.0.starts_with('p'))
        .map(|c| c.3)
        .fold(0.0, f64::max);
    let q_worst = per_config
        .iter()
        .filter(|c| !c.0.starts_with('p'))
        .map(|c| c.2)
        .fold(0.0, f64::max);
    let mut f = Vec::new();
    for (label, v, _, _) in &per_config {
        check(*v == 0, &mut f, || format!("{label}: {v} violating clouds"));
    }
    check(secs < FUZZ_RUNTIME_S, &mut f, || {
        format!("runtime {secs:.1} s over {FUZZ_RUNTIME_S} s")
    });
    verdict(
        f,
        format!(
            "{} configs x {FUZZ_CLOUDS} clouds, {total} violations; worst error/bound: octree {oct_worst:.4} (voxel bound {oct_tight:.4}), quant {q_worst:.4}",
            per_config.len()
        ),
    )
}

struct CompressionRow {
    codec: String,
    frame: u64,
    bytes: u64,
}

fn read_compression(dir: &Path) -> Vec<CompressionRow> {
    let mut r =
        csv::Reader::from_path(dir.join(tables::COMPRESSION_CSV)).expect("compression table");
    let h = r.headers().unwrap().clone();
    let col = |n: &str| h.iter().position(|x| x == n).unwrap();
    let (c, f, b) = (col("codec"), col("frame_id"), col("compressed_bytes"));
    r.records()
        .map(|rec| {
            let rec = rec.unwrap();
            CompressionRow {
                codec: rec[c].to_string(),
                frame: rec[f].parse().unwrap(),
                bytes: rec[b].parse().unwrap(),
            }
        })
        .collect()
}

fn criterion_5(bundle: &Bundle) -> Outcome {
    let rows = read_compression(&bundle.dir);
    let mut by: BTreeMap<(String, u64), u64> = BTreeMap::new();
    for r in &rows {
        by.insert((r.codec.clone(), r.frame), r.bytes);
    }
    let frames: Vec<u64> = rows
        .iter()
        .filter(|r| r.codec == "p0")
        .map(|r| r.frame)
        .collect();
    let med = |label: &str| {
        median(
            &frames
                .iter()
                .map(|f| by[&(label.to_string(), *f)] as f64)
                .collect::<Vec<_>>(),
        )
    };
    let presets = ["p0", "p1", "p2", "p3"];
    let meds: Vec<f64> = presets.iter().map(|p| med(p)).collect();
    let mut f = Vec::new();
    for w in 0..3 {
        check(meds[w] < meds[w + 1], &mut f, || {
            format!(
                "median {} = {} not below {} = {}",
                presets[w],
                meds[w],
                presets[w + 1],
                meds[w + 1]
            )
        });
    }
    let ratio = meds[3] / meds[0];
    check(ratio >= OCTREE_SIZE_RATIO, &mut f, || {
        format!("p3/p0 size ratio {ratio:.2} < {OCTREE_SIZE_RATIO}")
    });
    let mut violations = 0;
    let size = |q: u8, c: u8, fr: u64| {
        by[&(
            QuantConfig {
                q_bits: q,
                level: c,
            }
            .label(),
            fr,
        )]
    };
    for &fr in &frames {
        for c in [0u8, 5, 10] {
            for q in 8u8..11 {
                if size(q, c, fr) > size(q + 1, c, fr) {
                    violations += 1;
                    f.push(format!("frame {fr}: size({q},{c}) > size({},{c})", q + 1));
                }
            }
        }
        for q in 8u8..=11 {
            for (a, b) in [(0u8, 5u8), (5, 10)] {
                if size(q, b, fr) > size(q, a, fr) {
                    violations += 1;
                    f.push(format!("frame {fr}: size({q},{b}) > size({q},{a})"));
                }
            }
        }
    }
    verdict(
        f,
        format!(
            "{} frames; octree medians {:.0}/{:.0}/{:.0}/{:.0} B, p3/p0 = {ratio:.1}; quant ordering violations {violations}",
            frames.len(),
            meds[0],
            meds[1],
            meds[2],
            meds[3]
        ),
    )
}

/// Dedicated timing pass: for each frame and repetition every configuration
/// is run back to back, so slow drift of the machine affects all alike.
fn criterion_6(frames: &[LabeledFrame]) -> Outcome {
    let configs = CodecConfig::standard_grid();
    // [config][frame] -> per-repetition times
    let mut enc = vec![vec![Vec::new(); frames.len()]; configs.len()];
    let mut dec = vec![vec![Vec::new(); frames.len()]; configs.len()];
    for (fi, frame) in frames.iter().enumerate() {
        for _ in 0..SPEED_REPETITIONS {
            for (ci, cfg) in configs.iter().enumerate() {
                let t = Instant::now();
                let bs = cfg.encode(&frame.cloud).expect("corpus frames encode");
                enc[ci][fi].push(t.elapsed().as_secs_f64() * 1e3);
                let t = Instant::now();
                std::hint::black_box(cfg.decode(&bs).expect("fresh streams decode"));
                dec[ci][fi].push(t.elapsed().as_secs_f64() * 1e3);
            }
        }
    }
    let per_frame = |ci: usize, which: u8| -> Vec<f64> {
        (0..frames.len())
            .map(|fi| match which {
                0 => median(&enc[ci][fi]),
                1 => median(&dec[ci][fi]),
                _ => median(
                    &enc[ci][fi]
                        .iter()
                        .zip(&dec[ci][fi])
                        .map(|(e, d)| e + d)
                        .collect::<Vec<_>>(),
                ),
            })
            .collect()
    };
    let quant: Vec<f64> = (0..configs.len())
        .filter(|&ci| matches!(configs[ci], CodecConfig::Quant(_)))
        .flat_map(|ci| per_frame(ci, 2))
        .collect();
    let quant_med = median(&quant);
    let mut f = Vec::new();
    let mut detail = vec![format!("quant pooled median {quant_med:.2} ms")];
    for (ci, cfg) in configs
        .iter()
        .enumerate()
        .filter(|(_, c)| matches!(c, CodecConfig::Octree(_)))
    {
        let (e, d, both) = (
            median(&per_frame(ci, 0)),
            median(&per_frame(ci, 1)),
            median(&per_frame(ci, 2)),
        );
        detail.push(format!("{cfg} {both:.2} ms (enc {e:.2} / dec {d:.2})"));
        check(quant_med < both, &mut f, || {
            format!("quant median {quant_med:.2} ms not below {cfg} {both:.2} ms")
        });
        check(d < e, &mut f, || {
            format!("{cfg} decode median {d:.2} ms not below encode {e:.2} ms")
        });
    }
    check(quant_med < QUANT_MEDIAN_LIMIT_MS, &mut f, || {
        format!("quant median {quant_med:.2} ms over {QUANT_MEDIAN_LIMIT_MS} ms")
    });
    verdict(f, detail.join(", "))
}

fn criterion_7() -> Outcome {
    let mut f = Vec::new();
    let mut cases = 0;
    let mut worst = 0.0f64;
    for (bw, se, size, fps) in [
        (25e6, 2.0, 50_000u64, 30.0),
        (50e6, 2.0, 50_000, 30.0),
        (10e6, 1.5, 123_457, 10.0),
        (20e6, 3.3, 2_706, 30.0),
        (5e6, 2.0, 4_000, 5.0),
    ] {
        let sc = NetworkScenario {
            n_vehicles: 1,
            shared_bandwidth_hz: bw,
            spectral_efficiency_bps_per_hz: se,
            fps,
            sim_duration_s: 2.0,
            ..NetworkScenario::default()
        };
        let r = simulate(&sc, &[vec![size]], &StageTimes::default()).unwrap();
        let expect_ms = size as f64 * 8.0 / (bw * se) * 1e3;
        for rec in &r.records {
            cases += 1;
            let rel = (rec.delay.tx_ms - expect_ms).abs() / expect_ms;
            worst = worst.max(rel);
            check(rel <= NETSIM_REL_TOL, &mut f, || {
                format!(
                    "{size} B at {} bit/s: tx {} ms, expected {expect_ms}",
                    bw * se,
                    rec.delay.tx_ms
                )
            });
            check(rec.delay.queue_ms == 0.0, &mut f, || {
                format!("unexpected queueing {} ms", rec.delay.queue_ms)
            });
        }
    }
    // 5 vehicles on 50 Mbit/s in total, 50 kB frames.
    let sc = NetworkScenario {
        n_vehicles: 5,
        shared_bandwidth_hz: 25e6,
        spectral_efficiency_bps_per_hz: 2.0,
        fps: 10.0,
        sim_duration_s: 1.0,
        ..NetworkScenario::default()
    };
    let r = simulate(&sc, &vec![vec![50_000]; 5], &StageTimes::default()).unwrap();
    let off = r
        .records
        .iter()
        .filter(|rec| rec.delay.tx_ms != 40.0)
        .count();
    check(off == 0, &mut f, || {
        format!("{off} fair-share frames not at exactly 40.0 ms")
    });
    check(r.records.len() == 50, &mut f, || {
        format!("{} of 50 frames delivered", r.records.len())
    });
    verdict(f, format!("{cases} single-vehicle frames, max relative error {worst:e}; 5-vehicle share: {} frames at 40.0 ms", r.records.len() - off))
}

fn codec_index(bundle: &Bundle, label: &str) -> usize {
    bundle
        .summary
        .codecs
        .iter()
        .position(|c| c.codec == label)
        .unwrap_or_else(|| panic!("{label} in bundle"))
}

fn criterion_8(bundle: &Bundle) -> Outcome {
    let total = |l: &str| {
        bundle.measured.codecs[codec_index(bundle, l)]
            .sim
            .total_ms
            .mean
    };
    let rate = |l: &str| bundle.summary.codecs[codec_index(bundle, l)].required_rate_bps;
    let d: Vec<f64> = ["p0", "p1", "p2", "p3"].iter().map(|p| total(p)).collect();
    let mut f = Vec::new();
    for w in 0..3 {
        check(d[w] < d[w + 1], &mut f, || {
            format!(
                "mean delay p{w} {:.2} ms not below p{} {:.2} ms",
                d[w],
                w + 1,
                d[w + 1]
            )
        });
    }
    let drop = (d[3] - d[0]) / d[3];
    check(drop >= DELAY_DROP_MIN, &mut f, || {
        format!(
            "p3 to p0 drop {:.1}% < {:.0}%",
            100.0 * drop,
            100.0 * DELAY_DROP_MIN
        )
    });
    let ratios: Vec<f64> = ["1100", "1105", "1110"]
        .iter()
        .map(|q| rate(q) / rate("p0"))
        .collect();
    let min_ratio = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    check(min_ratio >= RATE_RATIO_MIN, &mut f, || {
        format!("q=11 / p0 rate ratio {min_ratio:.2} < {RATE_RATIO_MIN}")
    });
    verdict(
        f,
        format!(
            "mean delay p0..p3 {:.2}/{:.2}/{:.2}/{:.2} ms, drop {:.1}%; q=11 / p0 rate ratio >= {min_ratio:.1}",
            d[0],
            d[1],
            d[2],
            d[3],
            100.0 * drop
        ),
    )
}

fn criterion_9(bundle: &Bundle) -> Outcome {
    let car = |l: &str| bundle.summary.codecs[codec_index(bundle, l)].car.ap;
    let mut chains: Vec<Vec<String>> = vec![["p3", "p2", "p1", "p0"].map(String::from).to_vec()];
    for c in [0u8, 5, 10] {
        chains.push(
            (8u8..=11)
                .rev()
                .map(|q| {
                    QuantConfig {
                        q_bits: q,
                        level: c,
                    }
                    .label()
                })
                .collect(),
        );
    }
    let mut f = Vec::new();
    let mut detail = Vec::new();
    for chain in &chains {
        let aps: Vec<f64> = chain.iter().map(|l| car(l)).collect();
        for w in 0..aps.len() - 1 {
            check(aps[w + 1] <= aps[w] + AP_STEP_SLACK, &mut f, || {
                format!(
                    "car AP rises {} {:.3} -> {} {:.3}",
                    chain[w],
                    aps[w],
                    chain[w + 1],
                    aps[w + 1]
                )
            });
        }
        detail.push(
            chain
                .iter()
                .zip(&aps)
                .map(|(l, a)| format!("{l} {a:.3}"))
                .collect::<Vec<_>>()
                .join(" > "),
        );
    }
    let s = &bundle.summary;
    let n = s.codecs.len() as f64 + 1.0;
    let mean_car = (s.raw_car.ap + s.codecs.iter().map(|c| c.car.ap).sum::<f64>()) / n;
    let mean_ped =
        (s.raw_pedestrian.ap + s.codecs.iter().map(|c| c.pedestrian.ap).sum::<f64>()) / n;
    check(mean_ped <= mean_car, &mut f, || {
        format!("mean pedestrian AP {mean_ped:.3} above car {mean_car:.3}")
    });
    detail.push(format!(
        "raw car {:.3}; mean AP car {mean_car:.3} >= pedestrian {mean_ped:.3}",
        s.raw_car.ap
    ));
    verdict(f, detail.join("; "))
}

fn bundle_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for t in [
        tables::COMPRESSION_CSV,
        tables::AP_CSV,
        tables::NETWORK_CSV,
        tables::COMPLIANCE_CSV,
        tables::INFERENCE_CSV,
    ] {
        out.push((
            t.to_string(),
            strip_measured(&std::fs::read(dir.join(t)).unwrap()).unwrap(),
        ));
    }
    out.push((
        SUMMARY_JSON.to_string(),
        std::fs::read(dir.join(SUMMARY_JSON)).unwrap(),
    ));
    for c in CHART_FILES {
        out.push((
            c.to_string(),
            std::fs::read(dir.join(CHARTS_DIR).join(c)).unwrap(),
        ));
    }
    out
}

fn criterion_10(work: &Path, full: &ExperimentSpec) -> Outcome {
    let mut f = Vec::new();
    let mut spec = full.clone();
    spec.corpus.n_frames = DETERMINISM_FRAMES;
    spec.out_dir = work.join("det-a");
    let a = run_pipeline(&spec).map_err(|e| e.to_string())?;
    spec.out_dir = work.join("det-b");
    let b = run_pipeline(&spec).map_err(|e| e.to_string())?;
    let (fa, fb) = (bundle_files(&a.dir), bundle_files(&b.dir));
    for ((name, x), (_, y)) in fa.iter().zip(&fb) {
        check(x == y, &mut f, || format!("{name} differs between reruns"));
    }
    // Regenerate the acceptance corpus from scratch and compare every file
    // with the copy the pipeline cached.
    let fresh = work.join("fresh-corpus");
    scenegen::generate_corpus(&full.corpus.scene, full.corpus.n_frames, &fresh)
        .map_err(|e| e.to_string())?;
    let cached = work
        .join("cache")
        .join(format!("corpus-{}", &full.corpus.hash()[..16]));
    let mut names: Vec<_> = std::fs::read_dir(&fresh)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    let mut differing = 0;
    for n in &names {
        if std::fs::read(fresh.join(n)).ok() != std::fs::read(cached.join(n)).ok() {
            differing += 1;
        }
    }
    check(differing == 0, &mut f, || {
        format!("{differing} corpus files differ after regeneration")
    });
    verdict(
        f,
        format!(
            "{}-frame x {}-config reruns identical over {} outputs; {} corpus files regenerated byte-identical",
            DETERMINISM_FRAMES,
            spec.codecs.len(),
            fa.len(),
            names.len() - differing
        ),
    )
}

fn criterion_11() -> Outcome {
    let table: [ProfileRow; 14] = [
        (
            "platooning/cooperative_driving",
            Some(20.0),
            Some(65.0),
            Some(180.0),
            None,
        ),
        (
            "platooning/info_sharing",
            Some(20.0),
            Some(50.0),
            Some(180.0),
            None,
        ),
        (
            "advanced_driving/coop_collision_avoidance",
            Some(10.0),
            Some(10.0),
            None,
            Some(99.99),
        ),
        (
            "advanced_driving/info_sharing",
            Some(100.0),
            Some(50.0),
            Some(360.0),
            None,
        ),
        (
            "advanced_driving/emergency_traj_alignment",
            Some(3.0),
            Some(30.0),
            Some(500.0),
            Some(99.999),
        ),
        (
            "advanced_driving/intersection_safety_info",
            None,
            Some(0.25),
            None,
            None,
        ),
        (
            "advanced_driving/video_sharing",
            None,
            Some(10.0),
            None,
            None,
        ),
        (
            "extended_sensors/info_sharing/1",
            Some(10.0),
            Some(1000.0),
            Some(50.0),
            Some(99.99),
        ),
        (
            "extended_sensors/info_sharing/2",
            Some(3.0),
            Some(50.0),
            Some(200.0),
            Some(99.999),
        ),
        (
            "extended_sensors/info_sharing/3",
            Some(10.0),
            Some(25.0),
            Some(500.0),
            Some(99.99),
        ),
        (
            "extended_sensors/info_sharing/4",
            Some(50.0),
            Some(19.0),
            Some(1000.0),
            Some(99.0),
        ),
        (
            "extended_sensors/video_sharing/1",
            Some(10.0),
            Some(700.0),
            Some(200.0),
            Some(99.99),
        ),
        (
            "extended_sensors/video_sharing/2",
            Some(10.0),
            Some(90.0),
            Some(400.0),
            Some(99.99),
        ),
        (
            "remote_driving/info_sharing",
            Some(5.0),
            Some(25.0),
            None,
            Some(99.999),
        ),
    ];
    let mut f = Vec::new();
    let profiles = netsim::profiles();
    check(profiles.len() == table.len(), &mut f, || {
        format!("{} profile rows", profiles.len())
    });
    let summary = |delay: f64, rate_mbps: f64| SimSummary {
        total_ms: Stat {
            mean: delay,
            p95: delay,
        },
        total_without_codec_ms: Stat {
            mean: delay,
            p95: delay,
        },
        required_rate_bps: rate_mbps * 1e6,
        ..SimSummary::default()
    };
    for (p, (id, delay, rate, range, rel)) in profiles.iter().zip(table) {
        let row = (
            p.id.as_str(),
            p.max_delay_ms,
            p.uplink_budget_mbps(),
            p.min_range_m,
            p.reliability_pct,
        );
        check(row == (id, delay, rate, range, rel), &mut f, || {
            format!("row {id} transcribed as {row:?}")
        });
        let d = delay.unwrap_or(1.0);
        let r = rate.unwrap_or(1.0);
        let at_limit = check_compliance(&summary(d, r), p).pass;
        let over_delay = delay.is_some() && check_compliance(&summary(d + 1.0, r), p).pass;
        let over_rate = rate.is_some() && check_compliance(&summary(d, r * 1.01), p).pass;
        check(at_limit && !over_delay && !over_rate, &mut f, || {
            format!("{id}: limits not enforced")
        });
    }
    let teleop = netsim::profile(netsim::TELEOPERATION_PROFILE).unwrap();
    let slow = check_compliance(&summary(120.0, 10.0), &teleop);
    let fast = check_compliance(&summary(7.0, 10.0), &teleop);
    check(!slow.pass, &mut f, || "120 ms summary passes".into());
    check(fast.pass, &mut f, || "7 ms summary fails".into());
    verdict(
        f,
        format!(
            "{} rows verbatim; {}: 120 ms {}, 7 ms {}",
            table.len(),
            teleop.name(),
            if slow.pass { "passes" } else { "fails" },
            if fast.pass { "passes" } else { "fails" }
        ),
    )
}

fn main() {
    let suite = Instant::now();
    let mut report = Report {
        passed: 0,
        failed: 0,
    };
    let work = tempfile::tempdir().expect("scratch directory");
    std::env::set_var(tdbench_core::pipeline::CACHE_ENV, work.path().join("cache"));

    let t = Instant::now();
    report.record(1, "AP oracle equivalence", t, criterion_1());
    let t = Instant::now();
    report.record(2, "AP hand cases", t, criterion_2());
    let t = Instant::now();
    report.record(3, "IoU oracle", t, criterion_3());
    let t = Instant::now();
    report.record(4, "codec round-trip bounds", t, criterion_4());

    let t = Instant::now();
    let spec = ExperimentSpec {
        out_dir: work.path().join("bundle"),
        ..ExperimentSpec::default()
    };
    let bundle = run_pipeline(&spec);
    println!(
        "---- acceptance experiment: {} frames x {} configs in {:.1} s",
        spec.corpus.n_frames,
        spec.codecs.len(),
        t.elapsed().as_secs_f64()
    );
    match &bundle {
        Ok(b) => {
            let t = Instant::now();
            report.record(5, "size orderings", t, criterion_5(b));
            let t = Instant::now();
            let frames = scenegen::load_corpus(
                &work
                    .path()
                    .join("cache")
                    .join(format!("corpus-{}", &spec.corpus.hash()[..16])),
            )
            .expect("cached corpus");
            report.record(6, "speed ordering", t, criterion_6(&frames));
            let t = Instant::now();
            report.record(7, "netsim analytic exactness", t, criterion_7());
            let t = Instant::now();
            report.record(8, "netsim trends", t, criterion_8(b));
            let t = Instant::now();
            report.record(9, "detection degradation trend", t, criterion_9(b));
        }
        Err(e) => {
            for (id, name) in [
                (5, "size orderings"),
                (6, "speed ordering"),
                (8, "netsim trends"),
                (9, "detection degradation trend"),
            ] {
                report.record(
                    id,
                    name,
                    Instant::now(),
                    Err(format!("pipeline failed: {e}")),
                );
            }
            let t = Instant::now();
            report.record(7, "netsim analytic exactness", t, criterion_7());
        }
    }
    let t = Instant::now();
    report.record(10, "determinism", t, criterion_10(work.path(), &spec));
    let t = Instant::now();
    report.record(11, "compliance logic", t, criterion_11());

    let secs = suite.elapsed().as_secs_f64();
    let within = secs < SUITE_RUNTIME_S;
    println!(
        "acceptance: {}/{} criteria passed in {secs:.1} s (budget {SUITE_RUNTIME_S} s{})",
        report.passed,
        report.passed + report.failed,
        if within { "" } else { ", exceeded" }
    );
    if report.failed > 0 || !within {
        std::process::exit(1);
    }
}
