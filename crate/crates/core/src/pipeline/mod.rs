//! End-to-end experiment orchestration: corpus, codec sweep, detection,
//! AP, network simulation and the report bundle.
//!
//! A bundle directory holds the CSV tables listed in `docs/csv_schema.md`,
//! `summary.json` (deterministic values only), `measured.json` (wall-clock
//! values), the resolved `spec.json` and a `charts/` directory. While a run is
//! in progress, or after it failed, the directory also contains an
//! `INCOMPLETE` marker naming the failed stage.

mod charts;
mod spec;
pub mod tables;

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::CodecConfig;
use crate::detect::{measure_inference, Detection, Detector, InferenceTiming};
use rayon::prelude::*;

use crate::eval::{
    average_precision, benchmark_frame, d1_distortion, match_frame, mean_frame_ap, BenchOptions,
    CompressionReport, FrameMatches, PrCurve,
};
use crate::netsim::{self, check_compliance, simulate, ComplianceReport, SimSummary, StageTimes};
use crate::pc::{ClassLabel, LabeledFrame, PointCloud};
use crate::scenegen;
use crate::stats;

pub use charts::{render_charts, ChartError, CHART_FILES};
pub use spec::{CorpusSpec, ExperimentSpec};
use tables::{opt, Table};

pub const INCOMPLETE_MARKER: &str = "INCOMPLETE";
pub const SUMMARY_JSON: &str = "summary.json";
pub const MEASURED_JSON: &str = "measured.json";
pub const SPEC_JSON: &str = "spec.json";
pub const CHARTS_DIR: &str = "charts";
/// Overrides the corpus cache location (default: `<out_dir>/.cache`).
pub const CACHE_ENV: &str = "TDBENCH_CACHE_DIR";

/// Label used for detections on uncompressed clouds.
pub const RAW_LABEL: &str = "raw";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Generate,
    Codec,
    Detect,
    Inference,
    Simulate,
    Report,
    Charts,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Generate => "generate",
            Stage::Codec => "codec",
            Stage::Detect => "detect",
            Stage::Inference => "inference",
            Stage::Simulate => "simulate",
            Stage::Report => "report",
            Stage::Charts => "charts",
        })
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("stage {stage} failed for {config}: {message}")]
    Stage {
        stage: Stage,
        config: String,
        message: String,
    },
}

impl PipelineError {
    /// Process exit code: 2 for configuration errors, 3 for stage failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Stage { .. } => 3,
        }
    }

    fn stage(stage: Stage, config: impl Into<String>, err: impl fmt::Display) -> Self {
        PipelineError::Stage {
            stage,
            config: config.into(),
            message: err.to_string(),
        }
    }
}

/// AP for one class under one configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassAp {
    /// Mean over frames that contain at least one ground-truth box.
    pub ap: f64,
    /// AP of the curve pooled over all frames.
    pub pooled_ap: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodecSummary {
    pub codec: String,
    pub family: String,
    pub median_compressed_bytes: f64,
    pub mean_compressed_bytes: f64,
    pub median_ratio: f64,
    pub car: ClassAp,
    pub pedestrian: ClassAp,
    pub required_rate_bps: f64,
    /// Queue plus transmission delay with zero processing times.
    pub network_ms_mean: f64,
    pub network_ms_p95: f64,
    pub datarate_pass: bool,
}

/// Deterministic results; identical across reruns of one spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub config_hash: String,
    pub corpus_hash: String,
    pub n_frames: usize,
    pub raw_car: ClassAp,
    pub raw_pedestrian: ClassAp,
    pub codecs: Vec<CodecSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodecTimings {
    pub codec: String,
    pub median_encode_ms: f64,
    pub median_decode_ms: f64,
    pub median_codec_ms: f64,
    pub median_inference_ms: f64,
    pub sim: SimSummary,
    pub compliance: ComplianceReport,
}

/// Wall-clock results; vary from run to run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measured {
    pub inference: InferenceTiming,
    pub raw_inference_median_ms: f64,
    pub codecs: Vec<CodecTimings>,
}

#[derive(Debug, Clone)]
pub struct Bundle {
    pub dir: PathBuf,
    pub config_hash: String,
    pub summary: Summary,
    pub measured: Measured,
}

struct ConfigRun {
    config: CodecConfig,
    reports: Vec<CompressionReport>,
    inference_ms: Vec<f64>,
    car: Vec<FrameMatches>,
    pedestrian: Vec<FrameMatches>,
}

struct NetRun {
    network_only: SimSummary,
    measured: SimSummary,
    network_compliance: ComplianceReport,
    measured_compliance: ComplianceReport,
}

/// Directory that caches generated corpora.
pub fn cache_root(spec: &ExperimentSpec) -> PathBuf {
    std::env::var_os(CACHE_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| spec.out_dir.join(".cache"))
}

/// Loads the corpus for `corpus` from the cache, generating it on a miss.
/// Generation writes into a scratch directory that is renamed into place, so
/// concurrent runs never observe a half-written corpus.
pub fn prepare_corpus(
    corpus: &CorpusSpec,
    cache: &Path,
) -> Result<Vec<LabeledFrame>, PipelineError> {
    let hash = corpus.hash();
    let dir = cache.join(format!("corpus-{}", &hash[..16]));
    let fail = |e: &dyn fmt::Display| {
        PipelineError::stage(Stage::Generate, format!("corpus {}", &hash[..16]), e)
    };
    let cached = scenegen::read_manifest(&dir)
        .map(|m| m.len() == corpus.n_frames)
        .unwrap_or(false);
    if !cached {
        std::fs::create_dir_all(cache).map_err(|e| fail(&e))?;
        let scratch = tempfile::tempdir_in(cache).map_err(|e| fail(&e))?;
        scenegen::generate_corpus(&corpus.scene, corpus.n_frames, scratch.path())
            .map_err(|e| fail(&e))?;
        let scratch = scratch.keep();
        if std::fs::rename(&scratch, &dir).is_err() {
            // Another run won the race or a stale directory is in the way.
            let _ = std::fs::remove_dir_all(&dir);
            if std::fs::rename(&scratch, &dir).is_err() {
                let _ = std::fs::remove_dir_all(&scratch);
            }
        }
    }
    scenegen::load_corpus(&dir).map_err(|e| fail(&e))
}

fn class_ap(frames: &[FrameMatches], spec: &ExperimentSpec) -> ClassAp {
    let pooled = average_precision(&PrCurve::from_frames(frames), &spec.ap);
    ClassAp {
        ap: mean_frame_ap(frames, &spec.ap).unwrap_or(0.0),
        pooled_ap: pooled.ap,
        tp: pooled.tp,
        fp: pooled.fp,
        fn_: pooled.fn_,
    }
}

fn match_both(
    dets: &[Detection],
    frame: &LabeledFrame,
    spec: &ExperimentSpec,
) -> (FrameMatches, FrameMatches) {
    (
        match_frame(dets, &frame.gt_boxes, ClassLabel::Car, &spec.ap),
        match_frame(dets, &frame.gt_boxes, ClassLabel::Pedestrian, &spec.ap),
    )
}

/// Runs the detector `repetitions` times and reports the median wall time.
fn timed_detect(
    detector: &mut Detector,
    cloud: &PointCloud,
    repetitions: usize,
) -> (Vec<Detection>, f64) {
    let mut ms = Vec::with_capacity(repetitions);
    let mut dets = Vec::new();
    for _ in 0..repetitions.max(1) {
        let t = Instant::now();
        dets = detector.run(cloud);
        ms.push(t.elapsed().as_secs_f64() * 1e3);
    }
    (dets, stats::median(&ms).unwrap_or(0.0))
}

/// Timing runs sequentially on this thread; distortion is untimed and runs
/// afterwards in parallel over frames.
fn run_config(
    config: &CodecConfig,
    frames: &[LabeledFrame],
    spec: &ExperimentSpec,
) -> Result<ConfigRun, PipelineError> {
    let label = config.label();
    let timing_only = BenchOptions {
        distortion: false,
        ..spec.bench
    };
    let mut detector = Detector::new(spec.detector);
    let mut run = ConfigRun {
        config: *config,
        reports: Vec::with_capacity(frames.len()),
        inference_ms: Vec::with_capacity(frames.len()),
        car: Vec::with_capacity(frames.len()),
        pedestrian: Vec::with_capacity(frames.len()),
    };
    let mut decoded = Vec::with_capacity(frames.len());
    for frame in frames {
        let (report, cloud) = benchmark_frame(frame, config, &timing_only)
            .map_err(|e| PipelineError::stage(Stage::Codec, &label, e))?;
        let (dets, ms) = timed_detect(&mut detector, &cloud, spec.bench.repetitions);
        let (car, ped) = match_both(&dets, frame, spec);
        run.reports.push(report);
        run.inference_ms.push(ms);
        run.car.push(car);
        run.pedestrian.push(ped);
        decoded.push(cloud);
    }
    if spec.bench.distortion {
        let d1: Vec<Option<f64>> = frames
            .par_iter()
            .zip(&decoded)
            .map(|(f, d)| d1_distortion(&f.cloud, d).ok())
            .collect();
        for (r, d) in run.reports.iter_mut().zip(d1) {
            r.d1_rmse = d;
        }
    }
    Ok(run)
}

fn simulate_config(run: &ConfigRun, spec: &ExperimentSpec) -> Result<NetRun, PipelineError> {
    let label = run.config.label();
    let fail = |e: netsim::SimError| PipelineError::stage(Stage::Simulate, &label, e);
    let trace: Vec<u64> = run.reports.iter().map(|r| r.compressed_bytes).collect();
    // Vehicles replay the same corpus at different offsets.
    let sizes: Vec<Vec<u64>> = (0..spec.network.n_vehicles)
        .map(|v| {
            let mut t = trace.clone();
            t.rotate_left(v % trace.len());
            t
        })
        .collect();
    let times = StageTimes {
        encode_ms: run.reports.iter().map(|r| r.encode_ms).collect(),
        decode_ms: run.reports.iter().map(|r| r.decode_ms).collect(),
        inference_ms: run.inference_ms.clone(),
    };
    let network_only = simulate(&spec.network, &sizes, &StageTimes::default())
        .map_err(fail)?
        .summary;
    let measured = simulate(&spec.network, &sizes, &times)
        .map_err(fail)?
        .summary;
    let profile = netsim::profile(&spec.compliance_profile).ok_or_else(|| {
        PipelineError::Config(format!(
            "unknown requirement profile {:?}",
            spec.compliance_profile
        ))
    })?;
    Ok(NetRun {
        network_compliance: check_compliance(&network_only, &profile),
        measured_compliance: check_compliance(&measured, &profile),
        network_only,
        measured,
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    crate::io::write_atomic(path, bytes)
        .map_err(|e| PipelineError::stage(Stage::Report, path.display().to_string(), e))
}

fn json<T: Serialize>(v: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(v).expect("plain data serializes");
    bytes.push(b'\n');
    bytes
}

/// Runs every stage and writes the bundle into `spec.out_dir`.
pub fn run_pipeline(spec: &ExperimentSpec) -> Result<Bundle, PipelineError> {
    spec.validate()?;
    let dir = spec.out_dir.clone();
    std::fs::create_dir_all(&dir).map_err(|e| {
        PipelineError::Config(format!(
            "output directory {} is not writable: {e}",
            dir.display()
        ))
    })?;
    let marker = dir.join(INCOMPLETE_MARKER);
    write_file(&marker, b"running\n")?;
    match run_stages(spec, &dir) {
        Ok(bundle) => {
            std::fs::remove_file(&marker)
                .map_err(|e| PipelineError::stage(Stage::Report, INCOMPLETE_MARKER, e))?;
            Ok(bundle)
        }
        Err(e) => {
            let _ = crate::io::write_atomic(&marker, format!("failed: {e}\n").as_bytes());
            Err(e)
        }
    }
}

fn run_stages(spec: &ExperimentSpec, dir: &Path) -> Result<Bundle, PipelineError> {
    let config_hash = spec.config_hash();
    let frames = prepare_corpus(&spec.corpus, &cache_root(spec))?;

    let mut detector = Detector::new(spec.detector);
    let mut raw_car = Vec::with_capacity(frames.len());
    let mut raw_ped = Vec::with_capacity(frames.len());
    let mut raw_ms = Vec::with_capacity(frames.len());
    for frame in &frames {
        let (dets, ms) = timed_detect(&mut detector, &frame.cloud, spec.bench.repetitions);
        let (car, ped) = match_both(&dets, frame, spec);
        raw_car.push(car);
        raw_ped.push(ped);
        raw_ms.push(ms);
    }

    let runs = spec
        .codecs
        .iter()
        .map(|c| run_config(c, &frames, spec))
        .collect::<Result<Vec<_>, _>>()?;

    let clouds: Vec<PointCloud> = frames.iter().map(|f| f.cloud.clone()).collect();
    let inference = measure_inference(&clouds, &spec.detector, spec.inference_batch_size)
        .map_err(|e| PipelineError::stage(Stage::Inference, RAW_LABEL, e))?;

    let nets = runs
        .iter()
        .map(|r| simulate_config(r, spec))
        .collect::<Result<Vec<_>, _>>()?;

    let summary = Summary {
        schema_version: tables::SCHEMA_VERSION,
        config_hash: config_hash.clone(),
        corpus_hash: spec.corpus.hash(),
        n_frames: frames.len(),
        raw_car: class_ap(&raw_car, spec),
        raw_pedestrian: class_ap(&raw_ped, spec),
        codecs: runs
            .iter()
            .zip(&nets)
            .map(|(r, n)| {
                let sizes: Vec<f64> = r
                    .reports
                    .iter()
                    .map(|x| x.compressed_bytes as f64)
                    .collect();
                let ratios: Vec<f64> = r.reports.iter().map(|x| x.ratio).collect();
                CodecSummary {
                    codec: r.config.label(),
                    family: r.config.family().to_string(),
                    median_compressed_bytes: stats::median(&sizes).unwrap_or(0.0),
                    mean_compressed_bytes: stats::mean(&sizes).unwrap_or(0.0),
                    median_ratio: stats::median(&ratios).unwrap_or(0.0),
                    car: class_ap(&r.car, spec),
                    pedestrian: class_ap(&r.pedestrian, spec),
                    required_rate_bps: n.network_only.required_rate_bps,
                    network_ms_mean: n.network_only.total_ms.mean,
                    network_ms_p95: n.network_only.total_ms.p95,
                    datarate_pass: n.network_compliance.datarate.is_none_or(|c| c.pass),
                }
            })
            .collect(),
    };
    let measured = Measured {
        inference,
        raw_inference_median_ms: stats::median(&raw_ms).unwrap_or(0.0),
        codecs: runs
            .iter()
            .zip(&nets)
            .map(|(r, n)| {
                let enc: Vec<f64> = r.reports.iter().map(|x| x.encode_ms).collect();
                let dec: Vec<f64> = r.reports.iter().map(|x| x.decode_ms).collect();
                let both: Vec<f64> = r
                    .reports
                    .iter()
                    .map(|x| x.encode_ms + x.decode_ms)
                    .collect();
                CodecTimings {
                    codec: r.config.label(),
                    median_encode_ms: stats::median(&enc).unwrap_or(0.0),
                    median_decode_ms: stats::median(&dec).unwrap_or(0.0),
                    median_codec_ms: stats::median(&both).unwrap_or(0.0),
                    median_inference_ms: stats::median(&r.inference_ms).unwrap_or(0.0),
                    sim: n.measured.clone(),
                    compliance: n.measured_compliance.clone(),
                }
            })
            .collect(),
    };

    write_tables(dir, spec, &runs, &nets, &summary, &measured)?;
    write_file(&dir.join(SPEC_JSON), &json(spec))?;
    write_file(&dir.join(SUMMARY_JSON), &json(&summary))?;
    write_file(&dir.join(MEASURED_JSON), &json(&measured))?;
    render_charts(dir, &dir.join(CHARTS_DIR))
        .map_err(|e| PipelineError::stage(Stage::Charts, &config_hash[..16], e))?;
    Ok(Bundle {
        dir: dir.to_path_buf(),
        config_hash,
        summary,
        measured,
    })
}

fn write_tables(
    dir: &Path,
    spec: &ExperimentSpec,
    runs: &[ConfigRun],
    nets: &[NetRun],
    summary: &Summary,
    measured: &Measured,
) -> Result<(), PipelineError> {
    let mut compression = Table::new(&[
        "codec",
        "family",
        "frame_id",
        "raw_bytes",
        "compressed_bytes",
        "ratio",
        "input_points",
        "output_points",
        "d1_rmse",
        "encode_ms@measured",
        "decode_ms@measured",
        "inference_ms@measured",
    ]);
    for run in runs {
        for (r, ms) in run.reports.iter().zip(&run.inference_ms) {
            compression.push(vec![
                r.codec.clone(),
                run.config.family().into(),
                r.frame_id.to_string(),
                r.raw_bytes.to_string(),
                r.compressed_bytes.to_string(),
                r.ratio.to_string(),
                r.input_points.to_string(),
                r.output_points.to_string(),
                opt(r.d1_rmse),
                r.encode_ms.to_string(),
                r.decode_ms.to_string(),
                ms.to_string(),
            ]);
        }
    }

    let mut ap = Table::new(&[
        "codec",
        "car_ap",
        "car_ap_pooled",
        "car_tp",
        "car_fp",
        "car_fn",
        "pedestrian_ap",
        "pedestrian_ap_pooled",
        "pedestrian_tp",
        "pedestrian_fp",
        "pedestrian_fn",
    ]);
    // Raw-cloud AP lives in summary.json so every table has one row per config.
    for c in &summary.codecs {
        let mut row = vec![c.codec.clone()];
        for a in [c.car, c.pedestrian] {
            row.extend([
                a.ap.to_string(),
                a.pooled_ap.to_string(),
                a.tp.to_string(),
                a.fp.to_string(),
                a.fn_.to_string(),
            ]);
        }
        ap.push(row);
    }

    let mut network = Table::new(&[
        "codec",
        "n_vehicles",
        "share_rate_bps",
        "generated",
        "delivered",
        "dropped",
        "required_rate_bps",
        "queue_ms_mean",
        "tx_ms_mean",
        "network_ms_mean",
        "network_ms_p95",
        "delivered@measured",
        "dropped@measured",
        "encode_ms_mean@measured",
        "queue_ms_mean@measured",
        "decode_ms_mean@measured",
        "inference_ms_mean@measured",
        "total_ms_mean@measured",
        "total_ms_p95@measured",
        "total_without_codec_ms_mean@measured",
    ]);
    for (run, n) in runs.iter().zip(nets) {
        let (q, m) = (&n.network_only, &n.measured);
        network.push(vec![
            run.config.label(),
            spec.network.n_vehicles.to_string(),
            spec.network.share_rate_bps().to_string(),
            q.generated.to_string(),
            q.delivered.to_string(),
            q.dropped.to_string(),
            q.required_rate_bps.to_string(),
            q.queue_ms.mean.to_string(),
            q.tx_ms.mean.to_string(),
            q.total_ms.mean.to_string(),
            q.total_ms.p95.to_string(),
            m.delivered.to_string(),
            m.dropped.to_string(),
            m.encode_ms.mean.to_string(),
            m.queue_ms.mean.to_string(),
            m.decode_ms.mean.to_string(),
            m.inference_ms.mean.to_string(),
            m.total_ms.mean.to_string(),
            m.total_ms.p95.to_string(),
            m.total_without_codec_ms.mean.to_string(),
        ]);
    }

    let mut compliance = Table::new(&[
        "codec",
        "profile",
        "datarate_mbps",
        "datarate_limit_mbps",
        "datarate_margin_mbps",
        "datarate_pass",
        "network_delay_ms",
        "delay_limit_ms",
        "network_delay_margin_ms",
        "network_delay_pass",
        "reliability",
        "delay_ms@measured",
        "delay_margin_ms@measured",
        "delay_pass@measured",
        "delay_without_codec_ms@measured",
        "delay_without_codec_pass@measured",
        "pass@measured",
    ]);
    let cell = |c: Option<netsim::Check>, f: fn(&netsim::Check) -> String| {
        c.as_ref().map(f).unwrap_or_default()
    };
    for (run, n) in runs.iter().zip(nets) {
        let (q, m) = (&n.network_compliance, &n.measured_compliance);
        compliance.push(vec![
            run.config.label(),
            q.profile.clone(),
            cell(q.datarate, |c| c.value.to_string()),
            cell(q.datarate, |c| c.limit.to_string()),
            cell(q.datarate, |c| c.margin.to_string()),
            cell(q.datarate, |c| c.pass.to_string()),
            cell(q.delay, |c| c.value.to_string()),
            cell(q.delay, |c| c.limit.to_string()),
            cell(q.delay, |c| c.margin.to_string()),
            cell(q.delay, |c| c.pass.to_string()),
            q.reliability.clone().unwrap_or_default(),
            cell(m.delay, |c| c.value.to_string()),
            cell(m.delay, |c| c.margin.to_string()),
            cell(m.delay, |c| c.pass.to_string()),
            cell(m.delay_without_codec, |c| c.value.to_string()),
            cell(m.delay_without_codec, |c| c.pass.to_string()),
            m.pass.to_string(),
        ]);
    }

    let mut inference = Table::new(&[
        "batch_size",
        "frames",
        "samples",
        "median_ms@measured",
        "p95_ms@measured",
    ]);
    let t = &measured.inference;
    inference.push(vec![
        t.batch_size.to_string(),
        summary.n_frames.to_string(),
        t.samples.to_string(),
        t.median_ms.to_string(),
        t.p95_ms.to_string(),
    ]);

    for (name, table) in [
        (tables::COMPRESSION_CSV, &compression),
        (tables::AP_CSV, &ap),
        (tables::NETWORK_CSV, &network),
        (tables::COMPLIANCE_CSV, &compliance),
        (tables::INFERENCE_CSV, &inference),
    ] {
        table
            .write(&dir.join(name))
            .map_err(|e| PipelineError::stage(Stage::Report, name, e))?;
    }
    Ok(())
}
