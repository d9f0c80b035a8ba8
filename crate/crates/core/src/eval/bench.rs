use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::distortion::d1_distortion;
use crate::codec::{CodecConfig, CodecError};
use crate::pc::{LabeledFrame, PointCloud};
use crate::stats::median;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BenchError {
    #[error("at least 3 repetitions are required, got {0}")]
    TooFewRepetitions(usize),
    #[error("frame {frame}: {source}")]
    Codec { frame: u64, source: CodecError },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchOptions {
    pub repetitions: usize,
    /// Also compute the symmetric point-to-point distortion.
    pub distortion: bool,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            repetitions: 3,
            distortion: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionReport {
    pub frame_id: u64,
    pub codec: String,
    pub raw_bytes: u64,
    pub compressed_bytes: u64,
    pub ratio: f64,
    pub input_points: u64,
    pub output_points: u64,
    /// Medians over the repetitions, milliseconds.
    pub encode_ms: f64,
    pub decode_ms: f64,
    /// `None` when distortion was not requested or a cloud is empty.
    pub d1_rmse: Option<f64>,
}

/// Encodes and decodes one frame `repetitions` times, timing each pass
/// separately on a monotonic clock. Returns the report and the decoded cloud.
pub fn benchmark_frame(
    frame: &LabeledFrame,
    config: &CodecConfig,
    options: &BenchOptions,
) -> Result<(CompressionReport, PointCloud), BenchError> {
    if options.repetitions < 3 {
        return Err(BenchError::TooFewRepetitions(options.repetitions));
    }
    let wrap = |source| BenchError::Codec {
        frame: frame.frame_id,
        source,
    };
    let mut enc_ms = Vec::with_capacity(options.repetitions);
    let mut dec_ms = Vec::with_capacity(options.repetitions);
    let mut last = None;
    for _ in 0..options.repetitions {
        let t = Instant::now();
        let bs = config.encode(&frame.cloud).map_err(wrap)?;
        enc_ms.push(t.elapsed().as_secs_f64() * 1e3);
        let t = Instant::now();
        let cloud = config.decode(&bs).map_err(wrap)?;
        dec_ms.push(t.elapsed().as_secs_f64() * 1e3);
        last = Some((bs.len() as u64, cloud));
    }
    let (compressed_bytes, decoded) = last.expect("repetitions >= 3");
    let raw_bytes = frame.cloud.raw_bytes();
    let d1_rmse = if options.distortion {
        d1_distortion(&frame.cloud, &decoded).ok()
    } else {
        None
    };
    let report = CompressionReport {
        frame_id: frame.frame_id,
        codec: config.label(),
        raw_bytes,
        compressed_bytes,
        ratio: raw_bytes as f64 / compressed_bytes as f64,
        input_points: frame.cloud.len() as u64,
        output_points: decoded.len() as u64,
        encode_ms: median(&enc_ms).unwrap_or(0.0),
        decode_ms: median(&dec_ms).unwrap_or(0.0),
        d1_rmse,
    };
    Ok((report, decoded))
}

/// One report per frame, in corpus order.
pub fn benchmark_codec(
    frames: &[LabeledFrame],
    config: &CodecConfig,
    options: &BenchOptions,
) -> Result<Vec<CompressionReport>, BenchError> {
    frames
        .iter()
        .map(|f| benchmark_frame(f, config, options).map(|(r, _)| r))
        .collect()
}
