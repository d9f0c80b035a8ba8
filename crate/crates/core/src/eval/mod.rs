//! Detection and compression metrics.

mod ap;
mod bench;
mod distortion;
mod iou;

pub use ap::{
    average_precision, match_detections, match_frame, mean_frame_ap, ApConfig, ApResult,
    FrameMatches, PrCurve, RECALL_POINTS,
};
pub use bench::{benchmark_codec, benchmark_frame, BenchError, BenchOptions, CompressionReport};
pub use distortion::{d1_distortion, DistortionError, KdTree};
pub use iou::{bev_intersection_area, iou3d, polygon_area};
