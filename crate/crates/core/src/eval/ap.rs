use serde::{Deserialize, Serialize};

use super::iou::iou3d;
use crate::detect::Detection;
use crate::pc::{Box3D, ClassLabel};

pub const RECALL_POINTS: usize = 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ApConfig {
    /// Strictly increasing, ending at 1.
    pub recall_thresholds: Vec<f64>,
    pub car_iou: f64,
    pub pedestrian_iou: f64,
}

impl Default for ApConfig {
    fn default() -> Self {
        ApConfig {
            recall_thresholds: (1..=RECALL_POINTS)
                .map(|i| i as f64 / RECALL_POINTS as f64)
                .collect(),
            car_iou: 0.7,
            pedestrian_iou: 0.5,
        }
    }
}

impl ApConfig {
    pub fn iou_threshold(&self, class: ClassLabel) -> f64 {
        match class {
            ClassLabel::Car => self.car_iou,
            ClassLabel::Pedestrian => self.pedestrian_iou,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let r = &self.recall_thresholds;
        if r.is_empty()
            || r.windows(2).any(|w| w[0] >= w[1])
            || r[0] <= 0.0
            || r[r.len() - 1] != 1.0
        {
            return Err(
                "recall thresholds must increase strictly within (0, 1] and end at 1".into(),
            );
        }
        for t in [self.car_iou, self.pedestrian_iou] {
            if !(t > 0.0 && t <= 1.0) {
                return Err(format!("IoU threshold {t} outside (0, 1]"));
            }
        }
        Ok(())
    }
}

/// Greedy matching outcome for one frame and class: each detection's score
/// and whether it was a true positive, in processing order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameMatches {
    pub ranked: Vec<(f64, bool)>,
    pub num_gt: usize,
}

/// Matches the `class` detections of one frame against its `class` ground
/// truth. Detections go in descending score, ties in input order; each takes
/// the unmatched box of highest IoU if that IoU reaches the class threshold.
pub fn match_frame(
    dets: &[Detection],
    gts: &[Box3D],
    class: ClassLabel,
    config: &ApConfig,
) -> FrameMatches {
    let threshold = config.iou_threshold(class);
    let gts: Vec<&Box3D> = gts.iter().filter(|g| g.class == class).collect();
    let mut dets: Vec<&Detection> = dets.iter().filter(|d| d.class == class).collect();
    dets.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut taken = vec![false; gts.len()];
    let ranked = dets
        .iter()
        .map(|d| {
            let mut best: Option<(usize, f64)> = None;
            for (j, g) in gts.iter().enumerate() {
                if taken[j] {
                    continue;
                }
                let iou = iou3d(&d.bbox, g);
                if iou >= threshold && best.is_none_or(|(_, b)| iou > b) {
                    best = Some((j, iou));
                }
            }
            if let Some((j, _)) = best {
                taken[j] = true;
            }
            (d.score, best.is_some())
        })
        .collect();
    FrameMatches {
        ranked,
        num_gt: gts.len(),
    }
}

/// Cumulative (recall, precision) after each ranked detection.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PrCurve {
    pub points: Vec<(f64, f64)>,
    pub tp: usize,
    pub fp: usize,
    pub num_gt: usize,
}

impl PrCurve {
    /// Pools frames: detections from all frames are ranked together by score,
    /// ties broken by frame order and then in-frame order.
    pub fn from_frames(frames: &[FrameMatches]) -> PrCurve {
        let mut all: Vec<(f64, bool)> = frames
            .iter()
            .flat_map(|f| f.ranked.iter().copied())
            .collect();
        all.sort_by(|a, b| b.0.total_cmp(&a.0));
        let num_gt = frames.iter().map(|f| f.num_gt).sum();
        let (mut tp, mut fp) = (0usize, 0usize);
        let mut points = Vec::with_capacity(all.len());
        for (_, hit) in all {
            if hit {
                tp += 1;
            } else {
                fp += 1;
            }
            let recall = if num_gt == 0 {
                0.0
            } else {
                tp as f64 / num_gt as f64
            };
            points.push((recall, tp as f64 / (tp + fp) as f64));
        }
        PrCurve {
            points,
            tp,
            fp,
            num_gt,
        }
    }
}

/// Single-frame curve for one class.
pub fn match_detections(
    dets: &[Detection],
    gts: &[Box3D],
    class: ClassLabel,
    config: &ApConfig,
) -> PrCurve {
    PrCurve::from_frames(&[match_frame(dets, gts, class, config)])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApResult {
    pub ap: f64,
    /// Interpolated precision at each recall threshold.
    pub interpolated: Vec<f64>,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

/// Interpolated precision at each threshold r is the best precision among
/// curve points with recall ≥ r (0 if none); AP is their mean.
pub fn average_precision(curve: &PrCurve, config: &ApConfig) -> ApResult {
    // Suffix maxima of precision, scanned once against ascending thresholds.
    let mut best_from = vec![0.0f64; curve.points.len() + 1];
    for i in (0..curve.points.len()).rev() {
        best_from[i] = best_from[i + 1].max(curve.points[i].1);
    }
    let mut i = 0;
    let interpolated: Vec<f64> = config
        .recall_thresholds
        .iter()
        .map(|&r| {
            while i < curve.points.len() && curve.points[i].0 < r {
                i += 1;
            }
            best_from[i]
        })
        .collect();
    let ap = interpolated.iter().sum::<f64>() / interpolated.len() as f64;
    ApResult {
        ap,
        interpolated,
        tp: curve.tp,
        fp: curve.fp,
        fn_: curve.num_gt - curve.tp,
    }
}

/// Mean of per-frame APs over frames that contain at least one box of `class`.
pub fn mean_frame_ap(frames: &[FrameMatches], config: &ApConfig) -> Option<f64> {
    let aps: Vec<f64> = frames
        .iter()
        .filter(|f| f.num_gt > 0)
        .map(|f| average_precision(&PrCurve::from_frames(std::slice::from_ref(f)), config).ap)
        .collect();
    crate::stats::mean(&aps)
}
