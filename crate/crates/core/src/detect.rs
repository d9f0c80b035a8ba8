//! Geometric 3D detector: ground removal, Euclidean clustering, oriented box
//! fitting and size-gated classification.
//!
//! Boxes are fitted as the rectangle, over the cluster's bird's-eye convex
//! hull edge directions, whose sides lie closest to the points. A LiDAR only
//! sees the faces turned towards it, so each fitted footprint is then grown
//! to the class prior size on the side facing away from the sensor, and the
//! bottom face is placed on the ground plane that ground removal already
//! assumes.

use std::collections::HashMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pc::{Box3D, ClassLabel, Point3, PointCloud};
use crate::stats;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetectError {
    #[error("invalid detector parameters: {0}")]
    InvalidParams(String),
    #[error("inference timing needs at least one frame")]
    NoFrames,
    #[error("batch size must be at least 1")]
    ZeroBatch,
}

/// Closed ranges a fitted box must satisfy to be given a class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeGate {
    /// Longer footprint side, metres.
    pub length: (f64, f64),
    /// Top of the cluster above the ground plane, metres.
    pub height: (f64, f64),
    /// Footprint the box is completed to, `(length, width)`.
    pub prior: (f64, f64),
    /// Fitted extents shorter than this, `(length, width)`, are taken as
    /// partially seen and replaced by the prior.
    pub min_observed: (f64, f64),
}

impl SizeGate {
    fn admits(&self, length: f64, height: f64) -> bool {
        (self.length.0..=self.length.1).contains(&length)
            && (self.height.0..=self.height.1).contains(&height)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorParams {
    /// Height of the flat ground plane.
    pub ground_z: f64,
    /// Points below `ground_z + ground_z_tolerance` are ground.
    pub ground_z_tolerance: f64,
    pub cluster_radius: f64,
    pub min_cluster_points: usize,
    pub car: SizeGate,
    pub pedestrian: SizeGate,
    /// Cluster size at which the score saturates at 1.
    pub score_saturation: usize,
}

impl Default for DetectorParams {
    fn default() -> Self {
        DetectorParams {
            ground_z: 0.0,
            ground_z_tolerance: 0.2,
            cluster_radius: 0.7,
            min_cluster_points: 8,
            car: SizeGate {
                length: (1.3, 6.5),
                height: (1.0, 2.4),
                prior: (4.5, 1.85),
                min_observed: (3.3, 1.5),
            },
            pedestrian: SizeGate {
                length: (0.2, 1.2),
                height: (1.0, 2.2),
                prior: (0.6, 0.5),
                min_observed: (0.4, 0.3),
            },
            score_saturation: 100,
        }
    }
}

impl DetectorParams {
    pub fn validate(&self) -> Result<(), DetectError> {
        let bad = |m: &str| Err(DetectError::InvalidParams(m.to_string()));
        if !(self.cluster_radius > 0.0 && self.cluster_radius.is_finite()) {
            return bad("cluster_radius must be positive");
        }
        if self.min_cluster_points < 1 {
            return bad("min_cluster_points must be at least 1");
        }
        if self.score_saturation < 1 {
            return bad("score_saturation must be at least 1");
        }
        if !self.ground_z.is_finite() || !self.ground_z_tolerance.is_finite() {
            return bad("ground plane must be finite");
        }
        for gate in [&self.car, &self.pedestrian] {
            let ranges = [gate.length, gate.height];
            if ranges
                .iter()
                .any(|r| r.0.is_nan() || r.1.is_nan() || r.0 > r.1)
                || !(gate.prior.0 > 0.0 && gate.prior.1 > 0.0)
            {
                return bad("size gates need ordered ranges and positive priors");
            }
        }
        if self.car.length.0 <= self.pedestrian.length.1
            && self.pedestrian.length.0 <= self.car.length.1
        {
            return bad("car and pedestrian length gates must be disjoint");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: Box3D,
    pub score: f64,
    pub class: ClassLabel,
}

/// One line of the detections JSON-lines file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub frame_id: u64,
    pub class: ClassLabel,
    pub score: f64,
    #[serde(rename = "box")]
    pub bbox: [f64; 7],
}

impl DetectionRecord {
    pub fn new(frame_id: u64, det: &Detection) -> Self {
        let b = &det.bbox;
        DetectionRecord {
            frame_id,
            class: det.class,
            score: det.score,
            bbox: [
                b.center[0],
                b.center[1],
                b.center[2],
                b.dims[0],
                b.dims[1],
                b.dims[2],
                b.yaw,
            ],
        }
    }

    pub fn detection(&self) -> Option<Detection> {
        let [cx, cy, cz, l, w, h, yaw] = self.bbox;
        let bbox = Box3D::new([cx, cy, cz], [l, w, h], yaw, self.class).ok()?;
        Some(Detection {
            bbox,
            score: self.score,
            class: self.class,
        })
    }
}

/// Serializes detections as JSON lines, one object per detection.
pub fn to_json_lines(frame_id: u64, dets: &[Detection]) -> String {
    let mut out = String::new();
    for d in dets {
        out.push_str(
            &serde_json::to_string(&DetectionRecord::new(frame_id, d))
                .expect("plain data serializes"),
        );
        out.push('\n');
    }
    out
}

/// Runs the detector with default scratch state.
pub fn detect(cloud: &PointCloud, params: &DetectorParams) -> Vec<Detection> {
    Detector::new(*params).run(cloud)
}

/// Detector with reusable scratch buffers, so a batch of frames pays the
/// allocation cost once.
pub struct Detector {
    params: DetectorParams,
    kept: Vec<u32>,
    cells: HashMap<[i64; 3], u32>,
    runs: Vec<(u32, u32)>,
    order: Vec<(u32, u32)>,
    parent: Vec<u32>,
}

impl Detector {
    pub fn new(params: DetectorParams) -> Self {
        Detector {
            params,
            kept: Vec::new(),
            cells: HashMap::new(),
            runs: Vec::new(),
            order: Vec::new(),
            parent: Vec::new(),
        }
    }

    pub fn params(&self) -> &DetectorParams {
        &self.params
    }

    pub fn run(&mut self, cloud: &PointCloud) -> Vec<Detection> {
        let clusters = self.cluster(cloud);
        let mut dets: Vec<Detection> = clusters
            .iter()
            .filter(|c| c.len() >= self.params.min_cluster_points)
            .filter_map(|c| fit_cluster(cloud, c, &self.params))
            .collect();
        // Stable: equal scores keep cluster order.
        dets.sort_by(|a, b| b.score.total_cmp(&a.score));
        dets
    }

    /// Connected components of non-ground points under the `cluster_radius`
    /// neighbourhood, each as ascending point indices, ordered by first index.
    fn cluster(&mut self, cloud: &PointCloud) -> Vec<Vec<u32>> {
        let p = &self.params;
        let z_cut = p.ground_z + p.ground_z_tolerance;
        self.kept.clear();
        self.kept.extend(
            cloud
                .points
                .iter()
                .enumerate()
                .filter(|(_, q)| q.z >= z_cut && q.is_finite())
                .map(|(i, _)| i as u32),
        );
        let r = p.cluster_radius;
        let r2 = r * r;
        let cell_of = |q: &Point3| {
            [
                (q.x / r).floor() as i64,
                (q.y / r).floor() as i64,
                (q.z / r).floor() as i64,
            ]
        };

        // Bucket kept points by cell: ids in first-seen order, then one
        // contiguous run of `order` per id.
        self.order.clear();
        self.cells.clear();
        for &i in &self.kept {
            let next = self.cells.len() as u32;
            let id = *self
                .cells
                .entry(cell_of(&cloud.points[i as usize]))
                .or_insert(next);
            self.order.push((id, i));
        }
        self.order.sort_unstable();
        self.runs.clear();
        self.runs.resize(self.cells.len(), (0, 0));
        let mut start = 0;
        while start < self.order.len() {
            let id = self.order[start].0;
            let mut end = start;
            while end < self.order.len() && self.order[end].0 == id {
                end += 1;
            }
            self.runs[id as usize] = (start as u32, end as u32);
            start = end;
        }

        let n = cloud.len();
        self.parent.clear();
        self.parent.extend(0..n as u32);
        for &i in &self.kept {
            let pi = &cloud.points[i as usize];
            let c = cell_of(pi);
            for dx in -1..=1 {
                for dy in -1..=1 {
                    for dz in -1..=1 {
                        let Some(&id) = self.cells.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) else {
                            continue;
                        };
                        let (s, e) = self.runs[id as usize];
                        for &(_, j) in &self.order[s as usize..e as usize] {
                            if j > i && pi.dist2(&cloud.points[j as usize]) <= r2 {
                                union(&mut self.parent, i, j);
                            }
                        }
                    }
                }
            }
        }

        let mut slot: HashMap<u32, usize> = HashMap::new();
        let mut clusters: Vec<Vec<u32>> = Vec::new();
        for &i in &self.kept {
            let root = find(&mut self.parent, i);
            let k = *slot.entry(root).or_insert_with(|| {
                clusters.push(Vec::new());
                clusters.len() - 1
            });
            clusters[k].push(i);
        }
        clusters
    }
}

fn find(parent: &mut [u32], mut i: u32) -> u32 {
    while parent[i as usize] != i {
        let up = parent[parent[i as usize] as usize];
        parent[i as usize] = up;
        i = up;
    }
    i
}

/// Links two components under the smaller root index.
fn union(parent: &mut [u32], a: u32, b: u32) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        parent[hi as usize] = lo;
    }
}

/// Convex hull, counter-clockwise, collinear points dropped.
pub fn convex_hull(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| {
        (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
    };
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let floor = hull.len();
        let iter: Box<dyn Iterator<Item = &[f64; 2]>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= floor + 2
                && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0
            {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

/// Oriented bounding rectangle of a planar point set, as
/// `(center, (extent along angle, extent across), angle)`.
///
/// Candidate orientations are the convex hull's edge directions. Among them
/// the winner minimizes the mean distance from each point to its nearest
/// rectangle side, then area. Area alone is ambiguous for the L-shaped
/// returns of a box seen at a corner: the rectangle on the hypotenuse of the
/// L has exactly the same area as the true one.
pub fn fit_rectangle(points: &[[f64; 2]]) -> Option<([f64; 2], (f64, f64), f64)> {
    let hull = convex_hull(points);
    let span = |angle: f64| {
        let (s, c) = angle.sin_cos();
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in &hull {
            let uv = [c * p[0] + s * p[1], -s * p[0] + c * p[1]];
            for k in 0..2 {
                lo[k] = lo[k].min(uv[k]);
                hi[k] = hi[k].max(uv[k]);
            }
        }
        (lo, hi)
    };
    let angles: Vec<f64> = match hull.len() {
        0 => return None,
        1 => vec![0.0],
        2 => vec![(hull[1][1] - hull[0][1]).atan2(hull[1][0] - hull[0][0])],
        n => (0..n)
            .map(|i| (hull[(i + 1) % n][1] - hull[i][1]).atan2(hull[(i + 1) % n][0] - hull[i][0]))
            .collect(),
    };
    let mut best: Option<(f64, f64, f64)> = None;
    for a in angles {
        let (lo, hi) = span(a);
        let (s, c) = a.sin_cos();
        let closeness = points
            .iter()
            .map(|p| {
                let (u, v) = (c * p[0] + s * p[1], -s * p[0] + c * p[1]);
                (u - lo[0])
                    .min(hi[0] - u)
                    .min(v - lo[1])
                    .min(hi[1] - v)
                    .max(0.0)
            })
            .sum::<f64>()
            / points.len() as f64;
        let area = (hi[0] - lo[0]) * (hi[1] - lo[1]);
        if best.is_none_or(|(bc, ba, _)| closeness < bc || (closeness == bc && area < ba)) {
            best = Some((closeness, area, a));
        }
    }
    let (_, _, angle) = best?;
    let (lo, hi) = span(angle);
    let (s, c) = angle.sin_cos();
    let (mu, mv) = (0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1]));
    Some((
        [c * mu - s * mv, s * mu + c * mv],
        (hi[0] - lo[0], hi[1] - lo[1]),
        angle,
    ))
}

/// Wraps an angle into `(-π/2, π/2]`, the range of a box's unsigned heading.
fn half_turn(a: f64) -> f64 {
    use std::f64::consts::{FRAC_PI_2, PI};
    let mut a = a % PI;
    if a <= -FRAC_PI_2 {
        a += PI;
    } else if a > FRAC_PI_2 {
        a -= PI;
    }
    a
}

const MIN_EXTENT: f64 = 0.05;

fn fit_cluster(cloud: &PointCloud, members: &[u32], params: &DetectorParams) -> Option<Detection> {
    let xy: Vec<[f64; 2]> = members
        .iter()
        .map(|&i| [cloud.points[i as usize].x, cloud.points[i as usize].y])
        .collect();
    let top = members
        .iter()
        .map(|&i| cloud.points[i as usize].z)
        .fold(f64::NEG_INFINITY, f64::max);
    let (center, (du, dv), angle) = fit_rectangle(&xy)?;
    let (length, width, yaw) = if du >= dv {
        (du, dv, angle)
    } else {
        (dv, du, angle + std::f64::consts::FRAC_PI_2)
    };
    let yaw = half_turn(yaw);
    let height = top - params.ground_z;
    let (class, gate) = if params.car.admits(length, height) {
        (ClassLabel::Car, &params.car)
    } else if params.pedestrian.admits(length, height) {
        (ClassLabel::Pedestrian, &params.pedestrian)
    } else {
        return None;
    };

    // Grow each partially seen side to the prior, away from the sensor.
    let origin = [cloud.sensor_origin.x, cloud.sensor_origin.y];
    let (s, c) = yaw.sin_cos();
    let axes = [[c, s], [-s, c]];
    let mut center = center;
    let mut dims = [length, width];
    let observed = [gate.min_observed.0, gate.min_observed.1];
    for (k, want) in [gate.prior.0, gate.prior.1].into_iter().enumerate() {
        if dims[k] < observed[k] && dims[k] < want {
            let away = (center[0] - origin[0]) * axes[k][0] + (center[1] - origin[1]) * axes[k][1];
            let dir = if away >= 0.0 { 1.0 } else { -1.0 };
            let grow = want - dims[k];
            center[0] += 0.5 * grow * dir * axes[k][0];
            center[1] += 0.5 * grow * dir * axes[k][1];
            dims[k] = want;
        }
    }
    let h = height.max(MIN_EXTENT);
    let bbox = Box3D::new(
        [center[0], center[1], params.ground_z + 0.5 * h],
        [dims[0].max(MIN_EXTENT), dims[1].max(MIN_EXTENT), h],
        yaw,
        class,
    )
    .ok()?;
    let score = (members.len() as f64 / params.score_saturation as f64).min(1.0);
    Some(Detection { bbox, score, class })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceTiming {
    pub batch_size: usize,
    /// Number of timed batches.
    pub samples: usize,
    /// Per-frame milliseconds: batch wall time divided by batch size.
    pub median_ms: f64,
    pub p95_ms: f64,
}

pub const WARMUP_BATCHES: usize = 3;

/// Times the detector over `frames` in batches of `batch_size`, sequentially
/// on the calling thread. Each batch builds one fresh [`Detector`] and runs it
/// over the batch; a short final batch is padded by cycling frames from the
/// start so every sample covers exactly `batch_size` frames.
pub fn measure_inference(
    frames: &[PointCloud],
    params: &DetectorParams,
    batch_size: usize,
) -> Result<InferenceTiming, DetectError> {
    params.validate()?;
    if frames.is_empty() {
        return Err(DetectError::NoFrames);
    }
    if batch_size == 0 {
        return Err(DetectError::ZeroBatch);
    }
    let batches = frames.len().div_ceil(batch_size);
    let run_batch = |b: usize| {
        let t = Instant::now();
        let mut det = Detector::new(*params);
        for k in 0..batch_size {
            std::hint::black_box(det.run(&frames[(b * batch_size + k) % frames.len()]));
        }
        t.elapsed().as_secs_f64() * 1e3 / batch_size as f64
    };
    for w in 0..WARMUP_BATCHES {
        run_batch(w % batches);
    }
    let per_frame: Vec<f64> = (0..batches).map(run_batch).collect();
    Ok(InferenceTiming {
        batch_size,
        samples: per_frame.len(),
        median_ms: stats::median(&per_frame).unwrap_or(0.0),
        p95_ms: stats::percentile(&per_frame, 95.0).unwrap_or(0.0),
    })
}
