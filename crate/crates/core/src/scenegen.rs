//! Deterministic synthetic LiDAR scenes.
//!
//! A spinning sensor with `lidar_channels` elevation rings and
//! `points_per_channel` azimuth steps sits `sensor_height` above a flat
//! square ground plane. Each ray returns its nearest hit among the ground and
//! the object boxes, displaced along the ray by Gaussian range noise
//! truncated at three sigma. Object surfaces are inset from their labeled
//! boxes by the same three sigma, so every object return lies inside its
//! ground-truth box.
//!
//! Randomness comes from ChaCha8 seeded through `SeedableRng::seed_from_u64`,
//! which is specified bit-for-bit and therefore reproducible across
//! platforms. Corpus frame `i` uses seed `seed ^ i`.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pc::{self, Box3D, ClassLabel, FrameError, LabeledFrame, Point3, PointCloud};

pub const CAR_LENGTH: (f64, f64) = (3.5, 5.5);
pub const CAR_WIDTH: (f64, f64) = (1.6, 2.1);
pub const CAR_HEIGHT: (f64, f64) = (1.4, 1.9);
pub const PEDESTRIAN_LENGTH: (f64, f64) = (0.4, 0.8);
pub const PEDESTRIAN_WIDTH: (f64, f64) = (0.35, 0.7);
pub const PEDESTRIAN_HEIGHT: (f64, f64) = (1.5, 1.9);

/// Minimum free space kept between object footprints.
pub const OBJECT_CLEARANCE: f64 = 1.0;
pub const PLACEMENT_RETRIES: usize = 100;
/// Returns beyond this range are discarded.
pub const MAX_RANGE: f64 = 200.0;
pub const MANIFEST_FILE: &str = "manifest.json";

const GROUND_INTENSITY: f32 = 0.1;
const CAR_INTENSITY: f32 = 0.6;
const PEDESTRIAN_INTENSITY: f32 = 0.4;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("invalid scene config: {0}")]
    InvalidConfig(String),
    #[error(
        "could not place {class} #{index} after {PLACEMENT_RETRIES} attempts (scene overcrowded)"
    )]
    Placement { class: ClassLabel, index: usize },
    #[error("frame {frame}: {source}")]
    Frame { frame: u64, source: Box<SceneError> },
    #[error(transparent)]
    Io(#[from] FrameError),
    #[error("manifest: {0}")]
    Manifest(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub seed: u64,
    pub n_cars: usize,
    pub n_pedestrians: usize,
    /// Half side of the square ground plane, meters.
    pub area_half_extent: f64,
    pub lidar_channels: usize,
    pub points_per_channel: usize,
    pub noise_sigma: f64,
    pub sensor_height: f64,
    pub min_elevation_deg: f64,
    pub max_elevation_deg: f64,
    /// Objects are placed in the horizontal range band `[object_min_range, object_max_range]`.
    pub object_min_range: f64,
    pub object_max_range: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            seed: 7,
            n_cars: 8,
            n_pedestrians: 10,
            area_half_extent: 100.0,
            lidar_channels: 64,
            points_per_channel: 1422,
            noise_sigma: 0.01,
            sensor_height: 1.8,
            min_elevation_deg: -25.0,
            max_elevation_deg: -1.1,
            object_min_range: 4.0,
            object_max_range: 30.0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |m: &str| Err(SceneError::InvalidConfig(m.to_string()));
        if !(self.area_half_extent.is_finite() && self.area_half_extent > 0.0) {
            return bad("area_half_extent must be > 0");
        }
        if self.lidar_channels == 0 || self.points_per_channel == 0 {
            return bad("lidar_channels and points_per_channel must be >= 1");
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return bad("noise_sigma must be >= 0");
        }
        if !(self.sensor_height.is_finite() && self.sensor_height > 0.0) {
            return bad("sensor_height must be > 0");
        }
        if !(self.min_elevation_deg < self.max_elevation_deg && self.max_elevation_deg < 0.0) {
            return bad("elevations must satisfy min < max < 0");
        }
        if !(0.0 <= self.object_min_range && self.object_min_range < self.object_max_range) {
            return bad("object range band must satisfy 0 <= min < max");
        }
        Ok(())
    }

    pub fn expected_points(&self) -> usize {
        self.lidar_channels * self.points_per_channel
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        SceneConfig {
            seed,
            ..self.clone()
        }
    }
}

/// Ray accounting for one ground-truth box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BoxVisibility {
    /// Rays whose nearest hit is this object.
    pub hits: usize,
    /// Rays that cross this object but hit another object first.
    pub blocked: usize,
}

impl BoxVisibility {
    pub fn occluded(&self) -> bool {
        self.blocked > 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub frame: LabeledFrame,
    /// Parallel to `frame.gt_boxes`.
    pub visibility: Vec<BoxVisibility>,
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Separating-axis test on two bird's-eye rectangles.
fn footprints_overlap(a: &[[f64; 2]; 4], b: &[[f64; 2]; 4]) -> bool {
    for poly in [a, b] {
        for i in 0..4 {
            let p = poly[i];
            let q = poly[(i + 1) % 4];
            let axis = [q[1] - p[1], p[0] - q[0]];
            let project = |r: &[[f64; 2]; 4]| {
                r.iter()
                    .map(|c| c[0] * axis[0] + c[1] * axis[1])
                    .fold((f64::MAX, f64::MIN), |(lo, hi), v| (lo.min(v), hi.max(v)))
            };
            let (alo, ahi) = project(a);
            let (blo, bhi) = project(b);
            if ahi < blo || bhi < alo {
                return false;
            }
        }
    }
    true
}

fn place_objects(cfg: &SceneConfig, rng: &mut ChaCha8Rng) -> Result<Vec<Box3D>, SceneError> {
    let mut boxes: Vec<Box3D> = Vec::with_capacity(cfg.n_cars + cfg.n_pedestrians);
    let mut padded: Vec<[[f64; 2]; 4]> = Vec::new();
    let plan = std::iter::repeat_n(ClassLabel::Car, cfg.n_cars).chain(std::iter::repeat_n(
        ClassLabel::Pedestrian,
        cfg.n_pedestrians,
    ));
    let (r2_lo, r2_hi) = (cfg.object_min_range.powi(2), cfg.object_max_range.powi(2));
    let mut per_class = [0usize; 2];
    for class in plan {
        let index = per_class[class.to_byte() as usize];
        per_class[class.to_byte() as usize] += 1;
        let (lr, wr, hr) = match class {
            ClassLabel::Car => (CAR_LENGTH, CAR_WIDTH, CAR_HEIGHT),
            ClassLabel::Pedestrian => (PEDESTRIAN_LENGTH, PEDESTRIAN_WIDTH, PEDESTRIAN_HEIGHT),
        };
        let mut placed = false;
        for _ in 0..PLACEMENT_RETRIES {
            let r = uniform(rng, (r2_lo, r2_hi)).sqrt();
            let bearing = uniform(rng, (-PI, PI));
            // (−π, π]: flip the measure-zero −π endpoint.
            let yaw = -uniform(rng, (-PI, PI));
            let dims = [uniform(rng, lr), uniform(rng, wr), uniform(rng, hr)];
            let center = [r * bearing.cos(), r * bearing.sin(), 0.5 * dims[2]];
            let candidate =
                Box3D::new(center, dims, yaw, class).expect("sampled dims are positive");
            let inside = candidate
                .bev_corners()
                .iter()
                .all(|c| c[0].abs() <= cfg.area_half_extent && c[1].abs() <= cfg.area_half_extent);
            if !inside {
                continue;
            }
            let grown = Box3D {
                dims: [
                    dims[0] + OBJECT_CLEARANCE,
                    dims[1] + OBJECT_CLEARANCE,
                    dims[2],
                ],
                ..candidate
            }
            .bev_corners();
            if padded.iter().any(|other| footprints_overlap(&grown, other)) {
                continue;
            }
            padded.push(grown);
            boxes.push(candidate);
            placed = true;
            break;
        }
        if !placed {
            return Err(SceneError::Placement { class, index });
        }
    }
    Ok(boxes)
}

/// The physical surface a box encloses, in precomputed local-frame form.
struct Target {
    center: [f64; 3],
    cos: f64,
    sin: f64,
    half: [f64; 3],
}

impl Target {
    fn new(b: &Box3D, inset: f64) -> Self {
        let (sin, cos) = b.yaw.sin_cos();
        Target {
            center: b.center,
            cos,
            sin,
            half: b.dims.map(|d| (0.5 * d - inset).max(0.5 * d * 0.5)),
        }
    }

    /// Entry distance of the ray `origin + t·dir` (t > 0), slab method.
    fn intersect(&self, origin: [f64; 3], dir: [f64; 3]) -> Option<f64> {
        let o = [
            origin[0] - self.center[0],
            origin[1] - self.center[1],
            origin[2] - self.center[2],
        ];
        let lo = [
            self.cos * o[0] + self.sin * o[1],
            -self.sin * o[0] + self.cos * o[1],
            o[2],
        ];
        let ld = [
            self.cos * dir[0] + self.sin * dir[1],
            -self.sin * dir[0] + self.cos * dir[1],
            dir[2],
        ];
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        for i in 0..3 {
            if ld[i].abs() < 1e-15 {
                if lo[i].abs() > self.half[i] {
                    return None;
                }
                continue;
            }
            let a = (-self.half[i] - lo[i]) / ld[i];
            let b = (self.half[i] - lo[i]) / ld[i];
            t0 = t0.max(a.min(b));
            t1 = t1.min(a.max(b));
        }
        (t0 <= t1 && t0 > 0.0).then_some(t0)
    }
}

pub fn generate_scene(config: &SceneConfig) -> Result<Scene, SceneError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let boxes = place_objects(config, &mut rng)?;
    let sigma = config.noise_sigma;
    let clip = 3.0 * sigma;
    let targets: Vec<Target> = boxes.iter().map(|b| Target::new(b, clip)).collect();
    let noise = Normal::new(0.0, sigma.max(f64::MIN_POSITIVE)).expect("finite sigma");
    let sample_noise = |rng: &mut ChaCha8Rng| -> f64 {
        if sigma == 0.0 {
            return 0.0;
        }
        loop {
            let v: f64 = noise.sample(rng);
            if v.abs() <= clip {
                return v;
            }
        }
    };

    let origin = [0.0, 0.0, config.sensor_height];
    let mut visibility = vec![BoxVisibility::default(); boxes.len()];
    let mut points = Vec::with_capacity(config.expected_points());
    let channels = config.lidar_channels;
    let mut crossed: Vec<usize> = Vec::with_capacity(boxes.len());
    for ch in 0..channels {
        let frac = if channels == 1 {
            1.0
        } else {
            ch as f64 / (channels - 1) as f64
        };
        let elev = (config.min_elevation_deg
            + frac * (config.max_elevation_deg - config.min_elevation_deg))
            .to_radians();
        let (se, ce) = elev.sin_cos();
        for step in 0..config.points_per_channel {
            let az = 2.0 * PI * step as f64 / config.points_per_channel as f64;
            let (sa, ca) = az.sin_cos();
            let dir = [ce * ca, ce * sa, se];
            let mut best: Option<(f64, usize)> = None;
            crossed.clear();
            for (i, t) in targets.iter().enumerate() {
                if let Some(d) = t.intersect(origin, dir) {
                    crossed.push(i);
                    if best.is_none_or(|(bd, _)| d < bd) {
                        best = Some((d, i));
                    }
                }
            }
            let ground_t = -origin[2] / dir[2];
            let (t, intensity) = match best {
                Some((d, i)) if d < ground_t => {
                    visibility[i].hits += 1;
                    for &j in &crossed {
                        if j != i {
                            visibility[j].blocked += 1;
                        }
                    }
                    let intensity = match boxes[i].class {
                        ClassLabel::Car => CAR_INTENSITY,
                        ClassLabel::Pedestrian => PEDESTRIAN_INTENSITY,
                    };
                    (d, intensity)
                }
                _ => {
                    for &j in &crossed {
                        visibility[j].blocked += 1;
                    }
                    (ground_t, GROUND_INTENSITY)
                }
            };
            let t = t + sample_noise(&mut rng);
            let p = [
                origin[0] + t * dir[0],
                origin[1] + t * dir[1],
                origin[2] + t * dir[2],
            ];
            let range = (p[0] * p[0] + p[1] * p[1] + (p[2] - origin[2]).powi(2)).sqrt();
            if p[0].abs() > config.area_half_extent
                || p[1].abs() > config.area_half_extent
                || range > MAX_RANGE
            {
                continue;
            }
            points.push(Point3::new(p[0], p[1], p[2]).with_intensity(intensity));
        }
    }
    let mut frame = LabeledFrame {
        cloud: PointCloud::new(points),
        gt_boxes: boxes,
        frame_id: 0,
    };
    pc::round_to_file_precision(&mut frame);
    Ok(Scene { frame, visibility })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// File name relative to the corpus directory.
    pub path: String,
    pub frame_id: u64,
    pub seed: u64,
    pub n_cars: usize,
    pub n_pedestrians: usize,
}

pub fn frame_seed(base: u64, frame_id: u64) -> u64 {
    base ^ frame_id
}

/// Writes `n_frames` frames plus `manifest.json` into `out_dir`.
pub fn generate_corpus(
    config: &SceneConfig,
    n_frames: usize,
    out_dir: &Path,
) -> Result<Vec<ManifestEntry>, SceneError> {
    config.validate()?;
    std::fs::create_dir_all(out_dir).map_err(FrameError::Io)?;
    let manifest = (0..n_frames as u64)
        .into_par_iter()
        .map(|frame_id| {
            let seed = frame_seed(config.seed, frame_id);
            let wrap = |e: SceneError| SceneError::Frame {
                frame: frame_id,
                source: Box::new(e),
            };
            let mut scene = generate_scene(&config.with_seed(seed)).map_err(wrap)?;
            scene.frame.frame_id = frame_id;
            let name = pc::frame_file_name(frame_id);
            pc::save_frame(&scene.frame, &out_dir.join(&name))
                .map_err(|e| wrap(SceneError::Io(e)))?;
            Ok(ManifestEntry {
                path: name,
                frame_id,
                seed,
                n_cars: config.n_cars,
                n_pedestrians: config.n_pedestrians,
            })
        })
        .collect::<Result<Vec<_>, SceneError>>()?;
    let json =
        serde_json::to_vec_pretty(&manifest).map_err(|e| SceneError::Manifest(e.to_string()))?;
    crate::io::write_atomic(&out_dir.join(MANIFEST_FILE), &json).map_err(FrameError::Io)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestEntry>, SceneError> {
    let bytes = std::fs::read(dir.join(MANIFEST_FILE)).map_err(FrameError::Io)?;
    serde_json::from_slice(&bytes).map_err(|e| SceneError::Manifest(e.to_string()))
}

/// Loads every frame listed in a corpus manifest, in manifest order.
pub fn load_corpus(dir: &Path) -> Result<Vec<LabeledFrame>, SceneError> {
    read_manifest(dir)?
        .into_par_iter()
        .map(|e| {
            let path: PathBuf = dir.join(&e.path);
            let mut f = pc::load_frame(&path)?;
            f.frame_id = e.frame_id;
            Ok(f)
        })
        .collect()
}
