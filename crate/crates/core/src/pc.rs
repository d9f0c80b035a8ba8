//! Geometric primitives shared by every stage: points, clouds, oriented boxes
//! and the labeled frame container together with its binary file format.
//!
//! Coordinates are meters. Intensity is unitless in `[0, 1]`; it travels
//! through frame I/O but neither codec looks at it.
//!
//! Frame file layout (all little-endian):
//!
//! ```text
//! "TDBF" | version u16 | point_count u64 | box_count u32
//! point_count × (x f32, y f32, z f32, intensity f32)
//! box_count   × (cx, cy, cz, l, w, h, yaw: f32; class u8)
//! ```

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const FRAME_MAGIC: &[u8; 4] = b"TDBF";
pub const FRAME_VERSION: u16 = 1;
const FRAME_HEADER_LEN: usize = 4 + 2 + 8 + 4;
const POINT_RECORD_LEN: usize = 16;
const BOX_RECORD_LEN: usize = 7 * 4 + 1;

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("bad magic {0:?}, expected \"TDBF\"")]
    BadMagic([u8; 4]),
    #[error("unsupported frame version {0}")]
    UnsupportedVersion(u16),
    #[error("frame header truncated: {0} bytes")]
    TruncatedHeader(usize),
    #[error("frame payload truncated: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: u64, found: u64 },
    #[error("{0} trailing bytes after the last box record")]
    TrailingBytes(usize),
    #[error("non-finite value in {what} record {index}")]
    NonFinite { what: &'static str, index: usize },
    #[error("box record {index}: {source}")]
    InvalidBox { index: usize, source: BoxError },
    #[error("unknown class label byte {0}")]
    UnknownClass(u8),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoxError {
    #[error("box dimensions must be strictly positive, got {0:?}")]
    NonPositiveDims([f64; 3]),
    #[error("box parameters must be finite")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    #[serde(default)]
    pub intensity: f32,
}

impl Point3 {
    pub const ORIGIN: Point3 = Point3 {
        x: 0.0,
        y: 0.0,
        z: 0.0,
        intensity: 0.0,
    };

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Point3 {
            x,
            y,
            z,
            intensity: 0.0,
        }
    }

    pub fn with_intensity(mut self, intensity: f32) -> Self {
        self.intensity = intensity;
        self
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn coords(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn dist2(&self, other: &Point3) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dz = self.z - other.z;
        dx * dx + dy * dy + dz * dz
    }
}

impl Default for Point3 {
    fn default() -> Self {
        Point3::ORIGIN
    }
}

/// An ordered collection of points. Order is part of the value: codecs are
/// deterministic given order, and the quantizing codec preserves it at its
/// lowest level.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<Point3>,
    #[serde(default)]
    pub sensor_origin: Point3,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Self {
        PointCloud {
            points,
            sensor_origin: Point3::ORIGIN,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index of the first point with a NaN or infinite coordinate.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.points.iter().position(|p| !p.is_finite())
    }

    /// Axis-aligned bounds as `(min, max)`; `None` for an empty cloud.
    pub fn bounds(&self) -> Option<([f64; 3], [f64; 3])> {
        let first = self.points.first()?.coords();
        let mut lo = first;
        let mut hi = first;
        for p in &self.points[1..] {
            for (i, c) in p.coords().into_iter().enumerate() {
                lo[i] = lo[i].min(c);
                hi[i] = hi[i].max(c);
            }
        }
        Some((lo, hi))
    }

    /// Size of this cloud in the raw frame-file point encoding.
    pub fn raw_bytes(&self) -> u64 {
        (self.points.len() * POINT_RECORD_LEN) as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ClassLabel {
    Car,
    Pedestrian,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 2] = [ClassLabel::Car, ClassLabel::Pedestrian];

    pub fn to_byte(self) -> u8 {
        match self {
            ClassLabel::Car => 0,
            ClassLabel::Pedestrian => 1,
        }
    }

    pub fn from_byte(b: u8) -> Result<Self, FrameError> {
        match b {
            0 => Ok(ClassLabel::Car),
            1 => Ok(ClassLabel::Pedestrian),
            other => Err(FrameError::UnknownClass(other)),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ClassLabel::Car => "Car",
            ClassLabel::Pedestrian => "Pedestrian",
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
#[error("unknown class label {0:?}")]
pub struct UnknownClassName(pub String);

impl FromStr for ClassLabel {
    type Err = UnknownClassName;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "car" => Ok(ClassLabel::Car),
            "pedestrian" => Ok(ClassLabel::Pedestrian),
            _ => Err(UnknownClassName(s.to_string())),
        }
    }
}

/// Wraps an angle into `(-π, π]`.
pub fn normalize_yaw(yaw: f64) -> f64 {
    let mut a = yaw % (2.0 * PI);
    if a <= -PI {
        a += 2.0 * PI;
    } else if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// Oriented 3D box: rotation by `yaw` about +z through `center`.
/// `dims` is `(length, width, height)`; length runs along the yaw heading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    pub center: [f64; 3],
    pub dims: [f64; 3],
    pub yaw: f64,
    pub class: ClassLabel,
}

impl Box3D {
    pub fn new(
        center: [f64; 3],
        dims: [f64; 3],
        yaw: f64,
        class: ClassLabel,
    ) -> Result<Self, BoxError> {
        if center.iter().chain(dims.iter()).any(|v| !v.is_finite()) || !yaw.is_finite() {
            return Err(BoxError::NonFinite);
        }
        if dims.iter().any(|&d| d <= 0.0) {
            return Err(BoxError::NonPositiveDims(dims));
        }
        Ok(Box3D {
            center,
            dims,
            yaw: normalize_yaw(yaw),
            class,
        })
    }

    pub fn volume(&self) -> f64 {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn z_range(&self) -> (f64, f64) {
        let h = 0.5 * self.dims[2];
        (self.center[2] - h, self.center[2] + h)
    }

    /// Coordinates of `(x, y, z)` in the box frame (origin at center, x along length).
    pub fn to_local(&self, x: f64, y: f64, z: f64) -> [f64; 3] {
        let (s, c) = self.yaw.sin_cos();
        let dx = x - self.center[0];
        let dy = y - self.center[1];
        [c * dx + s * dy, -s * dx + c * dy, z - self.center[2]]
    }

    /// Closed containment test: points on a face count as inside.
    pub fn contains(&self, p: &Point3) -> bool {
        let local = self.to_local(p.x, p.y, p.z);
        local
            .iter()
            .zip(self.dims.iter())
            .all(|(v, d)| v.abs() <= 0.5 * d)
    }

    /// Bird's-eye footprint corners, counter-clockwise.
    pub fn bev_corners(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.yaw.sin_cos();
        let hl = 0.5 * self.dims[0];
        let hw = 0.5 * self.dims[1];
        let local = [[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]];
        local.map(|[lx, ly]| {
            [
                self.center[0] + c * lx - s * ly,
                self.center[1] + s * lx + c * ly,
            ]
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabeledFrame {
    pub cloud: PointCloud,
    pub gt_boxes: Vec<Box3D>,
    pub frame_id: u64,
}

/// Number of points inside `bbox` (closed boundaries).
pub fn points_in_box(cloud: &PointCloud, bbox: &Box3D) -> usize {
    cloud.points.iter().filter(|p| bbox.contains(p)).count()
}

/// Serializes a frame into the binary frame format.
pub fn encode_frame(frame: &LabeledFrame) -> Vec<u8> {
    let n = frame.cloud.points.len();
    let m = frame.gt_boxes.len();
    let mut out = Vec::with_capacity(FRAME_HEADER_LEN + n * POINT_RECORD_LEN + m * BOX_RECORD_LEN);
    out.extend_from_slice(FRAME_MAGIC);
    out.extend_from_slice(&FRAME_VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&(m as u32).to_le_bytes());
    for p in &frame.cloud.points {
        for v in [p.x as f32, p.y as f32, p.z as f32, p.intensity] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for b in &frame.gt_boxes {
        let vals = [
            b.center[0],
            b.center[1],
            b.center[2],
            b.dims[0],
            b.dims[1],
            b.dims[2],
            b.yaw,
        ];
        for v in vals {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out.push(b.class.to_byte());
    }
    out
}

fn read_f32(bytes: &[u8], at: usize) -> f32 {
    f32::from_le_bytes(bytes[at..at + 4].try_into().expect("4-byte slice"))
}

/// Parses the binary frame format. `frame_id` is not stored in the file and
/// is supplied by the caller.
pub fn decode_frame(bytes: &[u8], frame_id: u64) -> Result<LabeledFrame, FrameError> {
    if bytes.len() < FRAME_HEADER_LEN {
        if bytes.len() >= 4 && &bytes[..4] != FRAME_MAGIC {
            return Err(FrameError::BadMagic(bytes[..4].try_into().unwrap()));
        }
        return Err(FrameError::TruncatedHeader(bytes.len()));
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if &magic != FRAME_MAGIC {
        return Err(FrameError::BadMagic(magic));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FRAME_VERSION {
        return Err(FrameError::UnsupportedVersion(version));
    }
    let n = u64::from_le_bytes(bytes[6..14].try_into().unwrap());
    let m = u32::from_le_bytes(bytes[14..18].try_into().unwrap()) as u64;
    let expected = n
        .checked_mul(POINT_RECORD_LEN as u64)
        .and_then(|p| p.checked_add(m * BOX_RECORD_LEN as u64))
        .unwrap_or(u64::MAX);
    let found = (bytes.len() - FRAME_HEADER_LEN) as u64;
    if found < expected {
        return Err(FrameError::TruncatedPayload { expected, found });
    }
    if found > expected {
        return Err(FrameError::TrailingBytes((found - expected) as usize));
    }
    let n = n as usize;
    let mut points = Vec::with_capacity(n);
    let mut at = FRAME_HEADER_LEN;
    for index in 0..n {
        let [x, y, z, i] = [0, 4, 8, 12].map(|o| read_f32(bytes, at + o));
        if !(x.is_finite() && y.is_finite() && z.is_finite() && i.is_finite()) {
            return Err(FrameError::NonFinite {
                what: "point",
                index,
            });
        }
        points.push(Point3 {
            x: x as f64,
            y: y as f64,
            z: z as f64,
            intensity: i,
        });
        at += POINT_RECORD_LEN;
    }
    let mut gt_boxes = Vec::with_capacity(m as usize);
    for index in 0..m as usize {
        let v: [f64; 7] = std::array::from_fn(|k| read_f32(bytes, at + 4 * k) as f64);
        if v.iter().any(|x| !x.is_finite()) {
            return Err(FrameError::NonFinite { what: "box", index });
        }
        let class = ClassLabel::from_byte(bytes[at + 28])?;
        // Stored yaw is already normalized; keep it verbatim so save∘load is byte-exact.
        let bbox = Box3D::new([v[0], v[1], v[2]], [v[3], v[4], v[5]], 0.0, class)
            .map_err(|source| FrameError::InvalidBox { index, source })?;
        gt_boxes.push(Box3D { yaw: v[6], ..bbox });
        at += BOX_RECORD_LEN;
    }
    Ok(LabeledFrame {
        cloud: PointCloud::new(points),
        gt_boxes,
        frame_id,
    })
}

/// Frame id convention for files on disk: the trailing decimal digits of the
/// file stem (`frame_000042.tdbf` → 42), or 0 when there are none.
pub fn frame_id_from_path(path: &Path) -> u64 {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("");
    let digits: String = stem
        .chars()
        .rev()
        .take_while(|c| c.is_ascii_digit())
        .collect();
    digits
        .chars()
        .rev()
        .collect::<String>()
        .parse()
        .unwrap_or(0)
}

pub fn frame_file_name(frame_id: u64) -> String {
    format!("frame_{frame_id:06}.tdbf")
}

pub fn load_frame(path: &Path) -> Result<LabeledFrame, FrameError> {
    let bytes = std::fs::read(path)?;
    decode_frame(&bytes, frame_id_from_path(path))
}

pub fn save_frame(frame: &LabeledFrame, path: &Path) -> Result<(), FrameError> {
    crate::io::write_atomic(path, &encode_frame(frame))?;
    Ok(())
}

/// Rounds every stored quantity to its f32 file representation, so that the
/// result survives a save/load cycle unchanged.
pub fn round_to_file_precision(frame: &mut LabeledFrame) {
    for p in &mut frame.cloud.points {
        p.x = p.x as f32 as f64;
        p.y = p.y as f32 as f64;
        p.z = p.z as f32 as f64;
    }
    for b in &mut frame.gt_boxes {
        for v in b.center.iter_mut().chain(b.dims.iter_mut()) {
            *v = *v as f32 as f64;
        }
        b.yaw = b.yaw as f32 as f64;
    }
}
