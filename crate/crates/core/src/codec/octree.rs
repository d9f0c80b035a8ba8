//! Octree occupancy geometry codec.
//!
//! Points are quantized onto a voxel grid of `pqs · unit_scale` cells per
//! meter whose origin is the cloud's bounding-box minimum snapped down to a
//! multiple of the voxel size, so that re-encoding decoded voxel centers
//! reproduces the same grid and the same voxels. Points sharing a
//! voxel are merged. Occupied voxels are emitted breadth-first as one 8-bit
//! child mask per internal node, each bit range-coded under an adaptive
//! context of `(level parity, bit position, bits already set in this mask)`.
//! Decoded points are voxel centers in Morton order.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::container::{Bitstream, CodecId, HeaderReader};
use super::{check_finite, demorton3, morton3, radix_sort, CodecError};
use crate::pc::{Point3, PointCloud};
use crate::rangecoder::{BitModel, RangeDecoder, RangeEncoder};

/// pqs f64 | unit_scale f64 | scale f64 | point_count u64 | bbox_min 3×f64 | depth u8
pub(crate) const HEADER_LEN: usize = 8 * 3 + 8 + 24 + 1;

/// Input multiplier applied before the position scale. Frames are in meters
/// and the presets are expressed per centimeter, so the default is 100.
pub const DEFAULT_UNIT_SCALE: f64 = 100.0;

/// Largest supported octree depth: three 21-bit axes fill a 63-bit key.
pub const MAX_DEPTH: u32 = 21;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OctreeConfig {
    /// Position quantization scale: quantized units per input unit.
    pub pqs: f64,
    #[serde(default = "default_unit_scale")]
    pub unit_scale: f64,
}

fn default_unit_scale() -> f64 {
    DEFAULT_UNIT_SCALE
}

impl OctreeConfig {
    pub fn new(pqs: f64) -> Result<Self, CodecError> {
        Self::with_unit_scale(pqs, DEFAULT_UNIT_SCALE)
    }

    pub fn with_unit_scale(pqs: f64, unit_scale: f64) -> Result<Self, CodecError> {
        let cfg = OctreeConfig { pqs, unit_scale };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CodecError> {
        if !(self.pqs.is_finite() && self.pqs > 0.0) {
            return Err(CodecError::InvalidConfig(format!(
                "pqs must be positive, got {}",
                self.pqs
            )));
        }
        if !(self.unit_scale.is_finite() && self.unit_scale > 0.0) {
            return Err(CodecError::InvalidConfig(format!(
                "unit_scale must be positive, got {}",
                self.unit_scale
            )));
        }
        Ok(())
    }

    /// Voxels per meter.
    pub fn scale(&self) -> f64 {
        self.pqs * self.unit_scale
    }

    /// Voxel edge length in meters.
    pub fn voxel_size(&self) -> f64 {
        1.0 / self.scale()
    }

    pub fn preset(&self) -> Option<OctreePreset> {
        OctreePreset::ALL
            .into_iter()
            .find(|p| p.pqs() == self.pqs && self.unit_scale == DEFAULT_UNIT_SCALE)
    }

    pub fn label(&self) -> String {
        match self.preset() {
            Some(p) => p.to_string(),
            None if self.unit_scale == DEFAULT_UNIT_SCALE => format!("pqs{}", self.pqs),
            None => format!("pqs{}u{}", self.pqs, self.unit_scale),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OctreePreset {
    /// Strongest compression, coarsest geometry.
    P0,
    P1,
    P2,
    /// Weakest compression, finest geometry.
    P3,
}

impl OctreePreset {
    pub const ALL: [OctreePreset; 4] = [
        OctreePreset::P0,
        OctreePreset::P1,
        OctreePreset::P2,
        OctreePreset::P3,
    ];

    pub fn pqs(self) -> f64 {
        match self {
            OctreePreset::P0 => 0.0125,
            OctreePreset::P1 => 0.03125,
            OctreePreset::P2 => 0.125,
            OctreePreset::P3 => 0.375,
        }
    }

    pub fn config(self) -> OctreeConfig {
        OctreeConfig {
            pqs: self.pqs(),
            unit_scale: DEFAULT_UNIT_SCALE,
        }
    }
}

impl fmt::Display for OctreePreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let i = OctreePreset::ALL.iter().position(|p| p == self).unwrap();
        write!(f, "p{i}")
    }
}

impl FromStr for OctreePreset {
    type Err = CodecError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "p0" | "P0" => Ok(OctreePreset::P0),
            "p1" | "P1" => Ok(OctreePreset::P1),
            "p2" | "P2" => Ok(OctreePreset::P2),
            "p3" | "P3" => Ok(OctreePreset::P3),
            _ => Err(CodecError::InvalidConfig(format!(
                "unknown octree preset {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OctreeHeader {
    pub pqs: f64,
    pub unit_scale: f64,
    pub scale: f64,
    pub point_count: u64,
    pub bbox_min: [f64; 3],
    pub depth: u8,
}

impl OctreeHeader {
    fn to_bytes(self) -> Vec<u8> {
        let mut h = Vec::with_capacity(HEADER_LEN);
        for v in [self.pqs, self.unit_scale, self.scale] {
            h.extend_from_slice(&v.to_le_bytes());
        }
        h.extend_from_slice(&self.point_count.to_le_bytes());
        for v in self.bbox_min {
            h.extend_from_slice(&v.to_le_bytes());
        }
        h.push(self.depth);
        h
    }

    fn parse(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut r = HeaderReader::new(bytes);
        let h = OctreeHeader {
            pqs: r.f64(),
            unit_scale: r.f64(),
            scale: r.f64(),
            point_count: r.u64(),
            bbox_min: [r.f64(), r.f64(), r.f64()],
            depth: r.u8(),
        };
        if !(h.scale.is_finite() && h.scale > 0.0) || h.bbox_min.iter().any(|v| !v.is_finite()) {
            return Err(CodecError::Corrupt("invalid octree header values"));
        }
        if h.depth as u32 > MAX_DEPTH {
            return Err(CodecError::Corrupt("octree depth out of range"));
        }
        if h.depth == 0 && h.point_count > 1 {
            return Err(CodecError::Corrupt(
                "depth-0 octree holds at most one voxel",
            ));
        }
        Ok(h)
    }
}

/// Reads the header of an octree bitstream after validating the container.
pub fn octree_header(bs: &Bitstream) -> Result<OctreeHeader, CodecError> {
    let (header, _) = bs.open(CodecId::Octree)?;
    OctreeHeader::parse(header)
}

const CONTEXTS: usize = 2 * 8 * 8;

#[inline]
fn context(level: usize, bit: u32, ones: u32) -> usize {
    (((level & 1) * 8 + bit as usize) * 8) + ones as usize
}

fn encode_mask(enc: &mut RangeEncoder, models: &mut [BitModel; CONTEXTS], level: usize, mask: u8) {
    let mut ones = 0;
    for bit in 0..8 {
        let set = (mask >> bit) & 1 == 1;
        // A node always has at least one child: the last bit is implied.
        if bit == 7 && ones == 0 {
            debug_assert!(set);
            break;
        }
        enc.encode(&mut models[context(level, bit, ones)], set);
        ones += set as u32;
    }
}

fn decode_mask(dec: &mut RangeDecoder, models: &mut [BitModel; CONTEXTS], level: usize) -> u8 {
    let mut mask = 0u8;
    let mut ones = 0;
    for bit in 0..8 {
        let set = if bit == 7 && ones == 0 {
            true
        } else {
            dec.decode(&mut models[context(level, bit, ones)])
        };
        mask |= (set as u8) << bit;
        ones += set as u32;
    }
    mask
}

/// Quantizes every point to its voxel key and returns the sorted, deduplicated keys.
fn voxel_keys(
    cloud: &PointCloud,
    bbox_min: [f64; 3],
    scale: f64,
) -> Result<(Vec<u64>, u32), CodecError> {
    let mut max_u = 0u64;
    let mut quantized = Vec::with_capacity(cloud.len());
    for p in &cloud.points {
        let c = p.coords();
        // Offsets are non-negative, so the saturating cast is a floor.
        let u: [u64; 3] = std::array::from_fn(|i| ((c[i] - bbox_min[i]) * scale) as u64);
        max_u = max_u.max(u[0]).max(u[1]).max(u[2]);
        quantized.push(u);
    }
    let depth = 64 - max_u.leading_zeros();
    if depth > MAX_DEPTH {
        return Err(CodecError::Capacity { extent: max_u + 1 });
    }
    let mut keys: Vec<u64> = quantized.into_iter().map(morton3).collect();
    radix_sort(&mut keys, 3 * depth);
    keys.dedup();
    Ok((keys, depth))
}

pub fn octree_encode(cloud: &PointCloud, config: &OctreeConfig) -> Result<Bitstream, CodecError> {
    config.validate()?;
    check_finite(cloud)?;
    let scale = config.scale();
    let mut header = OctreeHeader {
        pqs: config.pqs,
        unit_scale: config.unit_scale,
        scale,
        point_count: 0,
        bbox_min: [0.0; 3],
        depth: 0,
    };
    let Some((lo, _)) = cloud.bounds() else {
        return Ok(Bitstream::seal(CodecId::Octree, &header.to_bytes(), &[]));
    };
    let bbox_min = lo.map(|v| (v * scale).floor() / scale);
    let (keys, depth) = voxel_keys(cloud, bbox_min, scale)?;
    header.point_count = keys.len() as u64;
    header.bbox_min = bbox_min;
    header.depth = depth as u8;
    if depth == 0 {
        return Ok(Bitstream::seal(CodecId::Octree, &header.to_bytes(), &[]));
    }

    // levels[l] holds the occupied node keys at depth l; levels[depth] = voxels.
    let mut levels: Vec<Vec<u64>> = Vec::with_capacity(depth as usize + 1);
    levels.push(keys);
    for _ in 0..depth {
        let below = levels.last().unwrap();
        let mut above: Vec<u64> = Vec::with_capacity(below.len() / 2 + 1);
        for &k in below {
            let parent = k >> 3;
            if above.last() != Some(&parent) {
                above.push(parent);
            }
        }
        levels.push(above);
    }
    levels.reverse();

    let mut enc = RangeEncoder::with_capacity(levels[depth as usize].len());
    let mut models = [BitModel::default(); CONTEXTS];
    for level in 0..depth as usize {
        let children = &levels[level + 1];
        let mut i = 0;
        while i < children.len() {
            let parent = children[i] >> 3;
            let mut mask = 0u8;
            while i < children.len() && children[i] >> 3 == parent {
                mask |= 1 << (children[i] & 7);
                i += 1;
            }
            encode_mask(&mut enc, &mut models, level, mask);
        }
    }
    let payload = enc.finish();
    Ok(Bitstream::seal(
        CodecId::Octree,
        &header.to_bytes(),
        &payload,
    ))
}

pub fn octree_decode(bs: &Bitstream) -> Result<PointCloud, CodecError> {
    let (header, payload) = bs.open(CodecId::Octree)?;
    let h = OctreeHeader::parse(header)?;
    if h.point_count == 0 {
        return Ok(PointCloud::default());
    }
    let keys = if h.depth == 0 {
        vec![0u64]
    } else {
        let mut dec = RangeDecoder::new(payload);
        let mut models = [BitModel::default(); CONTEXTS];
        let mut nodes = vec![0u64];
        for level in 0..h.depth as usize {
            let mut next = Vec::with_capacity(nodes.len() * 2);
            for &n in &nodes {
                let mask = decode_mask(&mut dec, &mut models, level);
                for bit in 0..8 {
                    if (mask >> bit) & 1 == 1 {
                        next.push((n << 3) | bit as u64);
                    }
                }
            }
            if next.len() as u64 > h.point_count || dec.overran() {
                return Err(CodecError::Corrupt(
                    "octree occupancy exceeds declared point count",
                ));
            }
            nodes = next;
        }
        if nodes.len() as u64 != h.point_count {
            return Err(CodecError::Corrupt(
                "octree leaf count disagrees with header",
            ));
        }
        nodes
    };
    let inv = 1.0 / h.scale;
    let points = keys
        .into_iter()
        .map(|k| {
            let u = demorton3(k);
            Point3::new(
                h.bbox_min[0] + (u[0] as f64 + 0.5) * inv,
                h.bbox_min[1] + (u[1] as f64 + 0.5) * inv,
                h.bbox_min[2] + (u[2] as f64 + 0.5) * inv,
            )
        })
        .collect();
    Ok(PointCloud::new(points))
}
