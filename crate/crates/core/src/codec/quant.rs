//! Per-axis bit-depth quantizer with a compression-level feature ladder.
//!
//! Each axis of the exact bounding box is split into `2^q - 1` steps and
//! every coordinate is rounded to the nearest step, which bounds the error by
//! half a step. No points are merged. The level selects the lossless stage:
//!
//! * `c = 0`: fixed-width `3q`-bit records in input order.
//! * `c = 5`: sort by Morton code, delta-code the codes, LEB128 varints.
//! * `c = 10`: the `c = 5` bytes, adaptively range-coded with a bit-tree
//!   model keyed on the byte's position inside its varint.
//!
//! A higher level never produces a larger stream: each stage falls back to
//! the previous one when it does not pay for itself, and the chosen stage is
//! recorded in the header's mode byte.

use serde::{Deserialize, Serialize};

use super::container::{Bitstream, CodecId, HeaderReader};
use super::{
    check_finite, demorton3, morton3, packed_len, radix_sort, BitReader, BitWriter, CodecError,
};
use crate::pc::{Point3, PointCloud};
use crate::rangecoder::{BitModel, RangeDecoder, RangeEncoder};

/// q_bits u8 | level u8 | mode u8 | point_count u64 | bbox_min 3×f64 | bbox_max 3×f64
pub(crate) const HEADER_LEN: usize = 3 + 8 + 48;

pub const LEVELS: [u8; 3] = [0, 5, 10];
pub const MIN_Q_BITS: u8 = 8;
pub const MAX_Q_BITS: u8 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QuantConfig {
    pub q_bits: u8,
    pub level: u8,
}

impl QuantConfig {
    pub fn new(q_bits: u8, level: u8) -> Result<Self, CodecError> {
        let cfg = QuantConfig { q_bits, level };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CodecError> {
        if !(MIN_Q_BITS..=MAX_Q_BITS).contains(&self.q_bits) {
            return Err(CodecError::InvalidConfig(format!(
                "q_bits must be in [{MIN_Q_BITS}, {MAX_Q_BITS}], got {}",
                self.q_bits
            )));
        }
        if !LEVELS.contains(&self.level) {
            return Err(CodecError::InvalidConfig(format!(
                "level must be one of 0, 5, 10, got {}",
                self.level
            )));
        }
        Ok(())
    }

    /// The `q · 100 + c` identifier, e.g. `905`.
    pub fn id(&self) -> u32 {
        self.q_bits as u32 * 100 + self.level as u32
    }

    pub fn label(&self) -> String {
        self.id().to_string()
    }

    /// q ∈ {8, 9, 10, 11} × c ∈ {0, 5, 10}, ordered by q then c.
    pub fn grid() -> Vec<QuantConfig> {
        (8..=11)
            .flat_map(|q| {
                LEVELS.map(|c| QuantConfig {
                    q_bits: q,
                    level: c,
                })
            })
            .collect()
    }
}

/// How the payload is laid out; decided by the encoder within its level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum QuantMode {
    PackedInputOrder = 0,
    PackedMorton = 1,
    DeltaVarint = 2,
    RangeCodedVarint = 3,
    RangeCodedPacked = 4,
}

impl QuantMode {
    fn from_byte(b: u8) -> Result<Self, CodecError> {
        Ok(match b {
            0 => QuantMode::PackedInputOrder,
            1 => QuantMode::PackedMorton,
            2 => QuantMode::DeltaVarint,
            3 => QuantMode::RangeCodedVarint,
            4 => QuantMode::RangeCodedPacked,
            _ => return Err(CodecError::Corrupt("unknown quantizer payload mode")),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantHeader {
    pub q_bits: u8,
    pub level: u8,
    pub mode: QuantMode,
    pub point_count: u64,
    pub bbox_min: [f64; 3],
    pub bbox_max: [f64; 3],
}

impl QuantHeader {
    fn to_bytes(self) -> Vec<u8> {
        let mut h = Vec::with_capacity(HEADER_LEN);
        h.extend_from_slice(&[self.q_bits, self.level, self.mode as u8]);
        h.extend_from_slice(&self.point_count.to_le_bytes());
        for v in self.bbox_min.into_iter().chain(self.bbox_max) {
            h.extend_from_slice(&v.to_le_bytes());
        }
        h
    }

    fn parse(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut r = HeaderReader::new(bytes);
        let q_bits = r.u8();
        let level = r.u8();
        let mode = QuantMode::from_byte(r.u8())?;
        QuantConfig { q_bits, level }.validate().map_err(|_| {
            CodecError::Corrupt("quantizer header carries an invalid configuration")
        })?;
        let point_count = r.u64();
        let bbox_min = [r.f64(), r.f64(), r.f64()];
        let bbox_max = [r.f64(), r.f64(), r.f64()];
        if bbox_min.iter().chain(&bbox_max).any(|v| !v.is_finite())
            || (0..3).any(|i| bbox_max[i] < bbox_min[i])
        {
            return Err(CodecError::Corrupt("invalid quantizer bounding box"));
        }
        if point_count > u32::MAX as u64 {
            return Err(CodecError::Corrupt("quantizer point count out of range"));
        }
        Ok(QuantHeader {
            q_bits,
            level,
            mode,
            point_count,
            bbox_min,
            bbox_max,
        })
    }

    fn steps(&self) -> [f64; 3] {
        let bins = ((1u64 << self.q_bits) - 1) as f64;
        std::array::from_fn(|i| (self.bbox_max[i] - self.bbox_min[i]) / bins)
    }
}

pub fn quant_header(bs: &Bitstream) -> Result<QuantHeader, CodecError> {
    let (header, _) = bs.open(CodecId::Quant)?;
    QuantHeader::parse(header)
}

/// Per-axis worst-case reconstruction error of `config` on `cloud`: half an LSB.
pub fn error_bound(cloud: &PointCloud, config: &QuantConfig) -> [f64; 3] {
    let bins = ((1u64 << config.q_bits) - 1) as f64;
    match cloud.bounds() {
        Some((lo, hi)) => std::array::from_fn(|i| (hi[i] - lo[i]) / bins / 2.0),
        None => [0.0; 3],
    }
}

fn write_varint(out: &mut Vec<u8>, mut v: u64) {
    while v >= 0x80 {
        out.push((v as u8) | 0x80);
        v >>= 7;
    }
    out.push(v as u8);
}

fn read_varint(bytes: &[u8], pos: &mut usize) -> Option<u64> {
    let mut v = 0u64;
    let mut shift = 0;
    loop {
        let b = *bytes.get(*pos)?;
        *pos += 1;
        if shift > 63 {
            return None;
        }
        v |= ((b & 0x7f) as u64) << shift;
        if b & 0x80 == 0 {
            return Some(v);
        }
        shift += 7;
    }
}

const VARINT_POSITIONS: usize = 4;

fn range_code_varints(bytes: &[u8]) -> Vec<u8> {
    let mut models = vec![[BitModel::default(); 256]; VARINT_POSITIONS];
    let mut enc = RangeEncoder::with_capacity(bytes.len() / 2);
    let mut pos = 0;
    for &b in bytes {
        enc.encode_tree(&mut models[pos.min(VARINT_POSITIONS - 1)], 8, b as u32);
        pos = if b & 0x80 != 0 { pos + 1 } else { 0 };
    }
    enc.finish()
}

fn range_decode_varints(payload: &[u8], count: u64) -> Result<Vec<u8>, CodecError> {
    let mut models = vec![[BitModel::default(); 256]; VARINT_POSITIONS];
    let mut dec = RangeDecoder::new(payload);
    let mut out = Vec::with_capacity(count as usize * 3);
    let mut pos = 0;
    let mut done = 0u64;
    while done < count {
        let b = dec.decode_tree(&mut models[pos.min(VARINT_POSITIONS - 1)], 8) as u8;
        out.push(b);
        if b & 0x80 != 0 {
            pos += 1;
            if pos > 10 {
                return Err(CodecError::Corrupt("varint longer than 10 bytes"));
            }
        } else {
            pos = 0;
            done += 1;
        }
        if dec.overran() {
            return Err(CodecError::Corrupt("range-coded payload exhausted"));
        }
    }
    Ok(out)
}

fn range_code_bytes(bytes: &[u8]) -> Vec<u8> {
    let mut models = [BitModel::default(); 256];
    let mut enc = RangeEncoder::with_capacity(bytes.len() / 2);
    for &b in bytes {
        enc.encode_tree(&mut models, 8, b as u32);
    }
    enc.finish()
}

fn range_decode_bytes(payload: &[u8], len: usize) -> Result<Vec<u8>, CodecError> {
    let mut models = [BitModel::default(); 256];
    let mut dec = RangeDecoder::new(payload);
    let out: Vec<u8> = (0..len)
        .map(|_| dec.decode_tree(&mut models, 8) as u8)
        .collect();
    if dec.overran() {
        return Err(CodecError::Corrupt("range-coded payload exhausted"));
    }
    Ok(out)
}

fn pack(codes: impl Iterator<Item = [u64; 3]>, n: usize, q: u32) -> Vec<u8> {
    let mut w = BitWriter::with_capacity(packed_len(n, 3 * q));
    for u in codes {
        w.put(u[0], q);
        w.put(u[1], q);
        w.put(u[2], q);
    }
    w.finish()
}

/// Delta + varint coding of sorted Morton codes, or packed Morton records
/// when the varints would be larger.
fn morton_stage<K: Copy + Into<u64>>(
    codes: &[K],
    n: usize,
    q: u32,
    packed_limit: usize,
) -> (QuantMode, Vec<u8>) {
    let mut varints = Vec::with_capacity(n * 3);
    let mut prev = 0u64;
    for &c in codes {
        let c = c.into();
        write_varint(&mut varints, c - prev);
        prev = c;
    }
    if varints.len() <= packed_limit {
        (QuantMode::DeltaVarint, varints)
    } else {
        (
            QuantMode::PackedMorton,
            pack(codes.iter().map(|&c| demorton3(c.into())), n, q),
        )
    }
}

pub fn quant_encode(cloud: &PointCloud, config: &QuantConfig) -> Result<Bitstream, CodecError> {
    config.validate()?;
    check_finite(cloud)?;
    let n = cloud.len();
    if n > u32::MAX as usize {
        return Err(CodecError::TooManyPoints(n));
    }
    let (bbox_min, bbox_max) = cloud.bounds().unwrap_or(([0.0; 3], [0.0; 3]));
    let mut header = QuantHeader {
        q_bits: config.q_bits,
        level: config.level,
        mode: QuantMode::PackedInputOrder,
        point_count: n as u64,
        bbox_min,
        bbox_max,
    };
    if n == 0 {
        return Ok(Bitstream::seal(CodecId::Quant, &header.to_bytes(), &[]));
    }

    let q = config.q_bits as u32;
    let max_code = (1u64 << q) - 1;
    let steps = header.steps();
    let inv: [f64; 3] = std::array::from_fn(|i| if steps[i] > 0.0 { 1.0 / steps[i] } else { 0.0 });
    let quantize = |p: &Point3| -> [u64; 3] {
        let c = p.coords();
        std::array::from_fn(|i| (((c[i] - bbox_min[i]) * inv[i] + 0.5) as u64).min(max_code))
    };

    let packed_input_len = packed_len(n, 3 * q);
    let payload = if config.level == 0 {
        pack(cloud.points.iter().map(quantize), n, q)
    } else {
        // Codes of up to 32 bits sort as u32, halving the memory traffic.
        let morton = |p: &Point3| morton3(quantize(p));
        let (mode, stage5) = if 3 * q <= 32 {
            let mut codes: Vec<u32> = cloud.points.iter().map(|p| morton(p) as u32).collect();
            radix_sort(&mut codes, 3 * q);
            morton_stage(&codes, n, q, packed_input_len)
        } else {
            let mut codes: Vec<u64> = cloud.points.iter().map(morton).collect();
            radix_sort(&mut codes, 3 * q);
            morton_stage(&codes, n, q, packed_input_len)
        };
        header.mode = mode;
        if config.level >= 10 {
            let coded = match mode {
                QuantMode::DeltaVarint => range_code_varints(&stage5),
                _ => range_code_bytes(&stage5),
            };
            if coded.len() < stage5.len() {
                header.mode = match mode {
                    QuantMode::DeltaVarint => QuantMode::RangeCodedVarint,
                    _ => QuantMode::RangeCodedPacked,
                };
                coded
            } else {
                stage5
            }
        } else {
            stage5
        }
    };
    Ok(Bitstream::seal(
        CodecId::Quant,
        &header.to_bytes(),
        &payload,
    ))
}

/// Reconstructs points straight from the payload representation, without
/// materialising an intermediate code buffer.
struct Dequantizer {
    origin: [f64; 3],
    steps: [f64; 3],
    points: Vec<Point3>,
}

impl Dequantizer {
    #[inline]
    fn push(&mut self, u: [u64; 3]) {
        self.points.push(Point3::new(
            self.origin[0] + u[0] as f64 * self.steps[0],
            self.origin[1] + u[1] as f64 * self.steps[1],
            self.origin[2] + u[2] as f64 * self.steps[2],
        ));
    }
}

fn unpack(bytes: &[u8], n: usize, q: u32, out: &mut Dequantizer) -> Result<(), CodecError> {
    if bytes.len() != packed_len(n, 3 * q) {
        return Err(CodecError::Corrupt(
            "packed payload length disagrees with point count",
        ));
    }
    let mut r = BitReader::new(bytes);
    for _ in 0..n {
        match (r.get(q), r.get(q), r.get(q)) {
            (Some(x), Some(y), Some(z)) => out.push([x, y, z]),
            _ => return Err(CodecError::Corrupt("packed payload truncated")),
        }
    }
    Ok(())
}

fn undelta(bytes: &[u8], n: usize, q: u32, out: &mut Dequantizer) -> Result<(), CodecError> {
    let limit = (1u64 << (3 * q)) - 1;
    let mut pos = 0;
    let mut code = 0u64;
    for _ in 0..n {
        let d =
            read_varint(bytes, &mut pos).ok_or(CodecError::Corrupt("varint stream truncated"))?;
        code = code
            .checked_add(d)
            .filter(|&c| c <= limit)
            .ok_or(CodecError::Corrupt("morton code out of range"))?;
        out.push(demorton3(code));
    }
    if pos != bytes.len() {
        return Err(CodecError::Corrupt("trailing bytes after varint stream"));
    }
    Ok(())
}

pub fn quant_decode(bs: &Bitstream) -> Result<PointCloud, CodecError> {
    let (header, payload) = bs.open(CodecId::Quant)?;
    let h = QuantHeader::parse(header)?;
    let n = h.point_count as usize;
    if n == 0 {
        return Ok(PointCloud::default());
    }
    let q = h.q_bits as u32;
    let mut out = Dequantizer {
        origin: h.bbox_min,
        steps: h.steps(),
        points: Vec::with_capacity(n),
    };
    match h.mode {
        QuantMode::PackedInputOrder | QuantMode::PackedMorton => unpack(payload, n, q, &mut out)?,
        QuantMode::DeltaVarint => undelta(payload, n, q, &mut out)?,
        QuantMode::RangeCodedVarint => undelta(
            &range_decode_varints(payload, h.point_count)?,
            n,
            q,
            &mut out,
        )?,
        QuantMode::RangeCodedPacked => unpack(
            &range_decode_bytes(payload, packed_len(n, 3 * q))?,
            n,
            q,
            &mut out,
        )?,
    }
    Ok(PointCloud::new(out.points))
}
