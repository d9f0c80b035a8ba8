//! Geometry codecs and their shared container.
//!
//! Two families share one self-describing container (see `docs/bitstream.md`):
//! an octree occupancy coder configured by a position quantization scale, and
//! a per-axis bit-depth quantizer configured by `(q, c)`.

mod container;
pub mod octree;
pub mod quant;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pc::PointCloud;

pub use container::{Bitstream, CodecId, CONTAINER_OVERHEAD};
pub use octree::{octree_decode, octree_encode, OctreeConfig, OctreePreset};
pub use quant::{quant_decode, quant_encode, QuantConfig, QuantMode};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CodecError {
    #[error("bad container magic")]
    BadMagic,
    #[error("unknown codec id {0}")]
    UnknownCodec(u8),
    #[error("wrong codec id: expected {expected}, found {found}")]
    WrongCodec { expected: u8, found: u8 },
    #[error("bitstream truncated: need {needed} bytes, have {available}")]
    Truncated { needed: u64, available: u64 },
    #[error(
        "length field disagrees with stream size: declared payload {declared}, actual {actual}"
    )]
    LengthMismatch { declared: u64, actual: u64 },
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("point {0} has a non-finite coordinate")]
    NonFinite(usize),
    #[error("quantized extent of {extent} voxels exceeds the 2^21 per-axis octree capacity")]
    Capacity { extent: u64 },
    #[error("too many points ({0}); the container limit is 2^32 - 1")]
    TooManyPoints(usize),
    #[error("invalid codec configuration: {0}")]
    InvalidConfig(String),
    #[error("corrupt payload: {0}")]
    Corrupt(&'static str),
}

/// Any codec configuration in the benchmark grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "codec", rename_all = "snake_case")]
pub enum CodecConfig {
    Octree(OctreeConfig),
    Quant(QuantConfig),
}

impl CodecConfig {
    pub fn encode(&self, cloud: &PointCloud) -> Result<Bitstream, CodecError> {
        match self {
            CodecConfig::Octree(c) => octree_encode(cloud, c),
            CodecConfig::Quant(c) => quant_encode(cloud, c),
        }
    }

    pub fn decode(&self, bs: &Bitstream) -> Result<PointCloud, CodecError> {
        match self {
            CodecConfig::Octree(_) => octree_decode(bs),
            CodecConfig::Quant(_) => quant_decode(bs),
        }
    }

    pub fn family(&self) -> &'static str {
        match self {
            CodecConfig::Octree(_) => "octree",
            CodecConfig::Quant(_) => "quant",
        }
    }

    /// Short label: `p0`..`p3` for octree presets (`pqs<value>` otherwise),
    /// `q·100 + c` for the quantizer.
    pub fn label(&self) -> String {
        match self {
            CodecConfig::Octree(c) => c.label(),
            CodecConfig::Quant(c) => c.label(),
        }
    }

    /// The 4 octree presets followed by the 12-point quantizer grid.
    pub fn standard_grid() -> Vec<CodecConfig> {
        let mut grid: Vec<CodecConfig> = OctreePreset::ALL
            .iter()
            .map(|p| CodecConfig::Octree(p.config()))
            .collect();
        grid.extend(QuantConfig::grid().into_iter().map(CodecConfig::Quant));
        grid
    }
}

impl fmt::Display for CodecConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for CodecConfig {
    type Err = CodecError;

    /// Accepts `p0`..`p3`, `pqs=<scale>`, or a `q·100+c` label such as `905`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if let Ok(preset) = s.parse::<OctreePreset>() {
            return Ok(CodecConfig::Octree(preset.config()));
        }
        if let Some(v) = s.strip_prefix("pqs=").or_else(|| s.strip_prefix("pqs")) {
            let pqs: f64 = v
                .parse()
                .map_err(|_| CodecError::InvalidConfig(format!("bad pqs {v:?}")))?;
            return OctreeConfig::new(pqs).map(CodecConfig::Octree);
        }
        let id: u32 = s
            .parse()
            .map_err(|_| CodecError::InvalidConfig(format!("unknown codec label {s:?}")))?;
        QuantConfig::new((id / 100) as u8, (id % 100) as u8).map(CodecConfig::Quant)
    }
}

/// Decodes a bitstream of either family, dispatching on its codec id.
pub fn decode(bs: &Bitstream) -> Result<PointCloud, CodecError> {
    match bs.codec_id()? {
        CodecId::Octree => octree_decode(bs),
        CodecId::Quant => quant_decode(bs),
    }
}

/// Spreads the low 21 bits of `v` so that bit i lands at bit 3i.
#[cfg(test)]
fn spread3(v: u64) -> u64 {
    let mut x = v & 0x1f_ffff;
    x = (x | (x << 32)) & 0x001f_0000_0000_ffff;
    x = (x | (x << 16)) & 0x001f_0000_ff00_00ff;
    x = (x | (x << 8)) & 0x100f_00f0_0f00_f00f;
    x = (x | (x << 4)) & 0x10c3_0c30_c30c_30c3;
    x = (x | (x << 2)) & 0x1249_2492_4924_9249;
    x
}

#[inline]
pub(crate) fn compact3(v: u64) -> u64 {
    let mut x = v & 0x1249_2492_4924_9249;
    x = (x | (x >> 2)) & 0x10c3_0c30_c30c_30c3;
    x = (x | (x >> 4)) & 0x100f_00f0_0f00_f00f;
    x = (x | (x >> 8)) & 0x001f_0000_ff00_00ff;
    x = (x | (x >> 16)) & 0x001f_0000_0000_ffff;
    x = (x | (x >> 32)) & 0x1f_ffff;
    x
}

/// `SPREAD[b]` is `spread3(b)` for every byte value.
static SPREAD: [u64; 256] = {
    let mut t = [0u64; 256];
    let mut b = 0;
    while b < 256 {
        let mut v = 0u64;
        let mut i = 0;
        while i < 8 {
            v |= ((b as u64 >> i) & 1) << (3 * i);
            i += 1;
        }
        t[b] = v;
        b += 1;
    }
    t
};

#[inline]
fn spread3_lut(v: u64) -> u64 {
    SPREAD[(v & 0xff) as usize]
        | (SPREAD[((v >> 8) & 0xff) as usize] << 24)
        | (SPREAD[((v >> 16) & 0x1f) as usize] << 48)
}

/// Morton key with x in the lowest interleaved bit.
#[inline]
pub(crate) fn morton3(u: [u64; 3]) -> u64 {
    spread3_lut(u[0]) | (spread3_lut(u[1]) << 1) | (spread3_lut(u[2]) << 2)
}

#[inline]
pub(crate) fn demorton3(key: u64) -> [u64; 3] {
    [compact3(key), compact3(key >> 1), compact3(key >> 2)]
}

pub(crate) trait RadixKey: Copy + Ord + Default {
    fn digit(self, shift: u32) -> usize;
}

impl RadixKey for u32 {
    #[inline]
    fn digit(self, shift: u32) -> usize {
        (self >> shift) as usize
    }
}

impl RadixKey for u64 {
    #[inline]
    fn digit(self, shift: u32) -> usize {
        (self >> shift) as usize
    }
}

/// LSD radix sort on the low `key_bits` bits of each key.
pub(crate) fn radix_sort<K: RadixKey>(keys: &mut Vec<K>, key_bits: u32) {
    const DIGIT: u32 = 11;
    const BUCKETS: usize = 1 << DIGIT;
    if keys.len() < 256 {
        keys.sort_unstable();
        return;
    }
    let mut buf = vec![K::default(); keys.len()];
    let passes = key_bits.div_ceil(DIGIT).max(1);
    let mut counts = vec![[0usize; BUCKETS]; passes as usize];
    for &k in keys.iter() {
        for (pass, c) in counts.iter_mut().enumerate() {
            c[k.digit(pass as u32 * DIGIT) & (BUCKETS - 1)] += 1;
        }
    }
    let n = keys.len();
    for (pass, c) in counts.iter_mut().enumerate() {
        // A digit shared by every key leaves the order unchanged.
        if c.contains(&n) {
            continue;
        }
        let shift = pass as u32 * DIGIT;
        let mut sum = 0;
        for slot in c.iter_mut() {
            let here = *slot;
            *slot = sum;
            sum += here;
        }
        for &k in keys.iter() {
            let d = k.digit(shift) & (BUCKETS - 1);
            buf[c[d]] = k;
            c[d] += 1;
        }
        std::mem::swap(keys, &mut buf);
    }
}

#[derive(Default)]
pub(crate) struct BitWriter {
    out: Vec<u8>,
    acc: u64,
    nbits: u32,
}

impl BitWriter {
    pub fn with_capacity(bytes: usize) -> Self {
        BitWriter {
            out: Vec::with_capacity(bytes),
            acc: 0,
            nbits: 0,
        }
    }

    /// Appends the low `width` (≤ 32) bits of `v`, LSB first.
    #[inline]
    pub fn put(&mut self, v: u64, width: u32) {
        debug_assert!(width <= 32);
        self.acc |= (v & ((1u64 << width) - 1)) << self.nbits;
        self.nbits += width;
        while self.nbits >= 8 {
            self.out.push(self.acc as u8);
            self.acc >>= 8;
            self.nbits -= 8;
        }
    }

    pub fn finish(mut self) -> Vec<u8> {
        if self.nbits > 0 {
            self.out.push(self.acc as u8);
        }
        self.out
    }
}

pub(crate) struct BitReader<'a> {
    data: &'a [u8],
    pos: usize,
    acc: u64,
    nbits: u32,
}

impl<'a> BitReader<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        BitReader {
            data,
            pos: 0,
            acc: 0,
            nbits: 0,
        }
    }

    #[inline]
    pub fn get(&mut self, width: u32) -> Option<u64> {
        while self.nbits < width {
            let b = *self.data.get(self.pos)?;
            self.pos += 1;
            self.acc |= (b as u64) << self.nbits;
            self.nbits += 8;
        }
        let v = self.acc & ((1u64 << width) - 1);
        self.acc >>= width;
        self.nbits -= width;
        Some(v)
    }
}

pub(crate) fn packed_len(n: usize, bits_per_item: u32) -> usize {
    (n * bits_per_item as usize).div_ceil(8)
}

pub(crate) fn check_finite(cloud: &PointCloud) -> Result<(), CodecError> {
    match cloud.first_non_finite() {
        Some(i) => Err(CodecError::NonFinite(i)),
        None => Ok(()),
    }
}
