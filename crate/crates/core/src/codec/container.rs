use super::CodecError;

pub const CONTAINER_MAGIC: &[u8; 4] = b"TDC1";
/// magic + codec id + payload length + CRC32.
pub const CONTAINER_OVERHEAD: usize = 4 + 1 + 8 + 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum CodecId {
    Octree = 1,
    Quant = 2,
}

impl CodecId {
    pub fn from_byte(b: u8) -> Result<Self, CodecError> {
        match b {
            1 => Ok(CodecId::Octree),
            2 => Ok(CodecId::Quant),
            other => Err(CodecError::UnknownCodec(other)),
        }
    }

    /// Fixed codec-specific header length.
    pub fn header_len(self) -> usize {
        match self {
            CodecId::Octree => super::octree::HEADER_LEN,
            CodecId::Quant => super::quant::HEADER_LEN,
        }
    }
}

/// An encoded frame: `magic | codec_id | header | payload_len u64 | payload | crc32`.
/// The CRC covers every byte before it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bitstream {
    bytes: Vec<u8>,
}

impl Bitstream {
    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        Bitstream { bytes }
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }

    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }

    pub fn codec_id(&self) -> Result<CodecId, CodecError> {
        if self.bytes.len() < 5 {
            return Err(CodecError::Truncated {
                needed: 5,
                available: self.bytes.len() as u64,
            });
        }
        if &self.bytes[..4] != CONTAINER_MAGIC {
            return Err(CodecError::BadMagic);
        }
        CodecId::from_byte(self.bytes[4])
    }

    pub(crate) fn seal(codec: CodecId, header: &[u8], payload: &[u8]) -> Bitstream {
        debug_assert_eq!(header.len(), codec.header_len());
        let mut bytes = Vec::with_capacity(CONTAINER_OVERHEAD + header.len() + payload.len());
        bytes.extend_from_slice(CONTAINER_MAGIC);
        bytes.push(codec as u8);
        bytes.extend_from_slice(header);
        bytes.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        bytes.extend_from_slice(payload);
        let crc = crc32fast::hash(&bytes);
        bytes.extend_from_slice(&crc.to_le_bytes());
        Bitstream { bytes }
    }

    /// Validates framing and checksum, returning `(header, payload)`.
    pub(crate) fn open(&self, expected: CodecId) -> Result<(&[u8], &[u8]), CodecError> {
        let found = self.codec_id()?;
        if found != expected {
            return Err(CodecError::WrongCodec {
                expected: expected as u8,
                found: found as u8,
            });
        }
        let hlen = expected.header_len();
        let fixed = CONTAINER_OVERHEAD + hlen;
        let available = self.bytes.len() as u64;
        if available < fixed as u64 {
            return Err(CodecError::Truncated {
                needed: fixed as u64,
                available,
            });
        }
        let len_at = 5 + hlen;
        let declared = u64::from_le_bytes(self.bytes[len_at..len_at + 8].try_into().unwrap());
        let actual = available - fixed as u64;
        if declared != actual {
            if declared > actual {
                return Err(CodecError::Truncated {
                    needed: (fixed as u64).saturating_add(declared),
                    available,
                });
            }
            return Err(CodecError::LengthMismatch { declared, actual });
        }
        let body = self.bytes.len() - 4;
        let stored = u32::from_le_bytes(self.bytes[body..].try_into().unwrap());
        let computed = crc32fast::hash(&self.bytes[..body]);
        if stored != computed {
            return Err(CodecError::Checksum { stored, computed });
        }
        Ok((&self.bytes[5..5 + hlen], &self.bytes[len_at + 8..body]))
    }
}

/// Little-endian cursor over a fixed-length header.
pub(crate) struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        HeaderReader { bytes, pos: 0 }
    }

    fn take<const N: usize>(&mut self) -> [u8; N] {
        let out = self.bytes[self.pos..self.pos + N].try_into().unwrap();
        self.pos += N;
        out
    }

    pub fn u8(&mut self) -> u8 {
        self.take::<1>()[0]
    }

    pub fn u64(&mut self) -> u64 {
        u64::from_le_bytes(self.take())
    }

    pub fn f64(&mut self) -> f64 {
        f64::from_le_bytes(self.take())
    }
}
