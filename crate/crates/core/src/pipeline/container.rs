//! `.lfz` container: header, JPEG payload of the center view, CRC-32.
//!
//! Layout (little-endian):
//!
//! | bytes | field |
//! |-------|-------|
//! | 4 | magic `LFZ1` |
//! | 1 | version |
//! | 2+2 | angular U, V |
//! | 2+2 | spatial H, W |
//! | 1 | JPEG quality |
//! | 4 | payload length |
//! | n | payload (baseline JPEG) |
//! | 4 | CRC-32 of payload |

use thiserror::Error;

use crate::jpeg::JpegBytes;

pub const MAGIC: &[u8; 4] = b"LFZ1";
pub const VERSION: u8 = 1;
const HEADER_LEN: usize = 4 + 1 + 8 + 1 + 4;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ContainerError {
    #[error("not an .lfz container (bad magic)")]
    BadMagic,
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u8),
    #[error("container truncated: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("{0} trailing bytes after container")]
    TrailingBytes(usize),
    #[error("payload checksum mismatch (stored {stored:08x}, computed {computed:08x})")]
    CrcMismatch { stored: u32, computed: u32 },
    #[error("invalid header: {0}")]
    InvalidHeader(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LfzContainer {
    pub version: u8,
    pub angular: (u16, u16),
    pub spatial: (u16, u16),
    pub quality: u8,
    pub payload: JpegBytes,
}

impl LfzContainer {
    pub fn new(angular: (usize, usize), spatial: (usize, usize), quality: u8, payload: JpegBytes) -> Result<Self, ContainerError> {
        let fit = |v: usize, what: &str| {
            u16::try_from(v).map_err(|_| ContainerError::InvalidHeader(format!("{what} {v} exceeds 65535")))
        };
        let c = LfzContainer {
            version: VERSION,
            angular: (fit(angular.0, "angular U")?, fit(angular.1, "angular V")?),
            spatial: (fit(spatial.0, "height")?, fit(spatial.1, "width")?),
            quality,
            payload,
        };
        c.validate()?;
        Ok(c)
    }

    fn validate(&self) -> Result<(), ContainerError> {
        let (u, v) = self.angular;
        if u % 2 == 0 || v % 2 == 0 {
            return Err(ContainerError::InvalidHeader(format!("angular dims {u}x{v} must be odd")));
        }
        if self.spatial.0 == 0 || self.spatial.1 == 0 {
            return Err(ContainerError::InvalidHeader("zero spatial dimension".into()));
        }
        if !(1..=100).contains(&self.quality) {
            return Err(ContainerError::InvalidHeader(format!("quality {} outside 1..=100", self.quality)));
        }
        Ok(())
    }

    pub fn angular(&self) -> (usize, usize) {
        (usize::from(self.angular.0), usize::from(self.angular.1))
    }

    pub fn spatial(&self) -> (usize, usize) {
        (usize::from(self.spatial.0), usize::from(self.spatial.1))
    }

    /// Whole-container size in bytes.
    pub fn byte_len(&self) -> usize {
        HEADER_LEN + self.payload.len() + 4
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let payload = self.payload.as_bytes();
        let mut out = Vec::with_capacity(self.byte_len());
        out.extend_from_slice(MAGIC);
        out.push(self.version);
        for v in [self.angular.0, self.angular.1, self.spatial.0, self.spatial.1] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.push(self.quality);
        out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
        out.extend_from_slice(payload);
        out.extend_from_slice(&crc32fast::hash(payload).to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ContainerError> {
        let need = |needed: usize| {
            if bytes.len() < needed {
                Err(ContainerError::Truncated {
                    needed,
                    available: bytes.len(),
                })
            } else {
                Ok(())
            }
        };
        need(4)?;
        if &bytes[..4] != MAGIC {
            return Err(ContainerError::BadMagic);
        }
        need(HEADER_LEN)?;
        let version = bytes[4];
        if version != VERSION {
            return Err(ContainerError::UnsupportedVersion(version));
        }
        let u16_at = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]);
        let u32_at = |i: usize| u32::from_le_bytes([bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]]);
        let payload_len = u32_at(14) as usize;
        let total = HEADER_LEN + payload_len + 4;
        need(total)?;
        if bytes.len() > total {
            return Err(ContainerError::TrailingBytes(bytes.len() - total));
        }
        let payload = &bytes[HEADER_LEN..HEADER_LEN + payload_len];
        let stored = u32_at(HEADER_LEN + payload_len);
        let computed = crc32fast::hash(payload);
        if stored != computed {
            return Err(ContainerError::CrcMismatch { stored, computed });
        }
        let c = LfzContainer {
            version,
            angular: (u16_at(5), u16_at(7)),
            spatial: (u16_at(9), u16_at(11)),
            quality: bytes[13],
            payload: JpegBytes::new(payload.to_vec()),
        };
        c.validate()?;
        Ok(c)
    }
}
