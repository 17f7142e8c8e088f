//! Baseline (sequential, Huffman) JPEG codec for RGB images.

mod dct;
mod decoder;
mod encoder;
pub mod tables;

use crate::lightfield::Image;
use std::fmt;

pub use dct::{forward_dct, inverse_dct};

#[derive(Debug, thiserror::Error)]
pub enum JpegError {
    #[error("image {width}x{height} exceeds the 65535 pixel limit")]
    TooLarge { width: usize, height: usize },
    #[error("quality {0} outside 1..=100")]
    InvalidQuality(u8),
    #[error("not a JPEG stream")]
    NotJpeg,
    #[error("JPEG stream ended early")]
    Truncated,
    #[error("unsupported JPEG feature: {0}")]
    Unsupported(&'static str),
    #[error("corrupt JPEG stream: {0}")]
    Corrupt(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ChromaSubsampling {
    Yuv444,
    #[default]
    Yuv420,
}

impl std::str::FromStr for ChromaSubsampling {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "444" | "4:4:4" | "yuv444" => Ok(ChromaSubsampling::Yuv444),
            "420" | "4:2:0" | "yuv420" => Ok(ChromaSubsampling::Yuv420),
            _ => Err(format!("unknown chroma subsampling '{s}' (expected 444 or 420)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JpegConfig {
    pub quality: u8,
    pub chroma_subsampling: ChromaSubsampling,
    /// MCUs between restart markers; 0 disables them.
    pub restart_interval: u16,
}

impl Default for JpegConfig {
    fn default() -> Self {
        JpegConfig {
            quality: 50,
            chroma_subsampling: ChromaSubsampling::Yuv420,
            restart_interval: 0,
        }
    }
}

impl JpegConfig {
    pub fn with_quality(quality: u8) -> Self {
        JpegConfig {
            quality,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), JpegError> {
        if !(1..=100).contains(&self.quality) {
            return Err(JpegError::InvalidQuality(self.quality));
        }
        Ok(())
    }
}

/// An encoded JPEG byte stream.
#[derive(Clone, PartialEq, Eq)]
pub struct JpegBytes(Vec<u8>);

impl JpegBytes {
    pub fn new(bytes: Vec<u8>) -> Self {
        JpegBytes(bytes)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<u8> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Bits per pixel for an image of `pixels` pixels.
    pub fn bpp(&self, pixels: usize) -> f64 {
        (self.0.len() * 8) as f64 / pixels as f64
    }
}

impl fmt::Debug for JpegBytes {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "JpegBytes({} bytes)", self.0.len())
    }
}

impl AsRef<[u8]> for JpegBytes {
    fn as_ref(&self) -> &[u8] {
        &self.0
    }
}

pub fn encode(img: &Image, cfg: &JpegConfig) -> Result<JpegBytes, JpegError> {
    encoder::encode(img, cfg)
}

pub fn decode(bytes: &[u8]) -> Result<Image, JpegError> {
    decoder::decode(bytes)
}

/// Luma and chroma quantization tables (natural order) used at `quality`.
pub fn quant_tables(quality: u8) -> ([u16; 64], [u16; 64]) {
    (
        tables::scaled_quant(&tables::BASE_LUMA_QUANT, quality),
        tables::scaled_quant(&tables::BASE_CHROMA_QUANT, quality),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient(h: usize, w: usize) -> Image {
        Image::from_fn(h, w, |y, x, c| {
            0.5 + 0.4 * ((y as f32 * 0.21 + x as f32 * 0.13 + c as f32).sin())
        })
    }

    #[test]
    fn roundtrip_is_close_at_high_quality() {
        let img = gradient(37, 45);
        for sub in [ChromaSubsampling::Yuv444, ChromaSubsampling::Yuv420] {
            let cfg = JpegConfig {
                quality: 95,
                chroma_subsampling: sub,
                restart_interval: 0,
            };
            let out = decode(encode(&img, &cfg).unwrap().as_bytes()).unwrap();
            assert_eq!(out.dims(), img.dims());
            let mae: f32 = img
                .data()
                .iter()
                .zip(out.data())
                .map(|(a, b)| (a - b).abs())
                .sum::<f32>()
                / img.data().len() as f32;
            assert!(mae < 0.03, "{sub:?}: mae {mae}");
        }
    }

    #[test]
    fn restart_markers_roundtrip() {
        let img = gradient(40, 72);
        let plain = JpegConfig::with_quality(80);
        let with_rst = JpegConfig {
            restart_interval: 2,
            ..plain
        };
        let a = decode(encode(&img, &plain).unwrap().as_bytes()).unwrap();
        let b = decode(encode(&img, &with_rst).unwrap().as_bytes()).unwrap();
        assert_eq!(a.to_rgb8(), b.to_rgb8());
    }

    #[test]
    fn rejects_bad_quality() {
        let img = gradient(8, 8);
        assert!(matches!(
            encode(&img, &JpegConfig::with_quality(0)),
            Err(JpegError::InvalidQuality(0))
        ));
        assert!(matches!(
            encode(&img, &JpegConfig::with_quality(101)),
            Err(JpegError::InvalidQuality(101))
        ));
    }

    #[test]
    fn rejects_non_jpeg() {
        assert!(matches!(decode(b"hello"), Err(JpegError::NotJpeg)));
    }
}
