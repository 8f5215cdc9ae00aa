//! Binary PGM (`P5`) and PPM (`P6`) images with 8-bit samples.

use std::fs;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PnmError {
    #[error("bad header: {0}")]
    BadHeader(String),
    #[error("unsupported image: {0}")]
    Unsupported(String),
    #[error("pixel data truncated: need {need} bytes, have {have}")]
    Truncated { need: usize, have: usize },
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Interleaved 8-bit image with one (gray) or three (RGB) channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

/// Largest accepted side length; keeps hostile headers from requesting huge buffers.
pub const MAX_SIDE: usize = 1 << 14;

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        assert!(channels == 1 || channels == 3, "channels must be 1 or 3");
        Self { width, height, channels, data: vec![0; width * height * channels] }
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> u8 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn set(&mut self, x: usize, y: usize, c: usize, v: u8) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    /// Planar floats in `[0, 1]`, shape `(channels, height, width)`.
    pub fn to_planar(&self) -> Vec<f32> {
        let plane = self.width * self.height;
        let mut out = vec![0.0; plane * self.channels];
        for (i, px) in self.data.chunks_exact(self.channels).enumerate() {
            for (c, &v) in px.iter().enumerate() {
                out[c * plane + i] = v as f32 / 255.0;
            }
        }
        out
    }

    /// Inverse of [`to_planar`](Self::to_planar); values are clamped and rounded.
    pub fn from_planar(width: usize, height: usize, channels: usize, planar: &[f32]) -> Self {
        let plane = width * height;
        assert_eq!(planar.len(), plane * channels);
        let mut img = Self::new(width, height, channels);
        for i in 0..plane {
            for c in 0..channels {
                img.data[i * channels + c] = quantize(planar[c * plane + i]);
            }
        }
        img
    }
}

pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn encode_pnm(img: &Image) -> Vec<u8> {
    let magic = if img.channels == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b' ' | b'\t' | b'\r' | b'\n' => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize, PnmError> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos || self.pos - start > 9 {
            return Err(PnmError::BadHeader(format!("missing or oversized {what}")));
        }
        let s = std::str::from_utf8(&self.bytes[start..self.pos]).expect("ascii digits");
        Ok(s.parse().expect("at most nine digits"))
    }
}

pub fn decode_pnm(bytes: &[u8]) -> Result<Image, PnmError> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(PnmError::BadHeader("expected P5 or P6 magic".into())),
    };
    let mut h = Header { bytes, pos: 2 };
    let width = h.number("width")?;
    let height = h.number("height")?;
    let maxval = h.number("maxval")?;
    if maxval != 255 {
        return Err(PnmError::Unsupported(format!("maxval {maxval}, only 255 is supported")));
    }
    if width == 0 || height == 0 || width > MAX_SIDE || height > MAX_SIDE {
        return Err(PnmError::Unsupported(format!("size {width}x{height}")));
    }
    // exactly one whitespace byte separates the header from the raster
    match bytes.get(h.pos) {
        Some(b) if b.is_ascii_whitespace() => h.pos += 1,
        _ => return Err(PnmError::BadHeader("missing whitespace before raster".into())),
    }
    let need = width * height * channels;
    let raster = &bytes[h.pos..];
    if raster.len() < need {
        return Err(PnmError::Truncated { need, have: raster.len() });
    }
    Ok(Image { width, height, channels, data: raster[..need].to_vec() })
}

pub fn read_pnm(path: &Path) -> Result<Image, PnmError> {
    let bytes = fs::read(path).map_err(|source| PnmError::Io { path: path.to_path_buf(), source })?;
    decode_pnm(&bytes)
}

pub fn write_pnm(img: &Image, path: &Path) -> Result<(), PnmError> {
    fs::write(path, encode_pnm(img)).map_err(|source| PnmError::Io { path: path.to_path_buf(), source })
}
