//! Images in `[0,1]`, bilinear resizing and binary PGM/PPM (P5/P6) I/O.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Row-major, channel-interleaved image with values in `[0,1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    pixels: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Parameter(format!("image extent {width}x{height}")));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::Parameter(format!(
                "images have 1 or 3 channels, got {channels}"
            )));
        }
        if pixels.len() != width * height * channels {
            return Err(Error::Dimension(format!(
                "{width}x{height}x{channels} image needs {} pixels, got {}",
                width * height * channels,
                pixels.len()
            )));
        }
        if let Some(i) = pixels.iter().position(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Parameter(format!(
                "pixel {i} = {} outside [0,1]",
                pixels[i]
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.pixels[(row * self.width + col) * self.channels + channel]
    }

    /// Multiplies every pixel by `factor`, which must lie in `[0,1]`.
    pub fn scaled(&self, factor: f64) -> Result<Image> {
        if !(0.0..=1.0).contains(&factor) {
            return Err(Error::Parameter(format!("brightness factor {factor}")));
        }
        Ok(Image {
            pixels: self.pixels.iter().map(|p| p * factor).collect(),
            ..self.clone()
        })
    }

    /// Channel mean per pixel.
    pub fn to_gray(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let pixels = self
            .pixels
            .chunks_exact(self.channels)
            .map(|px| px.iter().sum::<f64>() / self.channels as f64)
            .collect();
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            pixels,
        }
    }
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

/// Source coordinate and interpolation fraction for corner-aligned sampling.
fn sample_axis(dst: usize, src_len: usize, dst_len: usize) -> (usize, usize, f64) {
    if src_len == 1 {
        return (0, 0, 0.0);
    }
    let pos = dst as f64 * (src_len - 1) as f64 / (dst_len - 1) as f64;
    let lo = (pos.floor() as usize).min(src_len - 1);
    let hi = (lo + 1).min(src_len - 1);
    (lo, hi, pos - lo as f64)
}

/// Bilinear, corner-aligned resize to `width x height`. Output is clamped to `[0,1]`.
pub fn resize_image(image: &Image, width: usize, height: usize) -> Result<Image> {
    if width < 2 || height < 2 {
        return Err(Error::Parameter(format!(
            "resize target {width}x{height} is below 2x2"
        )));
    }
    if width == image.width && height == image.height {
        return Ok(image.clone());
    }
    let ch = image.channels;
    let cols: Vec<_> = (0..width)
        .map(|x| sample_axis(x, image.width, width))
        .collect();
    let mut pixels = Vec::with_capacity(width * height * ch);
    for y in 0..height {
        let (y0, y1, ty) = sample_axis(y, image.height, height);
        for &(x0, x1, tx) in &cols {
            for c in 0..ch {
                let top = lerp(image.get(y0, x0, c), image.get(y0, x1, c), tx);
                let bottom = lerp(image.get(y1, x0, c), image.get(y1, x1, c), tx);
                pixels.push(lerp(top, bottom, ty).clamp(0.0, 1.0));
            }
        }
    }
    Ok(Image {
        width,
        height,
        channels: ch,
        pixels,
    })
}

/// Encodes as binary PGM (1 channel) or PPM (3 channels), maxval 255.
pub fn encode_pnm(image: &Image) -> Vec<u8> {
    let magic = if image.channels == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend(image.pixels.iter().map(|&p| (p * 255.0).round() as u8));
    out
}

pub fn write_pnm(image: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pnm(image)).map_err(|e| Error::io(path, e))
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderReader<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn token(&mut self) -> Result<&[u8]> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.error("unexpected end of header"));
        }
        Ok(&self.bytes[start..self.pos])
    }

    fn number(&mut self) -> Result<usize> {
        let start = self.pos;
        let tok = self.token()?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format {
                offset: start as u64,
                reason: "expected a decimal header field".into(),
            })
    }

    fn error(&self, reason: &str) -> Error {
        Error::Format {
            offset: self.pos as u64,
            reason: reason.into(),
        }
    }
}

/// Decodes binary PGM/PPM with maxval up to 65535.
pub fn decode_pnm(bytes: &[u8]) -> Result<Image> {
    let mut rd = HeaderReader { bytes, pos: 0 };
    let channels = match rd.token()? {
        b"P5" => 1,
        b"P6" => 3,
        _ => {
            return Err(Error::Format {
                offset: 0,
                reason: "expected P5 or P6 magic".into(),
            })
        }
    };
    let width = rd.number()?;
    let height = rd.number()?;
    let maxval = rd.number()?;
    if maxval == 0 || maxval > 65535 {
        return Err(rd.error("maxval must be in 1..=65535"));
    }
    // exactly one whitespace byte separates header and raster
    if rd.pos >= bytes.len() || !bytes[rd.pos].is_ascii_whitespace() {
        return Err(rd.error("missing whitespace after maxval"));
    }
    let start = rd.pos + 1;
    let sample_bytes = if maxval > 255 { 2 } else { 1 };
    let count = width * height * channels;
    let raster = bytes
        .get(start..start + count * sample_bytes)
        .ok_or_else(|| Error::Format {
            offset: bytes.len() as u64,
            reason: format!("raster truncated, need {} bytes", count * sample_bytes),
        })?;
    let pixels = if sample_bytes == 1 {
        raster
            .iter()
            .map(|&b| (b as f64 / maxval as f64).min(1.0))
            .collect()
    } else {
        raster
            .chunks_exact(2)
            .map(|b| (u16::from_be_bytes([b[0], b[1]]) as f64 / maxval as f64).min(1.0))
            .collect()
    };
    Image::new(width, height, channels, pixels)
}

pub fn read_pnm(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pnm(&bytes)
}
