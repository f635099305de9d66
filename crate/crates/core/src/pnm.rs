//! Netpbm graymap/pixmap codec plus optional PNG/JPEG decoding.
//!
//! Only binary `P5` (graymap) and `P6` (pixmap) with maxval 255 are
//! accepted. Color input is reduced to a single luma channel at decode time.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DecodeError {
    #[error("empty input")]
    Empty,
    #[error("unrecognized image format")]
    UnknownFormat,
    #[error("malformed header: {0}")]
    Header(&'static str),
    #[error("unsupported maxval {0} (only 255)")]
    Maxval(u32),
    #[error("pixel data truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("trailing bytes after pixel data")]
    TrailingBytes,
    #[error("codec error: {0}")]
    Codec(String),
}

/// Decoded raster with interleaved channels (1 = gray, 3 = RGB).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl Raster {
    pub fn to_gray(&self) -> Vec<u8> {
        match self.channels {
            1 => self.data.clone(),
            3 => self
                .data
                .chunks_exact(3)
                .map(|c| crate::density::to_grayscale(c[0], c[1], c[2]))
                .collect(),
            _ => unreachable!("rasters carry 1 or 3 channels"),
        }
    }
}

/// Sniffed container kind, used for the storage file extension.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageKind {
    Pgm,
    Ppm,
    Png,
    Jpeg,
    Unknown,
}

impl ImageKind {
    pub fn sniff(bytes: &[u8]) -> Self {
        match bytes {
            [b'P', b'5', ..] => ImageKind::Pgm,
            [b'P', b'6', ..] => ImageKind::Ppm,
            [0x89, b'P', b'N', b'G', ..] => ImageKind::Png,
            [0xFF, 0xD8, 0xFF, ..] => ImageKind::Jpeg,
            _ => ImageKind::Unknown,
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            ImageKind::Pgm => "pgm",
            ImageKind::Ppm => "ppm",
            ImageKind::Png => "png",
            ImageKind::Jpeg => "jpg",
            ImageKind::Unknown => "bin",
        }
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn skip_ws_and_comments(&mut self) {
        while self.pos < self.buf.len() {
            let c = self.buf[self.pos];
            if c == b'#' {
                while self.pos < self.buf.len() && self.buf[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if c.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn read_uint(&mut self, what: &'static str) -> Result<u32, DecodeError> {
        self.skip_ws_and_comments();
        let start = self.pos;
        while self.pos < self.buf.len() && self.buf[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(DecodeError::Header(what));
        }
        std::str::from_utf8(&self.buf[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or(DecodeError::Header(what))
    }
}

fn decode_netpbm(bytes: &[u8], channels: usize) -> Result<Raster, DecodeError> {
    let mut cur = Cursor { buf: bytes, pos: 2 };
    let width = cur.read_uint("width")? as usize;
    let height = cur.read_uint("height")? as usize;
    let maxval = cur.read_uint("maxval")?;
    if width == 0 || height == 0 {
        return Err(DecodeError::Header("zero dimension"));
    }
    if maxval != 255 {
        return Err(DecodeError::Maxval(maxval));
    }
    // Exactly one whitespace byte separates the header from the raster.
    match bytes.get(cur.pos) {
        Some(c) if c.is_ascii_whitespace() => cur.pos += 1,
        _ => return Err(DecodeError::Header("missing raster separator")),
    }
    let expected = width
        .checked_mul(height)
        .and_then(|p| p.checked_mul(channels))
        .ok_or(DecodeError::Header("dimensions overflow"))?;
    let body = &bytes[cur.pos..];
    if body.len() < expected {
        return Err(DecodeError::Truncated {
            expected,
            found: body.len(),
        });
    }
    if body.len() > expected {
        return Err(DecodeError::TrailingBytes);
    }
    Ok(Raster {
        width,
        height,
        channels,
        data: body.to_vec(),
    })
}

#[cfg(feature = "codecs")]
fn decode_with_image(bytes: &[u8]) -> Result<Raster, DecodeError> {
    let img = image::load_from_memory(bytes).map_err(|e| DecodeError::Codec(e.to_string()))?;
    if !img.color().has_color() {
        let gray = img.to_luma8();
        return Ok(Raster {
            width: gray.width() as usize,
            height: gray.height() as usize,
            channels: 1,
            data: gray.into_raw(),
        });
    }
    let rgb = img.to_rgb8();
    Ok(Raster {
        width: rgb.width() as usize,
        height: rgb.height() as usize,
        channels: 3,
        data: rgb.into_raw(),
    })
}

#[cfg(not(feature = "codecs"))]
fn decode_with_image(_bytes: &[u8]) -> Result<Raster, DecodeError> {
    Err(DecodeError::Codec("built without PNG/JPEG support".into()))
}

/// Decodes any supported container into a raster.
pub fn decode(bytes: &[u8]) -> Result<Raster, DecodeError> {
    if bytes.is_empty() {
        return Err(DecodeError::Empty);
    }
    match ImageKind::sniff(bytes) {
        ImageKind::Pgm => decode_netpbm(bytes, 1),
        ImageKind::Ppm => decode_netpbm(bytes, 3),
        ImageKind::Png | ImageKind::Jpeg => decode_with_image(bytes),
        ImageKind::Unknown => Err(DecodeError::UnknownFormat),
    }
}

/// Encodes an 8-bit graymap as binary PGM (`P5`, maxval 255).
pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    assert_eq!(pixels.len(), width * height, "pixel buffer does not match shape");
    let header = format!("P5\n{width} {height}\n255\n");
    let mut out = Vec::with_capacity(header.len() + pixels.len());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(pixels);
    out
}

/// Encodes an 8-bit graymap as PNG.
#[cfg(feature = "codecs")]
pub fn encode_png_gray(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    use image::ImageEncoder;
    let mut out = Vec::new();
    image::codecs::png::PngEncoder::new(&mut out)
        .write_image(pixels, width as u32, height as u32, image::ExtendedColorType::L8)
        .expect("in-memory PNG encoding");
    out
}
