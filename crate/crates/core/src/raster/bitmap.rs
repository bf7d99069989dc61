use std::io::Cursor;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub type Rgb = [u8; 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channels {
    Grayscale,
    Rgb,
}

impl Channels {
    pub fn count(self) -> usize {
        match self {
            Self::Grayscale => 1,
            Self::Rgb => 3,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BitmapError {
    #[error("png encoding failed: {0}")]
    Encode(#[from] png::EncodingError),
    #[error("png decoding failed: {0}")]
    Decode(#[from] png::DecodingError),
    #[error("unsupported png layout: {0}")]
    Unsupported(String),
}

/// Row-major 8-bit image.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Bitmap {
    width: u32,
    height: u32,
    channels: Channels,
    pixels: Vec<u8>,
}

impl std::fmt::Debug for Bitmap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Bitmap")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("channels", &self.channels)
            .field("digest", &self.digest())
            .finish()
    }
}

impl Bitmap {
    /// A bitmap with every pixel set to `fill` (one value per channel).
    pub fn filled(width: u32, height: u32, channels: Channels, fill: &[u8]) -> Self {
        assert_eq!(fill.len(), channels.count(), "fill length must match channel count");
        let n = width as usize * height as usize;
        let mut pixels = Vec::with_capacity(n * fill.len());
        for _ in 0..n {
            pixels.extend_from_slice(fill);
        }
        Self { width, height, channels, pixels }
    }

    pub fn gray(width: u32, height: u32, level: u8) -> Self {
        Self { width, height, channels: Channels::Grayscale, pixels: vec![level; width as usize * height as usize] }
    }

    pub fn rgb(width: u32, height: u32, color: Rgb) -> Self {
        Self::filled(width, height, Channels::Rgb, &color)
    }

    /// Wraps raw bytes; `None` when the length does not match the shape.
    pub fn from_raw(width: u32, height: u32, channels: Channels, pixels: Vec<u8>) -> Option<Self> {
        (pixels.len() == width as usize * height as usize * channels.count()).then_some(Self {
            width,
            height,
            channels,
            pixels,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> Channels {
        self.channels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    fn offset(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * self.channels.count()
    }

    /// Channel values at `(x, y)`. Panics when out of bounds.
    pub fn pixel(&self, x: u32, y: u32) -> &[u8] {
        assert!(x < self.width && y < self.height, "pixel ({x}, {y}) out of bounds");
        let o = self.offset(x, y);
        &self.pixels[o..o + self.channels.count()]
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, value: &[u8]) {
        let o = self.offset(x, y);
        let n = self.channels.count();
        self.pixels[o..o + n].copy_from_slice(value);
    }

    /// Grayscale view: itself, or the rounded channel mean of an RGB image.
    pub fn to_grayscale(&self) -> Bitmap {
        match self.channels {
            Channels::Grayscale => self.clone(),
            Channels::Rgb => Bitmap {
                width: self.width,
                height: self.height,
                channels: Channels::Grayscale,
                pixels: self
                    .pixels
                    .chunks_exact(3)
                    .map(|c| ((u16::from(c[0]) + u16::from(c[1]) + u16::from(c[2]) + 1) / 3) as u8)
                    .collect(),
            },
        }
    }

    /// Copies `src` with its top-left corner at `(x0, y0)`, clipping at the
    /// edges. Both bitmaps must have the same channel layout.
    pub fn blit(&mut self, src: &Bitmap, x0: u32, y0: u32) {
        assert_eq!(self.channels, src.channels);
        let n = self.channels.count();
        for y in 0..src.height {
            let ty = y0 + y;
            if ty >= self.height {
                break;
            }
            let w = src.width.min(self.width.saturating_sub(x0)) as usize;
            if w == 0 {
                break;
            }
            let so = src.offset(0, y);
            let to = self.offset(x0, ty);
            self.pixels[to..to + w * n].copy_from_slice(&src.pixels[so..so + w * n]);
        }
    }

    /// Lowercase hex SHA-256 over shape and pixel bytes.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.width.to_le_bytes());
        h.update(self.height.to_le_bytes());
        h.update([self.channels.count() as u8]);
        h.update(&self.pixels);
        hex_lower(&h.finalize())
    }

    pub fn to_png(&self) -> Result<Vec<u8>, BitmapError> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width, self.height);
            enc.set_color(match self.channels {
                Channels::Grayscale => png::ColorType::Grayscale,
                Channels::Rgb => png::ColorType::Rgb,
            });
            enc.set_depth(png::BitDepth::Eight);
            let mut w = enc.write_header()?;
            w.write_image_data(&self.pixels)?;
        }
        Ok(out)
    }

    /// Decodes an 8-bit grayscale or RGB PNG.
    pub fn from_png(bytes: &[u8]) -> Result<Self, BitmapError> {
        let decoder = png::Decoder::new(Cursor::new(bytes));
        let mut reader = decoder.read_info()?;
        let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
        let info = reader.next_frame(&mut buf)?;
        if info.bit_depth != png::BitDepth::Eight {
            return Err(BitmapError::Unsupported(format!("bit depth {:?}", info.bit_depth)));
        }
        let channels = match info.color_type {
            png::ColorType::Grayscale => Channels::Grayscale,
            png::ColorType::Rgb => Channels::Rgb,
            other => return Err(BitmapError::Unsupported(format!("color type {other:?}"))),
        };
        buf.truncate(info.buffer_size());
        Bitmap::from_raw(info.width, info.height, channels, buf)
            .ok_or_else(|| BitmapError::Unsupported("buffer size mismatch".into()))
    }
}

pub(crate) fn hex_lower(bytes: &[u8]) -> String {
    use std::fmt::Write as _;
    bytes.iter().fold(String::with_capacity(bytes.len() * 2), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}
