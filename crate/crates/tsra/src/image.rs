//! 8-bit grayscale images and plain PGM/PPM file support.
//!
//! PGM (P2 ascii / P5 binary) is the grayscale interchange format; PPM
//! (P3/P6) color images are accepted and reduced to luma
//! (`round(0.299 R + 0.587 G + 0.114 B)`) on load. Written files are always
//! binary P5 with the fixed header `P5\n{w} {h}\n255\n`, so a read/write
//! round trip is byte-identical.

use std::io::Write;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed {format} file {path}: {message}")]
    Parse {
        format: &'static str,
        path: String,
        message: String,
    },
}

/// Row-major 8-bit grayscale image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            pixels: vec![0; width * height],
        }
    }

    pub fn from_pixels(width: usize, height: usize, pixels: Vec<u8>) -> Self {
        assert_eq!(pixels.len(), width * height, "pixel buffer size mismatch");
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }
    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.pixels[y * self.width + x] = v;
    }

    pub fn fill_with(&mut self, mut f: impl FnMut(usize, usize) -> u8) {
        for y in 0..self.height {
            for x in 0..self.width {
                self.pixels[y * self.width + x] = f(x, y);
            }
        }
    }

    pub fn to_pgm_bytes(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn write_pgm(&self, path: &Path) -> Result<(), ImageError> {
        let mut file = std::fs::File::create(path).map_err(|source| ImageError::Io {
            path: path.display().to_string(),
            source,
        })?;
        file.write_all(&self.to_pgm_bytes())
            .map_err(|source| ImageError::Io {
                path: path.display().to_string(),
                source,
            })
    }

    pub fn read_pgm(path: &Path) -> Result<Self, ImageError> {
        let bytes = std::fs::read(path).map_err(|source| ImageError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse_pgm(&bytes).map_err(|message| ImageError::Parse {
            format: "PGM",
            path: path.display().to_string(),
            message,
        })
    }

    pub fn parse_pgm(bytes: &[u8]) -> Result<Self, String> {
        let mut cursor = Cursor::new(bytes);
        let magic = cursor.token()?;
        match magic.as_str() {
            "P5" => {
                let (w, h) = cursor.dims()?;
                cursor.maxval()?;
                let raw = cursor.raster(w * h)?;
                Ok(Self::from_pixels(w, h, raw))
            }
            "P2" => {
                let (w, h) = cursor.dims()?;
                cursor.maxval()?;
                let mut raw = Vec::with_capacity(w * h);
                for _ in 0..w * h {
                    raw.push(cursor.ascii_u8()?);
                }
                Ok(Self::from_pixels(w, h, raw))
            }
            other => Err(format!("unsupported magic {other:?} (want P2 or P5)")),
        }
    }
}

/// Loads a PPM (P3/P6) color image and converts it to grayscale luma.
pub fn read_ppm_luma(path: &Path) -> Result<GrayImage, ImageError> {
    let bytes = std::fs::read(path).map_err(|source| ImageError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_ppm_luma(&bytes).map_err(|message| ImageError::Parse {
        format: "PPM",
        path: path.display().to_string(),
        message,
    })
}

pub fn parse_ppm_luma(bytes: &[u8]) -> Result<GrayImage, String> {
    let mut cursor = Cursor::new(bytes);
    let magic = cursor.token()?;
    let (w, h) = match magic.as_str() {
        "P6" | "P3" => {
            let d = cursor.dims()?;
            cursor.maxval()?;
            d
        }
        other => return Err(format!("unsupported magic {other:?} (want P3 or P6)")),
    };
    let rgb = if magic == "P6" {
        cursor.raster(3 * w * h)?
    } else {
        let mut raw = Vec::with_capacity(3 * w * h);
        for _ in 0..3 * w * h {
            raw.push(cursor.ascii_u8()?);
        }
        raw
    };
    let mut out = GrayImage::new(w, h);
    for i in 0..w * h {
        let r = rgb[3 * i] as f64;
        let g = rgb[3 * i + 1] as f64;
        let b = rgb[3 * i + 2] as f64;
        out.pixels[i] = (0.299 * r + 0.587 * g + 0.114 * b).round().clamp(0.0, 255.0) as u8;
    }
    Ok(out)
}

/// Loads a grayscale image, accepting PGM directly or PPM via luma.
pub fn read_gray_auto(path: &Path) -> Result<GrayImage, ImageError> {
    let bytes = std::fs::read(path).map_err(|source| ImageError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let wrap = |message: String, format: &'static str| ImageError::Parse {
        format,
        path: path.display().to_string(),
        message,
    };
    match bytes.first().copied() {
        Some(b'P') => match bytes.get(1).copied() {
            Some(b'2') | Some(b'5') => GrayImage::parse_pgm(&bytes).map_err(|m| wrap(m, "PGM")),
            Some(b'3') | Some(b'6') => parse_ppm_luma(&bytes).map_err(|m| wrap(m, "PPM")),
            _ => Err(wrap("unknown netpbm magic".into(), "PGM")),
        },
        _ => Err(wrap("not a netpbm file".into(), "PGM")),
    }
}

/// Minimal netpbm header tokenizer (whitespace-separated, `#` comments).
struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn token(&mut self) -> Result<String, String> {
        // Skip whitespace and comments.
        loop {
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.pos < self.bytes.len() && self.bytes[self.pos] == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
                continue;
            }
            break;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err("unexpected end of header".into());
        }
        String::from_utf8(self.bytes[start..self.pos].to_vec())
            .map_err(|_| "non-utf8 header token".into())
    }

    fn usize_token(&mut self) -> Result<usize, String> {
        let t = self.token()?;
        t.parse::<usize>().map_err(|_| format!("bad integer {t:?}"))
    }

    fn dims(&mut self) -> Result<(usize, usize), String> {
        let w = self.usize_token()?;
        let h = self.usize_token()?;
        if w == 0 || h == 0 {
            return Err("zero image dimension".into());
        }
        Ok((w, h))
    }

    fn maxval(&mut self) -> Result<(), String> {
        let m = self.usize_token()?;
        if m == 0 || m > 255 {
            return Err(format!("unsupported maxval {m} (want 1..=255)"));
        }
        Ok(())
    }

    fn ascii_u8(&mut self) -> Result<u8, String> {
        let t = self.usize_token()?;
        u8::try_from(t).map_err(|_| format!("sample {t} out of range"))
    }

    fn raster(&mut self, n: usize) -> Result<Vec<u8>, String> {
        // Exactly one whitespace byte separates the header from the raster.
        if self.pos >= self.bytes.len() || !self.bytes[self.pos].is_ascii_whitespace() {
            return Err("missing raster separator".into());
        }
        self.pos += 1;
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(format!(
                "raster truncated: want {n} bytes, have {}",
                self.bytes.len() - self.pos
            ));
        }
        Ok(self.bytes[self.pos..end].to_vec())
    }
}
