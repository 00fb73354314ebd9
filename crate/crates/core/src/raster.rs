//! Single-channel image container, patch extraction, geometric transforms,
//! and file I/O.
//!
//! Conventions used throughout the crate: pixels are `f32`, row-major, with
//! `x` the column and `y` the row. Intensities are nominally in `[0,1]`
//! after an 8-bit load. Rasters are immutable after construction and safe
//! to share across workers.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::{Error, Result};

/// Row-major single-channel image.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

/// Square patch geometry inside a parent raster.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchSpec {
    pub x: usize,
    pub y: usize,
    pub size: usize,
}

impl Raster {
    /// Builds a raster, validating dimensions, length, and finiteness.
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "raster dimensions must be >= 1, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::Shape(format!(
                "data length {} does not match {width}x{height}",
                data.len()
            )));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Builds a raster from a per-pixel function.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    /// Constant-valued raster.
    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        debug_assert!(x < self.width && y < self.height);
        self.data[y * self.width + x]
    }

    pub fn row(&self, y: usize) -> &[f32] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }
}

/// Extracts the square window described by `spec`.
pub fn crop(img: &Raster, spec: PatchSpec) -> Result<Raster> {
    if spec.size == 0 {
        return Err(Error::InvalidArgument("crop size must be >= 1".into()));
    }
    if spec.x + spec.size > img.width {
        return Err(Error::OutOfBounds {
            what: "crop x extent",
            value: spec.x + spec.size,
            limit: img.width,
        });
    }
    if spec.y + spec.size > img.height {
        return Err(Error::OutOfBounds {
            what: "crop y extent",
            value: spec.y + spec.size,
            limit: img.height,
        });
    }
    let mut data = Vec::with_capacity(spec.size * spec.size);
    for y in spec.y..spec.y + spec.size {
        let row = img.row(y);
        data.extend_from_slice(&row[spec.x..spec.x + spec.size]);
    }
    Ok(Raster {
        width: spec.size,
        height: spec.size,
        data,
    })
}

/// Lossless rotation of a square raster by `quarter_turns` * 90 degrees
/// counterclockwise.
pub fn rotate90(img: &Raster, quarter_turns: u32) -> Result<Raster> {
    if img.width != img.height {
        return Err(Error::Shape(format!(
            "rotate90 requires a square raster, got {}x{}",
            img.width, img.height
        )));
    }
    let n = img.width;
    let rotated = match quarter_turns % 4 {
        0 => img.clone(),
        1 => Raster::from_fn(n, n, |x, y| img.get(n - 1 - y, x)),
        2 => Raster::from_fn(n, n, |x, y| img.get(n - 1 - x, n - 1 - y)),
        3 => Raster::from_fn(n, n, |x, y| img.get(y, n - 1 - x)),
        _ => unreachable!(),
    };
    Ok(rotated)
}

/// Block-mean downsampling. Trailing rows/columns that do not fill a full
/// `factor` x `factor` block are dropped.
pub fn downsample(img: &Raster, factor: usize) -> Result<Raster> {
    if factor == 0 {
        return Err(Error::InvalidArgument("downsample factor must be >= 1".into()));
    }
    if factor == 1 {
        return Ok(img.clone());
    }
    let out_w = img.width / factor;
    let out_h = img.height / factor;
    if out_w == 0 || out_h == 0 {
        return Err(Error::InvalidArgument(format!(
            "raster {}x{} too small for downsample factor {factor}",
            img.width, img.height
        )));
    }
    let norm = 1.0 / (factor * factor) as f64;
    let mut data = Vec::with_capacity(out_w * out_h);
    for oy in 0..out_h {
        for ox in 0..out_w {
            let mut acc = 0.0f64;
            for dy in 0..factor {
                let row = img.row(oy * factor + dy);
                for dx in 0..factor {
                    acc += row[ox * factor + dx] as f64;
                }
            }
            data.push((acc * norm) as f32);
        }
    }
    Ok(Raster {
        width: out_w,
        height: out_h,
        data,
    })
}

const F32_MAGIC: &[u8; 4] = b"NCF1";

/// Writes the raw f32 format: magic "NCF1", width u32 LE, height u32 LE,
/// reserved u32 = 0, then row-major f32 LE pixels.
pub fn save_f32(img: &Raster, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut header = Vec::with_capacity(16);
    header.extend_from_slice(F32_MAGIC);
    header.extend_from_slice(&(img.width as u32).to_le_bytes());
    header.extend_from_slice(&(img.height as u32).to_le_bytes());
    header.extend_from_slice(&0u32.to_le_bytes());
    w.write_all(&header).map_err(|e| Error::io(path, e))?;
    let mut buf = Vec::with_capacity(img.data.len() * 4);
    for v in &img.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads the raw f32 format written by [`save_f32`].
pub fn load_f32(path: &Path) -> Result<Raster> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 {
        return Err(Error::parse(path, bytes.len(), "truncated header"));
    }
    if &bytes[0..4] != F32_MAGIC {
        return Err(Error::parse(path, 0, "bad magic, expected NCF1"));
    }
    let width = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let height = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let reserved = u32::from_le_bytes(bytes[12..16].try_into().unwrap());
    if reserved != 0 {
        return Err(Error::parse(path, 12, "reserved field must be zero"));
    }
    let expected = 16 + width * height * 4;
    if bytes.len() != expected {
        return Err(Error::parse(
            path,
            bytes.len().min(expected),
            format!("payload length {} != expected {expected}", bytes.len()),
        ));
    }
    let mut data = Vec::with_capacity(width * height);
    for chunk in bytes[16..].chunks_exact(4) {
        data.push(f32::from_le_bytes(chunk.try_into().unwrap()));
    }
    if let Some(index) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    Raster::new(width, height, data)
}

/// Writes binary PGM (P5, maxval 255). Intensities are clamped to [0,1]
/// and quantized to 8 bits.
pub fn save_pgm(img: &Raster, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write!(w, "P5\n{} {}\n255\n", img.width, img.height).map_err(|e| Error::io(path, e))?;
    let bytes: Vec<u8> = img
        .data
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    w.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads binary PGM (P5, maxval 255); pixels are mapped to [0,1].
pub fn load_pgm(path: &Path) -> Result<Raster> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;

    let mut pos = 0usize;
    let mut token = |bytes: &[u8]| -> Result<(String, usize)> {
        // skip whitespace and '#' comments
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::parse(path, start, "unexpected end of header"));
        }
        Ok((
            String::from_utf8_lossy(&bytes[start..pos]).into_owned(),
            start,
        ))
    };

    let (magic, off) = token(&bytes)?;
    if magic != "P5" {
        return Err(Error::parse(path, off, format!("expected P5, got {magic}")));
    }
    let (w_tok, w_off) = token(&bytes)?;
    let width: usize = w_tok
        .parse()
        .map_err(|_| Error::parse(path, w_off, "bad width"))?;
    let (h_tok, h_off) = token(&bytes)?;
    let height: usize = h_tok
        .parse()
        .map_err(|_| Error::parse(path, h_off, "bad height"))?;
    let (max_tok, max_off) = token(&bytes)?;
    let maxval: usize = max_tok
        .parse()
        .map_err(|_| Error::parse(path, max_off, "bad maxval"))?;
    if maxval != 255 {
        return Err(Error::parse(path, max_off, "only maxval 255 supported"));
    }
    // exactly one whitespace byte separates the header from the payload
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::parse(path, pos, "missing header terminator"));
    }
    pos += 1;
    let expected = width * height;
    if bytes.len() - pos < expected {
        return Err(Error::parse(
            path,
            bytes.len(),
            format!("payload has {} bytes, expected {expected}", bytes.len() - pos),
        ));
    }
    let data: Vec<f32> = bytes[pos..pos + expected]
        .iter()
        .map(|&b| b as f32 / 255.0)
        .collect();
    Raster::new(width, height, data)
}
