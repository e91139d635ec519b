//! Raster containers and bit-exact binary PPM/PGM i/o.
//!
//! Pixel values live in `[0,1]` as `f64`; files store 8-bit samples with
//! maxval 255. Quantization rounds half-up so golden files are reproducible.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::par;

/// RGB raster, row-major and channel-interleaved, values in `[0,1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

/// Single-channel raster, row-major, values in `[0,1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

fn check_range(data: &[f64], what: &str) -> Result<()> {
    for (i, &v) in data.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("{what} at element {i}")));
        }
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Invalid(format!(
                "{what} value {v} at element {i} is outside [0,1]"
            )));
        }
    }
    Ok(())
}

impl Frame {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Frame> {
        if data.len() != width * height * 3 {
            return Err(Error::shape(
                "frame buffer length",
                width * height * 3,
                data.len(),
            ));
        }
        check_range(&data, "frame")?;
        Ok(Frame {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Frame {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Frame {
            width,
            height,
            data,
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.len() != self.width * self.height * 3 {
            return Err(Error::shape(
                "frame buffer length",
                self.width * self.height * 3,
                self.data.len(),
            ));
        }
        check_range(&self.data, "frame")
    }

    pub fn resize_bilinear(&self, width: usize, height: usize) -> Result<Frame> {
        if width == 0 || height == 0 {
            return Err(Error::Invalid(format!(
                "resize target {width}x{height} has a zero dimension"
            )));
        }
        let mut data = vec![0.0; width * height * 3];
        let sw = self.width;
        let sh = self.height;
        par::for_each_chunk_mut(&mut data, width * 3, |y, row| {
            let (y0, y1, fy) = sample_axis(y, height, sh);
            for x in 0..width {
                let (x0, x1, fx) = sample_axis(x, width, sw);
                for c in 0..3 {
                    let tl = self.data[(y0 * sw + x0) * 3 + c];
                    let tr = self.data[(y0 * sw + x1) * 3 + c];
                    let bl = self.data[(y1 * sw + x0) * 3 + c];
                    let br = self.data[(y1 * sw + x1) * 3 + c];
                    row[x * 3 + c] = lerp2(tl, tr, bl, br, fx, fy);
                }
            }
        });
        Ok(Frame {
            width,
            height,
            data,
        })
    }

    pub fn hflip(&self) -> Frame {
        let mut data = vec![0.0; self.data.len()];
        for y in 0..self.height {
            for x in 0..self.width {
                let src = (y * self.width + self.width - 1 - x) * 3;
                let dst = (y * self.width + x) * 3;
                data[dst..dst + 3].copy_from_slice(&self.data[src..src + 3]);
            }
        }
        Frame {
            width: self.width,
            height: self.height,
            data,
        }
    }
}

impl GrayMap {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<GrayMap> {
        if data.len() != width * height {
            return Err(Error::shape(
                "gray map buffer length",
                width * height,
                data.len(),
            ));
        }
        check_range(&data, "gray map")?;
        Ok(GrayMap {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, v: f64) -> GrayMap {
        GrayMap {
            width,
            height,
            data: vec![v; width * height],
        }
    }

    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.len() != self.width * self.height {
            return Err(Error::shape(
                "gray map buffer length",
                self.width * self.height,
                self.data.len(),
            ));
        }
        check_range(&self.data, "gray map")
    }

    pub fn resize_bilinear(&self, width: usize, height: usize) -> Result<GrayMap> {
        if width == 0 || height == 0 {
            return Err(Error::Invalid(format!(
                "resize target {width}x{height} has a zero dimension"
            )));
        }
        let mut data = vec![0.0; width * height];
        let sw = self.width;
        let sh = self.height;
        par::for_each_chunk_mut(&mut data, width, |y, row| {
            let (y0, y1, fy) = sample_axis(y, height, sh);
            for (x, out) in row.iter_mut().enumerate() {
                let (x0, x1, fx) = sample_axis(x, width, sw);
                *out = lerp2(
                    self.data[y0 * sw + x0],
                    self.data[y0 * sw + x1],
                    self.data[y1 * sw + x0],
                    self.data[y1 * sw + x1],
                    fx,
                    fy,
                );
            }
        });
        Ok(GrayMap {
            width,
            height,
            data,
        })
    }

    /// `(v - min) / (max - min)`; a flat map normalizes to all zeros.
    pub fn min_max_normalize(&self) -> GrayMap {
        let min = self.data.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = self.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let range = max - min;
        let data = if range > 0.0 {
            self.data.iter().map(|v| (v - min) / range).collect()
        } else {
            vec![0.0; self.data.len()]
        };
        GrayMap {
            width: self.width,
            height: self.height,
            data,
        }
    }

    pub fn hflip(&self) -> GrayMap {
        let mut data = vec![0.0; self.data.len()];
        for y in 0..self.height {
            for x in 0..self.width {
                data[y * self.width + x] = self.data[y * self.width + self.width - 1 - x];
            }
        }
        GrayMap {
            width: self.width,
            height: self.height,
            data,
        }
    }
}

/// Source coordinates and blend weight for one output coordinate, using the
/// half-pixel-center convention with edge clamping.
fn sample_axis(dst: usize, dst_len: usize, src_len: usize) -> (usize, usize, f64) {
    let pos = (dst as f64 + 0.5) * src_len as f64 / dst_len as f64 - 0.5;
    let pos = pos.clamp(0.0, (src_len - 1) as f64);
    let i0 = pos.floor() as usize;
    let i1 = (i0 + 1).min(src_len - 1);
    (i0, i1, pos - i0 as f64)
}

fn lerp2(tl: f64, tr: f64, bl: f64, br: f64, fx: f64, fy: f64) -> f64 {
    let top = tl + (tr - tl) * fx;
    let bot = bl + (br - bl) * fx;
    top + (bot - top) * fy
}

/// Round-half-up quantization to one 8-bit sample.
pub fn quantize_u8(v: f64) -> u8 {
    (v * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

// ---------------------------------------------------------------------------
// Binary PNM parsing (P5/P6, maxval 255, `#` comments in headers)
// ---------------------------------------------------------------------------

struct PnmParser<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> PnmParser<'a> {
    fn err(&self, detail: impl Into<String>) -> Error {
        Error::format(self.path, detail)
    }

    fn skip_separators(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b' ' | b'\t' | b'\r' | b'\n' => self.pos += 1,
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                _ => break,
            }
        }
    }

    fn token(&mut self, field: &str) -> Result<&'a [u8]> {
        self.skip_separators();
        let start = self.pos;
        while self.pos < self.bytes.len()
            && !matches!(self.bytes[self.pos], b' ' | b'\t' | b'\r' | b'\n' | b'#')
        {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err(format!("missing {field} in header")));
        }
        Ok(&self.bytes[start..self.pos])
    }

    fn uint(&mut self, field: &str) -> Result<usize> {
        let tok = self.token(field)?;
        let s = std::str::from_utf8(tok)
            .map_err(|_| self.err(format!("{field} is not valid ASCII")))?;
        s.parse::<usize>()
            .map_err(|_| self.err(format!("{field} {s:?} is not a non-negative integer")))
    }

    /// Header fields are followed by exactly one whitespace byte before the
    /// pixel payload begins.
    fn payload(&mut self, expected_len: usize) -> Result<&'a [u8]> {
        if self.pos >= self.bytes.len()
            || !matches!(self.bytes[self.pos], b' ' | b'\t' | b'\r' | b'\n')
        {
            return Err(self.err("expected single whitespace byte after maxval"));
        }
        self.pos += 1;
        let rest = &self.bytes[self.pos..];
        if rest.len() < expected_len {
            return Err(self.err(format!(
                "truncated pixel payload: expected {expected_len} bytes, got {}",
                rest.len()
            )));
        }
        if rest.len() > expected_len {
            return Err(self.err(format!(
                "trailing data after pixel payload: expected {expected_len} bytes, got {}",
                rest.len()
            )));
        }
        Ok(rest)
    }
}

fn parse_pnm(path: &Path, bytes: &[u8], magic: &[u8], channels: usize) -> Result<(usize, usize, Vec<f64>)> {
    let mut p = PnmParser { bytes, pos: 0, path };
    let found = p.token("magic")?;
    if found != magic {
        return Err(p.err(format!(
            "bad magic: expected {}, found {}",
            String::from_utf8_lossy(magic),
            String::from_utf8_lossy(found)
        )));
    }
    let width = p.uint("width")?;
    let height = p.uint("height")?;
    if width == 0 || height == 0 {
        return Err(p.err(format!("degenerate dimensions {width}x{height}")));
    }
    let maxval = p.uint("maxval")?;
    if maxval != 255 {
        return Err(p.err(format!("maxval must be 255, found {maxval}")));
    }
    let n = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| p.err("image dimensions overflow"))?;
    let raw = p.payload(n)?;
    let data = raw.iter().map(|&b| b as f64 / 255.0).collect();
    Ok((width, height, data))
}

/// Read a binary PPM (P6, maxval 255).
pub fn read_ppm(path: impl AsRef<Path>) -> Result<Frame> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (width, height, data) = parse_pnm(path, &bytes, b"P6", 3)?;
    Ok(Frame {
        width,
        height,
        data,
    })
}

/// Read a binary PGM (P5, maxval 255).
pub fn read_pgm(path: impl AsRef<Path>) -> Result<GrayMap> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (width, height, data) = parse_pnm(path, &bytes, b"P5", 1)?;
    Ok(GrayMap {
        width,
        height,
        data,
    })
}

/// Write a binary PPM (P6, maxval 255). Values must already be in `[0,1]`.
pub fn write_ppm(frame: &Frame, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    frame.validate()?;
    let mut out = format!("P6\n{} {}\n255\n", frame.width, frame.height).into_bytes();
    out.extend(frame.data.iter().map(|&v| quantize_u8(v)));
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Write a binary PGM (P5, maxval 255). Values must already be in `[0,1]`.
pub fn write_pgm(map: &GrayMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    map.validate()?;
    let mut out = format!("P5\n{} {}\n255\n", map.width, map.height).into_bytes();
    out.extend(map.data.iter().map(|&v| quantize_u8(v)));
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
