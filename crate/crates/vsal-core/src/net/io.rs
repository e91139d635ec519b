//! Sized, versioned binary weight files: magic, version, input geometry,
//! layer table, then raw little-endian f64 buffers (weights, biases and both
//! momentum buffers). Round-trips are bit-exact.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::{LayerKind, LayerParams, NetArch, NetParams};

const MAGIC: &[u8; 4] = b"VSNW";
const VERSION: u32 = 1;

fn kind_tag(kind: LayerKind) -> u8 {
    match kind {
        LayerKind::Conv => 0,
        LayerKind::Deconv => 1,
        LayerKind::Head => 2,
    }
}

pub fn save_params(params: &NetParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    params.validate()?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(params.arch.input_w as u32).to_le_bytes());
    out.extend_from_slice(&(params.arch.input_h as u32).to_le_bytes());
    out.extend_from_slice(&(params.layers.len() as u32).to_le_bytes());
    for layer in &params.layers {
        let s = &layer.spec;
        out.push(kind_tag(s.kind));
        for v in [s.in_ch, s.out_ch, s.k, s.stride, s.pad] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for buf in [&layer.w, &layer.b, &layer.vw, &layer.vb] {
            for v in buf.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(
                self.path,
                format!(
                    "truncated weight file: needed {} bytes at offset {}, have {}",
                    n,
                    self.pos,
                    self.bytes.len() - self.pos
                ),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn f64_vec(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn load_params(path: impl AsRef<Path>) -> Result<NetParams> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        path,
    };
    let magic = r.take(4)?;
    if magic != MAGIC {
        return Err(Error::format(
            path,
            format!("bad magic: expected {MAGIC:?}, found {magic:?}"),
        ));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::format(
            path,
            format!("unsupported version {version}, expected {VERSION}"),
        ));
    }
    let input_w = r.u32()? as usize;
    let input_h = r.u32()? as usize;
    let arch = NetArch::new(input_w, input_h)
        .map_err(|e| Error::format(path, format!("bad input geometry: {e}")))?;
    let specs = arch.layer_specs();
    let n_layers = r.u32()? as usize;
    if n_layers != specs.len() {
        return Err(Error::format(
            path,
            format!("layer count {n_layers} does not match architecture ({})", specs.len()),
        ));
    }
    let mut layers = Vec::with_capacity(n_layers);
    for spec in specs {
        let kind = r.u8()?;
        let meta = [r.u32()?, r.u32()?, r.u32()?, r.u32()?, r.u32()?];
        let want = [
            spec.in_ch as u32,
            spec.out_ch as u32,
            spec.k as u32,
            spec.stride as u32,
            spec.pad as u32,
        ];
        if kind != kind_tag(spec.kind) || meta != want {
            return Err(Error::format(
                path,
                format!("layer {} metadata does not match architecture", spec.name),
            ));
        }
        let w = r.f64_vec(spec.weight_len())?;
        let b = r.f64_vec(spec.out_ch)?;
        let vw = r.f64_vec(spec.weight_len())?;
        let vb = r.f64_vec(spec.out_ch)?;
        layers.push(LayerParams { spec, w, b, vw, vb });
    }
    if r.pos != bytes.len() {
        return Err(Error::format(
            path,
            format!("trailing data: {} unread bytes", bytes.len() - r.pos),
        ));
    }
    let params = NetParams { arch, layers };
    params.validate()?;
    Ok(params)
}
