//! Binary Netpbm images: P5 greyscale depth and P6 colour.
//!
//! Depth PGMs carry their metric range in a `#depth_range z_min z_max`
//! header comment; a raw sample `v` decodes to `z_min + v/maxval·(z_max −
//! z_min)`. Colour PPMs are 8-bit and decode to `[0, 1]`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Metric range of a depth image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DepthRange {
    pub z_min: f64,
    pub z_max: f64,
}

impl DepthRange {
    pub fn new(z_min: f64, z_max: f64) -> Result<Self> {
        if !(z_min.is_finite() && z_max.is_finite() && z_max > z_min) {
            return Err(Error::ImageFormat(format!("invalid depth range [{z_min}, {z_max}]")));
        }
        Ok(DepthRange { z_min, z_max })
    }

    /// Largest decode error of a 16-bit round trip.
    pub fn quantum(&self) -> f64 {
        (self.z_max - self.z_min) / 65535.0
    }
}

struct Header {
    magic: [u8; 2],
    width: usize,
    height: usize,
    maxval: usize,
    comments: Vec<String>,
    data_start: usize,
}

fn fmt_err(msg: impl Into<String>) -> Error {
    Error::ImageFormat(msg.into())
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < 2 {
        return Err(fmt_err("file too short for a magic number"));
    }
    let magic = [bytes[0], bytes[1]];
    let mut pos = 2;
    let mut fields = Vec::with_capacity(3);
    let mut comments = Vec::new();
    while fields.len() < 3 {
        match bytes.get(pos) {
            None => return Err(fmt_err("truncated header")),
            Some(b'#') => {
                let end = bytes[pos..].iter().position(|&b| b == b'\n').map_or(bytes.len(), |e| pos + e);
                comments.push(String::from_utf8_lossy(&bytes[pos + 1..end]).trim().to_string());
                pos = end;
            }
            Some(b) if b.is_ascii_whitespace() => pos += 1,
            Some(b) if b.is_ascii_digit() => {
                let end = bytes[pos..].iter().position(|b| !b.is_ascii_digit()).map_or(bytes.len(), |e| pos + e);
                let text = std::str::from_utf8(&bytes[pos..end]).map_err(|_| fmt_err("non-ASCII header"))?;
                fields.push(text.parse::<usize>().map_err(|_| fmt_err(format!("bad header number {text}")))?);
                pos = end;
            }
            Some(&b) => return Err(fmt_err(format!("unexpected byte {b:#04x} in header"))),
        }
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(fmt_err("missing whitespace after maxval")),
    }
    let (width, height, maxval) = (fields[0], fields[1], fields[2]);
    if width == 0 || height == 0 {
        return Err(fmt_err(format!("empty image {width}×{height}")));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(fmt_err(format!("maxval {maxval} outside 1..=65535")));
    }
    Ok(Header {
        magic,
        width,
        height,
        maxval,
        comments,
        data_start: pos,
    })
}

fn samples(bytes: &[u8], header: &Header, count: usize) -> Result<Vec<u16>> {
    let wide = header.maxval > 255;
    let need = count * if wide { 2 } else { 1 };
    let payload = &bytes[header.data_start..];
    if payload.len() < need {
        return Err(fmt_err(format!(
            "truncated payload: {} bytes for {}×{} needs {need}",
            payload.len(),
            header.width,
            header.height
        )));
    }
    Ok(if wide {
        payload[..need].chunks_exact(2).map(|b| u16::from_be_bytes([b[0], b[1]])).collect()
    } else {
        payload[..need].iter().map(|&b| u16::from(b)).collect()
    })
}

/// Decodes a depth PGM into a 1×1×H×W tensor of metres.
pub fn decode_depth_pgm(bytes: &[u8]) -> Result<(Tensor, DepthRange)> {
    let header = parse_header(bytes)?;
    if &header.magic != b"P5" {
        return Err(fmt_err("expected P5 magic"));
    }
    let range = header
        .comments
        .iter()
        .find_map(|c| {
            let rest = c.strip_prefix("depth_range")?;
            let mut it = rest.split_whitespace().map(str::parse::<f64>);
            match (it.next(), it.next(), it.next()) {
                (Some(Ok(a)), Some(Ok(b)), None) => Some(DepthRange::new(a, b)),
                _ => Some(Err(fmt_err(format!("malformed comment `{c}`")))),
            }
        })
        .ok_or_else(|| fmt_err("missing #depth_range comment"))??;
    let raw = samples(bytes, &header, header.width * header.height)?;
    let step = (range.z_max - range.z_min) / header.maxval as f64;
    let data = raw.iter().map(|&v| range.z_min + f64::from(v) * step).collect();
    Ok((Tensor::new(Shape::new(1, 1, header.height, header.width), data)?, range))
}

/// Encodes a single-plane depth tensor as a 16-bit PGM. Values outside
/// `range` are clamped.
pub fn encode_depth_pgm(depth: &Tensor, range: DepthRange) -> Result<Vec<u8>> {
    let s = depth.shape();
    if s.n != 1 || s.c != 1 {
        return Err(Error::shape("encode_depth_pgm", Shape::new(1, 1, s.h, s.w), s));
    }
    let mut out = format!("P5\n#depth_range {} {}\n{} {}\n65535\n", range.z_min, range.z_max, s.w, s.h).into_bytes();
    let span = range.z_max - range.z_min;
    for &z in depth.data() {
        let q = ((z - range.z_min) / span * 65535.0).round().clamp(0.0, 65535.0) as u16;
        out.extend_from_slice(&q.to_be_bytes());
    }
    Ok(out)
}

/// Decodes an 8-bit PPM into a 1×3×H×W tensor in `[0, 1]`.
pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor> {
    let header = parse_header(bytes)?;
    if &header.magic != b"P6" {
        return Err(fmt_err("expected P6 magic"));
    }
    if header.maxval > 255 {
        return Err(fmt_err("only 8-bit PPM is supported"));
    }
    let (h, w) = (header.height, header.width);
    let raw = samples(bytes, &header, 3 * h * w)?;
    let scale = 1.0 / header.maxval as f64;
    let mut data = vec![0.0; 3 * h * w];
    for (i, px) in raw.chunks_exact(3).enumerate() {
        for (c, &v) in px.iter().enumerate() {
            data[c * h * w + i] = f64::from(v) * scale;
        }
    }
    Tensor::new(Shape::new(1, 3, h, w), data)
}

/// Encodes a 1×3×H×W tensor as an 8-bit PPM, clamping to `[0, 1]`.
pub fn encode_ppm(rgb: &Tensor) -> Result<Vec<u8>> {
    let s = rgb.shape();
    if s.n != 1 || s.c != 3 {
        return Err(Error::shape("encode_ppm", Shape::new(1, 3, s.h, s.w), s));
    }
    let plane = s.plane();
    let mut out = format!("P6\n{} {}\n255\n", s.w, s.h).into_bytes();
    for i in 0..plane {
        for c in 0..3 {
            out.push((rgb.data()[c * plane + i].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    Ok(out)
}

/// Encodes `values` (row-major `h×w`) as an 8-bit PGM after mapping
/// `log(1 + v)` linearly onto 0..=255.
pub fn encode_log_pgm(values: &[f64], h: usize, w: usize) -> Result<Vec<u8>> {
    if values.len() != h * w {
        return Err(Error::shape("encode_log_pgm", h * w, values.len()));
    }
    let logs: Vec<f64> = values.iter().map(|v| v.max(0.0).ln_1p()).collect();
    let (lo, hi) = logs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(logs.iter().map(|v| ((v - lo) / span * 255.0).round() as u8));
    Ok(out)
}

pub fn read_depth_pgm(path: impl AsRef<Path>) -> Result<(Tensor, DepthRange)> {
    decode_depth_pgm(&fs::read(path)?)
}

pub fn write_depth_pgm(path: impl AsRef<Path>, depth: &Tensor, range: DepthRange) -> Result<()> {
    Ok(fs::write(path, encode_depth_pgm(depth, range)?)?)
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<Tensor> {
    decode_ppm(&fs::read(path)?)
}

pub fn write_ppm(path: impl AsRef<Path>, rgb: &Tensor) -> Result<()> {
    Ok(fs::write(path, encode_ppm(rgb)?)?)
}
