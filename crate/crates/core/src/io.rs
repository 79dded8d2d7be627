//! On-disk formats: raw f64 tensors, network checkpoints and 16-bit PGM
//! export.
//!
//! Raw tensor layout: 8-byte magic `CTRAW01\n`, little-endian `u32` header
//! length, UTF-8 JSON header, then row-major little-endian `f64` payload.
//!
//! Checkpoint layout: 8-byte magic `CTCKPT\0\n`, little-endian `u32` format
//! version, `u32` header length, JSON header, then the flat parameter
//! vector followed by the loss history, both as little-endian `f64`.
//! Within each block the flat order is λ₁ λ₂ λ₃, the taps of c1..c3, the
//! taps of b1..b3 row-major, then for channels 0..3: g1, g2, g3 row-major,
//! γ, μ, log δ.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::NetParams;
use crate::train::TrainConfig;
use crate::types::{Geometry, Grid, Image, Sinogram};

const RAW_MAGIC: &[u8; 8] = b"CTRAW01\n";
const RAW_PREFIX: &[u8; 5] = b"CTRAW";
const CKPT_MAGIC: &[u8; 8] = b"CTCKPT\0\n";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TensorKind {
    Image,
    Sinogram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawHeader {
    pub dtype: String,
    pub shape: [usize; 2],
    pub kind: TensorKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pixel_size: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub det_spacing: Option<f64>,
    pub units: String,
    /// Acquisition geometry of a sinogram, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geometry: Option<Geometry>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Tensor {
    Image(Image),
    Sinogram(Sinogram, Option<Geometry>),
}

fn header_err(path: &Path, detail: impl Into<String>) -> Error {
    Error::Header {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn push_f64s(buf: &mut Vec<u8>, values: &[f64]) {
    buf.reserve(values.len() * 8);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn read_f64s(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect()
}

fn read_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
        .ok_or(Error::Truncated {
            path: path.to_path_buf(),
            expected: at + 4,
            found: bytes.len(),
        })
}

fn json_section<'a>(bytes: &'a [u8], at: usize, len: usize, path: &Path) -> Result<&'a [u8]> {
    bytes.get(at..at + len).ok_or(Error::Truncated {
        path: path.to_path_buf(),
        expected: at + len,
        found: bytes.len(),
    })
}

pub fn encode_tensor(t: &Tensor) -> Vec<u8> {
    let (header, data) = match t {
        Tensor::Image(img) => (
            RawHeader {
                dtype: "f64".into(),
                shape: [img.n, img.n],
                kind: TensorKind::Image,
                pixel_size: Some(img.pixel_size),
                det_spacing: None,
                units: "1/mm".into(),
                geometry: None,
            },
            &img.data,
        ),
        Tensor::Sinogram(s, g) => (
            RawHeader {
                dtype: "f64".into(),
                shape: [s.n_views, s.n_det],
                kind: TensorKind::Sinogram,
                pixel_size: None,
                det_spacing: Some(s.det_spacing),
                units: "line integral".into(),
                geometry: g.clone(),
            },
            &s.data,
        ),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut buf = Vec::with_capacity(12 + json.len() + 8 * data.len());
    buf.extend_from_slice(RAW_MAGIC);
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    push_f64s(&mut buf, data);
    buf
}

/// `path` is only used for error messages.
pub fn decode_tensor(bytes: &[u8], path: &Path) -> Result<Tensor> {
    if bytes.len() < 8 || &bytes[..8] != RAW_MAGIC {
        if bytes.len() >= 8 && &bytes[..5] == RAW_PREFIX && bytes[7] == b'\n' {
            let found = std::str::from_utf8(&bytes[5..7]).ok().and_then(|s| s.parse().ok()).unwrap_or(0);
            return Err(Error::Version {
                path: path.to_path_buf(),
                found,
                expected: 1,
            });
        }
        return Err(Error::BadMagic { path: path.to_path_buf() });
    }
    let hlen = read_u32(bytes, 8, path)? as usize;
    let json = json_section(bytes, 12, hlen, path)?;
    let header: RawHeader = serde_json::from_slice(json).map_err(|e| header_err(path, e.to_string()))?;
    if header.dtype != "f64" {
        return Err(header_err(path, format!("unsupported dtype {}", header.dtype)));
    }
    let [rows, cols] = header.shape;
    let start = 12 + hlen;
    let expected = rows * cols * 8;
    let found = bytes.len() - start;
    if found < expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected,
            found,
        });
    }
    if found > expected {
        return Err(header_err(path, format!("{} trailing bytes after payload", found - expected)));
    }
    let data = read_f64s(&bytes[start..]);
    match header.kind {
        TensorKind::Image => {
            if rows != cols {
                return Err(header_err(path, "image must be square"));
            }
            let ps = header.pixel_size.ok_or_else(|| header_err(path, "image without pixel_size"))?;
            Ok(Tensor::Image(Image::from_vec(Grid::new(rows, ps)?, data)?))
        }
        TensorKind::Sinogram => {
            let ds = header.det_spacing.ok_or_else(|| header_err(path, "sinogram without det_spacing"))?;
            let sino = Sinogram::from_vec(rows, cols, ds, data)?;
            if let Some(g) = &header.geometry {
                g.validate()?;
                g.check_sinogram(&sino)?;
            }
            Ok(Tensor::Sinogram(sino, header.geometry))
        }
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(io_err(path))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(io_err(path))
}

pub fn load_tensor(path: &Path) -> Result<Tensor> {
    decode_tensor(&read_file(path)?, path)
}

pub fn save_image(path: &Path, img: &Image) -> Result<()> {
    write_file(path, &encode_tensor(&Tensor::Image(img.clone())))
}

pub fn load_image(path: &Path) -> Result<Image> {
    match load_tensor(path)? {
        Tensor::Image(img) => Ok(img),
        Tensor::Sinogram(..) => Err(header_err(path, "expected an image, found a sinogram")),
    }
}

pub fn save_sinogram(path: &Path, sino: &Sinogram, geom: Option<&Geometry>) -> Result<()> {
    write_file(path, &encode_tensor(&Tensor::Sinogram(sino.clone(), geom.cloned())))
}

pub fn load_sinogram(path: &Path) -> Result<(Sinogram, Option<Geometry>)> {
    match load_tensor(path)? {
        Tensor::Sinogram(s, g) => Ok((s, g)),
        Tensor::Image(_) => Err(header_err(path, "expected a sinogram, found an image")),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    /// Training reconstruction grid; reconstruction uses its doubled form.
    pub grid: Grid,
    pub params: NetParams,
    pub losses: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    version: u32,
    config: TrainConfig,
    grid: Grid,
    n_blocks: usize,
    iterations: usize,
    n_params: usize,
    n_losses: usize,
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let flat = ck.params.to_flat();
    let header = CheckpointHeader {
        version: CHECKPOINT_VERSION,
        config: ck.config.clone(),
        grid: ck.grid,
        n_blocks: ck.params.blocks.len(),
        iterations: ck.params.iterations,
        n_params: flat.len(),
        n_losses: ck.losses.len(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut buf = Vec::new();
    buf.extend_from_slice(CKPT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    push_f64s(&mut buf, &flat);
    push_f64s(&mut buf, &ck.losses);
    buf
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    if bytes.len() < 8 || &bytes[..8] != CKPT_MAGIC {
        return Err(Error::BadMagic { path: path.to_path_buf() });
    }
    let version = read_u32(bytes, 8, path)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            path: path.to_path_buf(),
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let hlen = read_u32(bytes, 12, path)? as usize;
    let json = json_section(bytes, 16, hlen, path)?;
    let h: CheckpointHeader = serde_json::from_slice(json).map_err(|e| header_err(path, e.to_string()))?;
    if h.version != version {
        return Err(header_err(path, "header version disagrees with prefix"));
    }
    let start = 16 + hlen;
    let expected = 8 * (h.n_params + h.n_losses);
    let found = bytes.len() - start;
    if found < expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected,
            found,
        });
    }
    if found > expected {
        return Err(header_err(path, format!("{} trailing bytes after payload", found - expected)));
    }
    let values = read_f64s(&bytes[start..]);
    let (flat, losses) = values.split_at(h.n_params);
    let params = NetParams::from_flat(flat, h.n_blocks, h.iterations)?;
    params.validate()?;
    Ok(Checkpoint {
        config: h.config,
        grid: h.grid,
        params,
        losses: losses.to_vec(),
    })
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    write_file(path, &encode_checkpoint(ck))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&read_file(path)?, path)
}

/// Maps `[lo, hi]` linearly onto `0..=65535`, clipping outside, rounding
/// half up.
pub fn window_u16(v: f64, lo: f64, hi: f64) -> u16 {
    let t = ((v - lo) / (hi - lo) * 65535.0 + 0.5).floor();
    t.clamp(0.0, 65535.0) as u16
}

fn check_window(lo: f64, hi: f64) -> Result<()> {
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::invalid(format!("display window [{lo}, {hi}] must satisfy lo < hi")));
    }
    Ok(())
}

pub fn encode_pgm16(img: &Image, lo: f64, hi: f64) -> Result<Vec<u8>> {
    check_window(lo, hi)?;
    let mut buf = Vec::with_capacity(32 + 2 * img.data.len());
    write!(buf, "P5\n{} {}\n65535\n", img.n, img.n).expect("write to vec");
    for &v in &img.data {
        buf.extend_from_slice(&window_u16(v, lo, hi).to_be_bytes());
    }
    Ok(buf)
}

pub fn export_pgm16(img: &Image, lo: f64, hi: f64, path: &Path) -> Result<()> {
    write_file(path, &encode_pgm16(img, lo, hi)?)
}

/// Reads a 16-bit P5 file back to grey levels `0..=65535`, returning
/// `(width, height, levels)`.
pub fn decode_pgm16(bytes: &[u8], path: &Path) -> Result<(usize, usize, Vec<u16>)> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(header_err(path, "incomplete PGM header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" {
        return Err(Error::BadMagic { path: path.to_path_buf() });
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| header_err(path, format!("bad PGM field {s}")));
    let (w, h, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if maxval != 65535 {
        return Err(header_err(path, format!("maxval {maxval} is not 65535")));
    }
    let body = &bytes[(pos + 1).min(bytes.len())..];
    if body.len() < 2 * w * h {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: 2 * w * h,
            found: body.len(),
        });
    }
    let levels = body[..2 * w * h].chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect();
    Ok((w, h, levels))
}

/// Inverse window mapping of a 16-bit PGM onto `[lo, hi]`.
pub fn read_pgm16(path: &Path, lo: f64, hi: f64, pixel_size: f64) -> Result<Image> {
    check_window(lo, hi)?;
    let (w, h, levels) = decode_pgm16(&read_file(path)?, path)?;
    if w != h {
        return Err(header_err(path, "image must be square"));
    }
    let data = levels.iter().map(|&q| lo + (hi - lo) * q as f64 / 65535.0).collect();
    Image::from_vec(Grid::new(w, pixel_size)?, data)
}
