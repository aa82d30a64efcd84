//! Image dumps: multi-page binary PGM (P5, one page per channel) and raw
//! little-endian f32 blobs with a JSON sidecar describing the shape.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Maps `[lo, hi]` linearly to 0..=255; a flat range maps to 0.
fn to_gray(v: f32, lo: f32, hi: f32) -> u8 {
    if hi <= lo {
        return 0;
    }
    (((v - lo) / (hi - lo)).clamp(0.0, 1.0) * 255.0).round() as u8
}

/// One P5 page per channel, all scaled by the tensor's global min and max.
pub fn encode_pgm(t: &Tensor) -> Result<Vec<u8>> {
    let (c, h, w) = t.dims3()?;
    let (lo, hi) = (t.min(), t.max());
    let mut out = Vec::with_capacity(c * (h * w + 16));
    for ch in 0..c {
        write!(out, "P5\n{w} {h}\n255\n").expect("write to Vec");
        out.extend(t.channel(ch).iter().map(|v| to_gray(*v, lo, hi)));
    }
    Ok(out)
}

pub fn write_pgm(path: &Path, t: &Tensor) -> Result<()> {
    std::fs::write(path, encode_pgm(t)?).map_err(|e| Error::io(path, e))
}

/// A decoded P5 page.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PgmPage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

/// Parses concatenated P5 pages with maxval 255.
pub fn decode_pgm(bytes: &[u8]) -> Result<Vec<PgmPage>> {
    let bad = |r: &str| Error::invalid(format!("PGM: {r}"));
    let mut pages = Vec::new();
    let mut pos = 0;
    while pos < bytes.len() {
        let mut fields = Vec::new();
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(bad("truncated header"));
            }
            fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header"))?);
        }
        pos += 1;
        if fields[0] != "P5" || fields[3] != "255" {
            return Err(bad("expected P5 with maxval 255"));
        }
        let width: usize = fields[1].parse().map_err(|_| bad("width"))?;
        let height: usize = fields[2].parse().map_err(|_| bad("height"))?;
        let end = pos + width * height;
        if end > bytes.len() {
            return Err(bad("truncated raster"));
        }
        pages.push(PgmPage {
            width,
            height,
            pixels: bytes[pos..end].to_vec(),
        });
        pos = end;
    }
    Ok(pages)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawSidecar {
    pub shape: Vec<usize>,
    pub dtype: String,
    pub endianness: String,
}

/// Writes `<stem>.f32` and `<stem>.json`; returns both paths.
pub fn write_raw_f32(stem: &Path, t: &Tensor) -> Result<(PathBuf, PathBuf)> {
    let data = stem.with_extension("f32");
    let meta = stem.with_extension("json");
    let bytes: Vec<u8> = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
    std::fs::write(&data, bytes).map_err(|e| Error::io(&data, e))?;
    let side = RawSidecar {
        shape: t.shape().to_vec(),
        dtype: "f32".into(),
        endianness: "little".into(),
    };
    let json = serde_json::to_string_pretty(&side).expect("sidecar serialises");
    std::fs::write(&meta, json + "\n").map_err(|e| Error::io(&meta, e))?;
    Ok((data, meta))
}

pub fn read_raw_f32(stem: &Path) -> Result<Tensor> {
    let data = stem.with_extension("f32");
    let meta = stem.with_extension("json");
    let side: RawSidecar = serde_json::from_slice(&std::fs::read(&meta).map_err(|e| Error::io(&meta, e))?)
        .map_err(|e| Error::malformed(&meta, e.to_string()))?;
    let bytes = std::fs::read(&data).map_err(|e| Error::io(&data, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::malformed(&data, "size is not a multiple of 4"));
    }
    let v = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    Tensor::new(side.shape, v).map_err(|e| Error::malformed(&data, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pages_roundtrip() {
        let t = Tensor::from_fn((2, 3, 4), |c, y, x| (c * 12 + y * 4 + x) as f32).unwrap();
        let pages = decode_pgm(&encode_pgm(&t).unwrap()).unwrap();
        assert_eq!(pages.len(), 2);
        assert_eq!((pages[0].width, pages[0].height), (4, 3));
        assert_eq!(pages[0].pixels[0], 0);
        assert_eq!(pages[1].pixels[11], 255);
    }

    #[test]
    fn flat_tensor_is_black() {
        let pages = decode_pgm(&encode_pgm(&Tensor::full(&[1, 2, 2], 3.0)).unwrap()).unwrap();
        assert_eq!(pages[0].pixels, vec![0; 4]);
    }

    #[test]
    fn raw_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let t = Tensor::from_fn((2, 2, 3), |c, y, x| c as f32 - y as f32 * 0.5 + x as f32 * 1e-3).unwrap();
        let (d, m) = write_raw_f32(&dir.path().join("res"), &t).unwrap();
        assert!(d.ends_with("res.f32") && m.ends_with("res.json"));
        assert_eq!(read_raw_f32(&dir.path().join("res")).unwrap(), t);
    }
}
