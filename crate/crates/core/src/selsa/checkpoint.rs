//! Binary checkpoint format. All integers and floats are little-endian.
//!
//! ```text
//! magic        8 bytes   "SELSACKP"
//! version      u32       1
//! feature_dim  u32       d
//! sim_dim      u32       output width of phi/psi
//! n_classes    u32       foreground classes C (classifier has C + 1 rows)
//! n_tensors    u32       14
//! n_tensors times:
//!   name_len   u32
//!   name       name_len bytes of UTF-8, e.g. "fc1.weight", "phi2.bias"
//!   rows       u32
//!   cols       u32       1 for bias vectors
//!   data       rows * cols f64, row-major
//! ```
//!
//! Tensors appear in the order fc1, fc2, phi1, psi1, phi2, psi2, classifier,
//! weight before bias.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::{AffineTransform, SelsaParams, TRANSFORM_NAMES};
use crate::error::{Result, SelsaError};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SELSACKP";
pub const CHECKPOINT_VERSION: u32 = 1;

fn push_u32(buf: &mut Vec<u8>, v: usize) {
    buf.extend_from_slice(&(v as u32).to_le_bytes());
}

fn push_tensor(buf: &mut Vec<u8>, name: &str, rows: usize, cols: usize, data: &[f64]) {
    push_u32(buf, name.len());
    buf.extend_from_slice(name.as_bytes());
    push_u32(buf, rows);
    push_u32(buf, cols);
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_checkpoint(params: &SelsaParams) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    push_u32(&mut buf, CHECKPOINT_VERSION as usize);
    push_u32(&mut buf, params.feature_dim());
    push_u32(&mut buf, params.sim_dim());
    push_u32(&mut buf, params.n_classes());
    push_u32(&mut buf, 2 * TRANSFORM_NAMES.len());
    for (name, t) in params.transforms() {
        let w: Vec<f64> = t.weight.iter().copied().collect();
        push_tensor(&mut buf, &format!("{name}.weight"), t.d_out(), t.d_in(), &w);
        let b: Vec<f64> = t.bias.iter().copied().collect();
        push_tensor(&mut buf, &format!("{name}.bias"), t.d_out(), 1, &b);
    }
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(SelsaError::Input(format!(
                "checkpoint truncated at byte {}",
                self.pos
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let b = self.take(n * 8)?;
        Ok(b.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect())
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<SelsaParams> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(SelsaError::Input(
            "not a checkpoint file (bad magic)".into(),
        ));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION as usize {
        return Err(SelsaError::Input(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let d = r.u32()?;
    let sim = r.u32()?;
    let c = r.u32()?;
    let n_tensors = r.u32()?;
    if n_tensors != 2 * TRANSFORM_NAMES.len() {
        return Err(SelsaError::Input(format!(
            "checkpoint holds {n_tensors} tensors, expected 14"
        )));
    }
    let mut params = SelsaParams::zeros(d, sim, c);
    for (name, t) in params.transforms_mut() {
        for part in ["weight", "bias"] {
            let expected = format!("{name}.{part}");
            let len = r.u32()?;
            let got = r.take(len)?;
            if got != expected.as_bytes() {
                return Err(SelsaError::Input(format!(
                    "checkpoint tensor {:?} where {expected:?} was expected",
                    String::from_utf8_lossy(got)
                )));
            }
            let rows = r.u32()?;
            let cols = r.u32()?;
            let want = if part == "weight" {
                (t.d_out(), t.d_in())
            } else {
                (t.d_out(), 1)
            };
            if (rows, cols) != want {
                return Err(SelsaError::Config(format!(
                    "checkpoint tensor {expected} has shape {rows}x{cols}, header implies {}x{}",
                    want.0, want.1
                )));
            }
            let data = r.f64s(rows * cols)?;
            if part == "weight" {
                *t = AffineTransform {
                    weight: Array2::from_shape_vec((rows, cols), data)
                        .expect("shape checked above"),
                    bias: t.bias.clone(),
                };
            } else {
                t.bias = Array1::from(data);
            }
        }
    }
    if r.pos != bytes.len() {
        return Err(SelsaError::Input("trailing bytes after checkpoint".into()));
    }
    params.validate()?;
    Ok(params)
}

pub fn write_checkpoint(path: &Path, params: &SelsaParams) -> Result<()> {
    fs::write(path, encode_checkpoint(params)).map_err(|e| SelsaError::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<SelsaParams> {
    let bytes = fs::read(path).map_err(|e| SelsaError::io(path, e))?;
    decode_checkpoint(&bytes)
}
