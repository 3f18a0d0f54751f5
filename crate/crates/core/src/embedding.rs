//! Row-major embedding matrices and the CBV1 binary container.
//!
//! Layout of a CBV1 block (all integers little-endian):
//!
//! | offset | size      | content                              |
//! |--------|-----------|--------------------------------------|
//! | 0      | 4         | ASCII `CBV1`                         |
//! | 4      | 1         | version, `0x01`                      |
//! | 5      | 4         | `u32` row count N                    |
//! | 9      | 4         | `u32` dimension d                    |
//! | 13     | 4·N·d     | `f32` values, row-major              |
//! | ..     | 4         | `u32` byte length L of the trailer   |
//! | ..     | L         | UTF-8 JSON `{"ids":[...]}`, N ids    |

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CBV1";
pub const VERSION: u8 = 0x01;
const HEADER_LEN: usize = 13;

/// Tolerance on row norms for inputs that must be unit-normalized.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

/// Dot product of two `f32` vectors with `f64` accumulation in index order.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        acc += f64::from(*x) * f64::from(*y);
    }
    acc
}

/// L2 norm with `f64` accumulation.
pub fn norm(v: &[f32]) -> f64 {
    dot(v, v).sqrt()
}

#[derive(Serialize, Deserialize)]
struct IdTrailer {
    ids: Vec<String>,
}

/// An N×d matrix of `f32` embeddings with one unique string id per row.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    data: Vec<f32>,
    ids: Vec<String>,
    index: HashMap<String, usize>,
}

impl EmbeddingMatrix {
    /// Builds a matrix from a flat row-major buffer, validating shape, finiteness and id uniqueness.
    pub fn new(dim: usize, data: Vec<f32>, ids: Vec<String>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Format("embedding dimension must be at least 1".into()));
        }
        if ids.is_empty() {
            return Err(Error::Format("embedding matrix must have at least 1 row".into()));
        }
        if data.len() != ids.len() * dim {
            return Err(Error::Format(format!(
                "expected {} values for {} rows of dimension {}, got {}",
                ids.len() * dim,
                ids.len(),
                dim,
                data.len()
            )));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::Format(format!("duplicate embedding id {id:?}")));
            }
        }
        for (i, row) in data.chunks_exact(dim).enumerate() {
            if let Some(j) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::Data(format!(
                    "non-finite value {} at column {j} of row {:?}",
                    row[j], ids[i]
                )));
            }
        }
        Ok(Self {
            dim,
            data,
            ids,
            index,
        })
    }

    pub fn from_rows<S: Into<String>>(ids: Vec<S>, rows: &[Vec<f32>]) -> Result<Self> {
        let ids: Vec<String> = ids.into_iter().map(Into::into).collect();
        if ids.len() != rows.len() {
            return Err(Error::Format(format!(
                "{} ids for {} rows",
                ids.len(),
                rows.len()
            )));
        }
        let dim = rows.first().map_or(0, Vec::len);
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != dim) {
            return Err(Error::Format(format!(
                "row {:?} has length {}, expected {dim}",
                ids[i],
                r.len()
            )));
        }
        Self::new(dim, rows.concat(), ids)
    }

    pub fn rows(&self) -> usize {
        self.ids.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn id(&self, i: usize) -> &str {
        &self.ids[i]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Scales every row to unit L2 norm. Zero rows are rejected.
    pub fn normalize(&mut self) -> Result<()> {
        let dim = self.dim;
        for (i, row) in self.data.chunks_exact_mut(dim).enumerate() {
            let n = norm(row);
            if n == 0.0 {
                return Err(Error::Data(format!(
                    "row {:?} has zero norm and cannot be normalized",
                    self.ids[i]
                )));
            }
            for v in row.iter_mut() {
                *v = (f64::from(*v) / n) as f32;
            }
        }
        Ok(())
    }

    pub fn normalized(&self) -> Result<Self> {
        let mut out = self.clone();
        out.normalize()?;
        Ok(out)
    }

    /// Returns `Err(Contract)` naming the first row whose norm is further than `tol` from 1.
    pub fn check_unit_norm(&self, tol: f64) -> Result<()> {
        for (i, row) in self.iter_rows().enumerate() {
            let n = norm(row);
            if (n - 1.0).abs() > tol {
                return Err(Error::Contract(format!(
                    "row {:?} has norm {n}, expected unit norm",
                    self.ids[i]
                )));
            }
        }
        Ok(())
    }

    /// Copies the given rows, in order, into a new matrix.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * self.dim);
        let mut ids = Vec::with_capacity(rows.len());
        for &r in rows {
            if r >= self.rows() {
                return Err(Error::Contract(format!(
                    "row index {r} out of range for {} rows",
                    self.rows()
                )));
            }
            data.extend_from_slice(self.row(r));
            ids.push(self.ids[r].clone());
        }
        Self::new(self.dim, data, ids)
    }

    /// Appends the CBV1 encoding of this matrix to `out`.
    pub fn encode_into(&self, out: &mut Vec<u8>) {
        let trailer = serde_json::to_vec(&IdTrailer {
            ids: self.ids.clone(),
        })
        .expect("id list serializes");
        out.reserve(HEADER_LEN + 4 * self.data.len() + 4 + trailer.len());
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&(self.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(trailer.len() as u32).to_le_bytes());
        out.extend_from_slice(&trailer);
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.encode_into(&mut out);
        out
    }

    /// Decodes one CBV1 block from the front of `bytes`, returning it with the number of bytes consumed.
    pub fn decode_block(bytes: &[u8]) -> Result<(Self, usize)> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Format(format!(
                "expected a {HEADER_LEN}-byte header, found {} bytes",
                bytes.len()
            )));
        }
        if &bytes[0..4] != MAGIC {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected \"CBV1\"",
                String::from_utf8_lossy(&bytes[0..4])
            )));
        }
        if bytes[4] != VERSION {
            return Err(Error::Format(format!(
                "unsupported version {:#04x}, expected {VERSION:#04x}",
                bytes[4]
            )));
        }
        let n = read_u32(bytes, 5) as usize;
        let d = read_u32(bytes, 9) as usize;
        if n == 0 || d == 0 {
            return Err(Error::Format(format!(
                "header declares N={n}, d={d}; both must be at least 1"
            )));
        }
        let payload_len = n
            .checked_mul(d)
            .and_then(|x| x.checked_mul(4))
            .ok_or_else(|| Error::Format(format!("header N={n}, d={d} overflows")))?;
        let payload_end = HEADER_LEN + payload_len;
        if bytes.len() < payload_end {
            return Err(Error::Format(format!(
                "truncated payload: N={n}, d={d} requires {payload_len} bytes of float data, found {}",
                bytes.len() - HEADER_LEN
            )));
        }
        let data: Vec<f32> = bytes[HEADER_LEN..payload_end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();

        if bytes.len() < payload_end + 4 {
            return Err(Error::Format(
                "missing id trailer length after float payload".into(),
            ));
        }
        let trailer_len = read_u32(bytes, payload_end) as usize;
        let trailer_start = payload_end + 4;
        let trailer_end = trailer_start + trailer_len;
        if bytes.len() < trailer_end {
            return Err(Error::Format(format!(
                "truncated id trailer: expected {trailer_len} bytes, found {}",
                bytes.len() - trailer_start
            )));
        }
        let trailer: IdTrailer = serde_json::from_slice(&bytes[trailer_start..trailer_end])
            .map_err(|e| Error::Format(format!("invalid id trailer: {e}")))?;
        if trailer.ids.len() != n {
            return Err(Error::Format(format!(
                "id trailer lists {} ids for {n} rows",
                trailer.ids.len()
            )));
        }
        Ok((Self::new(d, data, trailer.ids)?, trailer_end))
    }

    /// Decodes a buffer that must contain exactly one CBV1 block.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let (m, used) = Self::decode_block(bytes)?;
        if used != bytes.len() {
            return Err(Error::Format(format!(
                "{} unexpected trailing bytes after CBV1 block",
                bytes.len() - used
            )));
        }
        Ok(m)
    }

    /// Reads a CBV1 file, optionally normalizing every row to unit norm.
    pub fn load(path: impl AsRef<Path>, normalize: bool) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut m = Self::decode(&bytes)?;
        if normalize {
            m.normalize()?;
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}
