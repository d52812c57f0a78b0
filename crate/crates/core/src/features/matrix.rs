use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const HTFX_MAGIC: &[u8; 4] = b"HTFX";
const HTFX_VERSION: u32 = 1;

/// Row-major `T x D` matrix of per-frame feature vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    /// Wraps row-major `data`. Every entry must be finite.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Format(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Format(format!(
                "non-finite feature at row {}, column {}",
                pos / cols.max(1),
                pos % cols.max(1)
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    expected: cols,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Copy of `len` consecutive rows starting at `start`.
    pub fn slice_rows(&self, start: usize, len: usize) -> FeatureMatrix {
        let data = self.data[start * self.cols..(start + len) * self.cols].to_vec();
        FeatureMatrix {
            rows: len,
            cols: self.cols,
            data,
        }
    }

    pub fn select_rows(&self, indices: &[usize]) -> FeatureMatrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        FeatureMatrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    /// Keeps only the listed columns, in the given order.
    pub fn select_cols(&self, cols: &[usize]) -> Result<FeatureMatrix> {
        if let Some(&c) = cols.iter().find(|&&c| c >= self.cols) {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                got: c + 1,
            });
        }
        let mut data = Vec::with_capacity(self.rows * cols.len());
        for r in self.iter_rows() {
            data.extend(cols.iter().map(|&c| r[c]));
        }
        Ok(FeatureMatrix {
            rows: self.rows,
            cols: cols.len(),
            data,
        })
    }

    /// Stacks matrices vertically. All inputs must share a column count.
    pub fn vstack<'a>(parts: impl IntoIterator<Item = &'a FeatureMatrix>) -> Result<FeatureMatrix> {
        let mut out: Option<FeatureMatrix> = None;
        for p in parts {
            match &mut out {
                None => out = Some(p.clone()),
                Some(acc) => {
                    if acc.cols != p.cols {
                        return Err(Error::DimensionMismatch {
                            expected: acc.cols,
                            got: p.cols,
                        });
                    }
                    acc.data.extend_from_slice(&p.data);
                    acc.rows += p.rows;
                }
            }
        }
        out.ok_or_else(|| Error::EmptyInput("nothing to stack".into()))
    }

    /// Serializes in the `HTFX` feature-cache layout.
    pub fn write_htfx<W: Write>(&self, mut w: W) -> Result<()> {
        let mut buf = Vec::with_capacity(16 + self.data.len() * 8);
        buf.extend_from_slice(HTFX_MAGIC);
        buf.extend_from_slice(&HTFX_VERSION.to_le_bytes());
        buf.extend_from_slice(&to_u32(self.rows, "row count")?.to_le_bytes());
        buf.extend_from_slice(&to_u32(self.cols, "column count")?.to_le_bytes());
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_htfx<R: Read>(mut r: R) -> Result<FeatureMatrix> {
        let mut header = [0u8; 16];
        r.read_exact(&mut header)
            .map_err(|_| Error::Format("truncated HTFX header".into()))?;
        if &header[..4] != HTFX_MAGIC {
            return Err(Error::Format("not an HTFX feature file".into()));
        }
        let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
        if version != HTFX_VERSION {
            return Err(Error::Format(format!("unsupported HTFX version {version}")));
        }
        let rows = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
        let cols = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
        let mut body = vec![0u8; rows * cols * 8];
        r.read_exact(&mut body)
            .map_err(|_| Error::Format("truncated HTFX body".into()))?;
        let data = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        FeatureMatrix::new(rows, cols, data)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_htfx(&mut buf)?;
        std::fs::write(path, buf).map_err(|e| Error::file(path, e))
    }

    pub fn load(path: &Path) -> Result<FeatureMatrix> {
        let bytes = std::fs::read(path).map_err(|e| Error::file(path, e))?;
        FeatureMatrix::read_htfx(bytes.as_slice())
    }
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Format(format!("{what} {v} exceeds u32")))
}
