//! `HTMD` model files (little-endian).
//!
//! ```text
//! "HTMD" u32 version=1 u32 D u64 N f64 pi0
//! f64[D] mean  f64[D*D] covariance
//! u32 H, then H times:
//!     f64[D*D] U  f64[D] lambda  f64[D] b
//!     u64 cells, then cells times: i64[D] key, u64 count
//! ```
//!
//! Cells are written in lexicographic key order, so identical models give
//! identical bytes.

use std::io::{Read, Write};
use std::path::Path;

use super::histogram::SparseHistogram;
use super::model::HtModel;
use super::prior::GaussianPrior;
use super::transform::AffineTransform;
use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"HTMD";
const VERSION: u32 = 1;

impl HtModel {
    pub fn write_to<W: Write>(&self, w: W) -> Result<()> {
        let d = self.dim;
        let mut out = Writer::new(w);
        out.bytes(MAGIC)?;
        out.u32(VERSION)?;
        out.u32(u32::try_from(d).map_err(|_| Error::Format("dimension exceeds u32".into()))?)?;
        out.u64(self.n)?;
        out.f64(self.pi0)?;
        out.f64s(self.prior.mean())?;
        out.f64s(self.prior.covariance())?;
        out.u32(u32::try_from(self.h()).map_err(|_| Error::Format("H exceeds u32".into()))?)?;
        for (t, h) in self.transforms.iter().zip(&self.histograms) {
            out.f64s(t.rotation())?;
            out.f64s(t.scales())?;
            out.f64s(t.offset())?;
            let cells = h.sorted_cells();
            out.u64(cells.len() as u64)?;
            for (key, count) in cells {
                for &k in key {
                    out.i64(k)?;
                }
                out.u64(count)?;
            }
        }
        out.finish()
    }

    pub fn read_from<R: Read>(r: R) -> Result<HtModel> {
        let mut inp = Reader::new(r);
        if &inp.array::<4>()? != MAGIC {
            return Err(Error::Format("not an HTMD model file".into()));
        }
        let version = inp.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported HTMD version {version}")));
        }
        let d = inp.u32()? as usize;
        let n = inp.u64()?;
        let pi0 = inp.f64()?;
        let mean = inp.f64s(d)?;
        let cov = inp.f64s(d * d)?;
        let prior = GaussianPrior::new(mean, cov)?;
        let h = inp.u32()? as usize;
        let mut transforms = Vec::with_capacity(h);
        let mut histograms = Vec::with_capacity(h);
        let mut key = vec![0i64; d];
        for _ in 0..h {
            let u = inp.f64s(d * d)?;
            let lambda = inp.f64s(d)?;
            let b = inp.f64s(d)?;
            transforms.push(AffineTransform::new(u, lambda, b)?);
            let cells = inp.u64()?;
            let mut hist = SparseHistogram::new();
            for _ in 0..cells {
                for k in key.iter_mut() {
                    *k = inp.i64()?;
                }
                let count = inp.u64()?;
                if count == 0 {
                    return Err(Error::Format("zero-count cell in histogram".into()));
                }
                hist.add(&key, count);
            }
            histograms.push(hist);
        }
        inp.expect_end()?;
        HtModel::from_parts(n, pi0, prior, transforms, histograms)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf).map_err(|e| Error::file(path, e))
    }

    pub fn load(path: &Path) -> Result<HtModel> {
        let bytes = std::fs::read(path).map_err(|e| Error::file(path, e))?;
        HtModel::read_from(bytes.as_slice())
    }
}
