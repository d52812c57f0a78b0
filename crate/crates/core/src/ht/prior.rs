use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

/// Full-covariance Gaussian used for the zero-density zones.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrior {
    mean: Vec<f64>,
    covariance: Vec<f64>,
    // Lower Cholesky factor, row-major.
    chol: Vec<f64>,
    log_norm: f64,
}

impl GaussianPrior {
    /// Builds the prior from a mean and a symmetric positive-definite
    /// covariance (row-major).
    pub fn new(mean: Vec<f64>, covariance: Vec<f64>) -> Result<Self> {
        let d = mean.len();
        if covariance.len() != d * d {
            return Err(Error::DimensionMismatch {
                expected: d * d,
                got: covariance.len(),
            });
        }
        for i in 0..d {
            for j in 0..i {
                let (a, b) = (covariance[i * d + j], covariance[j * d + i]);
                if (a - b).abs() > 1e-12 * a.abs().max(b.abs()).max(1.0) {
                    return Err(Error::DegenerateData("covariance is not symmetric".into()));
                }
            }
        }
        let chol = DMatrix::from_row_slice(d, d, &covariance)
            .cholesky()
            .ok_or_else(|| Error::DegenerateData("covariance is not positive definite".into()))?
            .l();
        let mut l = Vec::with_capacity(d * d);
        for i in 0..d {
            for j in 0..d {
                l.push(chol[(i, j)]);
            }
        }
        let log_det: f64 = 2.0 * (0..d).map(|i| l[i * d + i].ln()).sum::<f64>();
        let log_norm = -0.5 * (d as f64 * (2.0 * PI).ln() + log_det);
        Ok(Self {
            mean,
            covariance,
            chol: l,
            log_norm,
        })
    }

    /// Sample mean and unbiased covariance of `x`, with
    /// `ridge * trace / D` added to the diagonal. Also returns the
    /// pre-ridge trace.
    pub fn estimate(x: &FeatureMatrix, ridge: f64) -> Result<(Self, f64)> {
        let n = x.rows();
        let d = x.cols();
        if n < 2 {
            return Err(Error::InsufficientData { needed: 2, got: n });
        }
        let (mean, mut cov) = mean_and_covariance(x);
        let trace: f64 = (0..d).map(|i| cov[i * d + i]).sum();
        if !(trace > 0.0) {
            return Err(Error::DegenerateData(
                "training vectors have zero spread".into(),
            ));
        }
        let boost = ridge * trace / d as f64;
        for i in 0..d {
            cov[i * d + i] += boost;
        }
        Ok((Self::new(mean, cov)?, trace))
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn covariance(&self) -> &[f64] {
        &self.covariance
    }

    pub fn log_det(&self) -> f64 {
        -2.0 * self.log_norm - self.dim() as f64 * (2.0 * PI).ln()
    }

    /// `log N(x; mu, C)`.
    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        let d = self.mean.len();
        let mut z = [0.0f64; 64];
        let mut heap;
        let z: &mut [f64] = if d <= 64 {
            &mut z[..d]
        } else {
            heap = vec![0.0; d];
            &mut heap
        };
        // Forward substitution L z = x - mu.
        let mut quad = 0.0;
        for i in 0..d {
            let row = &self.chol[i * d..i * d + i];
            let mut s = x[i] - self.mean[i];
            for (l, zj) in row.iter().zip(z.iter()) {
                s -= l * zj;
            }
            let zi = s / self.chol[i * d + i];
            z[i] = zi;
            quad += zi * zi;
        }
        self.log_norm - 0.5 * quad
    }

    pub fn pdf(&self, x: &[f64]) -> f64 {
        self.log_pdf(x).exp()
    }
}

/// Sample mean and `1/(N-1)`-normalized covariance, row-major.
pub fn mean_and_covariance(x: &FeatureMatrix) -> (Vec<f64>, Vec<f64>) {
    let n = x.rows();
    let d = x.cols();
    let mut mean = vec![0.0; d];
    for r in x.iter_rows() {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut cov = vec![0.0; d * d];
    let mut centred = vec![0.0; d];
    for r in x.iter_rows() {
        for ((c, v), m) in centred.iter_mut().zip(r).zip(&mean) {
            *c = v - m;
        }
        for i in 0..d {
            let ci = centred[i];
            let row = &mut cov[i * d..i * d + i + 1];
            for (slot, cj) in row.iter_mut().zip(&centred) {
                *slot += ci * cj;
            }
        }
    }
    let denom = (n - 1) as f64;
    for i in 0..d {
        for j in 0..=i {
            let v = cov[i * d + j] / denom;
            cov[i * d + j] = v;
            cov[j * d + i] = v;
        }
    }
    (mean, cov)
}
