use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Reference axis scale that puts unit-width bins at the multivariate
/// histogram bandwidth: `N^(1/(2+D)) / 3.5 * sqrt(D / trace(C))`.
pub fn lambda_hat(n: usize, dim: usize, trace: f64) -> Result<f64> {
    if n == 0 || dim == 0 {
        return Err(Error::InsufficientData { needed: 1, got: n });
    }
    if !(trace > 0.0) {
        return Err(Error::DegenerateData(format!(
            "covariance trace {trace} is not positive"
        )));
    }
    let d = dim as f64;
    Ok((n as f64).powf(1.0 / (2.0 + d)) / 3.5 * (d / trace).sqrt())
}

/// Uniformly random rotation from the QR factorization of a standard normal
/// matrix, with Q's columns sign-flipped so diag(R) is positive.
pub fn sample_rotation<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let g = DMatrix::<f64>::from_row_iterator(
            dim,
            dim,
            (0..dim * dim).map(|_| rng.sample::<f64, _>(StandardNormal)),
        );
        let qr = g.qr();
        let r = qr.r();
        if (0..dim).any(|k| r[(k, k)].abs() < 1e-12) {
            // Rank-deficient draw; probability zero, but redraw.
            continue;
        }
        let q = qr.q();
        let mut u = Vec::with_capacity(dim * dim);
        for row in 0..dim {
            for col in 0..dim {
                u.push(q[(row, col)] * r[(col, col)].signum());
            }
        }
        return u;
    }
}

/// Axis scales with `log(lambda_k)` uniform on
/// `[theta_min + log(lam_hat), theta_max + log(lam_hat)]`.
pub fn sample_scales<R: Rng + ?Sized>(
    dim: usize,
    lam_hat: f64,
    theta_min: f64,
    theta_max: f64,
    rng: &mut R,
) -> Vec<f64> {
    (0..dim)
        .map(|_| {
            let u: f64 = rng.random();
            lam_hat * (theta_min + u * (theta_max - theta_min)).exp()
        })
        .collect()
}

/// Lattice offset, uniform on `[0, 1)^D`.
pub fn sample_offset<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    (0..dim).map(|_| rng.random::<f64>()).collect()
}

/// One random affine map `x -> U diag(lambda) x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineTransform {
    dim: usize,
    rotation: Vec<f64>,
    scales: Vec<f64>,
    offset: Vec<f64>,
    // U diag(lambda), row-major.
    linear: Vec<f64>,
    log_abs_det: f64,
}

impl AffineTransform {
    pub fn new(rotation: Vec<f64>, scales: Vec<f64>, offset: Vec<f64>) -> Result<Self> {
        let dim = scales.len();
        if rotation.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                got: rotation.len(),
            });
        }
        if offset.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: offset.len(),
            });
        }
        if scales.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Format("transform scales must be positive".into()));
        }
        let mut linear = rotation.clone();
        for row in linear.chunks_exact_mut(dim) {
            for (a, s) in row.iter_mut().zip(&scales) {
                *a *= s;
            }
        }
        let log_abs_det = scales.iter().map(|s| s.ln()).sum();
        Ok(Self {
            dim,
            rotation,
            scales,
            offset,
            linear,
            log_abs_det,
        })
    }

    pub fn sample<R: Rng + ?Sized>(
        dim: usize,
        lam_hat: f64,
        theta_min: f64,
        theta_max: f64,
        rng: &mut R,
    ) -> Self {
        let rotation = sample_rotation(dim, rng);
        let scales = sample_scales(dim, lam_hat, theta_min, theta_max, rng);
        let offset = sample_offset(dim, rng);
        Self::new(rotation, scales, offset).expect("sampled parameters are valid")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rotation(&self) -> &[f64] {
        &self.rotation
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn offset(&self) -> &[f64] {
        &self.offset
    }

    /// `log |det A| = sum_k log(lambda_k)`.
    pub fn log_abs_det(&self) -> f64 {
        self.log_abs_det
    }

    /// Input-space volume of one unit lattice cell, `|det A|^-1`.
    pub fn bin_volume(&self) -> f64 {
        (-self.log_abs_det).exp()
    }

    /// `A x + b`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.linear
            .chunks_exact(self.dim)
            .zip(&self.offset)
            .map(|(row, b)| row.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() + b)
            .collect()
    }

    /// Lattice cell of `x` written into `out`. Returns `false` when a
    /// coordinate does not fit in an `i64`.
    #[inline]
    pub fn cell_into(&self, x: &[f64], out: &mut [i64]) -> bool {
        for ((row, b), o) in self
            .linear
            .chunks_exact(self.dim)
            .zip(&self.offset)
            .zip(out)
        {
            let mut z = *b;
            for (a, v) in row.iter().zip(x) {
                z += a * v;
            }
            // f64::round breaks ties away from zero.
            let r = z.round();
            if !(r.abs() < 9.223_372_036_854_775e18) {
                return false;
            }
            *o = r as i64;
        }
        true
    }

    /// `round(A x + b)` componentwise, ties away from zero.
    pub fn apply_and_round(&self, x: &[f64]) -> Result<Vec<i64>> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        let mut out = vec![0; self.dim];
        if self.cell_into(x, &mut out) {
            Ok(out)
        } else {
            Err(Error::Overflow(format!(
                "transformed point {:?} leaves the i64 lattice",
                self.apply(x)
            )))
        }
    }

    /// Preimage `A^-1 (z - b) = diag(1/lambda) U^T (z - b)`.
    pub fn invert(&self, z: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let shifted: Vec<f64> = z.iter().zip(&self.offset).map(|(z, b)| z - b).collect();
        (0..d)
            .map(|j| {
                let ut: f64 = (0..d).map(|k| self.rotation[k * d + j] * shifted[k]).sum();
                ut / self.scales[j]
            })
            .collect()
    }
}
