use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::histogram::SparseHistogram;
use super::prior::GaussianPrior;
use super::transform::{lambda_hat, AffineTransform};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::rng::substream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HtConfig {
    /// Number of random transforms.
    pub h: usize,
    pub theta_min: f64,
    pub theta_max: f64,
    pub seed: u64,
    pub prior_ridge: f64,
}

impl Default for HtConfig {
    fn default() -> Self {
        Self {
            h: 400,
            theta_min: 0.0,
            theta_max: 2.0,
            seed: 0,
            prior_ridge: 1e-6,
        }
    }
}

impl HtConfig {
    pub fn validate(&self) -> Result<()> {
        if self.h == 0 {
            return Err(Error::Config("need at least one transform".into()));
        }
        if !(self.theta_min < self.theta_max) {
            return Err(Error::Config(format!(
                "theta_min ({}) must be below theta_max ({})",
                self.theta_min, self.theta_max
            )));
        }
        if !(self.prior_ridge >= 0.0) {
            return Err(Error::Config("prior ridge must be non-negative".into()));
        }
        Ok(())
    }
}

/// Histogram-transform density model of one training set.
///
/// The density is a Gaussian floor weighted by `pi0 = 1/(N+1)` plus the
/// average of `H` histograms, each built on a randomly rotated, scaled and
/// shifted unit lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct HtModel {
    pub(crate) dim: usize,
    pub(crate) n: u64,
    pub(crate) pi0: f64,
    pub(crate) prior: GaussianPrior,
    pub(crate) transforms: Vec<AffineTransform>,
    pub(crate) histograms: Vec<SparseHistogram>,
    /// Training configuration; `None` for models read from disk.
    pub(crate) config: Option<HtConfig>,
}

/// Histogram of `x` on the lattice of `t`.
pub fn build_histogram(t: &AffineTransform, x: &FeatureMatrix) -> Result<SparseHistogram> {
    let mut hist = SparseHistogram::new();
    let mut cell = vec![0i64; t.dim()];
    for (j, row) in x.iter_rows().enumerate() {
        if !t.cell_into(row, &mut cell) {
            return Err(Error::Overflow(format!(
                "training vector {j} leaves the lattice"
            )));
        }
        hist.insert(&cell);
    }
    Ok(hist)
}

impl HtModel {
    pub fn fit(x: &FeatureMatrix, cfg: &HtConfig) -> Result<Self> {
        cfg.validate()?;
        let n = x.rows();
        let dim = x.cols();
        if n < 2 {
            return Err(Error::InsufficientData { needed: 2, got: n });
        }
        if dim == 0 {
            return Err(Error::Config("feature dimension must be positive".into()));
        }
        let (prior, raw_trace) = GaussianPrior::estimate(x, cfg.prior_ridge)?;
        let lam = lambda_hat(n, dim, raw_trace)?;
        log::debug!(
            "fitting {} transforms, N={n}, D={dim}, lambda_hat={lam:.6}",
            cfg.h
        );

        let parts = (0..cfg.h)
            .into_par_iter()
            .map(|i| {
                let mut rng = substream(cfg.seed, i as u64);
                let t = AffineTransform::sample(dim, lam, cfg.theta_min, cfg.theta_max, &mut rng);
                let hist = build_histogram(&t, x)?;
                Ok((t, hist))
            })
            .collect::<Result<Vec<_>>>()?;
        let (transforms, histograms) = parts.into_iter().unzip();

        Ok(Self {
            dim,
            n: n as u64,
            pi0: 1.0 / (n as f64 + 1.0),
            prior,
            transforms,
            histograms,
            config: Some(cfg.clone()),
        })
    }

    /// Assembles a model from parts, checking the structural invariants.
    pub fn from_parts(
        n: u64,
        pi0: f64,
        prior: GaussianPrior,
        transforms: Vec<AffineTransform>,
        histograms: Vec<SparseHistogram>,
    ) -> Result<Self> {
        let dim = prior.dim();
        if transforms.is_empty() || transforms.len() != histograms.len() {
            return Err(Error::Format(format!(
                "{} transforms but {} histograms",
                transforms.len(),
                histograms.len()
            )));
        }
        if !(pi0 > 0.0 && pi0 <= 1.0) {
            return Err(Error::Format(format!("pi0 {pi0} outside (0, 1]")));
        }
        if let Some(t) = transforms.iter().find(|t| t.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: t.dim(),
            });
        }
        if histograms.iter().any(|h| h.total() != n) {
            return Err(Error::Format("histogram totals disagree with N".into()));
        }
        Ok(Self {
            dim,
            n,
            pi0,
            prior,
            transforms,
            histograms,
            config: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn pi0(&self) -> f64 {
        self.pi0
    }

    pub fn h(&self) -> usize {
        self.transforms.len()
    }

    pub fn prior(&self) -> &GaussianPrior {
        &self.prior
    }

    pub fn transforms(&self) -> &[AffineTransform] {
        &self.transforms
    }

    pub fn histograms(&self) -> &[SparseHistogram] {
        &self.histograms
    }

    pub fn config(&self) -> Option<&HtConfig> {
        self.config.as_ref()
    }

    /// The model restricted to its first `h` transforms. Because transform
    /// `i` depends only on the seed and `i`, this equals a fresh fit with
    /// `h` transforms.
    pub fn truncated(&self, h: usize) -> Result<HtModel> {
        if h == 0 || h > self.h() {
            return Err(Error::Config(format!(
                "cannot keep {h} of {} transforms",
                self.h()
            )));
        }
        Ok(HtModel {
            transforms: self.transforms[..h].to_vec(),
            histograms: self.histograms[..h].to_vec(),
            config: self.config.clone().map(|c| HtConfig { h, ..c }),
            ..self.clone_header()
        })
    }

    fn clone_header(&self) -> HtModel {
        HtModel {
            dim: self.dim,
            n: self.n,
            pi0: self.pi0,
            prior: self.prior.clone(),
            transforms: Vec::new(),
            histograms: Vec::new(),
            config: None,
        }
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() == self.dim {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            })
        }
    }

    /// Occupancy of `x`'s cell under transform `i` (0-based).
    #[inline]
    fn cell_count(&self, i: usize, x: &[f64], cell: &mut [i64]) -> u64 {
        if self.transforms[i].cell_into(x, cell) {
            self.histograms[i].count(cell)
        } else {
            0
        }
    }

    /// Histogram density of transform `i` (0-based):
    /// `count(cell(x)) / (N v_i)`, zero on empty cells.
    pub fn histogram_prob(&self, i: usize, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        if i >= self.h() {
            return Err(Error::Config(format!(
                "transform index {i} out of range for H={}",
                self.h()
            )));
        }
        let mut cell = vec![0; self.dim];
        let c = self.cell_count(i, x, &mut cell);
        if c == 0 {
            return Ok(0.0);
        }
        Ok(c as f64 * self.transforms[i].log_abs_det().exp() / self.n as f64)
    }

    /// `pi0 N(x; mu, C) + (1 - pi0) / H * sum_i P_i(x)`.
    pub fn density(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        let mut cell = vec![0; self.dim];
        let mut hist = 0.0;
        for i in 0..self.h() {
            let c = self.cell_count(i, x, &mut cell);
            if c > 0 {
                hist += c as f64 * self.transforms[i].log_abs_det().exp() / self.n as f64;
            }
        }
        Ok(self.pi0 * self.prior.pdf(x) + (1.0 - self.pi0) / self.h() as f64 * hist)
    }

    /// Per-transform `log P_i(x)` for occupied cells, in transform order.
    fn occupied_log_probs(&self, x: &[f64], upto: usize, out: &mut Vec<(usize, f64)>) {
        let mut cell = [0i64; 64];
        let mut heap;
        let cell: &mut [i64] = if self.dim <= 64 {
            &mut cell[..self.dim]
        } else {
            heap = vec![0; self.dim];
            &mut heap
        };
        let log_n = (self.n as f64).ln();
        out.clear();
        for i in 0..upto {
            let c = self.cell_count(i, x, cell);
            if c > 0 {
                out.push((
                    i,
                    (c as f64).ln() + self.transforms[i].log_abs_det() - log_n,
                ));
            }
        }
    }

    /// `log density(x)`, accumulated as a max-shifted log-sum over the
    /// Gaussian term and the occupied histogram terms.
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        let mut terms = Vec::new();
        self.occupied_log_probs(x, self.h(), &mut terms);
        Ok(self.mix(x, &terms, self.h()))
    }

    /// `log_density` of the `h`-transform truncations for every `h` in
    /// `counts`, from a single pass over the transforms. Entry `k` equals
    /// `self.truncated(counts[k])?.log_density(x)` bitwise.
    pub fn log_density_prefixes(&self, x: &[f64], counts: &[usize]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        let upto = counts.iter().copied().max().unwrap_or(0);
        if counts.contains(&0) || upto > self.h() {
            return Err(Error::Config(format!(
                "transform counts {counts:?} must lie in 1..={}",
                self.h()
            )));
        }
        let mut terms = Vec::new();
        self.occupied_log_probs(x, upto, &mut terms);
        Ok(counts
            .iter()
            .map(|&h| {
                let end = terms.partition_point(|&(i, _)| i < h);
                self.mix(x, &terms[..end], h)
            })
            .collect())
    }

    fn mix(&self, x: &[f64], terms: &[(usize, f64)], h: usize) -> f64 {
        let gauss = self.pi0.ln() + self.prior.log_pdf(x);
        if terms.is_empty() {
            return gauss;
        }
        let log_w = ((1.0 - self.pi0) / h as f64).ln();
        let top = terms.iter().fold(f64::NEG_INFINITY, |m, &(_, l)| m.max(l)) + log_w;
        let m = top.max(gauss);
        let mut s = (gauss - m).exp();
        for &(_, l) in terms {
            s += (log_w + l - m).exp();
        }
        m + s.ln()
    }
}
