//! Diagonal-covariance Gaussian mixture trained by EM, the baseline the
//! histogram-transform models are compared against.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::rng::substream;

const MAGIC: &[u8; 4] = b"GMMD";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GmmConfig {
    pub k: usize,
    pub max_iters: usize,
    pub rel_tol: f64,
    pub var_floor_frac: f64,
    pub seed: u64,
}

impl Default for GmmConfig {
    fn default() -> Self {
        Self {
            k: 64,
            max_iters: 200,
            rel_tol: 1e-6,
            var_floor_frac: 1e-4,
            seed: 0,
        }
    }
}

impl GmmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("need at least one mixture component".into()));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::Config("rel_tol must be positive".into()));
        }
        if !(self.var_floor_frac >= 0.0) {
            return Err(Error::Config("var_floor_frac must be non-negative".into()));
        }
        Ok(())
    }
}

/// Training history of one EM run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmTrace {
    /// Average training log-likelihood before each M-step.
    pub log_likelihoods: Vec<f64>,
    pub converged: bool,
    /// Components re-seeded after losing all responsibility.
    pub reseeded: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    dim: usize,
    weights: Vec<f64>,
    means: Vec<f64>,
    variances: Vec<f64>,
    // log w_k - 0.5 sum_d log(2 pi var_kd)
    log_consts: Vec<f64>,
}

impl GmmModel {
    pub fn from_parts(weights: Vec<f64>, means: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        let k = weights.len();
        if k == 0 || !means.len().is_multiple_of(k) || means.len() != variances.len() {
            return Err(Error::Format(format!(
                "inconsistent GMM shapes: {} weights, {} means, {} variances",
                k,
                means.len(),
                variances.len()
            )));
        }
        let dim = means.len() / k;
        if variances.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::Format("GMM variances must be positive".into()));
        }
        if weights.iter().chain(&means).any(|v| !v.is_finite()) {
            return Err(Error::Format("non-finite GMM parameter".into()));
        }
        let mut m = Self {
            dim,
            weights,
            means,
            variances,
            log_consts: Vec::new(),
        };
        m.refresh();
        Ok(m)
    }

    fn refresh(&mut self) {
        let d = self.dim;
        self.log_consts = self
            .weights
            .iter()
            .zip(self.variances.chunks_exact(d))
            .map(|(w, var)| w.ln() - 0.5 * var.iter().map(|v| (2.0 * PI * v).ln()).sum::<f64>())
            .collect();
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mean(&self, k: usize) -> &[f64] {
        &self.means[k * self.dim..(k + 1) * self.dim]
    }

    pub fn variance(&self, k: usize) -> &[f64] {
        &self.variances[k * self.dim..(k + 1) * self.dim]
    }

    /// `log w_k + log N(x; mu_k, diag var_k)` for every component.
    fn component_logs(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        for (k, o) in out.iter_mut().enumerate() {
            let mu = &self.means[k * d..(k + 1) * d];
            let var = &self.variances[k * d..(k + 1) * d];
            let mut q = 0.0;
            for ((x, m), v) in x.iter().zip(mu).zip(var) {
                let z = x - m;
                q += z * z / v;
            }
            *o = self.log_consts[k] - 0.5 * q;
        }
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        let mut logs = vec![0.0; self.k()];
        self.component_logs(x, &mut logs);
        Ok(log_sum_exp(&logs))
    }

    /// Row-major `N x K` posterior component probabilities and the average
    /// log-likelihood of `x`.
    pub fn responsibilities(&self, x: &FeatureMatrix) -> Result<(Vec<f64>, f64)> {
        if x.cols() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.cols(),
            });
        }
        let (resp, point_ll) = self.e_step(x);
        let avg = point_ll.iter().sum::<f64>() / x.rows() as f64;
        Ok((resp, avg))
    }

    fn e_step(&self, x: &FeatureMatrix) -> (Vec<f64>, Vec<f64>) {
        let k = self.k();
        let mut resp = vec![0.0; x.rows() * k];
        let mut point_ll = vec![0.0; x.rows()];
        resp.par_chunks_mut(k)
            .zip(point_ll.par_iter_mut())
            .enumerate()
            .for_each(|(n, (r, ll))| {
                self.component_logs(x.row(n), r);
                let total = log_sum_exp(r);
                for v in r.iter_mut() {
                    *v = (*v - total).exp();
                }
                *ll = total;
            });
        (resp, point_ll)
    }

    pub fn fit(x: &FeatureMatrix, cfg: &GmmConfig) -> Result<Self> {
        Self::fit_traced(x, cfg).map(|(m, _)| m)
    }

    pub fn fit_traced(x: &FeatureMatrix, cfg: &GmmConfig) -> Result<(Self, EmTrace)> {
        cfg.validate()?;
        let (n, d, k) = (x.rows(), x.cols(), cfg.k);
        if n < k || n == 0 {
            return Err(Error::InsufficientData {
                needed: k.max(1),
                got: n,
            });
        }
        if d == 0 {
            return Err(Error::Config("feature dimension must be positive".into()));
        }

        let (_, global_var) = moments(x);
        let floor: Vec<f64> = global_var
            .iter()
            .map(|v| (cfg.var_floor_frac * v).max(1e-12))
            .collect();
        let init_var: Vec<f64> = global_var
            .iter()
            .zip(&floor)
            .map(|(v, f)| v.max(*f))
            .collect();

        let mut rng = substream(cfg.seed, 0);
        let centres = kmeans_pp(x, k, &mut rng);
        let mut means = Vec::with_capacity(k * d);
        for &c in &centres {
            means.extend_from_slice(x.row(c));
        }
        let mut model = GmmModel::from_parts(vec![1.0 / k as f64; k], means, init_var.repeat(k))?;

        let mut trace = EmTrace::default();
        for iter in 0..=cfg.max_iters {
            let (resp, point_ll) = model.e_step(x);
            let ll = point_ll.iter().sum::<f64>() / n as f64;
            if let Some(&prev) = trace.log_likelihoods.last() {
                trace.log_likelihoods.push(ll);
                if ((ll - prev) / prev.abs().max(f64::MIN_POSITIVE)).abs() < cfg.rel_tol {
                    trace.converged = true;
                    break;
                }
            } else {
                trace.log_likelihoods.push(ll);
            }
            if iter == cfg.max_iters {
                break;
            }
            trace.reseeded += model.m_step(x, &resp, &point_ll, &floor, &init_var);
        }
        Ok((model, trace))
    }

    /// Re-estimates parameters from responsibilities. Returns the number of
    /// empty components that were re-seeded.
    fn m_step(
        &mut self,
        x: &FeatureMatrix,
        resp: &[f64],
        point_ll: &[f64],
        floor: &[f64],
        init_var: &[f64],
    ) -> usize {
        let (n, d, k) = (x.rows(), self.dim, self.k());
        let mut mass = vec![0.0; k];
        let mut sums = vec![0.0; k * d];
        for (row, r) in x.iter_rows().zip(resp.chunks_exact(k)) {
            for c in 0..k {
                let w = r[c];
                mass[c] += w;
                for (s, v) in sums[c * d..(c + 1) * d].iter_mut().zip(row) {
                    *s += w * v;
                }
            }
        }
        let mut means = vec![0.0; k * d];
        let mut alive = vec![true; k];
        for c in 0..k {
            if mass[c] <= 1e-10 * n as f64 {
                alive[c] = false;
                continue;
            }
            for j in 0..d {
                means[c * d + j] = sums[c * d + j] / mass[c];
            }
        }
        let mut sq = vec![0.0; k * d];
        for (row, r) in x.iter_rows().zip(resp.chunks_exact(k)) {
            for c in (0..k).filter(|&c| alive[c]) {
                let w = r[c];
                for j in 0..d {
                    let z = row[j] - means[c * d + j];
                    sq[c * d + j] += w * z * z;
                }
            }
        }
        let mut variances = vec![0.0; k * d];
        let mut weights = vec![0.0; k];
        let mut reseeded = 0;
        // Worst-explained points first, for re-seeding empty components.
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| point_ll[a].total_cmp(&point_ll[b]).then(a.cmp(&b)));
        for c in 0..k {
            if alive[c] {
                for j in 0..d {
                    variances[c * d + j] = (sq[c * d + j] / mass[c]).max(floor[j]);
                }
                weights[c] = mass[c] / n as f64;
            } else {
                let p = order[reseeded % n];
                log::warn!("GMM component {c} lost all responsibility; re-seeding at point {p}");
                means[c * d..(c + 1) * d].copy_from_slice(x.row(p));
                variances[c * d..(c + 1) * d].copy_from_slice(init_var);
                weights[c] = 1.0 / n as f64;
                reseeded += 1;
            }
        }
        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= total;
        }
        self.weights = weights;
        self.means = means;
        self.variances = variances;
        self.refresh();
        reseeded
    }

    pub fn write_to<W: Write>(&self, w: W) -> Result<()> {
        let mut out = Writer::new(w);
        out.bytes(MAGIC)?;
        out.u32(VERSION)?;
        out.u32(self.k() as u32)?;
        out.u32(self.dim as u32)?;
        out.f64s(&self.weights)?;
        out.f64s(&self.means)?;
        out.f64s(&self.variances)?;
        out.finish()
    }

    pub fn read_from<R: Read>(r: R) -> Result<GmmModel> {
        let mut inp = Reader::new(r);
        if &inp.array::<4>()? != MAGIC {
            return Err(Error::Format("not a GMMD model file".into()));
        }
        let version = inp.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported GMMD version {version}")));
        }
        let k = inp.u32()? as usize;
        let d = inp.u32()? as usize;
        let weights = inp.f64s(k)?;
        let means = inp.f64s(k * d)?;
        let variances = inp.f64s(k * d)?;
        inp.expect_end()?;
        let m = GmmModel::from_parts(weights, means, variances)?;
        if m.dim != d {
            return Err(Error::Format("GMMD header disagrees with payload".into()));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf).map_err(|e| Error::file(path, e))
    }

    pub fn load(path: &Path) -> Result<GmmModel> {
        let bytes = std::fs::read(path).map_err(|e| Error::file(path, e))?;
        GmmModel::read_from(bytes.as_slice())
    }
}

pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Per-dimension mean and biased variance.
fn moments(x: &FeatureMatrix) -> (Vec<f64>, Vec<f64>) {
    let (n, d) = (x.rows() as f64, x.cols());
    let mut mean = vec![0.0; d];
    for r in x.iter_rows() {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; d];
    for r in x.iter_rows() {
        for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    var.iter_mut().for_each(|s| *s /= n);
    (mean, var)
}

/// k-means++ seeding: indices of `k` rows of `x`.
fn kmeans_pp<R: Rng + ?Sized>(x: &FeatureMatrix, k: usize, rng: &mut R) -> Vec<usize> {
    let n = x.rows();
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    let mut centres = vec![rng.random_range(0..n)];
    let mut dist: Vec<f64> = x.iter_rows().map(|r| sq(r, x.row(centres[0]))).collect();
    while centres.len() < k {
        let total: f64 = dist.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &dv) in dist.iter().enumerate() {
                if target < dv {
                    pick = i;
                    break;
                }
                target -= dv;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centres.push(next);
        let c = x.row(next);
        for (dv, r) in dist.iter_mut().zip(x.iter_rows()) {
            *dv = dv.min(sq(r, c));
        }
    }
    centres
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::StandardNormal;

    fn two_clusters(n: usize, seed: u64) -> FeatureMatrix {
        let mut rng = substream(seed, 1);
        let data = (0..n)
            .map(|i| {
                let centre = if i % 2 == 0 { -10.0 } else { 10.0 };
                centre + rng.sample::<f64, _>(StandardNormal)
            })
            .collect();
        FeatureMatrix::new(n, 1, data).unwrap()
    }

    #[test]
    fn single_component_is_closed_form() {
        let x = FeatureMatrix::from_rows(&[[1.0, 0.0], [2.0, 4.0], [6.0, 2.0]]).unwrap();
        let m = GmmModel::fit(
            &x,
            &GmmConfig {
                k: 1,
                ..GmmConfig::default()
            },
        )
        .unwrap();
        assert_eq!(m.weights(), &[1.0]);
        assert!((m.mean(0)[0] - 3.0).abs() < 1e-14);
        assert!((m.mean(0)[1] - 2.0).abs() < 1e-14);
        assert!((m.variance(0)[0] - 14.0 / 3.0).abs() < 1e-13);
        assert!((m.variance(0)[1] - 8.0 / 3.0).abs() < 1e-13);
    }

    #[test]
    fn recovers_separated_means() {
        let x = two_clusters(2000, 3);
        let m = GmmModel::fit(
            &x,
            &GmmConfig {
                k: 2,
                seed: 9,
                ..GmmConfig::default()
            },
        )
        .unwrap();
        let mut mus = [m.mean(0)[0], m.mean(1)[0]];
        mus.sort_by(f64::total_cmp);
        assert!(
            (mus[0] + 10.0).abs() < 0.2 && (mus[1] - 10.0).abs() < 0.2,
            "{mus:?}"
        );
    }

    #[test]
    fn em_is_monotone() {
        let x = two_clusters(600, 5);
        let (_, trace) = GmmModel::fit_traced(
            &x,
            &GmmConfig {
                k: 5,
                ..GmmConfig::default()
            },
        )
        .unwrap();
        assert!(trace.log_likelihoods.len() > 1);
        for w in trace.log_likelihoods.windows(2) {
            assert!(w[1] >= w[0] - 1e-8, "{w:?}");
        }
    }

    #[test]
    fn standard_normal_peak() {
        let m = GmmModel::from_parts(vec![1.0], vec![0.0], vec![1.0]).unwrap();
        assert!((m.log_density(&[0.0]).unwrap() + 0.918_938_5).abs() < 1e-7);
        assert!(m.log_density(&[0.0, 1.0]).is_err());
    }

    #[test]
    fn duplicate_components_collapse() {
        let one = GmmModel::from_parts(vec![1.0], vec![0.5, -1.0], vec![2.0, 0.5]).unwrap();
        let two = GmmModel::from_parts(
            vec![0.5, 0.5],
            vec![0.5, -1.0, 0.5, -1.0],
            vec![2.0, 0.5, 2.0, 0.5],
        )
        .unwrap();
        for x in [[0.0, 0.0], [3.0, -2.0], [-1.0, 7.0]] {
            let (a, b) = (one.log_density(&x).unwrap(), two.log_density(&x).unwrap());
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn responsibilities_sum_to_one() {
        let x = two_clusters(300, 8);
        let m = GmmModel::fit(
            &x,
            &GmmConfig {
                k: 3,
                ..GmmConfig::default()
            },
        )
        .unwrap();
        let (r, _) = m.responsibilities(&x).unwrap();
        for row in r.chunks_exact(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!((m.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn too_few_points() {
        let x = two_clusters(3, 1);
        assert!(matches!(
            GmmModel::fit(
                &x,
                &GmmConfig {
                    k: 4,
                    ..GmmConfig::default()
                }
            ),
            Err(Error::InsufficientData { .. })
        ));
    }

    #[test]
    fn seeded_fit_is_deterministic() {
        let x = two_clusters(400, 2);
        let cfg = GmmConfig {
            k: 4,
            seed: 3,
            ..GmmConfig::default()
        };
        let a = GmmModel::fit(&x, &cfg).unwrap();
        let b = rayon::ThreadPoolBuilder::new()
            .num_threads(3)
            .build()
            .unwrap()
            .install(|| GmmModel::fit(&x, &cfg).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn variance_floor_applies() {
        // Duplicate points drive one component's variance to zero.
        let mut rows = vec![[5.0]; 50];
        rows.extend((0..50).map(|i| [i as f64 * 0.1 - 20.0]));
        let x = FeatureMatrix::from_rows(&rows).unwrap();
        let m = GmmModel::fit(
            &x,
            &GmmConfig {
                k: 2,
                seed: 1,
                ..GmmConfig::default()
            },
        )
        .unwrap();
        let (_, gv) = moments(&x);
        for c in 0..2 {
            assert!(m.variance(c)[0] >= 1e-4 * gv[0]);
        }
    }

    #[test]
    fn file_round_trip() {
        let x = two_clusters(200, 4);
        let m = GmmModel::fit(
            &x,
            &GmmConfig {
                k: 3,
                ..GmmConfig::default()
            },
        )
        .unwrap();
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"GMMD");
        assert_eq!(buf.len(), 16 + 8 * (3 + 3 + 3));
        let back = GmmModel::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, m);
    }
}
