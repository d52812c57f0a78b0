//! Mel-frequency cepstral coefficients.
//!
//! Power spectrum, HTK-mel triangular filterbank spanning `0..rate/2`,
//! floored natural log, then an orthonormal DCT-II. The zeroth (energy)
//! coefficient is dropped, so the output holds `c_1..c_n`.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::framing::Frames;
use super::matrix::FeatureMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MfccConfig {
    pub n_coeffs: usize,
    pub n_filters: usize,
    pub log_floor: f64,
}

impl Default for MfccConfig {
    fn default() -> Self {
        Self {
            n_coeffs: 16,
            n_filters: 40,
            log_floor: 1e-10,
        }
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filter weights, `n_filters` rows of `nfft / 2 + 1` bins.
pub fn mel_filterbank(n_filters: usize, nfft: usize, sample_rate: u32) -> Vec<Vec<f64>> {
    let nyquist = f64::from(sample_rate) / 2.0;
    let top = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..n_filters + 2)
        .map(|i| mel_to_hz(top * i as f64 / (n_filters + 1) as f64))
        .collect();
    let n_bins = nfft / 2 + 1;
    let bin_hz = f64::from(sample_rate) / nfft as f64;
    (0..n_filters)
        .map(|m| {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..n_bins)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    let rising = (f - lo) / (mid - lo);
                    let falling = (hi - f) / (hi - mid);
                    rising.min(falling).max(0.0)
                })
                .collect()
        })
        .collect()
}

/// Reusable MFCC extractor for one frame length and sample rate.
pub struct MfccExtractor {
    cfg: MfccConfig,
    nfft: usize,
    fft: Arc<dyn Fft<f64>>,
    filterbank: Vec<Vec<f64>>,
    // Rows are c_1..c_n of the orthonormal DCT-II basis.
    dct: Vec<Vec<f64>>,
}

impl MfccExtractor {
    pub fn new(cfg: MfccConfig, frame_len: usize, sample_rate: u32) -> Result<Self> {
        if cfg.n_filters == 0 || cfg.n_coeffs == 0 {
            return Err(Error::Config(
                "MFCC needs at least one filter and coefficient".into(),
            ));
        }
        if cfg.n_coeffs >= cfg.n_filters {
            return Err(Error::Config(format!(
                "n_coeffs ({}) must be smaller than n_filters ({})",
                cfg.n_coeffs, cfg.n_filters
            )));
        }
        if !(cfg.log_floor > 0.0) {
            return Err(Error::Config("log floor must be positive".into()));
        }
        let nfft = frame_len.next_power_of_two();
        let fft = FftPlanner::new().plan_fft_forward(nfft);
        let filterbank = mel_filterbank(cfg.n_filters, nfft, sample_rate);
        let m = cfg.n_filters as f64;
        let scale = (2.0 / m).sqrt();
        let dct = (1..=cfg.n_coeffs)
            .map(|n| {
                (0..cfg.n_filters)
                    .map(|j| scale * (PI * n as f64 * (j as f64 + 0.5) / m).cos())
                    .collect()
            })
            .collect();
        Ok(Self {
            cfg,
            nfft,
            fft,
            filterbank,
            dct,
        })
    }

    pub fn nfft(&self) -> usize {
        self.nfft
    }

    fn power_spectrum(&self, frame: &[f64], buf: &mut Vec<Complex<f64>>) -> Vec<f64> {
        buf.clear();
        buf.extend(frame.iter().map(|&v| Complex::new(v, 0.0)));
        buf.resize(self.nfft, Complex::new(0.0, 0.0));
        self.fft.process(buf);
        buf[..self.nfft / 2 + 1]
            .iter()
            .map(|c| c.norm_sqr())
            .collect()
    }

    pub fn extract_frame(&self, frame: &[f64]) -> Vec<f64> {
        let mut buf = Vec::with_capacity(self.nfft);
        self.extract_with(frame, &mut buf)
    }

    fn extract_with(&self, frame: &[f64], buf: &mut Vec<Complex<f64>>) -> Vec<f64> {
        let power = self.power_spectrum(frame, buf);
        let log_mel: Vec<f64> = self
            .filterbank
            .iter()
            .map(|w| {
                let e: f64 = w.iter().zip(&power).map(|(w, p)| w * p).sum();
                e.max(self.cfg.log_floor).ln()
            })
            .collect();
        self.dct
            .iter()
            .map(|basis| basis.iter().zip(&log_mel).map(|(b, l)| b * l).sum())
            .collect()
    }
}

/// MFCCs of every frame, one row per frame.
pub fn mfcc(frames: &Frames, cfg: &MfccConfig) -> Result<FeatureMatrix> {
    let ex = MfccExtractor::new(cfg.clone(), frames.frame_len(), frames.sample_rate())?;
    let mut buf = Vec::with_capacity(ex.nfft);
    let mut data = Vec::with_capacity(frames.len() * cfg.n_coeffs);
    for f in frames.iter() {
        data.extend(ex.extract_with(f, &mut buf));
    }
    FeatureMatrix::new(frames.len(), cfg.n_coeffs, data)
}
