use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::wav::AudioClip;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    Hanning,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FramingConfig {
    pub frame_ms: f64,
    pub step_ms: f64,
    pub window: Window,
    pub preemphasis: f64,
}

impl Default for FramingConfig {
    fn default() -> Self {
        Self {
            frame_ms: 25.0,
            step_ms: 10.0,
            window: Window::Hanning,
            preemphasis: 0.97,
        }
    }
}

impl FramingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_ms > 0.0 && self.step_ms <= self.frame_ms) {
            return Err(Error::Config(format!(
                "need 0 < step_ms <= frame_ms, got step {} frame {}",
                self.step_ms, self.frame_ms
            )));
        }
        if !(0.0..1.0).contains(&self.preemphasis) {
            return Err(Error::Config(format!(
                "preemphasis {} outside [0, 1)",
                self.preemphasis
            )));
        }
        Ok(())
    }

    /// Window and hop lengths in samples at `rate`.
    pub fn lengths(&self, rate: u32) -> (usize, usize) {
        let at = |ms: f64| (ms * f64::from(rate) / 1000.0).round() as usize;
        (at(self.frame_ms), at(self.step_ms).max(1))
    }
}

/// Equal-length analysis frames cut from one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct Frames {
    frame_len: usize,
    sample_rate: u32,
    data: Vec<f64>,
}

impl Frames {
    pub fn new(frame_len: usize, sample_rate: u32, data: Vec<f64>) -> Result<Self> {
        if frame_len == 0 || !data.len().is_multiple_of(frame_len) {
            return Err(Error::Format(format!(
                "{} samples do not split into frames of {frame_len}",
                data.len()
            )));
        }
        Ok(Self {
            frame_len,
            sample_rate,
            data,
        })
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.frame_len
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn frame_len(&self) -> usize {
        self.frame_len
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn frame(&self, i: usize) -> &[f64] {
        &self.data[i * self.frame_len..(i + 1) * self.frame_len]
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.frame_len)
    }

    fn select(&self, keep: &[usize]) -> Frames {
        let mut data = Vec::with_capacity(keep.len() * self.frame_len);
        for &i in keep {
            data.extend_from_slice(self.frame(i));
        }
        Frames {
            frame_len: self.frame_len,
            sample_rate: self.sample_rate,
            data,
        }
    }
}

/// Symmetric Hann window, `0.5 - 0.5 cos(2 pi n / (N - 1))`.
pub fn hanning(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    let denom = (len - 1) as f64;
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / denom).cos())
        .collect()
}

/// Number of full frames of length `win` at hop `hop` in `len` samples.
pub fn frame_count(len: usize, win: usize, hop: usize) -> usize {
    if len < win || win == 0 {
        0
    } else {
        (len - win) / hop + 1
    }
}

/// Pre-emphasizes, frames and windows a clip. The trailing partial frame is
/// discarded.
pub fn frame_signal(clip: &AudioClip, cfg: &FramingConfig) -> Result<Frames> {
    cfg.validate()?;
    let (win, hop) = cfg.lengths(clip.sample_rate);
    let n = frame_count(clip.samples.len(), win, hop);
    if n == 0 {
        return Err(Error::EmptyInput(format!(
            "clip of {} samples is shorter than one {win}-sample frame",
            clip.samples.len()
        )));
    }

    let x = &clip.samples;
    let a = cfg.preemphasis;
    let emphasized: Vec<f64> = if a == 0.0 {
        x.clone()
    } else {
        std::iter::once(x[0])
            .chain(x.windows(2).map(|w| w[1] - a * w[0]))
            .collect()
    };

    let window = match cfg.window {
        Window::Hanning => Some(hanning(win)),
        Window::None => None,
    };
    let mut data = Vec::with_capacity(n * win);
    for f in 0..n {
        let src = &emphasized[f * hop..f * hop + win];
        match &window {
            Some(w) => data.extend(src.iter().zip(w).map(|(s, w)| s * w)),
            None => data.extend_from_slice(src),
        }
    }
    Frames::new(win, clip.sample_rate, data)
}

/// Frame log-energy in dB, `10 log10(sum x^2 + eps)`.
pub fn log_energy_db(frame: &[f64]) -> f64 {
    let e: f64 = frame.iter().map(|v| v * v).sum();
    10.0 * (e + f64::MIN_POSITIVE).log10()
}

/// Drops frames more than `energy_floor_db` below the loudest frame.
/// Returns the kept frames and their original indices.
pub fn remove_silence(frames: &Frames, energy_floor_db: f64) -> Result<(Frames, Vec<usize>)> {
    if frames.is_empty() {
        return Err(Error::EmptyInput("no frames to filter".into()));
    }
    let energies: Vec<f64> = frames.iter().map(log_energy_db).collect();
    let max = energies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let threshold = max - energy_floor_db;
    let keep: Vec<usize> = energies
        .iter()
        .enumerate()
        .filter(|(_, &e)| e >= threshold)
        .map(|(i, _)| i)
        .collect();
    if keep.is_empty() {
        return Err(Error::EmptyInput(
            "silence removal discarded every frame".into(),
        ));
    }
    Ok((frames.select(&keep), keep))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn clip(samples: Vec<f64>) -> AudioClip {
        AudioClip::new(samples, 16000).unwrap()
    }

    #[test]
    fn one_second_gives_98_frames() {
        let frames = frame_signal(&clip(vec![0.1; 16000]), &FramingConfig::default()).unwrap();
        assert_eq!(frames.len(), 98);
        assert_eq!(frames.frame_len(), 400);
    }

    #[test]
    fn exact_single_frame() {
        let frames = frame_signal(&clip(vec![0.1; 400]), &FramingConfig::default()).unwrap();
        assert_eq!(frames.len(), 1);
    }

    #[test]
    fn too_short_clip_errors() {
        let err = frame_signal(&clip(vec![0.1; 399]), &FramingConfig::default()).unwrap_err();
        assert!(matches!(err, Error::EmptyInput(_)));
    }

    #[test]
    fn unwindowed_constant_is_all_ones() {
        let cfg = FramingConfig {
            window: Window::None,
            preemphasis: 0.0,
            ..FramingConfig::default()
        };
        let frames = frame_signal(&clip(vec![1.0; 1000]), &cfg).unwrap();
        assert!(frames.iter().all(|f| f.iter().all(|&v| v == 1.0)));
    }

    #[test]
    fn preemphasis_precedes_framing() {
        let cfg = FramingConfig {
            window: Window::None,
            preemphasis: 0.5,
            ..FramingConfig::default()
        };
        let x: Vec<f64> = (0..600).map(|i| i as f64).collect();
        let frames = frame_signal(&clip(x), &cfg).unwrap();
        // Second frame starts at sample 160; its first value uses sample 159.
        assert_eq!(frames.frame(1)[0], 160.0 - 0.5 * 159.0);
        assert_eq!(frames.frame(0)[0], 0.0);
    }

    #[test]
    fn invalid_config() {
        let cfg = FramingConfig {
            step_ms: 30.0,
            ..FramingConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn hanning_is_symmetric() {
        let w = hanning(400);
        assert_eq!(w[0], 0.0);
        for i in 0..200 {
            assert!((w[i] - w[399 - i]).abs() < 1e-15);
        }
    }

    #[test]
    fn equal_energy_keeps_everything() {
        let frames = Frames::new(4, 16000, vec![0.5; 20]).unwrap();
        let (kept, idx) = remove_silence(&frames, 30.0).unwrap();
        assert_eq!(kept.len(), 5);
        assert_eq!(idx, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn quiet_frames_are_dropped() {
        // Amplitude 1e-3 is 60 dB below amplitude 1.
        let mut data = vec![1e-3; 12];
        data[4..8].fill(1.0);
        let frames = Frames::new(4, 16000, data).unwrap();
        let (kept, idx) = remove_silence(&frames, 30.0).unwrap();
        assert_eq!(idx, vec![1]);
        assert_eq!(kept.frame(0), &[1.0; 4]);
    }

    #[test]
    fn kept_count_matches_brute_force_scan() {
        let mut state = 12345u64;
        let mut data = Vec::new();
        for f in 0..200 {
            let gain = if f % 7 < 3 {
                1e-3
            } else {
                0.3 + 0.01 * (f % 5) as f64
            };
            for _ in 0..64 {
                state = state
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add(1442695040888963407);
                let u = (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5;
                data.push(gain * u);
            }
        }
        let frames = Frames::new(64, 16000, data).unwrap();
        let (_, idx) = remove_silence(&frames, 30.0).unwrap();

        let mut energies = Vec::new();
        for f in 0..frames.len() {
            let mut e = 0.0;
            for v in frames.frame(f) {
                e += v * v;
            }
            energies.push(10.0 * e.log10());
        }
        let mut max = f64::MIN;
        for &e in &energies {
            if e > max {
                max = e;
            }
        }
        let expected = energies.iter().filter(|&&e| e >= max - 30.0).count();
        assert_eq!(idx.len(), expected);
        assert!(expected < 200 && expected > 100);
    }

    proptest! {
        #[test]
        fn frame_count_matches_loop(len in 1usize..3000, win in 1usize..500, hop in 1usize..500) {
            prop_assume!(len >= win);
            let mut count = 0;
            let mut start = 0;
            while start + win <= len {
                count += 1;
                start += hop;
            }
            prop_assert_eq!(frame_count(len, win, hop), count);
        }
    }
}
