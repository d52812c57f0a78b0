use serde::{Deserialize, Serialize};

use super::matrix::FeatureMatrix;
use crate::error::{Error, Result};

/// Regression window of the velocity/acceleration stack.
pub const DELTA_WINDOW: usize = 2;

/// Which 3D-dimensional super-frame to build from base MFCC frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    /// `[x(t - tau), x(t), x(t + tau)]`.
    XSup,
    /// `[x(t), dx(t), ddx(t)]`.
    DeltaMfccSup,
}

impl FeatureMode {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureMode::XSup => "x_sup",
            FeatureMode::DeltaMfccSup => "delta_mfcc_sup",
        }
    }
}

impl std::fmt::Display for FeatureMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for FeatureMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "x_sup" => Ok(FeatureMode::XSup),
            "delta_mfcc_sup" => Ok(FeatureMode::DeltaMfccSup),
            other => Err(Error::Config(format!("unknown feature mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuperFrameConfig {
    pub tau: usize,
    pub mode: FeatureMode,
}

impl Default for SuperFrameConfig {
    fn default() -> Self {
        Self {
            tau: 1,
            mode: FeatureMode::XSup,
        }
    }
}

impl SuperFrameConfig {
    pub fn apply(&self, x: &FeatureMatrix) -> Result<FeatureMatrix> {
        match self.mode {
            FeatureMode::XSup => super_frames(x, self.tau),
            FeatureMode::DeltaMfccSup => delta_stack(x, DELTA_WINDOW),
        }
    }

    /// Rows lost at the clip boundaries.
    pub fn rows_dropped(&self) -> usize {
        match self.mode {
            FeatureMode::XSup => 2 * self.tau,
            FeatureMode::DeltaMfccSup => 4 * DELTA_WINDOW,
        }
    }
}

/// Raw-context super-frames: row `t'` is `[x(t'), x(t' + tau), x(t' + 2 tau)]`,
/// i.e. centred at `t = t' + tau`. The first and last `tau` frames only serve
/// as context.
pub fn super_frames(x: &FeatureMatrix, tau: usize) -> Result<FeatureMatrix> {
    if tau == 0 {
        return Err(Error::Config(
            "frame interval tau must be at least 1".into(),
        ));
    }
    let t = x.rows();
    if t <= 2 * tau {
        return Err(Error::InsufficientFrames {
            needed: 2 * tau,
            got: t,
        });
    }
    let d = x.cols();
    let rows = t - 2 * tau;
    let mut data = Vec::with_capacity(rows * 3 * d);
    for c in tau..t - tau {
        data.extend_from_slice(x.row(c - tau));
        data.extend_from_slice(x.row(c));
        data.extend_from_slice(x.row(c + tau));
    }
    FeatureMatrix::new(rows, 3 * d, data)
}

/// Regression deltas over `w` neighbours on each side. Row `i` of the result
/// is the delta at frame `i + w`.
fn deltas(x: &FeatureMatrix, w: usize) -> FeatureMatrix {
    let d = x.cols();
    let norm = 2.0 * (1..=w).map(|k| (k * k) as f64).sum::<f64>();
    let rows = x.rows() - 2 * w;
    let mut data = vec![0.0; rows * d];
    for (i, out) in data.chunks_exact_mut(d.max(1)).enumerate() {
        let t = i + w;
        for k in 1..=w {
            let (next, prev) = (x.row(t + k), x.row(t - k));
            for j in 0..d {
                out[j] += k as f64 * (next[j] - prev[j]);
            }
        }
        for v in out.iter_mut() {
            *v /= norm;
        }
    }
    FeatureMatrix::new(rows, d, data).expect("deltas of finite input are finite")
}

/// `[x, dx, ddx]` stack. Only frames where both regressions have full
/// context are kept, so `2 w` frames are dropped at each end.
pub fn delta_stack(x: &FeatureMatrix, w: usize) -> Result<FeatureMatrix> {
    if w == 0 {
        return Err(Error::Config("delta window must be at least 1".into()));
    }
    let t = x.rows();
    if t <= 4 * w {
        return Err(Error::InsufficientFrames {
            needed: 4 * w,
            got: t,
        });
    }
    let d = x.cols();
    let v = deltas(x, w);
    let a = deltas(&v, w);
    let rows = t - 4 * w;
    let mut data = Vec::with_capacity(rows * 3 * d);
    for i in 0..rows {
        data.extend_from_slice(x.row(i + 2 * w));
        data.extend_from_slice(v.row(i + w));
        data.extend_from_slice(a.row(i));
    }
    FeatureMatrix::new(rows, 3 * d, data)
}
