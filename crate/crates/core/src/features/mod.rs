//! Audio front end: WAV decoding, framing, silence removal, MFCCs and the
//! two super-frame layouts.

mod framing;
mod matrix;
mod mfcc;
mod stack;
mod wav;

pub use framing::{
    frame_count, frame_signal, hanning, log_energy_db, remove_silence, Frames, FramingConfig,
    Window,
};
pub use matrix::FeatureMatrix;
pub use mfcc::{hz_to_mel, mel_filterbank, mel_to_hz, mfcc, MfccConfig, MfccExtractor};
pub use stack::{delta_stack, super_frames, FeatureMode, SuperFrameConfig, DELTA_WINDOW};
pub use wav::{decode_wav, load_wav, AudioClip};

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Clip-to-MFCC front end: framing, silence removal and cepstral analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeaturePipeline {
    pub framing: FramingConfig,
    pub silence_floor_db: f64,
    pub mfcc: MfccConfig,
}

impl Default for FeaturePipeline {
    fn default() -> Self {
        Self {
            framing: FramingConfig::default(),
            silence_floor_db: 30.0,
            mfcc: MfccConfig::default(),
        }
    }
}

impl FeaturePipeline {
    /// Base MFCC frames of the non-silent part of `clip`. Kept frames are
    /// contiguous in the output, so later context stacking treats them as
    /// neighbours.
    pub fn extract(&self, clip: &AudioClip) -> Result<FeatureMatrix> {
        let frames = frame_signal(clip, &self.framing)?;
        let (voiced, _) = remove_silence(&frames, self.silence_floor_db)?;
        mfcc(&voiced, &self.mfcc)
    }
}
