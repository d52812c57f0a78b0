use std::io::Cursor;
use std::path::Path;

use crate::error::{Error, Result};

/// Mono PCM audio normalized to `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }
}

pub fn load_wav(path: &Path) -> Result<AudioClip> {
    let bytes = std::fs::read(path).map_err(|e| Error::file(path, e))?;
    decode_wav(&bytes)
}

/// Decodes an in-memory WAV file. Integer PCM is scaled by `2^-(bits-1)`;
/// multichannel frames are averaged to mono.
pub fn decode_wav(bytes: &[u8]) -> Result<AudioClip> {
    let reader = match hound::WavReader::new(Cursor::new(bytes)) {
        Ok(r) => r,
        Err(hound::Error::Unsupported) => {
            return Err(Error::UnsupportedCodec {
                codec: codec_name(bytes),
            })
        }
        Err(e) => return Err(map_hound(e)),
    };
    let spec = reader.spec();
    let channels = usize::from(spec.channels);
    if channels == 0 {
        return Err(Error::Format("WAV declares zero channels".into()));
    }
    let interleaved: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => {
            if spec.bits_per_sample != 32 {
                return Err(Error::UnsupportedCodec {
                    codec: format!("IEEE float {}-bit", spec.bits_per_sample),
                });
            }
            reader
                .into_samples::<f32>()
                .map(|s| s.map(f64::from))
                .collect::<std::result::Result<_, _>>()
                .map_err(map_hound)?
        }
        hound::SampleFormat::Int => {
            let bits = spec.bits_per_sample;
            if !matches!(bits, 8 | 16 | 24 | 32) {
                return Err(Error::UnsupportedCodec {
                    codec: format!("PCM {bits}-bit"),
                });
            }
            let scale = (-f64::from(bits - 1)).exp2();
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| f64::from(v) * scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(map_hound)?
        }
    };
    let samples = if channels == 1 {
        interleaved
    } else {
        interleaved
            .chunks_exact(channels)
            .map(|frame| frame.iter().sum::<f64>() / channels as f64)
            .collect()
    };
    AudioClip::new(samples, spec.sample_rate)
}

fn map_hound(e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::Io(io),
        other => Error::Format(other.to_string()),
    }
}

/// Best-effort codec label from the `fmt ` chunk of a RIFF/WAVE file.
fn codec_name(bytes: &[u8]) -> String {
    let Some(tag) = format_tag(bytes) else {
        return "unknown".into();
    };
    match tag {
        0x0001 => "PCM",
        0x0002 => "Microsoft ADPCM",
        0x0003 => "IEEE float",
        0x0006 => "A-law",
        0x0007 => "mu-law",
        0x0011 => "IMA ADPCM",
        0x0031 => "GSM 6.10",
        0x0050 => "MPEG",
        0x0055 => "MPEG Layer 3",
        0x00FF => "AAC",
        0x1610 => "HE-AAC",
        0xF1AC => "FLAC",
        0xFFFE => "extensible",
        other => return format!("format tag 0x{other:04X}"),
    }
    .into()
}

fn format_tag(bytes: &[u8]) -> Option<u16> {
    if bytes.len() < 12 || &bytes[..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return None;
    }
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let len = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().ok()?) as usize;
        if id == b"fmt " {
            let body = bytes.get(pos + 8..pos + 10)?;
            return Some(u16::from_le_bytes([body[0], body[1]]));
        }
        pos += 8 + len + (len & 1);
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_wav(spec: hound::WavSpec, samples: &[i32]) -> Vec<u8> {
        let mut cur = Cursor::new(Vec::new());
        {
            let mut w = hound::WavWriter::new(&mut cur, spec).unwrap();
            for &s in samples {
                w.write_sample(s).unwrap();
            }
            w.finalize().unwrap();
        }
        cur.into_inner()
    }

    fn int_spec(channels: u16, bits: u16) -> hound::WavSpec {
        hound::WavSpec {
            channels,
            sample_rate: 16000,
            bits_per_sample: bits,
            sample_format: hound::SampleFormat::Int,
        }
    }

    #[test]
    fn sixteen_bit_scaling() {
        let clip = decode_wav(&write_wav(int_spec(1, 16), &[16384, -32768, 0])).unwrap();
        assert_eq!(clip.samples, vec![0.5, -1.0, 0.0]);
        assert_eq!(clip.sample_rate, 16000);
    }

    #[test]
    fn stereo_is_averaged() {
        // (0.2, 0.4) in 24-bit.
        let s = |v: f64| (v * 8_388_608.0).round() as i32;
        let clip = decode_wav(&write_wav(int_spec(2, 24), &[s(0.2), s(0.4)])).unwrap();
        assert_eq!(clip.samples.len(), 1);
        assert!((clip.samples[0] - 0.3).abs() < 1e-6);
    }

    #[test]
    fn silence_second() {
        let clip = decode_wav(&write_wav(int_spec(1, 16), &vec![0; 16000])).unwrap();
        assert_eq!(clip.samples.len(), 16000);
        assert!(clip.samples.iter().all(|&v| v == 0.0));
        assert_eq!(clip.duration_secs(), 1.0);
    }

    #[test]
    fn eight_bit_and_float() {
        let clip = decode_wav(&write_wav(int_spec(1, 8), &[64, -128])).unwrap();
        assert_eq!(clip.samples, vec![0.5, -1.0]);

        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 32,
            sample_format: hound::SampleFormat::Float,
        };
        let mut cur = Cursor::new(Vec::new());
        {
            let mut w = hound::WavWriter::new(&mut cur, spec).unwrap();
            w.write_sample(0.25f32).unwrap();
            w.finalize().unwrap();
        }
        let clip = decode_wav(&cur.into_inner()).unwrap();
        assert_eq!(clip.samples, vec![0.25]);
        assert_eq!(clip.sample_rate, 8000);
    }

    #[test]
    fn compressed_codec_is_named() {
        let mut bytes = write_wav(int_spec(1, 16), &[0, 0]);
        // Patch the fmt chunk's format tag to MPEG Layer 3.
        let pos = bytes.windows(4).position(|w| w == b"fmt ").unwrap();
        bytes[pos + 8..pos + 10].copy_from_slice(&0x0055u16.to_le_bytes());
        match decode_wav(&bytes) {
            Err(Error::UnsupportedCodec { codec }) => assert_eq!(codec, "MPEG Layer 3"),
            other => panic!("expected codec error, got {other:?}"),
        }
    }

    #[test]
    fn garbage_is_format_error() {
        assert!(matches!(
            decode_wav(b"not a wav file at all"),
            Err(Error::Format(_))
        ));
    }
}
