use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{load_wav, FeatureMatrix, FeaturePipeline};
use crate::rng::{derive_seed, substream};

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub name: String,
    /// Base frames, before super-frame stacking.
    pub frames: FeatureMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerData {
    pub id: String,
    pub utterances: Vec<Utterance>,
}

/// Speakers in a fixed order; utterances sorted by name within each.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    pub speakers: Vec<SpeakerData>,
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = std::fs::read_dir(dir)
        .map_err(|e| Error::file(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|e| Error::file(dir, e)))
        .collect::<Result<Vec<_>>>()?;
    out.sort();
    Ok(out)
}

fn has_ext(p: &Path, ext: &str) -> bool {
    p.extension().is_some_and(|e| e.eq_ignore_ascii_case(ext))
}

/// Utterance files of one speaker directory. When both `name.htfx` and
/// `name.wav` exist the feature file wins.
pub fn utterance_files(speaker_dir: &Path) -> Result<Vec<PathBuf>> {
    let files = sorted_entries(speaker_dir)?;
    let mut out: Vec<PathBuf> = Vec::new();
    for p in &files {
        if !p.is_file() {
            continue;
        }
        if has_ext(p, "htfx") || (has_ext(p, "wav") && !p.with_extension("htfx").is_file()) {
            out.push(p.clone());
        }
    }
    out.sort_by(|a, b| a.file_stem().cmp(&b.file_stem()));
    Ok(out)
}

impl Corpus {
    /// Reads `<root>/<speaker>/<utterance>.{htfx,wav}`. WAV files go through
    /// `pipeline`; speakers without usable files are left out.
    pub fn load_dir(root: &Path, pipeline: &FeaturePipeline) -> Result<Corpus> {
        let mut speakers = Vec::new();
        for dir in sorted_entries(root)? {
            if !dir.is_dir() {
                continue;
            }
            let id = dir
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let files = utterance_files(&dir)?;
            let utterances = files
                .par_iter()
                .map(|p| {
                    let frames = if has_ext(p, "htfx") {
                        FeatureMatrix::load(p)?
                    } else {
                        pipeline.extract(&load_wav(p)?)?
                    };
                    let name = p
                        .file_stem()
                        .map(|s| s.to_string_lossy().into_owned())
                        .unwrap_or_default();
                    Ok(Utterance { name, frames })
                })
                .collect::<Result<Vec<_>>>()?;
            if utterances.is_empty() {
                log::warn!("speaker directory {} has no utterances", dir.display());
                continue;
            }
            speakers.push(SpeakerData { id, utterances });
        }
        Ok(Corpus { speakers })
    }

    /// Writes every utterance as `<root>/<speaker>/<utterance>.htfx`.
    pub fn write_dir(&self, root: &Path) -> Result<()> {
        for s in &self.speakers {
            let dir = root.join(&s.id);
            std::fs::create_dir_all(&dir).map_err(|e| Error::file(&dir, e))?;
            for u in &s.utterances {
                u.frames.save(&dir.join(format!("{}.htfx", u.name)))?;
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> Option<usize> {
        self.speakers
            .first()
            .and_then(|s| s.utterances.first())
            .map(|u| u.frames.cols())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_speakers: usize,
    pub utts_per_speaker: usize,
    pub frames_per_utt: usize,
    pub dim: usize,
    pub separation: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_speakers: 10,
            utts_per_speaker: 10,
            frames_per_utt: 500,
            dim: 8,
            separation: 4.0,
            seed: 0,
        }
    }
}

/// Mixture components per synthetic speaker.
pub const SYNTHETIC_COMPONENTS: usize = 3;

const MEANS_KEY: u64 = 0x6d65_616e;
const FRAMES_KEY: u64 = 0x6672_616d;

/// Equal-weight mixture of unit-covariance Gaussians.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerGenerator {
    pub means: Vec<Vec<f64>>,
}

impl SpeakerGenerator {
    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        let d = x.len() as f64;
        let norm = -0.5 * d * (2.0 * std::f64::consts::PI).ln() - (self.means.len() as f64).ln();
        let terms: Vec<f64> = self
            .means
            .iter()
            .map(|m| {
                let q: f64 = x.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum();
                norm - 0.5 * q
            })
            .collect();
        let top = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        top + terms.iter().map(|t| (t - top).exp()).sum::<f64>().ln()
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let m = &self.means[rng.random_range(0..self.means.len())];
        m.iter()
            .map(|&c| c + rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    pub fn sample_matrix<R: Rng>(&self, n: usize, rng: &mut R) -> FeatureMatrix {
        let data: Vec<f64> = (0..n).flat_map(|_| self.sample(rng)).collect();
        FeatureMatrix::new(n, self.dim(), data).expect("finite samples")
    }
}

pub fn speaker_name(i: usize) -> String {
    format!("spk{i:03}")
}

pub fn utterance_name(i: usize) -> String {
    format!("utt{i:03}")
}

/// Synthetic speakers and the generators that produced them.
pub fn synthesize(cfg: &SyntheticConfig) -> Result<(Corpus, Vec<SpeakerGenerator>)> {
    if cfg.n_speakers == 0 || cfg.utts_per_speaker == 0 || cfg.frames_per_utt == 0 || cfg.dim == 0 {
        return Err(Error::Config(
            "synthetic corpus counts must be at least 1".into(),
        ));
    }
    if !(cfg.separation >= 0.0 && cfg.separation.is_finite()) {
        return Err(Error::Config(format!(
            "separation {} must be finite and non-negative",
            cfg.separation
        )));
    }
    let means_seed = derive_seed(cfg.seed, MEANS_KEY);
    let frames_seed = derive_seed(cfg.seed, FRAMES_KEY);
    let out: Vec<(SpeakerData, SpeakerGenerator)> = (0..cfg.n_speakers)
        .into_par_iter()
        .map(|s| {
            let mut rng = substream(means_seed, s as u64);
            let generator = SpeakerGenerator {
                means: (0..SYNTHETIC_COMPONENTS)
                    .map(|_| {
                        (0..cfg.dim)
                            .map(|_| cfg.separation * rng.sample::<f64, _>(StandardNormal))
                            .collect()
                    })
                    .collect(),
            };
            let speaker_seed = derive_seed(frames_seed, s as u64);
            let utterances = (0..cfg.utts_per_speaker)
                .map(|u| Utterance {
                    name: utterance_name(u),
                    frames: generator
                        .sample_matrix(cfg.frames_per_utt, &mut substream(speaker_seed, u as u64)),
                })
                .collect();
            (
                SpeakerData {
                    id: speaker_name(s),
                    utterances,
                },
                generator,
            )
        })
        .collect();
    let (speakers, generators) = out.into_iter().unzip();
    Ok((Corpus { speakers }, generators))
}

/// Synthesizes a corpus and writes it under `root` in the feature-cache
/// format.
pub fn generate_synthetic_corpus(
    cfg: &SyntheticConfig,
    root: &Path,
) -> Result<(Corpus, Vec<SpeakerGenerator>)> {
    let (corpus, generators) = synthesize(cfg)?;
    corpus.write_dir(root)?;
    Ok((corpus, generators))
}
