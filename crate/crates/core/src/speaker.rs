//! Per-speaker models, segment scoring and maximum-likelihood decisions.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, FeatureMode};
use crate::gmm::GmmModel;
use crate::ht::HtModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Ht,
    Gmm,
}

impl BackendKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BackendKind::Ht => "ht",
            BackendKind::Gmm => "gmm",
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            BackendKind::Ht => "htmd",
            BackendKind::Gmm => "gmmd",
        }
    }
}

impl std::fmt::Display for BackendKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for BackendKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ht" => Ok(BackendKind::Ht),
            "gmm" => Ok(BackendKind::Gmm),
            other => Err(Error::Config(format!("unknown backend {other:?}"))),
        }
    }
}

/// A fitted density model of either kind.
#[derive(Debug, Clone, PartialEq)]
pub enum Backend {
    Ht(HtModel),
    Gmm(GmmModel),
}

impl Backend {
    pub fn kind(&self) -> BackendKind {
        match self {
            Backend::Ht(_) => BackendKind::Ht,
            Backend::Gmm(_) => BackendKind::Gmm,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Backend::Ht(m) => m.dim(),
            Backend::Gmm(m) => m.dim(),
        }
    }

    #[inline]
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        match self {
            Backend::Ht(m) => m.log_density(x),
            Backend::Gmm(m) => m.log_density(x),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        match self {
            Backend::Ht(m) => m.write_to(&mut buf)?,
            Backend::Gmm(m) => m.write_to(&mut buf)?,
        }
        Ok(buf)
    }

    pub fn load(path: &Path, kind: BackendKind) -> Result<Backend> {
        Ok(match kind {
            BackendKind::Ht => Backend::Ht(HtModel::load(path)?),
            BackendKind::Gmm => Backend::Gmm(GmmModel::load(path)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerModel {
    pub speaker_id: String,
    pub backend: Backend,
    pub feature_mode: FeatureMode,
}

/// `T` consecutive feature frames scored as one unit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment<'a> {
    data: &'a [f64],
    dim: usize,
}

impl<'a> Segment<'a> {
    pub fn new(frames: &'a FeatureMatrix) -> Result<Self> {
        Self::from_rows(frames, 0, frames.rows())
    }

    /// Rows `start..start + len` of `frames`, without copying.
    pub fn from_rows(frames: &'a FeatureMatrix, start: usize, len: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::EmptyInput("segment needs at least one frame".into()));
        }
        if start + len > frames.rows() {
            return Err(Error::InsufficientFrames {
                needed: start + len - 1,
                got: frames.rows(),
            });
        }
        let d = frames.cols();
        Ok(Self {
            data: &frames.as_slice()[start * d..(start + len) * d],
            dim: d,
        })
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frames(&self) -> impl ExactSizeIterator<Item = &'a [f64]> {
        self.data.chunks_exact(self.dim.max(1))
    }
}

/// Sum of per-frame log-densities of `seg` under the speaker's model.
pub fn score_segment(model: &SpeakerModel, seg: Segment<'_>) -> Result<f64> {
    if seg.dim() != model.backend.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.backend.dim(),
            got: seg.dim(),
        });
    }
    let mut total = 0.0;
    for frame in seg.frames() {
        total += model.backend.log_density(frame)?;
    }
    Ok(total)
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax_first(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        match best {
            Some(b) if !(s > scores[b]) => {}
            _ if s.is_nan() => {}
            _ => best = Some(i),
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Identification {
    pub index: usize,
    pub speaker_id: String,
    /// Score of every registry entry, in registry order.
    pub scores: Vec<f64>,
}

impl Identification {
    /// `(speaker index, score)` from best to worst; equal scores keep
    /// registry order.
    pub fn ranked(&self) -> Vec<(usize, f64)> {
        let mut r: Vec<(usize, f64)> = self.scores.iter().copied().enumerate().collect();
        r.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        r
    }
}

/// One line of a registry manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub speaker_id: String,
    pub model_path: PathBuf,
    pub backend: BackendKind,
    pub feature_mode: FeatureMode,
}

/// Enrolled speakers sharing one backend kind, feature mode and dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Registry {
    models: Vec<SpeakerModel>,
}

impl Registry {
    pub fn new(models: Vec<SpeakerModel>) -> Result<Self> {
        let first = models
            .first()
            .ok_or_else(|| Error::EmptyInput("registry has no speakers".into()))?;
        let (dim, mode, kind) = (
            first.backend.dim(),
            first.feature_mode,
            first.backend.kind(),
        );
        let mut seen = std::collections::HashSet::new();
        for m in &models {
            if !seen.insert(m.speaker_id.as_str()) {
                return Err(Error::Config(format!(
                    "duplicate speaker id {:?}",
                    m.speaker_id
                )));
            }
            if m.backend.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: m.backend.dim(),
                });
            }
            if m.feature_mode != mode || m.backend.kind() != kind {
                return Err(Error::Config(format!(
                    "speaker {:?} uses {}/{}, registry uses {kind}/{mode}",
                    m.speaker_id,
                    m.backend.kind(),
                    m.feature_mode
                )));
            }
        }
        Ok(Self { models })
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn models(&self) -> &[SpeakerModel] {
        &self.models
    }

    pub fn dim(&self) -> usize {
        self.models[0].backend.dim()
    }

    pub fn feature_mode(&self) -> FeatureMode {
        self.models[0].feature_mode
    }

    pub fn backend_kind(&self) -> BackendKind {
        self.models[0].backend.kind()
    }

    pub fn identify(&self, seg: Segment<'_>) -> Result<Identification> {
        let scores = self
            .models
            .iter()
            .map(|m| score_segment(m, seg))
            .collect::<Result<Vec<_>>>()?;
        let index = argmax_first(&scores).unwrap_or(0);
        Ok(Identification {
            index,
            speaker_id: self.models[index].speaker_id.clone(),
            scores,
        })
    }

    /// Reads a JSON manifest; relative model paths resolve against the
    /// manifest's directory.
    pub fn load_manifest(path: &Path) -> Result<Registry> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        let entries: Vec<ManifestEntry> = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let models = entries
            .into_iter()
            .map(|e| {
                let p = if e.model_path.is_absolute() {
                    e.model_path.clone()
                } else {
                    base.join(&e.model_path)
                };
                Ok(SpeakerModel {
                    speaker_id: e.speaker_id,
                    backend: Backend::load(&p, e.backend)?,
                    feature_mode: e.feature_mode,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Registry::new(models)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmm::GmmConfig;
    use crate::ht::HtConfig;
    use crate::rng::substream;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn gaussian(n: usize, d: usize, centre: f64, seed: u64) -> FeatureMatrix {
        let mut rng = substream(seed, 0);
        let data = (0..n * d)
            .map(|_| centre + rng.sample::<f64, _>(StandardNormal))
            .collect();
        FeatureMatrix::new(n, d, data).unwrap()
    }

    fn ht_speaker(id: &str, centre: f64, seed: u64) -> SpeakerModel {
        let x = gaussian(400, 4, centre, seed);
        let m = HtModel::fit(
            &x,
            &HtConfig {
                h: 20,
                seed,
                ..HtConfig::default()
            },
        )
        .unwrap();
        SpeakerModel {
            speaker_id: id.into(),
            backend: Backend::Ht(m),
            feature_mode: FeatureMode::XSup,
        }
    }

    #[test]
    fn single_frame_score_is_log_density() {
        let s = ht_speaker("a", 0.0, 1);
        let x = gaussian(1, 4, 0.0, 50);
        let seg = Segment::new(&x).unwrap();
        assert_eq!(
            score_segment(&s, seg).unwrap(),
            s.backend.log_density(x.row(0)).unwrap()
        );
    }

    #[test]
    fn duplicated_segment_doubles_score() {
        let s = ht_speaker("a", 0.0, 1);
        let x = gaussian(10, 4, 0.0, 7);
        let doubled = FeatureMatrix::vstack([&x, &x]).unwrap();
        let one = score_segment(&s, Segment::new(&x).unwrap()).unwrap();
        let two = score_segment(&s, Segment::new(&doubled).unwrap()).unwrap();
        assert!((two - 2.0 * one).abs() <= 1e-12 * one.abs());
    }

    #[test]
    fn scoring_is_additive_over_concatenation() {
        let s = ht_speaker("a", 0.0, 2);
        let x = gaussian(30, 4, 0.0, 8);
        let whole = score_segment(&s, Segment::new(&x).unwrap()).unwrap();
        let head = score_segment(&s, Segment::from_rows(&x, 0, 13).unwrap()).unwrap();
        let tail = score_segment(&s, Segment::from_rows(&x, 13, 17).unwrap()).unwrap();
        assert!((whole - (head + tail)).abs() <= 1e-12 * whole.abs());
    }

    #[test]
    fn singleton_registry() {
        let reg = Registry::new(vec![ht_speaker("only", 0.0, 1)]).unwrap();
        let x = gaussian(5, 4, 30.0, 3);
        assert_eq!(
            reg.identify(Segment::new(&x).unwrap()).unwrap().speaker_id,
            "only"
        );
    }

    #[test]
    fn ties_go_to_first_entry() {
        let a = ht_speaker("first", 0.0, 1);
        let mut b = a.clone();
        b.speaker_id = "second".into();
        let reg = Registry::new(vec![a, b]).unwrap();
        let x = gaussian(5, 4, 0.0, 3);
        let id = reg.identify(Segment::new(&x).unwrap()).unwrap();
        assert_eq!(id.index, 0);
        assert_eq!(id.scores[0], id.scores[1]);
    }

    #[test]
    fn separated_speakers_are_identified() {
        let reg = Registry::new(vec![
            ht_speaker("s0", 0.0, 10),
            ht_speaker("s1", 20.0, 11),
            ht_speaker("s2", 40.0, 12),
        ])
        .unwrap();
        let mut correct = 0;
        for trial in 0..100 {
            let x = gaussian(50, 4, 20.0, 1000 + trial);
            let id = reg.identify(Segment::new(&x).unwrap()).unwrap();
            correct += usize::from(id.speaker_id == "s1");
        }
        assert!(correct >= 99, "{correct}");
    }

    #[test]
    fn registry_invariants() {
        assert!(Registry::new(vec![]).is_err());
        assert!(Registry::new(vec![ht_speaker("a", 0.0, 1), ht_speaker("a", 1.0, 2)]).is_err());
        let x = gaussian(100, 3, 0.0, 1);
        let g = GmmModel::fit(
            &x,
            &GmmConfig {
                k: 2,
                ..GmmConfig::default()
            },
        )
        .unwrap();
        let gmm = SpeakerModel {
            speaker_id: "g".into(),
            backend: Backend::Gmm(g),
            feature_mode: FeatureMode::XSup,
        };
        assert!(Registry::new(vec![ht_speaker("a", 0.0, 1), gmm]).is_err());
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let reg = Registry::new(vec![ht_speaker("a", 0.0, 1)]).unwrap();
        let x = gaussian(5, 3, 0.0, 3);
        assert!(matches!(
            reg.identify(Segment::new(&x).unwrap()),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn adding_a_weaker_speaker_keeps_the_winner() {
        let base = vec![ht_speaker("s0", 0.0, 10), ht_speaker("s1", 20.0, 11)];
        let x = gaussian(40, 4, 20.0, 77);
        let seg = Segment::new(&x).unwrap();
        let before = Registry::new(base.clone()).unwrap().identify(seg).unwrap();
        let mut more = base;
        more.insert(0, ht_speaker("s9", -30.0, 13));
        let after = Registry::new(more).unwrap().identify(seg).unwrap();
        assert_eq!(before.speaker_id, after.speaker_id);
    }

    #[test]
    fn argmax_tie_rule() {
        assert_eq!(argmax_first(&[1.0, 3.0, 3.0, 2.0]), Some(1));
        assert_eq!(argmax_first(&[f64::NAN, -1.0]), Some(1));
        assert_eq!(argmax_first(&[]), None);
    }

    #[test]
    fn ranking_is_non_increasing() {
        let id = Identification {
            index: 1,
            speaker_id: "b".into(),
            scores: vec![-3.0, -1.0, -2.0, -1.0],
        };
        let r = id.ranked();
        assert_eq!(r.iter().map(|p| p.0).collect::<Vec<_>>(), vec![1, 3, 2, 0]);
    }
}
