use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use htsid::eval::{self, Corpus, EvalReport, SpeakerData, Utterance};
use htsid::features::load_wav;
use htsid::rng::{derive_seed, label_key};
use htsid::speaker::{Backend, BackendKind, ManifestEntry, Registry, Segment};
use htsid::{FeatureMatrix, GmmConfig, GmmModel, HtConfig, HtModel};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::fsutil::{mtime_ns, sha256_hex, write_atomic};

pub const EXTRACT_MANIFEST: &str = "manifest.json";
pub const REGISTRY_FILE: &str = "registry.json";

fn file_name(p: &Path) -> String {
    p.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn file_stem(p: &Path) -> String {
    p.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn sorted_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    for e in std::fs::read_dir(root).with_context(|| format!("listing {}", root.display()))? {
        let p = e?.path();
        if p.is_dir() {
            dirs.push(p);
        }
    }
    dirs.sort();
    Ok(dirs)
}

fn to_bytes(m: &FeatureMatrix) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    m.write_htfx(&mut buf)?;
    Ok(buf)
}

// ---------------------------------------------------------------------------
// extract

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub source: PathBuf,
    pub source_mtime_ns: u64,
    pub source_sha256: String,
    pub config_hash: String,
    pub frames: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractManifest {
    pub config_hash: String,
    /// Cache files per speaker, relative to the cache directory.
    pub speakers: BTreeMap<String, Vec<PathBuf>>,
    pub entries: BTreeMap<String, CacheEntry>,
    pub failures: BTreeMap<String, String>,
}

impl ExtractManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExtractSummary {
    pub written: usize,
    pub up_to_date: usize,
    pub failures: Vec<(PathBuf, String)>,
    pub manifest: PathBuf,
}

/// Hash of every setting that changes extracted features.
pub fn feature_config_hash(cfg: &PipelineConfig) -> Result<String> {
    let key = serde_json::to_vec(&cfg.pipeline())?;
    Ok(sha256_hex(&key))
}

enum Outcome {
    Written(CacheEntry),
    UpToDate(CacheEntry),
    Failed(String),
}

/// Extracts base MFCC frames for every `<speaker>/<utt>.wav` under
/// `corpus_root` into `<cache_dir>/<speaker>/<utt>.htfx`. Unreadable files
/// are reported and skipped.
pub fn cmd_extract(
    cfg: &PipelineConfig,
    corpus_root: &Path,
    cache_dir: &Path,
) -> Result<ExtractSummary> {
    let config_hash = feature_config_hash(cfg)?;
    let manifest_path = cache_dir.join(EXTRACT_MANIFEST);
    let old = if manifest_path.is_file() {
        ExtractManifest::load(&manifest_path).unwrap_or_else(|e| {
            log::warn!("ignoring unreadable manifest: {e:#}");
            ExtractManifest::default()
        })
    } else {
        ExtractManifest::default()
    };

    let mut jobs: Vec<(String, PathBuf, PathBuf)> = Vec::new();
    for dir in sorted_dirs(corpus_root)? {
        let speaker = file_name(&dir);
        let mut wavs: Vec<PathBuf> = std::fs::read_dir(&dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")))
            .collect();
        wavs.sort();
        for w in wavs {
            let rel = PathBuf::from(&speaker).join(format!("{}.htfx", file_stem(&w)));
            jobs.push((speaker.clone(), w, rel));
        }
    }
    if jobs.is_empty() {
        log::warn!("no WAV files under {}", corpus_root.display());
    }

    let pipeline = cfg.pipeline();
    let outcomes: Vec<Outcome> = jobs
        .par_iter()
        .map(|(_, src, rel)| {
            let run = || -> Result<Outcome> {
                let key = rel.to_string_lossy().into_owned();
                let target = cache_dir.join(rel);
                let mtime = mtime_ns(src)?;
                if let Some(prev) = old.entries.get(&key) {
                    let fresh =
                        target.is_file() && prev.source == *src && prev.config_hash == config_hash;
                    if fresh && prev.source_mtime_ns == mtime {
                        return Ok(Outcome::UpToDate(prev.clone()));
                    }
                    if fresh {
                        let bytes = std::fs::read(src)?;
                        if sha256_hex(&bytes) == prev.source_sha256 {
                            return Ok(Outcome::UpToDate(CacheEntry {
                                source_mtime_ns: mtime,
                                ..prev.clone()
                            }));
                        }
                    }
                }
                let bytes =
                    std::fs::read(src).with_context(|| format!("reading {}", src.display()))?;
                let clip = load_wav(src)?;
                let frames = pipeline.extract(&clip)?;
                write_atomic(&target, &to_bytes(&frames)?)?;
                Ok(Outcome::Written(CacheEntry {
                    source: src.clone(),
                    source_mtime_ns: mtime,
                    source_sha256: sha256_hex(&bytes),
                    config_hash: config_hash.clone(),
                    frames: frames.rows(),
                }))
            };
            run().unwrap_or_else(|e| Outcome::Failed(format!("{e:#}")))
        })
        .collect();

    let mut manifest = ExtractManifest {
        config_hash,
        ..ExtractManifest::default()
    };
    let mut summary = ExtractSummary {
        manifest: manifest_path.clone(),
        ..ExtractSummary::default()
    };
    for ((speaker, src, rel), outcome) in jobs.into_iter().zip(outcomes) {
        let entry = match outcome {
            Outcome::Written(e) => {
                summary.written += 1;
                e
            }
            Outcome::UpToDate(e) => {
                summary.up_to_date += 1;
                e
            }
            Outcome::Failed(msg) => {
                log::error!("{}: {msg}", src.display());
                manifest
                    .failures
                    .insert(src.to_string_lossy().into_owned(), msg.clone());
                summary.failures.push((src, msg));
                continue;
            }
        };
        manifest
            .speakers
            .entry(speaker)
            .or_default()
            .push(rel.clone());
        manifest
            .entries
            .insert(rel.to_string_lossy().into_owned(), entry);
    }
    write_atomic(
        &manifest_path,
        serde_json::to_string_pretty(&manifest)?.as_bytes(),
    )?;
    Ok(summary)
}

// ---------------------------------------------------------------------------
// train

/// Base frames per speaker from an extraction manifest when one exists,
/// otherwise from `<dir>/<speaker>/*.htfx|wav`.
pub fn load_features(cfg: &PipelineConfig, dir: &Path) -> Result<Corpus> {
    let manifest = dir.join(EXTRACT_MANIFEST);
    if !manifest.is_file() {
        return Ok(Corpus::load_dir(dir, &cfg.pipeline())?);
    }
    let m = ExtractManifest::load(&manifest)?;
    let speakers = m
        .speakers
        .iter()
        .map(|(id, files)| {
            let utterances = files
                .iter()
                .map(|rel| {
                    let p = dir.join(rel);
                    Ok(Utterance {
                        name: file_stem(&p),
                        frames: FeatureMatrix::load(&p)
                            .with_context(|| format!("loading {}", p.display()))?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(SpeakerData {
                id: id.clone(),
                utterances,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus { speakers })
}

fn training_matrix(cfg: &PipelineConfig, sp: &SpeakerData) -> Result<FeatureMatrix> {
    let stack = cfg.stacking();
    let mut parts = Vec::new();
    for u in &sp.utterances {
        match stack.apply(&u.frames) {
            Ok(m) => parts.push(m),
            Err(htsid::Error::InsufficientFrames { .. }) => {
                log::warn!("{}/{} is too short for {}", sp.id, u.name, stack.mode);
            }
            Err(e) => return Err(e.into()),
        }
    }
    if parts.is_empty() {
        bail!("no usable utterances");
    }
    Ok(FeatureMatrix::vstack(&parts)?)
}

fn fit_backend(
    cfg: &PipelineConfig,
    kind: BackendKind,
    id: &str,
    x: &FeatureMatrix,
) -> Result<Backend> {
    Ok(match kind {
        BackendKind::Ht => Backend::Ht(HtModel::fit(
            x,
            &HtConfig {
                seed: derive_seed(cfg.ht.seed, label_key(id)),
                ..cfg.ht.clone()
            },
        )?),
        BackendKind::Gmm => Backend::Gmm(GmmModel::fit(
            x,
            &GmmConfig {
                seed: derive_seed(cfg.gmm.seed, label_key(id)),
                ..cfg.gmm.clone()
            },
        )?),
    })
}

/// Fits one model per speaker and backend and writes
/// `<model_dir>/<backend>/<speaker>.<ext>` plus a registry per backend.
/// Returns the registry paths.
pub fn cmd_train(
    cfg: &PipelineConfig,
    backends: &[BackendKind],
    features_dir: &Path,
    model_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let corpus = load_features(cfg, features_dir)?;
    if corpus.speakers.is_empty() {
        bail!("no speakers under {}", features_dir.display());
    }
    let data = corpus
        .speakers
        .par_iter()
        .map(|sp| training_matrix(cfg, sp).with_context(|| format!("speaker {:?}", sp.id)))
        .collect::<Result<Vec<_>>>()?;

    let mut registries = Vec::new();
    for &kind in backends {
        let dir = model_dir.join(kind.as_str());
        let models = corpus
            .speakers
            .par_iter()
            .zip(&data)
            .map(|(sp, x)| {
                let m = fit_backend(cfg, kind, &sp.id, x)
                    .with_context(|| format!("fitting {kind} for speaker {:?}", sp.id))?;
                let name = format!("{}.{}", sp.id, kind.extension());
                write_atomic(&dir.join(&name), &m.to_bytes()?)?;
                Ok(ManifestEntry {
                    speaker_id: sp.id.clone(),
                    model_path: name.into(),
                    backend: kind,
                    feature_mode: cfg.feature_mode,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let path = dir.join(REGISTRY_FILE);
        write_atomic(&path, serde_json::to_string_pretty(&models)?.as_bytes())?;
        registries.push(path);
    }
    Ok(registries)
}

// ---------------------------------------------------------------------------
// identify

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedSpeaker {
    pub speaker_id: String,
    pub log_likelihood: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentifyOutput {
    pub decision: String,
    /// Super-frames scored.
    pub frames: usize,
    /// Best first.
    pub ranked: Vec<RankedSpeaker>,
}

/// Base frames of a WAV (through the front end) or `.htfx` file.
pub fn load_input(cfg: &PipelineConfig, input: &Path) -> Result<FeatureMatrix> {
    let is_wav = input
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("wav"));
    Ok(if is_wav {
        cfg.pipeline().extract(&load_wav(input)?)?
    } else {
        FeatureMatrix::load(input)?
    })
}

/// Scores `input` against every enrolled speaker; with `frames = Some(t)`
/// only super-frames `start..start + t` are used.
pub fn cmd_identify(
    cfg: &PipelineConfig,
    registry: &Path,
    input: &Path,
    frames: Option<usize>,
    start: usize,
) -> Result<IdentifyOutput> {
    let reg = Registry::load_manifest(registry)
        .with_context(|| format!("loading registry {}", registry.display()))?;
    let base = load_input(cfg, input)?;
    let stacked = htsid::features::SuperFrameConfig {
        tau: cfg.tau,
        mode: reg.feature_mode(),
    }
    .apply(&base)?;
    if stacked.cols() != reg.dim() {
        bail!(
            "input has dimension {} after stacking, registry expects {}",
            stacked.cols(),
            reg.dim()
        );
    }
    let len = frames.unwrap_or(stacked.rows().saturating_sub(start));
    let seg = Segment::from_rows(&stacked, start, len).map_err(|e| {
        anyhow!(
            "cannot take {len} frames from {start} of {}: {e}",
            stacked.rows()
        )
    })?;
    let id = reg.identify(seg)?;
    let ranked = id
        .ranked()
        .into_iter()
        .map(|(i, s)| RankedSpeaker {
            speaker_id: reg.models()[i].speaker_id.clone(),
            log_likelihood: s,
        })
        .collect();
    Ok(IdentifyOutput {
        decision: id.speaker_id,
        frames: len,
        ranked,
    })
}

// ---------------------------------------------------------------------------
// evaluate / synth-corpus / inspect-model

/// Runs the experiment on `corpus_root`, or on a synthetic corpus when no
/// root is given, and writes the JSON and CSV reports.
pub fn cmd_evaluate(
    cfg: &PipelineConfig,
    corpus_root: Option<&Path>,
    report_path: &Path,
    model_dir: Option<&Path>,
) -> Result<EvalReport> {
    let exp = cfg.experiment();
    exp.validate()?;
    let corpus = match corpus_root {
        Some(root) => load_features(cfg, root)?,
        None => eval::synthesize(&cfg.synthetic)?.0,
    };
    let report = eval::run_experiment_with_models(&exp, &corpus, model_dir)?;
    write_atomic(report_path, report.to_json()?.as_bytes())?;
    write_atomic(&csv_path(report_path), report.to_csv().as_bytes())?;
    Ok(report)
}

pub fn csv_path(report_path: &Path) -> PathBuf {
    report_path.with_extension("csv")
}

/// Writes the configured synthetic corpus under `out` and returns it.
pub fn cmd_synth_corpus(cfg: &PipelineConfig, out: &Path) -> Result<Corpus> {
    let (corpus, _) = eval::synthesize(&cfg.synthetic)?;
    for sp in &corpus.speakers {
        for u in &sp.utterances {
            let path = out.join(&sp.id).join(format!("{}.htfx", u.name));
            write_atomic(&path, &to_bytes(&u.frames)?)?;
        }
    }
    Ok(corpus)
}

/// Summary of a model file, detected by its magic bytes.
pub fn cmd_inspect(path: &Path) -> Result<serde_json::Value> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let magic = bytes.get(..4).unwrap_or_default();
    Ok(match magic {
        b"HTMD" => {
            let m = HtModel::read_from(bytes.as_slice())?;
            let cells: Vec<usize> = m.histograms().iter().map(|h| h.len()).collect();
            let volumes: Vec<f64> = m.transforms().iter().map(|t| t.bin_volume()).collect();
            serde_json::json!({
                "kind": "ht",
                "dim": m.dim(),
                "n": m.n(),
                "h": m.h(),
                "pi0": m.pi0(),
                "prior_mean": m.prior().mean(),
                "prior_log_det": m.prior().log_det(),
                "occupied_cells": cells,
                "bin_volumes": volumes,
            })
        }
        b"GMMD" => {
            let m = GmmModel::read_from(bytes.as_slice())?;
            serde_json::json!({
                "kind": "gmm",
                "dim": m.dim(),
                "k": m.k(),
                "weights": m.weights(),
            })
        }
        b"HTFX" => {
            let m = FeatureMatrix::read_htfx(bytes.as_slice())?;
            serde_json::json!({ "kind": "features", "rows": m.rows(), "cols": m.cols() })
        }
        _ => bail!("{} is not a model or feature file", path.display()),
    })
}
