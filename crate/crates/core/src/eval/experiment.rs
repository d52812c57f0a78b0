use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::corpus::Corpus;
use super::report::{AccuracyRecord, EvalReport, System};
use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, FeatureMode, SuperFrameConfig};
use crate::gmm::{GmmConfig, GmmModel};
use crate::ht::{HtConfig, HtModel};
use crate::rng::{derive_seed, label_key, substream};
use crate::speaker::{argmax_first, Backend, BackendKind, ManifestEntry, Segment};

/// A backend paired with the feature layout it is trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Method {
    pub backend: BackendKind,
    pub feature_mode: FeatureMode,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.backend, self.feature_mode)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub n_speakers: usize,
    pub train_utts: usize,
    pub test_utts: usize,
    pub segs_per_utt: usize,
    pub t_values: Vec<usize>,
    /// Transform counts swept for the HT backend.
    pub h_values: Vec<usize>,
    /// Mixture sizes swept for the GMM backend.
    pub gmm_components: Vec<usize>,
    pub rounds: usize,
    pub methods: Vec<Method>,
    pub tau: usize,
    /// `h` and `seed` are overridden per fit.
    pub ht: HtConfig,
    /// `k` and `seed` are overridden per fit.
    pub gmm: GmmConfig,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let methods = [BackendKind::Ht, BackendKind::Gmm]
            .into_iter()
            .flat_map(|backend| {
                [FeatureMode::XSup, FeatureMode::DeltaMfccSup]
                    .into_iter()
                    .map(move |feature_mode| Method {
                        backend,
                        feature_mode,
                    })
            })
            .collect();
        Self {
            n_speakers: 100,
            train_utts: 7,
            test_utts: 3,
            segs_per_utt: 10,
            t_values: vec![50, 100, 150, 200],
            h_values: vec![100, 200, 300, 400, 500],
            gmm_components: vec![32, 64],
            rounds: 10,
            methods,
            tau: 1,
            ht: HtConfig::default(),
            gmm: GmmConfig::default(),
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_speakers", self.n_speakers),
            ("train_utts", self.train_utts),
            ("test_utts", self.test_utts),
            ("segs_per_utt", self.segs_per_utt),
            ("rounds", self.rounds),
            ("tau", self.tau),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.methods.is_empty() {
            return Err(Error::Config("no methods to compare".into()));
        }
        let unique: BTreeSet<_> = self.methods.iter().collect();
        if unique.len() != self.methods.len() {
            return Err(Error::Config("duplicate method".into()));
        }
        let uses = |k| self.methods.iter().any(|m| m.backend == k);
        let lists = [
            ("t_values", &self.t_values, true),
            ("h_values", &self.h_values, uses(BackendKind::Ht)),
            (
                "gmm_components",
                &self.gmm_components,
                uses(BackendKind::Gmm),
            ),
        ];
        for (name, list, needed) in lists {
            if needed && list.is_empty() {
                return Err(Error::Config(format!("{name} is empty")));
            }
            if list.contains(&0) {
                return Err(Error::Config(format!("{name} entries must be at least 1")));
            }
        }
        if uses(BackendKind::Ht) {
            HtConfig {
                h: self.max_h(),
                ..self.ht.clone()
            }
            .validate()?;
        }
        if uses(BackendKind::Gmm) {
            GmmConfig {
                k: 1,
                ..self.gmm.clone()
            }
            .validate()?;
        }
        Ok(())
    }

    fn max_h(&self) -> usize {
        self.h_values.iter().copied().max().unwrap_or(1)
    }

    /// Every (method, H or K) combination, in report order.
    pub fn systems(&self) -> Vec<System> {
        let sorted = |v: &[usize]| v.iter().copied().collect::<BTreeSet<_>>();
        self.methods
            .iter()
            .flat_map(|&m| {
                let params = match m.backend {
                    BackendKind::Ht => sorted(&self.h_values),
                    BackendKind::Gmm => sorted(&self.gmm_components),
                };
                params.into_iter().map(move |param| System {
                    backend: m.backend,
                    feature_mode: m.feature_mode,
                    param,
                })
            })
            .collect()
    }

    fn t_sorted(&self) -> Vec<usize> {
        self.t_values
            .iter()
            .copied()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }
}

/// Random disjoint train/test split of `n_utts` utterance indices.
pub fn split_speaker<R: Rng>(
    speaker_id: &str,
    n_utts: usize,
    train: usize,
    test: usize,
    rng: &mut R,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if train + test > n_utts {
        return Err(Error::speaker(
            speaker_id,
            Error::InsufficientData {
                needed: train + test,
                got: n_utts,
            },
        ));
    }
    let mut picked = index::sample(rng, n_utts, train + test).into_vec();
    let test_set = picked.split_off(train);
    Ok((picked, test_set))
}

/// `k` start offsets for `t`-frame windows over `rows` frames, drawn with
/// replacement. `None` when the utterance is shorter than `t`.
pub fn segment_starts<R: Rng>(rows: usize, t: usize, k: usize, rng: &mut R) -> Option<Vec<usize>> {
    if t == 0 || rows < t {
        return None;
    }
    Some((0..k).map(|_| rng.random_range(0..=rows - t)).collect())
}

pub fn extract_segments<'a, R: Rng>(
    frames: &'a FeatureMatrix,
    t: usize,
    k: usize,
    rng: &mut R,
) -> Vec<Segment<'a>> {
    match segment_starts(frames.rows(), t, k, rng) {
        Some(starts) => starts
            .into_iter()
            .map(|s| Segment::from_rows(frames, s, t).expect("start within bounds"))
            .collect(),
        None => {
            log::warn!(
                "utterance of {} frames is shorter than T = {t}",
                frames.rows()
            );
            Vec::new()
        }
    }
}

const ROUND_KEY: u64 = 1;
const SPLIT_KEY: u64 = 2;
const FIT_KEY: u64 = 3;
const SEGMENT_KEY: u64 = 4;

fn key_seed(seed: u64, keys: &[u64]) -> u64 {
    keys.iter().fold(seed, |s, &k| derive_seed(s, k))
}

/// Corpus speaker with its utterances in every feature mode in use.
struct Prepared<'a> {
    id: &'a str,
    /// `features[mode][utt]`; `None` when the utterance is too short to stack.
    features: Vec<Vec<Option<FeatureMatrix>>>,
}

fn mode_index(modes: &[FeatureMode], m: FeatureMode) -> usize {
    modes.iter().position(|&x| x == m).expect("mode prepared")
}

/// Models of one system for every speaker of a round.
enum Fitted {
    Ht(Vec<HtModel>),
    Gmm(Vec<GmmModel>),
}

pub fn run_experiment(cfg: &ExperimentConfig, corpus: &Corpus) -> Result<EvalReport> {
    run_experiment_with_models(cfg, corpus, None)
}

/// As [`run_experiment`], also writing every fitted model under
/// `model_dir/round<r>/<backend>_<mode>_<param>/`.
pub fn run_experiment_with_models(
    cfg: &ExperimentConfig,
    corpus: &Corpus,
    model_dir: Option<&Path>,
) -> Result<EvalReport> {
    cfg.validate()?;
    let needed = cfg.train_utts + cfg.test_utts;
    let eligible: Vec<usize> = (0..corpus.speakers.len())
        .filter(|&s| corpus.speakers[s].utterances.len() >= needed)
        .collect();
    if eligible.len() < cfg.n_speakers {
        return Err(Error::Config(format!(
            "{} speakers requested but only {} of {} have at least {needed} utterances",
            cfg.n_speakers,
            eligible.len(),
            corpus.speakers.len()
        )));
    }
    let dim = corpus.dim().unwrap_or(0);
    for s in &corpus.speakers {
        for u in &s.utterances {
            if u.frames.cols() != dim {
                return Err(Error::speaker(
                    &s.id,
                    Error::DimensionMismatch {
                        expected: dim,
                        got: u.frames.cols(),
                    },
                ));
            }
        }
    }

    let modes: Vec<FeatureMode> = cfg
        .methods
        .iter()
        .map(|m| m.feature_mode)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let prepared: Vec<Prepared> = eligible
        .par_iter()
        .map(|&s| {
            let sp = &corpus.speakers[s];
            let features = modes
                .iter()
                .map(|&mode| {
                    let stack = SuperFrameConfig { tau: cfg.tau, mode };
                    sp.utterances
                        .iter()
                        .map(|u| match stack.apply(&u.frames) {
                            Ok(f) => Ok(Some(f)),
                            Err(Error::InsufficientFrames { .. }) => {
                                log::warn!("{}/{} too short for {mode}", sp.id, u.name);
                                Ok(None)
                            }
                            Err(e) => Err(Error::speaker(&sp.id, e)),
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Prepared {
                id: &sp.id,
                features,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let records = (0..cfg.rounds)
        .into_par_iter()
        .map(|r| run_round(cfg, &prepared, &modes, r, model_dir))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    EvalReport::assemble(cfg.clone(), records)
}

fn run_round(
    cfg: &ExperimentConfig,
    prepared: &[Prepared],
    modes: &[FeatureMode],
    round: usize,
    model_dir: Option<&Path>,
) -> Result<Vec<AccuracyRecord>> {
    let r = round as u64;
    let mut rng = substream(derive_seed(cfg.seed, ROUND_KEY), r);
    let mut chosen = index::sample(&mut rng, prepared.len(), cfg.n_speakers).into_vec();
    chosen.sort_unstable();
    let speakers: Vec<&Prepared> = chosen.iter().map(|&i| &prepared[i]).collect();

    let splits = speakers
        .iter()
        .map(|p| {
            let n = p.features[0].len();
            let mut rng = substream(key_seed(cfg.seed, &[SPLIT_KEY, r]), label_key(p.id));
            split_speaker(p.id, n, cfg.train_utts, cfg.test_utts, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;

    // Training matrices per mode and speaker.
    let train: Vec<Vec<FeatureMatrix>> = modes
        .iter()
        .enumerate()
        .map(|(mi, &mode)| {
            speakers
                .par_iter()
                .zip(&splits)
                .map(|(p, (tr, _))| {
                    let parts: Vec<&FeatureMatrix> = tr
                        .iter()
                        .filter_map(|&u| p.features[mi][u].as_ref())
                        .collect();
                    if parts.is_empty() {
                        return Err(Error::speaker(
                            p.id,
                            Error::EmptyInput(format!(
                                "no training utterance long enough for {mode}"
                            )),
                        ));
                    }
                    FeatureMatrix::vstack(parts)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let t_values = cfg.t_sorted();
    let mut h_counts: Vec<usize> = cfg.h_values.clone();
    h_counts.sort_unstable();
    h_counts.dedup();
    let mut k_values = cfg.gmm_components.clone();
    k_values.sort_unstable();
    k_values.dedup();

    let mut records = Vec::new();
    for method in &cfg.methods {
        let mi = mode_index(modes, method.feature_mode);
        let fit_seed = |p: &Prepared| {
            key_seed(
                cfg.seed,
                &[
                    FIT_KEY,
                    r,
                    label_key(method.feature_mode.as_str()),
                    label_key(p.id),
                ],
            )
        };
        let fitted: Vec<Fitted> = match method.backend {
            BackendKind::Ht => {
                let models = speakers
                    .par_iter()
                    .zip(&train[mi])
                    .map(|(p, x)| {
                        let c = HtConfig {
                            h: *h_counts.last().expect("validated"),
                            seed: fit_seed(p),
                            ..cfg.ht.clone()
                        };
                        HtModel::fit(x, &c).map_err(|e| Error::speaker(p.id, e))
                    })
                    .collect::<Result<Vec<_>>>()?;
                vec![Fitted::Ht(models)]
            }
            BackendKind::Gmm => k_values
                .iter()
                .map(|&k| {
                    speakers
                        .par_iter()
                        .zip(&train[mi])
                        .map(|(p, x)| {
                            let c = GmmConfig {
                                k,
                                seed: fit_seed(p),
                                ..cfg.gmm.clone()
                            };
                            GmmModel::fit(x, &c).map_err(|e| Error::speaker(p.id, e))
                        })
                        .collect::<Result<Vec<_>>>()
                        .map(Fitted::Gmm)
                })
                .collect::<Result<Vec<_>>>()?,
        };
        let params: Vec<usize> = match method.backend {
            BackendKind::Ht => h_counts.clone(),
            BackendKind::Gmm => k_values.clone(),
        };
        if let Some(dir) = model_dir {
            save_models(dir, round, *method, &params, &fitted, &speakers)?;
        }

        // tallies[param][t] = (correct, total, skipped utterances)
        let jobs: Vec<(usize, usize)> = splits
            .iter()
            .enumerate()
            .flat_map(|(s, (_, te))| te.iter().map(move |&u| (s, u)))
            .collect();
        let partial = jobs
            .par_iter()
            .map(|&(s, u)| {
                let frames = speakers[s].features[mi][u].as_ref();
                score_utterance(cfg, r, &speakers, s, u, frames, &t_values, &params, &fitted)
            })
            .collect::<Result<Vec<_>>>()?;
        for (pi, &param) in params.iter().enumerate() {
            for (ti, &t) in t_values.iter().enumerate() {
                let (mut correct, mut total, mut skipped) = (0usize, 0usize, 0usize);
                for tally in &partial {
                    let (c, n, k) = tally[pi][ti];
                    correct += c;
                    total += n;
                    skipped += k;
                }
                if total == 0 {
                    return Err(Error::Config(format!(
                        "round {round}: no test utterance has {t} frames for {method}"
                    )));
                }
                records.push(AccuracyRecord {
                    system: System {
                        backend: method.backend,
                        feature_mode: method.feature_mode,
                        param,
                    },
                    t,
                    round,
                    correct,
                    total,
                    skipped_utterances: skipped,
                    accuracy: correct as f64 / total as f64,
                });
            }
        }
    }
    Ok(records)
}

type Tally = (usize, usize, usize);

#[allow(clippy::too_many_arguments)]
fn score_utterance(
    cfg: &ExperimentConfig,
    r: u64,
    speakers: &[&Prepared],
    truth: usize,
    utt: usize,
    frames: Option<&FeatureMatrix>,
    t_values: &[usize],
    params: &[usize],
    fitted: &[Fitted],
) -> Result<Vec<Vec<Tally>>> {
    let mut out = vec![vec![(0, 0, 0); t_values.len()]; params.len()];
    let rows = frames.map_or(0, |f| f.rows());
    let starts: Vec<Option<Vec<usize>>> = t_values
        .iter()
        .map(|&t| {
            let mut rng = substream(
                key_seed(
                    cfg.seed,
                    &[SEGMENT_KEY, r, t as u64, label_key(speakers[truth].id)],
                ),
                utt as u64,
            );
            segment_starts(rows, t, cfg.segs_per_utt, &mut rng)
        })
        .collect();
    let Some(frames) = frames else {
        for row in &mut out {
            for cell in row.iter_mut() {
                cell.2 = 1;
            }
        }
        return Ok(out);
    };

    // Only frames covered by some segment are scored.
    let mut covered = vec![false; rows];
    for (s, &t) in starts.iter().zip(t_values) {
        for &st in s.iter().flatten() {
            covered[st..st + t].iter_mut().for_each(|c| *c = true);
        }
    }
    let n_models = speakers.len();
    // ll[param][model][frame]
    let mut ll = vec![vec![vec![0.0; rows]; n_models]; params.len()];
    for (f, row) in frames.iter_rows().enumerate() {
        if !covered[f] {
            continue;
        }
        match fitted {
            [Fitted::Ht(models)] => {
                for (j, m) in models.iter().enumerate() {
                    for (pi, v) in m.log_density_prefixes(row, params)?.into_iter().enumerate() {
                        ll[pi][j][f] = v;
                    }
                }
            }
            _ => {
                for (pi, fit) in fitted.iter().enumerate() {
                    let Fitted::Gmm(models) = fit else {
                        unreachable!("one GMM model set per component count")
                    };
                    for (j, m) in models.iter().enumerate() {
                        ll[pi][j][f] = m.log_density(row)?;
                    }
                }
            }
        }
    }

    let mut scores = vec![0.0; n_models];
    for (ti, (s, &t)) in starts.iter().zip(t_values).enumerate() {
        let Some(s) = s else {
            for row in &mut out {
                row[ti].2 = 1;
            }
            continue;
        };
        for (pi, per_model) in ll.iter().enumerate() {
            for &st in s {
                for (score, lls) in scores.iter_mut().zip(per_model) {
                    let mut total = 0.0;
                    for v in &lls[st..st + t] {
                        total += v;
                    }
                    *score = total;
                }
                let cell = &mut out[pi][ti];
                cell.0 += usize::from(argmax_first(&scores) == Some(truth));
                cell.1 += 1;
            }
        }
    }
    Ok(out)
}

fn save_models(
    dir: &Path,
    round: usize,
    method: Method,
    params: &[usize],
    fitted: &[Fitted],
    speakers: &[&Prepared],
) -> Result<()> {
    for (pi, &param) in params.iter().enumerate() {
        let sub = dir.join(format!("round{round:03}")).join(format!(
            "{}_{}_{param}",
            method.backend, method.feature_mode
        ));
        std::fs::create_dir_all(&sub).map_err(|e| Error::file(&sub, e))?;
        let mut manifest = Vec::with_capacity(speakers.len());
        for (j, p) in speakers.iter().enumerate() {
            let name = format!("{}.{}", p.id, method.backend.extension());
            let backend = match fitted {
                [Fitted::Ht(models)] => Backend::Ht(models[j].truncated(param)?),
                _ => match &fitted[pi] {
                    Fitted::Gmm(models) => Backend::Gmm(models[j].clone()),
                    Fitted::Ht(_) => unreachable!("HT fits are shared across H"),
                },
            };
            let path = sub.join(&name);
            std::fs::write(&path, backend.to_bytes()?).map_err(|e| Error::file(&path, e))?;
            manifest.push(ManifestEntry {
                speaker_id: p.id.to_string(),
                model_path: name.into(),
                backend: method.backend,
                feature_mode: method.feature_mode,
            });
        }
        let path = sub.join("registry.json");
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)
            .map_err(|e| Error::file(&path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::corpus::{synthesize, SyntheticConfig};

    #[test]
    fn seven_three_split() {
        let mut rng = substream(1, 0);
        let (tr, te) = split_speaker("s", 10, 7, 3, &mut rng).unwrap();
        assert_eq!((tr.len(), te.len()), (7, 3));
        let all: BTreeSet<_> = tr.iter().chain(&te).collect();
        assert_eq!(all.len(), 10);
    }

    #[test]
    fn both_two_utterance_splits_occur() {
        let mut seen = BTreeSet::new();
        for seed in 0..64 {
            let (tr, te) = split_speaker("s", 2, 1, 1, &mut substream(seed, 0)).unwrap();
            seen.insert((tr[0], te[0]));
        }
        assert_eq!(seen, BTreeSet::from([(0, 1), (1, 0)]));
    }

    #[test]
    fn split_is_deterministic_and_names_speaker() {
        let a = split_speaker("s", 10, 7, 3, &mut substream(5, 0)).unwrap();
        let b = split_speaker("s", 10, 7, 3, &mut substream(5, 0)).unwrap();
        assert_eq!(a, b);
        let e = split_speaker("alice", 4, 3, 2, &mut substream(5, 0)).unwrap_err();
        assert!(e.to_string().contains("alice"), "{e}");
    }

    #[test]
    fn exact_length_utterance_gives_whole_segments() {
        let x = FeatureMatrix::new(50, 2, (0..100).map(f64::from).collect()).unwrap();
        let segs = extract_segments(&x, 50, 10, &mut substream(0, 0));
        assert_eq!(segs.len(), 10);
        assert!(segs.iter().all(|s| *s == Segment::new(&x).unwrap()));
        assert!(extract_segments(&x, 51, 10, &mut substream(0, 0)).is_empty());
    }

    #[test]
    fn segments_are_source_slices() {
        let x = FeatureMatrix::new(40, 3, (0..120).map(f64::from).collect()).unwrap();
        let mut rng = substream(3, 0);
        let starts = segment_starts(40, 7, 20, &mut rng).unwrap();
        let segs = extract_segments(&x, 7, 20, &mut substream(3, 0));
        for (s, seg) in starts.iter().zip(&segs) {
            for (i, f) in seg.frames().enumerate() {
                assert_eq!(f, x.row(s + i));
            }
        }
    }

    fn tiny_corpus(n: usize, separation: f64) -> Corpus {
        synthesize(&SyntheticConfig {
            n_speakers: n,
            utts_per_speaker: 4,
            frames_per_utt: 60,
            dim: 2,
            separation,
            seed: 4,
        })
        .unwrap()
        .0
    }

    fn tiny_config(n: usize) -> ExperimentConfig {
        ExperimentConfig {
            n_speakers: n,
            train_utts: 3,
            test_utts: 1,
            segs_per_utt: 5,
            t_values: vec![10, 20],
            h_values: vec![5, 10],
            gmm_components: vec![2],
            rounds: 2,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn singleton_speaker_is_always_right() {
        let rep = run_experiment(&tiny_config(1), &tiny_corpus(1, 3.0)).unwrap();
        assert_eq!(rep.records.len(), 2 * 2 * (2 + 1) * 2);
        assert!(rep
            .records
            .iter()
            .all(|r| r.accuracy == 1.0 && r.total == 5));
    }

    #[test]
    fn shortfall_is_a_config_error() {
        let err = run_experiment(&tiny_config(5), &tiny_corpus(3, 3.0)).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
        let cfg = ExperimentConfig {
            train_utts: 4,
            ..tiny_config(2)
        };
        assert!(matches!(
            run_experiment(&cfg, &tiny_corpus(3, 3.0)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn long_segments_are_skipped_and_counted() {
        let cfg = ExperimentConfig {
            t_values: vec![10, 59],
            ..tiny_config(2)
        };
        let err = run_experiment(&cfg, &tiny_corpus(2, 3.0)).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
        let cfg = ExperimentConfig {
            t_values: vec![10, 58],
            methods: vec![Method {
                backend: BackendKind::Gmm,
                feature_mode: FeatureMode::XSup,
            }],
            ..tiny_config(2)
        };
        let rep = run_experiment(&cfg, &tiny_corpus(2, 3.0)).unwrap();
        assert!(rep.records.iter().all(|r| r.skipped_utterances == 0));

        let mut c = tiny_corpus(2, 3.0);
        for u in &mut c.speakers[0].utterances {
            u.frames = u.frames.slice_rows(0, 30);
        }
        let cfg = ExperimentConfig {
            t_values: vec![10, 40],
            ..cfg
        };
        let rep = run_experiment(&cfg, &c).unwrap();
        for r in &rep.records {
            let (skipped, total) = if r.t == 40 { (1, 5) } else { (0, 10) };
            assert_eq!((r.skipped_utterances, r.total), (skipped, total), "{r:?}");
        }
    }

    #[test]
    fn deterministic_reports() {
        let c = tiny_corpus(3, 2.0);
        let a = run_experiment(&tiny_config(2), &c).unwrap();
        let b = run_experiment(&tiny_config(2), &c).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        assert_eq!(a.to_csv(), b.to_csv());
        assert!(a.records.iter().all(|r| (0.0..=1.0).contains(&r.accuracy)));
    }

    #[test]
    fn harness_scores_match_registry_identification() {
        use crate::speaker::Registry;
        let corpus = tiny_corpus(3, 1.0);
        let cfg = ExperimentConfig {
            rounds: 1,
            n_speakers: 3,
            ..tiny_config(3)
        };
        let dir = tempfile::tempdir().unwrap();
        let rep = run_experiment_with_models(&cfg, &corpus, Some(dir.path())).unwrap();
        // Rebuild every decision from the saved registries.
        for rec in &rep.records {
            let sys = &rec.system;
            let sub = dir.path().join("round000").join(format!(
                "{}_{}_{}",
                sys.backend, sys.feature_mode, sys.param
            ));
            let reg = Registry::load_manifest(&sub.join("registry.json")).unwrap();
            let mut correct = 0;
            let mut total = 0;
            for (truth, m) in reg.models().iter().enumerate() {
                let sp = corpus
                    .speakers
                    .iter()
                    .find(|s| s.id == m.speaker_id)
                    .unwrap();
                let mut srng = substream(key_seed(cfg.seed, &[SPLIT_KEY, 0]), label_key(&sp.id));
                let (_, te) = split_speaker(&sp.id, 4, 3, 1, &mut srng).unwrap();
                for &u in &te {
                    let stack = SuperFrameConfig {
                        tau: cfg.tau,
                        mode: sys.feature_mode,
                    };
                    let f = stack.apply(&sp.utterances[u].frames).unwrap();
                    let mut segrng = substream(
                        key_seed(cfg.seed, &[SEGMENT_KEY, 0, rec.t as u64, label_key(&sp.id)]),
                        u as u64,
                    );
                    for seg in extract_segments(&f, rec.t, cfg.segs_per_utt, &mut segrng) {
                        correct += usize::from(reg.identify(seg).unwrap().index == truth);
                        total += 1;
                    }
                }
            }
            assert_eq!(
                (correct, total),
                (rec.correct, rec.total),
                "{sys:?} T={}",
                rec.t
            );
        }
    }
}
