use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::experiment::ExperimentConfig;
use super::stats::{boxplot_stats, t_test, BoxplotStats};
use crate::error::{Error, Result};
use crate::features::FeatureMode;
use crate::speaker::BackendKind;

/// A method at one setting of its size parameter: H transforms for HT,
/// K components for GMM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct System {
    pub backend: BackendKind,
    pub feature_mode: FeatureMode,
    pub param: usize,
}

impl std::fmt::Display for System {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let p = match self.backend {
            BackendKind::Ht => "H",
            BackendKind::Gmm => "K",
        };
        write!(
            f,
            "{}/{}/{p}={}",
            self.backend, self.feature_mode, self.param
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRecord {
    pub system: System,
    pub t: usize,
    pub round: usize,
    pub correct: usize,
    /// Segments scored.
    pub total: usize,
    /// Test utterances with fewer than `t` frames.
    pub skipped_utterances: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub system: System,
    pub t: usize,
    pub label: String,
    pub stats: BoxplotStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PValue {
    pub t: usize,
    pub a: System,
    pub b: System,
    pub label: String,
    pub t_statistic: f64,
    pub df: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: ExperimentConfig,
    pub records: Vec<AccuracyRecord>,
    /// Across rounds, per system and T.
    pub summaries: Vec<Summary>,
    /// Pairwise two-tailed tests across rounds; empty with a single round.
    pub p_values: Vec<PValue>,
}

impl EvalReport {
    pub fn assemble(config: ExperimentConfig, mut records: Vec<AccuracyRecord>) -> Result<Self> {
        let systems = config.systems();
        let rank = |s: &System| systems.iter().position(|x| x == s).unwrap_or(usize::MAX);
        records.sort_by_key(|r| (rank(&r.system), r.t, r.round));

        let mut t_values = config.t_values.clone();
        t_values.sort_unstable();
        t_values.dedup();
        let sample = |s: &System, t: usize| -> Vec<f64> {
            records
                .iter()
                .filter(|r| r.system == *s && r.t == t)
                .map(|r| r.accuracy)
                .collect()
        };

        let mut summaries = Vec::new();
        for s in &systems {
            for &t in &t_values {
                let acc = sample(s, t);
                if acc.is_empty() {
                    continue;
                }
                summaries.push(Summary {
                    system: *s,
                    t,
                    label: format!("{s} T={t}"),
                    stats: boxplot_stats(&acc)?,
                });
            }
        }

        let mut p_values = Vec::new();
        if config.rounds >= 2 {
            for &t in &t_values {
                for (i, a) in systems.iter().enumerate() {
                    for b in &systems[i + 1..] {
                        let r = t_test(&sample(a, t), &sample(b, t))?;
                        p_values.push(PValue {
                            t,
                            a: *a,
                            b: *b,
                            label: format!("{a} vs {b} T={t}"),
                            t_statistic: r.t,
                            df: r.df,
                            p: r.p,
                        });
                    }
                }
            }
        }
        Ok(Self {
            config,
            records,
            summaries,
            p_values,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Flat `backend,feature_mode,H,T,round,accuracy` table; the `H` column
    /// holds K for GMM rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("backend,feature_mode,H,T,round,accuracy\n");
        for r in &self.records {
            let s = &r.system;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                s.backend, s.feature_mode, s.param, r.t, r.round, r.accuracy
            );
        }
        out
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn write(&self, json_path: &Path, csv_path: &Path) -> Result<()> {
        std::fs::write(json_path, self.to_json()?).map_err(|e| Error::file(json_path, e))?;
        std::fs::write(csv_path, self.to_csv()).map_err(|e| Error::file(csv_path, e))?;
        Ok(())
    }

    /// Mean accuracy of `system` at `t` across rounds.
    pub fn mean_accuracy(&self, system: &System, t: usize) -> Option<f64> {
        self.summaries
            .iter()
            .find(|s| s.system == *system && s.t == t)
            .map(|s| s.stats.mean)
    }
}
