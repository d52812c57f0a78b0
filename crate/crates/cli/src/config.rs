use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use htsid::eval::{ExperimentConfig, SyntheticConfig};
use htsid::features::{FeaturePipeline, FramingConfig, MfccConfig, SuperFrameConfig};
use htsid::{FeatureMode, GmmConfig, HtConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus_root: Option<PathBuf>,
    pub cache_dir: PathBuf,
    pub model_dir: PathBuf,
    /// JSON report; the CSV goes next to it with a `.csv` extension.
    pub report_path: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            corpus_root: None,
            cache_dir: "cache".into(),
            model_dir: "models".into(),
            report_path: "report.json".into(),
        }
    }
}

/// Everything a run needs, read from one TOML file. Missing fields take
/// their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub framing: FramingConfig,
    pub silence_floor_db: f64,
    pub mfcc: MfccConfig,
    pub feature_mode: FeatureMode,
    pub tau: usize,
    pub ht: HtConfig,
    pub gmm: GmmConfig,
    pub experiment: ExperimentConfig,
    pub synthetic: SyntheticConfig,
    pub paths: Paths,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let pipeline = FeaturePipeline::default();
        let stack = SuperFrameConfig::default();
        Self {
            framing: pipeline.framing,
            silence_floor_db: pipeline.silence_floor_db,
            mfcc: pipeline.mfcc,
            feature_mode: stack.mode,
            tau: stack.tau,
            ht: HtConfig::default(),
            gmm: GmmConfig::default(),
            experiment: ExperimentConfig::default(),
            synthetic: SyntheticConfig::default(),
            paths: Paths::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg: PipelineConfig =
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.framing.validate()?;
        self.mfcc_extractor_check()?;
        if self.tau == 0 {
            anyhow::bail!("tau must be at least 1");
        }
        self.ht.validate()?;
        self.gmm.validate()?;
        self.experiment.validate()?;
        Ok(())
    }

    fn mfcc_extractor_check(&self) -> Result<()> {
        if self.mfcc.n_coeffs >= self.mfcc.n_filters {
            anyhow::bail!(
                "mfcc.n_coeffs ({}) must be below mfcc.n_filters ({})",
                self.mfcc.n_coeffs,
                self.mfcc.n_filters
            );
        }
        Ok(())
    }

    /// Applies `--seed` to every seeded stage.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.ht.seed = seed;
        self.gmm.seed = seed;
        self.experiment.seed = seed;
        self.synthetic.seed = seed;
        self
    }

    pub fn pipeline(&self) -> FeaturePipeline {
        FeaturePipeline {
            framing: self.framing.clone(),
            silence_floor_db: self.silence_floor_db,
            mfcc: self.mfcc.clone(),
        }
    }

    /// Experiment settings with the shared `tau`, `ht` and `gmm` sections
    /// applied.
    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            tau: self.tau,
            ht: self.ht.clone(),
            gmm: self.gmm.clone(),
            ..self.experiment.clone()
        }
    }

    pub fn stacking(&self) -> SuperFrameConfig {
        SuperFrameConfig {
            tau: self.tau,
            mode: self.feature_mode,
        }
    }
}
