//! Single-file pipeline configuration (TOML) with explicit defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{DEFAULT_TAU, SWEEP_TAUS};
use crate::decompose::{default_epsilons, GroupConfig};
use crate::descriptors::{Extraction, Weighting, DEFAULT_K_MAX};
use crate::error::{Error, Result};
use crate::hdbscan::{HdbscanConfig, Metric};
use crate::query::SegmentConfig;
use crate::synth::SynthConfig;
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub dataset: PathBuf,
    pub checkpoints: PathBuf,
    pub outputs: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            dataset: "run/dataset".into(),
            checkpoints: "run/checkpoints".into(),
            outputs: "run/outputs".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecomposeConfig {
    pub min_cluster_size: usize,
    /// One epsilon per level, finest first; empty selects the defaults.
    pub epsilons: Vec<f64>,
    pub noise_similarity: f64,
}

impl Default for DecomposeConfig {
    fn default() -> Self {
        let g = GroupConfig::default();
        Self {
            min_cluster_size: g.hdbscan.min_cluster_size,
            epsilons: Vec::new(),
            noise_similarity: g.noise_similarity,
        }
    }
}

impl DecomposeConfig {
    pub fn group_config(&self, level: usize, levels: usize) -> GroupConfig {
        let eps = if self.epsilons.is_empty() {
            default_epsilons(levels)
        } else {
            self.epsilons.clone()
        };
        GroupConfig {
            hdbscan: HdbscanConfig {
                min_cluster_size: self.min_cluster_size,
                min_samples: None,
                epsilon: eps.get(level).copied().unwrap_or(0.0),
                metric: Metric::Cosine,
                allow_single_cluster: true,
            },
            noise_similarity: self.noise_similarity,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DescriptorConfig {
    pub k_max: usize,
    pub extraction: Extraction,
    pub weighting: Weighting,
}

impl Default for DescriptorConfig {
    fn default() -> Self {
        Self {
            k_max: DEFAULT_K_MAX,
            extraction: Extraction::Adaptive,
            weighting: Weighting::Full,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisConfig {
    pub tau: f64,
    pub sweep: Vec<f64>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            tau: DEFAULT_TAU,
            sweep: SWEEP_TAUS.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Seed for descriptor clustering and analysis sampling.
    pub seed: u64,
    pub paths: Paths,
    pub synth: SynthConfig,
    pub train: TrainConfig,
    pub decompose: DecomposeConfig,
    pub descriptors: DescriptorConfig,
    pub query: SegmentConfig,
    pub analysis: AnalysisConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            paths: Paths::default(),
            synth: SynthConfig::default(),
            train: TrainConfig { iterations: 300, ..TrainConfig::default() },
            decompose: DecomposeConfig::default(),
            descriptors: DescriptorConfig::default(),
            query: SegmentConfig::default(),
            analysis: AnalysisConfig::default(),
        }
    }
}

fn in_unit(name: &str, v: f64, lo: f64, hi: f64) -> Result<()> {
    if (lo..=hi).contains(&v) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{name} = {v} outside [{lo}, {hi}]")))
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        in_unit("query.cosine_threshold", self.query.cosine_threshold, -1.0, 1.0)?;
        in_unit("query.foreground_threshold", self.query.foreground_threshold, 0.0, 1.0)?;
        in_unit("analysis.tau", self.analysis.tau, -1.0, 1.0)?;
        for t in &self.analysis.sweep {
            in_unit("analysis.sweep", *t, -1.0, 1.0)?;
        }
        in_unit("decompose.noise_similarity", self.decompose.noise_similarity, -1.0, 1.0)?;
        for e in &self.decompose.epsilons {
            in_unit("decompose.epsilons", *e, 0.0, 2.0)?;
        }
        if self.decompose.min_cluster_size < 2 {
            return Err(Error::InvalidInput("decompose.min_cluster_size must be >= 2".into()));
        }
        if self.descriptors.k_max == 0 {
            return Err(Error::InvalidInput("descriptors.k_max must be >= 1".into()));
        }
        if self.synth.levels == 0 {
            return Err(Error::InvalidInput("synth.levels must be >= 1".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::malformed(path, e.message()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable in TOML")
    }
}
