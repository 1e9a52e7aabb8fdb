//! In-memory orchestration of the full per-level pipeline.

use rayon::prelude::*;

use crate::config::PipelineConfig;
use crate::dataset::Dataset;
use crate::decompose::{decompose_level, LevelDecomposition};
use crate::descriptors::DescriptorSet;
use crate::error::Result;
use crate::eval::describe_clusters;
use crate::mask::MaskObservation;
use crate::query::{segment, LevelInput, Query, QueryResult};
use crate::train::{train, TrainOutput};

/// Everything computed for one granularity level.
#[derive(Debug, Clone)]
pub struct LevelRun {
    pub training: TrainOutput,
    pub decomposition: LevelDecomposition,
    pub descriptors: Vec<DescriptorSet>,
}

pub fn level_masks(ds: &Dataset, level: usize) -> Vec<&MaskObservation> {
    ds.masks.iter().filter(|m| m.level == level).collect()
}

/// Train one level; features are rounded to f32 so that saved checkpoints
/// reproduce the in-memory state exactly.
pub fn train_level(ds: &Dataset, level: usize, cfg: &PipelineConfig) -> Result<TrainOutput> {
    let masks = level_masks(ds, level);
    let mut out = train(&ds.scene, &ds.cameras, &masks, level, &cfg.train)?;
    out.features.quantize_f32();
    Ok(out)
}

pub fn decompose(ds: &Dataset, training: &TrainOutput, cfg: &PipelineConfig) -> Result<LevelDecomposition> {
    let level = training.level;
    let masks = level_masks(ds, level);
    decompose_level(
        &ds.scene,
        &ds.cameras,
        &masks,
        &training.features,
        level,
        &cfg.decompose.group_config(level, ds.num_levels),
    )
}

pub fn describe(ds: &Dataset, decomposition: &LevelDecomposition, cfg: &PipelineConfig) -> Result<Vec<DescriptorSet>> {
    let masks = level_masks(ds, decomposition.level);
    let d = &cfg.descriptors;
    describe_clusters(&decomposition.clusters, &masks, d.extraction, d.weighting, d.k_max, cfg.seed)
}

pub fn run_level(ds: &Dataset, level: usize, cfg: &PipelineConfig) -> Result<LevelRun> {
    let training = train_level(ds, level, cfg)?;
    let decomposition = decompose(ds, &training, cfg)?;
    let descriptors = describe(ds, &decomposition, cfg)?;
    Ok(LevelRun {
        training,
        decomposition,
        descriptors,
    })
}

/// Train, decompose and describe every level of the dataset.
pub fn run(ds: &Dataset, cfg: &PipelineConfig) -> Result<Vec<LevelRun>> {
    ds.validate()?;
    cfg.validate()?;
    (0..ds.num_levels).into_par_iter().map(|l| run_level(ds, l, cfg)).collect()
}

impl LevelRun {
    pub fn input(&self) -> LevelInput<'_> {
        LevelInput {
            clusters: &self.decomposition.clusters,
            descriptors: &self.descriptors,
        }
    }
}

/// Answer one query over all levels.
pub fn answer(
    ds: &Dataset,
    levels: &[LevelInput<'_>],
    query: &Query,
    canonical: &[Vec<f64>],
    cfg: &PipelineConfig,
) -> Result<QueryResult> {
    segment(&ds.scene.positions(), levels, &query.vector, canonical, &cfg.query)
}
