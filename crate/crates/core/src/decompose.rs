//! Scene decomposition: cluster mask prototypes into 3D objects and assign
//! every Gaussian to its most similar object prototype.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hdbscan::{hdbscan, HdbscanConfig, Metric};
use crate::linalg::{cosine, mean_of, norm, Matrix};
use crate::mask::MaskObservation;
use crate::scene::{project, render_features, Camera, GaussianScene};
use crate::train::masked_average_pool;

/// Default epsilon per level for one level, or finest to coarsest for three.
pub fn default_epsilons(levels: usize) -> Vec<f64> {
    match levels {
        1 => vec![0.1],
        2 => vec![0.2, 0.3],
        _ => vec![0.1, 0.2, 0.3],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectCluster {
    pub id: u32,
    pub level: usize,
    /// Ids of the member masks.
    pub members: Vec<u32>,
    pub prototype: Vec<f64>,
    pub gaussians: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GroupConfig {
    pub hdbscan: HdbscanConfig,
    /// Noise masks join the most similar cluster at or above this cosine.
    pub noise_similarity: f64,
}

impl Default for GroupConfig {
    fn default() -> Self {
        Self {
            hdbscan: HdbscanConfig {
                min_cluster_size: 5,
                min_samples: None,
                epsilon: 0.1,
                metric: Metric::Cosine,
                allow_single_cluster: true,
            },
            noise_similarity: 0.5,
        }
    }
}

/// Per-mask prototypes: masked average of the normalized rendered affinity
/// map in the mask's view.
pub fn mask_prototypes(
    scene: &GaussianScene,
    cameras: &[Camera],
    masks: &[&MaskObservation],
    features: &Matrix,
) -> Result<Vec<Vec<f64>>> {
    let mut views: Vec<usize> = masks.iter().map(|m| m.view).collect();
    views.sort_unstable();
    views.dedup();
    let mut out = vec![Vec::new(); masks.len()];
    for view in views {
        let cam = cameras
            .get(view)
            .ok_or_else(|| Error::InvalidInput(format!("missing view {view}")))?;
        let map = render_features(&project(scene, cam)?, features, true);
        for (slot, m) in out.iter_mut().zip(masks) {
            if m.view == view {
                *slot = masked_average_pool(&m.mask, &map)?;
            }
        }
    }
    Ok(out)
}

/// Group masks into objects. Clusters are numbered in label order; noise
/// masks are attached to the nearest core prototype or dropped, then each
/// prototype is the mean over all members.
pub fn group_masks(
    mask_ids: &[u32],
    prototypes: &[Vec<f64>],
    level: usize,
    cfg: &GroupConfig,
) -> Result<Vec<ObjectCluster>> {
    if mask_ids.len() != prototypes.len() {
        return Err(Error::DimensionMismatch {
            expected: mask_ids.len(),
            actual: prototypes.len(),
            context: "mask prototypes",
        });
    }
    let labels = hdbscan(prototypes, &cfg.hdbscan);
    let k = labels.iter().copied().max().map_or(0, |m| (m + 1).max(0) as usize);
    if k == 0 {
        return Err(Error::DecompositionFailed);
    }
    let dim = prototypes[0].len();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &l) in labels.iter().enumerate() {
        if l >= 0 {
            members[l as usize].push(i);
        }
    }
    let core: Vec<Vec<f64>> = members
        .iter()
        .map(|m| mean_of(m.iter().map(|&i| prototypes[i].as_slice()), dim))
        .collect();
    for (i, &l) in labels.iter().enumerate() {
        if l >= 0 {
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for (c, proto) in core.iter().enumerate() {
            let s = cosine(&prototypes[i], proto);
            if best.is_none_or(|(_, bs)| s > bs) {
                best = Some((c, s));
            }
        }
        if let Some((c, s)) = best {
            if s >= cfg.noise_similarity {
                members[c].push(i);
            }
        }
    }
    Ok(members
        .into_iter()
        .enumerate()
        .map(|(c, mut m)| {
            m.sort_unstable();
            ObjectCluster {
                id: c as u32,
                level,
                prototype: mean_of(m.iter().map(|&i| prototypes[i].as_slice()), dim),
                members: m.iter().map(|&i| mask_ids[i]).collect(),
                gaussians: Vec::new(),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// Cluster index per Gaussian.
    pub labels: Vec<u32>,
    /// Gaussians with zero-norm affinity, defaulted to cluster 0.
    pub zero_norm: usize,
}

/// Assign each Gaussian to the cluster of highest prototype cosine, ties to
/// the lower id, and fill in cluster Gaussian lists.
pub fn assign_gaussians(features: &Matrix, clusters: &mut [ObjectCluster]) -> Result<Assignment> {
    if clusters.is_empty() {
        return Err(Error::DecompositionFailed);
    }
    for c in clusters.iter() {
        if c.prototype.len() != features.cols() {
            return Err(Error::DimensionMismatch {
                expected: features.cols(),
                actual: c.prototype.len(),
                context: "cluster prototype",
            });
        }
    }
    let labels: Vec<(u32, bool)> = (0..features.rows())
        .into_par_iter()
        .map(|g| {
            let f = features.row(g);
            if norm(f) == 0.0 {
                return (0, true);
            }
            let mut best = (0u32, f64::NEG_INFINITY);
            for (i, c) in clusters.iter().enumerate() {
                let s = cosine(f, &c.prototype);
                if s > best.1 {
                    best = (i as u32, s);
                }
            }
            (best.0, false)
        })
        .collect();
    let zero_norm = labels.iter().filter(|l| l.1).count();
    if zero_norm > 0 {
        log::warn!("{zero_norm} gaussians have zero-norm affinity; assigned to cluster 0");
    }
    for c in clusters.iter_mut() {
        c.gaussians.clear();
    }
    for (g, &(l, _)) in labels.iter().enumerate() {
        clusters[l as usize].gaussians.push(g as u32);
    }
    Ok(Assignment {
        labels: labels.into_iter().map(|l| l.0).collect(),
        zero_norm,
    })
}

/// Decomposition of one granularity level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelDecomposition {
    pub level: usize,
    pub clusters: Vec<ObjectCluster>,
    pub assignment: Vec<u32>,
    #[serde(default)]
    pub zero_norm: usize,
}

/// Prototypes, grouping and assignment for one level.
pub fn decompose_level(
    scene: &GaussianScene,
    cameras: &[Camera],
    masks: &[&MaskObservation],
    features: &Matrix,
    level: usize,
    cfg: &GroupConfig,
) -> Result<LevelDecomposition> {
    let mut protos = mask_prototypes(scene, cameras, masks, features)?;
    for p in &mut protos {
        crate::linalg::quantize_f32(p);
    }
    let ids: Vec<u32> = masks.iter().map(|m| m.id).collect();
    let mut clusters = group_masks(&ids, &protos, level, cfg)?;
    let assignment = assign_gaussians(features, &mut clusters)?;
    Ok(LevelDecomposition {
        level,
        clusters,
        assignment: assignment.labels,
        zero_norm: assignment.zero_norm,
    })
}
