//! Evaluation: projected 2D mIoU per query, direct per-Gaussian mIoU/mAcc,
//! and the descriptor ablation matrix.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decompose::ObjectCluster;
use crate::descriptors::{describe_object, DescriptorSet, Extraction, Weighting, DEFAULT_K_MAX};
use crate::error::{Error, Result};
use crate::mask::{BinaryMask, MaskObservation};
use crate::query::{object_rel, QuerySet};
use crate::scene::Rasterization;

/// Rendered label maps are binarized above this value.
pub const LABEL_THRESHOLD: f64 = 0.5;

/// IoU of two masks; `None` when both are empty.
pub fn mask_iou(a: &BinaryMask, b: &BinaryMask) -> Option<f64> {
    let union = a.union(b);
    (union > 0).then(|| a.intersection(b) as f64 / union as f64)
}

/// Binary mask of the pixels where the selected Gaussians dominate.
pub fn selection_mask(raster: &Rasterization, selected: &[bool]) -> BinaryMask {
    BinaryMask::from_threshold(raster.width, raster.height, &raster.label_map(selected), LABEL_THRESHOLD)
}

/// Ground-truth masks of one object in every view; `None` where it is not
/// visible.
pub fn object_gt_masks(rasters: &[Rasterization], labels: &[u32], object: u32) -> Vec<Option<BinaryMask>> {
    let selected: Vec<bool> = labels.iter().map(|l| *l == object).collect();
    rasters
        .par_iter()
        .map(|r| {
            let m = selection_mask(r, &selected);
            (m.area() > 0).then_some(m)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Query2d {
    pub name: String,
    /// Predicted foreground Gaussian ids.
    pub foreground: Vec<u32>,
    /// Ground truth per view; views without ground truth are skipped.
    pub gt: Vec<Option<BinaryMask>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryIou {
    pub name: String,
    /// Mean IoU over evaluated views; `None` if no view had ground truth.
    pub iou: Option<f64>,
    pub views: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Miou2d {
    pub queries: Vec<QueryIou>,
    /// Mean over evaluated queries.
    pub miou: f64,
}

/// Mean IoU over views, then over queries.
pub fn miou_2d(rasters: &[Rasterization], queries: &[Query2d]) -> Result<Miou2d> {
    let mut out = Vec::with_capacity(queries.len());
    for q in queries {
        if q.gt.len() != rasters.len() {
            return Err(Error::DimensionMismatch {
                expected: rasters.len(),
                actual: q.gt.len(),
                context: "ground-truth views",
            });
        }
        let n = rasters.first().map_or(0, |r| r.num_gaussians);
        let mut selected = vec![false; n];
        for &g in &q.foreground {
            *selected
                .get_mut(g as usize)
                .ok_or_else(|| Error::InvalidInput(format!("foreground gaussian {g} out of range")))? = true;
        }
        let per_view: Vec<Option<f64>> = rasters
            .par_iter()
            .zip(&q.gt)
            .map(|(r, gt)| {
                let gt = gt.as_ref().filter(|m| m.area() > 0)?;
                mask_iou(&selection_mask(r, &selected), gt)
            })
            .collect();
        let skipped = q.gt.iter().filter(|g| g.as_ref().is_none_or(|m| m.area() == 0)).count();
        if skipped > 0 {
            log::warn!("query {}: {skipped} views without ground truth skipped", q.name);
        }
        let ious: Vec<f64> = per_view.into_iter().flatten().collect();
        out.push(QueryIou {
            name: q.name.clone(),
            iou: (!ious.is_empty()).then(|| ious.iter().sum::<f64>() / ious.len() as f64),
            views: ious.len(),
        });
    }
    let scored: Vec<f64> = out.iter().filter_map(|q| q.iou).collect();
    let miou = if scored.is_empty() { 0.0 } else { scored.iter().sum::<f64>() / scored.len() as f64 };
    Ok(Miou2d { queries: out, miou })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub class: u32,
    pub iou: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Miou3d {
    pub classes: Vec<ClassScore>,
    pub miou: f64,
    pub macc: f64,
}

/// Per-class IoU and accuracy, macro-averaged over the classes present in
/// the ground truth. `None` predictions count as misses.
pub fn miou_3d(pred: &[Option<u32>], gt: &[u32]) -> Result<Miou3d> {
    if pred.len() != gt.len() {
        return Err(Error::DimensionMismatch {
            expected: gt.len(),
            actual: pred.len(),
            context: "predicted labels",
        });
    }
    // class -> (true positives, gt count, predicted count)
    let mut counts: BTreeMap<u32, (usize, usize, usize)> = BTreeMap::new();
    for &g in gt {
        counts.entry(g).or_default().1 += 1;
    }
    for (p, g) in pred.iter().zip(gt) {
        if let Some(p) = p {
            if let Some(c) = counts.get_mut(p) {
                c.2 += 1;
                if p == g {
                    c.0 += 1;
                }
            }
        }
    }
    let classes: Vec<ClassScore> = counts
        .into_iter()
        .map(|(class, (tp, n_gt, n_pred))| ClassScore {
            class,
            iou: tp as f64 / (n_gt + n_pred - tp) as f64,
            accuracy: tp as f64 / n_gt as f64,
        })
        .collect();
    let k = classes.len().max(1) as f64;
    Ok(Miou3d {
        miou: classes.iter().map(|c| c.iou).sum::<f64>() / k,
        macc: classes.iter().map(|c| c.accuracy).sum::<f64>() / k,
        classes,
    })
}

/// Class of each object: the owner of its highest-REL query, or `None`
/// when that query is a distractor. Ties go to the earlier query.
pub fn classify_objects(sets: &[DescriptorSet], queries: &QuerySet) -> Vec<Option<u32>> {
    sets.par_iter()
        .map(|set| {
            let mut best: Option<(f64, Option<u32>)> = None;
            for q in &queries.queries {
                let r = object_rel(set, &q.vector, &queries.canonical);
                if best.is_none_or(|(b, _)| r > b) {
                    best = Some((r, q.owner));
                }
            }
            best.and_then(|(_, owner)| owner)
        })
        .collect()
}

/// Broadcast object classes to Gaussians through the cluster assignment.
pub fn gaussian_classes(assignment: &[u32], clusters: &[ObjectCluster], classes: &[Option<u32>]) -> Vec<Option<u32>> {
    let index: HashMap<u32, usize> = clusters.iter().enumerate().map(|(i, c)| (c.id, i)).collect();
    assignment
        .iter()
        .map(|a| index.get(a).and_then(|&i| classes[i]))
        .collect()
}

/// Descriptor sets of every cluster from its member masks' features.
pub fn describe_clusters(
    clusters: &[ObjectCluster],
    masks: &[&MaskObservation],
    extraction: Extraction,
    weighting: Weighting,
    k_max: usize,
    seed: u64,
) -> Result<Vec<DescriptorSet>> {
    let by_id: HashMap<u32, &MaskObservation> = masks.iter().map(|m| (m.id, *m)).collect();
    clusters
        .par_iter()
        .map(|c| {
            let features = c
                .members
                .iter()
                .map(|id| {
                    by_id
                        .get(id)
                        .map(|m| m.feature.clone())
                        .ok_or_else(|| Error::InvalidInput(format!("cluster {} references unknown mask {id}", c.id)))
                })
                .collect::<Result<Vec<_>>>()?;
            describe_object(c.id, &features, extraction, weighting, k_max, seed)
        })
        .collect()
}

/// One row of the ablation table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub extraction: Extraction,
    pub weighting: Weighting,
}

impl Variant {
    pub fn label(&self) -> String {
        let w = match self.weighting {
            Weighting::None => "-DW",
            Weighting::Compactness => "+DWc",
            Weighting::Direction => "+DWd",
            Weighting::Full => "+DW",
        };
        match self.extraction {
            Extraction::Avg | Extraction::Max => self.extraction.label(),
            _ => format!("{} {w}", self.extraction.label()),
        }
    }
}

/// Rows in the order of the standard ablation table: pooling baselines,
/// fixed K with and without weighting, adaptive with each weighting.
pub fn standard_variants() -> Vec<Variant> {
    let mut v = vec![
        Variant { extraction: Extraction::Avg, weighting: Weighting::None },
        Variant { extraction: Extraction::Max, weighting: Weighting::None },
    ];
    for k in [5, 10, 20] {
        for weighting in [Weighting::None, Weighting::Full] {
            v.push(Variant { extraction: Extraction::Fixed(k), weighting });
        }
    }
    for weighting in [Weighting::None, Weighting::Compactness, Weighting::Direction, Weighting::Full] {
        v.push(Variant { extraction: Extraction::Adaptive, weighting });
    }
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub variant: String,
    pub miou: f64,
    pub macc: f64,
}

/// Inputs for one ablation scene: a decomposition, its mask features and
/// per-Gaussian ground truth.
#[derive(Debug, Clone, Copy)]
pub struct AblationScene<'a> {
    pub clusters: &'a [ObjectCluster],
    pub assignment: &'a [u32],
    pub masks: &'a [&'a MaskObservation],
    pub gt: &'a [u32],
    pub queries: &'a QuerySet,
}

/// Direct-3D scores of every variant on one scene.
pub fn run_ablation(
    scene: &AblationScene<'_>,
    variants: &[Variant],
    k_max: usize,
    seed: u64,
) -> Result<Vec<AblationCell>> {
    variants
        .par_iter()
        .map(|v| {
            let sets = describe_clusters(scene.clusters, scene.masks, v.extraction, v.weighting, k_max, seed)?;
            let classes = classify_objects(&sets, scene.queries);
            let pred = gaussian_classes(scene.assignment, scene.clusters, &classes);
            let m = miou_3d(&pred, scene.gt)?;
            Ok(AblationCell {
                variant: v.label(),
                miou: m.miou,
                macc: m.macc,
            })
        })
        .collect()
}

pub fn default_ablation(scene: &AblationScene<'_>, seed: u64) -> Result<Vec<AblationCell>> {
    run_ablation(scene, &standard_variants(), DEFAULT_K_MAX, seed)
}

/// Variant rows by scene columns plus a mean column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub variants: Vec<String>,
    pub scenes: Vec<String>,
    /// `miou[variant][scene]`.
    pub miou: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
}

impl AblationTable {
    pub fn from_scenes(scenes: Vec<(String, Vec<AblationCell>)>) -> Result<Self> {
        let variants: Vec<String> = scenes
            .first()
            .map(|(_, cells)| cells.iter().map(|c| c.variant.clone()).collect())
            .unwrap_or_default();
        for (name, cells) in &scenes {
            if cells.len() != variants.len() || cells.iter().zip(&variants).any(|(c, v)| &c.variant != v) {
                return Err(Error::InvalidInput(format!("scene {name} has a different variant list")));
            }
        }
        let miou: Vec<Vec<f64>> = (0..variants.len())
            .map(|v| scenes.iter().map(|(_, cells)| cells[v].miou).collect())
            .collect();
        let mean = miou
            .iter()
            .map(|row| if row.is_empty() { 0.0 } else { row.iter().sum::<f64>() / row.len() as f64 })
            .collect();
        Ok(Self {
            variants,
            scenes: scenes.into_iter().map(|(n, _)| n).collect(),
            miou,
            mean,
        })
    }

    pub fn mean_of(&self, variant: &str) -> Option<f64> {
        self.variants.iter().position(|v| v == variant).map(|i| self.mean[i])
    }

    /// Scores in percent, one row per variant.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method");
        for s in &self.scenes {
            let _ = write!(out, ",{s}");
        }
        out.push_str(",mean\n");
        for ((v, row), mean) in self.variants.iter().zip(&self.miou).zip(&self.mean) {
            out.push_str(v);
            for x in row {
                let _ = write!(out, ",{:.2}", 100.0 * x);
            }
            let _ = writeln!(out, ",{:.2}", 100.0 * mean);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptors::Descriptor;
    use crate::query::Query;
    use crate::scene::{project, Camera, Gaussian, GaussianScene};
    use proptest::prelude::*;

    fn mask(bits: &[u8]) -> BinaryMask {
        BinaryMask::new(bits.len(), 1, bits.iter().map(|b| *b == 1).collect())
    }

    #[test]
    fn iou_set_arithmetic() {
        let gt = mask(&[1, 1, 0, 0]);
        assert_eq!(mask_iou(&gt, &gt), Some(1.0));
        assert_eq!(mask_iou(&mask(&[0, 0, 1, 1]), &gt), Some(0.0));
        // gt plus an equal-area disjoint region
        assert_eq!(mask_iou(&mask(&[1, 1, 1, 1]), &gt), Some(0.5));
        assert_eq!(mask_iou(&mask(&[0, 0, 0, 0]), &mask(&[0, 0, 0, 0])), None);
    }

    fn two_object_scene() -> (GaussianScene, Vec<Rasterization>, Vec<u32>) {
        let scene = GaussianScene::new(vec![
            Gaussian::new([-1.0, 0.0, 0.0], 0.4, 0.9),
            Gaussian::new([1.0, 0.0, 0.0], 0.4, 0.9),
        ]);
        let cams = [
            Camera::look_at([0.0, 0.0, -5.0], [0.0; 3], [0.0, 1.0, 0.0], 20.0, 24, 24),
            Camera::look_at([0.0, 0.0, 5.0], [0.0; 3], [0.0, 1.0, 0.0], 20.0, 24, 24),
        ];
        let rasters = cams.iter().map(|c| project(&scene, c).unwrap()).collect();
        (scene, rasters, vec![0, 1])
    }

    #[test]
    fn projected_iou_of_exact_prediction_is_one() {
        let (_, rasters, labels) = two_object_scene();
        let gt = object_gt_masks(&rasters, &labels, 1);
        assert!(gt.iter().all(Option::is_some));
        let queries = vec![
            Query2d { name: "hit".into(), foreground: vec![1], gt: gt.clone() },
            Query2d { name: "miss".into(), foreground: vec![0], gt: gt.clone() },
            Query2d { name: "absent".into(), foreground: vec![0], gt: vec![None, None] },
        ];
        let r = miou_2d(&rasters, &queries).unwrap();
        assert_eq!(r.queries[0].iou, Some(1.0));
        assert_eq!(r.queries[1].iou, Some(0.0));
        assert_eq!(r.queries[2].iou, None);
        assert_eq!(r.miou, 0.5);
    }

    #[test]
    fn direct_protocol_hand_values() {
        // perfect
        let m = miou_3d(&[Some(0), Some(1), Some(1)], &[0, 1, 1]).unwrap();
        assert_eq!((m.miou, m.macc), (1.0, 1.0));
        // everything predicted as class 0 on a balanced 2-class scene
        let m = miou_3d(&[Some(0); 4], &[0, 0, 1, 1]).unwrap();
        assert_eq!(m.macc, 0.5);
        assert_eq!(m.miou, 0.25);
        // 3 classes; confusion rows gt, cols pred:
        //   [2 1 0]
        //   [0 1 1]
        //   [0 0 2] plus one gt-2 point predicted as none
        let gt = [0, 0, 0, 1, 1, 2, 2, 2];
        let pred = [Some(0), Some(0), Some(1), Some(1), Some(2), Some(2), Some(2), None];
        let m = miou_3d(&pred, &gt).unwrap();
        let ious = [2.0 / 3.0, 1.0 / 3.0, 2.0 / 4.0];
        let accs = [2.0 / 3.0, 1.0 / 2.0, 2.0 / 3.0];
        assert!((m.miou - ious.iter().sum::<f64>() / 3.0).abs() < 1e-12);
        assert!((m.macc - accs.iter().sum::<f64>() / 3.0).abs() < 1e-12);
    }

    #[test]
    fn predicted_only_class_is_excluded() {
        let m = miou_3d(&[Some(0), Some(9)], &[0, 0]).unwrap();
        assert_eq!(m.classes.len(), 1);
        assert_eq!(m.miou, 0.5);
    }

    fn set(object: u32, vectors: &[Vec<f64>], weights: &[f64]) -> DescriptorSet {
        DescriptorSet {
            object,
            descriptors: vectors
                .iter()
                .zip(weights)
                .map(|(v, w)| Descriptor::unweighted(v.clone()).with_weight(*w))
                .collect(),
            k: vectors.len(),
            silhouette: vec![],
            global: None,
        }
    }

    #[test]
    fn wrong_object_descriptor_fools_unweighted_max() {
        let e = |i: usize| {
            let mut v = vec![0.0; 4];
            v[i] = 1.0;
            v
        };
        let queries = QuerySet {
            queries: vec![
                Query { name: "a".into(), vector: e(0), owner: Some(0) },
                Query { name: "b".into(), vector: e(1), owner: Some(1) },
            ],
            canonical: vec![e(3)],
        };
        // object 1 saw one view with object 0's semantics
        let unweighted = [set(0, &[e(0)], &[1.0]), set(1, &[e(0), e(1)], &[1.0, 1.0])];
        assert_eq!(classify_objects(&unweighted, &queries), vec![Some(0), Some(0)]);
        let weighted = [set(0, &[e(0)], &[1.0]), set(1, &[e(0), e(1)], &[0.1, 0.9])];
        assert_eq!(classify_objects(&weighted, &queries), vec![Some(0), Some(1)]);
    }

    #[test]
    fn table_means_and_csv() {
        let cell = |v: &str, m: f64| AblationCell { variant: v.into(), miou: m, macc: m };
        let t = AblationTable::from_scenes(vec![
            ("s0".into(), vec![cell("avg", 0.5), cell("adaptive +DW", 1.0)]),
            ("s1".into(), vec![cell("avg", 0.7), cell("adaptive +DW", 0.8)]),
        ])
        .unwrap();
        assert!((t.mean_of("avg").unwrap() - 0.6).abs() < 1e-12);
        assert!(t.to_csv().starts_with("method,s0,s1,mean\navg,50.00,70.00,60.00"));
        assert_eq!(standard_variants().len(), 12);
    }

    proptest! {
        #[test]
        fn iou_is_symmetric(a in proptest::collection::vec(0u8..2, 1..50), seed in 0u8..2) {
            let b: Vec<u8> = a.iter().map(|x| x ^ seed).collect();
            prop_assert_eq!(mask_iou(&mask(&a), &mask(&b)), mask_iou(&mask(&b), &mask(&a)));
        }
    }
}
