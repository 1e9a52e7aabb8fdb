//! View-dependency diagnostics: intra/inter-object similarity of mask
//! semantics, mask back-projection onto Gaussians, fused per-Gaussian
//! semantics and the retrieval-integrity study.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decompose::ObjectCluster;
use crate::error::{Error, Result};
use crate::linalg::{axpy, cosine, dot, normalized};
use crate::mask::{BinaryMask, MaskObservation};
use crate::rng::{rng_for, tags};
use crate::scene::{project, Camera, GaussianScene, Rasterization};

pub const HISTOGRAM_BINS: usize = 40;
pub const MAX_INTER_PAIRS: usize = 100_000;
pub const DEFAULT_TAU: f64 = 0.75;
pub const SWEEP_TAUS: [f64; 6] = [0.5, 0.6, 0.7, 0.75, 0.8, 0.9];
pub const LOW_RECALL: (f64, f64) = (0.1, 0.9);
const RECALL_BINS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityHistogram {
    pub intra: Vec<f64>,
    pub inter: Vec<f64>,
    /// `HISTOGRAM_BINS + 1` edges over [-1, 1].
    pub edges: Vec<f64>,
    pub intra_counts: Vec<u64>,
    pub inter_counts: Vec<u64>,
    /// Fraction of intra similarities strictly below the inter median.
    pub overlap: f64,
}

impl SimilarityHistogram {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,intra,inter\n");
        for b in 0..HISTOGRAM_BINS {
            let _ = writeln!(
                out,
                "{:.3},{:.3},{},{}",
                self.edges[b], self.edges[b + 1], self.intra_counts[b], self.inter_counts[b]
            );
        }
        out
    }

    /// Two overlaid bar histograms, each normalized to its own total.
    pub fn to_svg(&self) -> String {
        let (w, h, pad) = (640.0, 320.0, 30.0);
        let bar = (w - 2.0 * pad) / HISTOGRAM_BINS as f64;
        let density = |counts: &[u64]| -> Vec<f64> {
            let total: u64 = counts.iter().sum();
            counts
                .iter()
                .map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
                .collect()
        };
        let intra = density(&self.intra_counts);
        let inter = density(&self.inter_counts);
        let peak = intra.iter().chain(&inter).copied().fold(1e-12, f64::max);
        let mut svg = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\">\n\
             <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
        );
        for (series, color) in [(&inter, "#4477aa"), (&intra, "#ee6677")] {
            for (b, d) in series.iter().enumerate() {
                let bh = d / peak * (h - 2.0 * pad);
                let _ = writeln!(
                    svg,
                    "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{color}\" fill-opacity=\"0.55\"/>",
                    pad + b as f64 * bar,
                    h - pad - bh,
                    bar,
                    bh
                );
            }
        }
        let _ = writeln!(
            svg,
            "<line x1=\"{pad}\" y1=\"{y}\" x2=\"{x2}\" y2=\"{y}\" stroke=\"black\"/>\n\
             <text x=\"{pad}\" y=\"{ty}\" font-size=\"12\">-1</text>\n\
             <text x=\"{x2}\" y=\"{ty}\" font-size=\"12\" text-anchor=\"end\">1</text>\n\
             <text x=\"{pad}\" y=\"18\" font-size=\"12\">intra (red) vs inter (blue), overlap {:.3}</text>",
            self.overlap,
            y = h - pad,
            x2 = w - pad,
            ty = h - pad + 16.0,
        );
        svg.push_str("</svg>\n");
        svg
    }
}

fn bin_of(s: f64) -> usize {
    let b = ((s + 1.0) / 2.0 * HISTOGRAM_BINS as f64).floor();
    (b.max(0.0) as usize).min(HISTOGRAM_BINS - 1)
}

fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

/// Similarity distribution over groups of feature vectors.
///
/// Every intra-group pair is used. Inter-group pairs are enumerated when
/// there are no more of them than intra pairs, and otherwise sampled
/// uniformly (with replacement) to match the intra count, capped at
/// `MAX_INTER_PAIRS`.
pub fn similarity_from_groups(groups: &[Vec<&[f64]>], seed: u64) -> SimilarityHistogram {
    let mut intra = Vec::new();
    for g in groups {
        for i in 0..g.len() {
            for j in i + 1..g.len() {
                intra.push(cosine(g[i], g[j]).clamp(-1.0, 1.0));
            }
        }
    }
    let flat: Vec<(usize, &[f64])> = groups
        .iter()
        .enumerate()
        .flat_map(|(c, g)| g.iter().map(move |f| (c, *f)))
        .collect();
    let sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
    let n: usize = sizes.iter().sum();
    let total_inter = (n * n - sizes.iter().map(|s| s * s).sum::<usize>()) / 2;
    let target = if intra.is_empty() { total_inter } else { intra.len() }.min(MAX_INTER_PAIRS);
    let mut inter = Vec::with_capacity(target.min(total_inter));
    if total_inter <= target {
        for i in 0..n {
            for j in i + 1..n {
                if flat[i].0 != flat[j].0 {
                    inter.push(cosine(flat[i].1, flat[j].1).clamp(-1.0, 1.0));
                }
            }
        }
    } else {
        let mut rng = rng_for(seed, tags::PAIRS, 0);
        while inter.len() < target {
            let i = rng.random_range(0..n);
            let j = rng.random_range(0..n);
            if flat[i].0 != flat[j].0 {
                inter.push(cosine(flat[i].1, flat[j].1).clamp(-1.0, 1.0));
            }
        }
    }
    let edges = (0..=HISTOGRAM_BINS)
        .map(|b| -1.0 + 2.0 * b as f64 / HISTOGRAM_BINS as f64)
        .collect();
    let count = |values: &[f64]| {
        let mut c = vec![0u64; HISTOGRAM_BINS];
        values.iter().for_each(|s| c[bin_of(*s)] += 1);
        c
    };
    let overlap = match median(&inter) {
        Some(m) if !intra.is_empty() => {
            intra.iter().filter(|s| **s < m).count() as f64 / intra.len() as f64
        }
        _ => 0.0,
    };
    SimilarityHistogram {
        intra_counts: count(&intra),
        inter_counts: count(&inter),
        intra,
        inter,
        edges,
        overlap,
    }
}

/// Similarity distribution of the semantic features of masks grouped by
/// their object clusters.
pub fn similarity_distribution(
    clusters: &[ObjectCluster],
    masks: &[&MaskObservation],
    seed: u64,
) -> Result<SimilarityHistogram> {
    let by_id: HashMap<u32, &MaskObservation> = masks.iter().map(|m| (m.id, *m)).collect();
    let mut groups = Vec::with_capacity(clusters.len());
    for c in clusters {
        let mut g = Vec::with_capacity(c.members.len());
        for id in &c.members {
            let m = by_id
                .get(id)
                .ok_or_else(|| Error::InvalidInput(format!("cluster {} references unknown mask {id}", c.id)))?;
            g.push(m.feature.as_slice());
        }
        groups.push(g);
    }
    Ok(similarity_from_groups(&groups, seed))
}

/// Sum of blending weights of each Gaussian over the mask pixels.
pub fn backproject_raster(raster: &Rasterization, mask: &BinaryMask) -> Result<Vec<f64>> {
    if mask.len() != raster.num_pixels() {
        return Err(Error::DimensionMismatch {
            expected: raster.num_pixels(),
            actual: mask.len(),
            context: "mask resolution",
        });
    }
    let mut z = vec![0.0; raster.num_gaussians];
    for p in mask.on_pixels() {
        for s in &raster.pixels[p].splats {
            z[s.gaussian as usize] += s.weight;
        }
    }
    Ok(z)
}

/// Per-Gaussian gradient scores of a mask indicator rendered in `cam`.
pub fn backproject_mask(scene: &GaussianScene, cam: &Camera, mask: &BinaryMask) -> Result<Vec<f64>> {
    if mask.width != cam.width || mask.height != cam.height {
        return Err(Error::InvalidInput(format!(
            "mask is {}x{}, camera is {}x{}",
            mask.width, mask.height, cam.width, cam.height
        )));
    }
    backproject_raster(&project(scene, cam)?, mask)
}

/// Fused 2D semantics per Gaussian; `None` for Gaussians no mask reached.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedSemantics {
    pub features: Vec<Option<Vec<f64>>>,
}

impl FusedSemantics {
    pub fn covered(&self) -> usize {
        self.features.iter().filter(|f| f.is_some()).count()
    }
}

/// Accumulate `z_g * v^M` over all masks and normalize each Gaussian.
///
/// Views are processed in parallel and summed in view order.
pub fn fuse_semantics(
    scene: &GaussianScene,
    cameras: &[Camera],
    masks: &[&MaskObservation],
) -> Result<FusedSemantics> {
    let n = scene.len();
    let dim = masks.first().map_or(0, |m| m.feature.len());
    let mut by_view: Vec<Vec<&MaskObservation>> = vec![Vec::new(); cameras.len()];
    for m in masks {
        if m.view >= cameras.len() {
            return Err(Error::InvalidInput(format!("mask {} views camera {}", m.id, m.view)));
        }
        if m.feature.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: m.feature.len(),
                context: "mask feature",
            });
        }
        by_view[m.view].push(m);
    }
    let partials: Vec<Option<Vec<f64>>> = by_view
        .par_iter()
        .enumerate()
        .map(|(v, view_masks)| -> Result<Option<Vec<f64>>> {
            if view_masks.is_empty() {
                return Ok(None);
            }
            let raster = project(scene, &cameras[v])?;
            let mut acc = vec![0.0; n * dim];
            for m in view_masks {
                let z = backproject_raster(&raster, &m.mask)?;
                for (g, zg) in z.iter().enumerate() {
                    if *zg != 0.0 {
                        axpy(*zg, &m.feature, &mut acc[g * dim..(g + 1) * dim]);
                    }
                }
            }
            Ok(Some(acc))
        })
        .collect::<Result<_>>()?;
    let mut acc = vec![0.0; n * dim];
    for p in partials.into_iter().flatten() {
        axpy(1.0, &p, &mut acc);
    }
    let features = (0..n)
        .map(|g| normalized(&acc[g * dim..(g + 1) * dim]))
        .collect();
    Ok(FusedSemantics { features })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub tau: f64,
    pub mask_ids: Vec<u32>,
    pub recall: Vec<f64>,
    pub precision: Vec<f64>,
    /// Mask counts per recall decile.
    pub recall_bins: Vec<usize>,
    /// Share of masks with recall in [0.1, 0.9].
    pub low_recall_fraction: f64,
    /// Share with recall above 0.9.
    pub high_recall_fraction: f64,
    /// Share with recall below 0.1.
    pub miss_fraction: f64,
    /// Low-recall masks over low- plus high-recall masks; misses are left
    /// out of both.
    pub low_share: f64,
    /// Mean precision of the high-recall masks.
    pub high_recall_precision: Option<f64>,
}

impl RetrievalReport {
    fn from_scores(tau: f64, mask_ids: Vec<u32>, recall: Vec<f64>, precision: Vec<f64>) -> Self {
        let n = recall.len().max(1) as f64;
        let mut recall_bins = vec![0; RECALL_BINS];
        for r in &recall {
            recall_bins[((r * RECALL_BINS as f64) as usize).min(RECALL_BINS - 1)] += 1;
        }
        let low = recall
            .iter()
            .filter(|r| (LOW_RECALL.0..=LOW_RECALL.1).contains(*r))
            .count();
        let high: Vec<usize> = (0..recall.len()).filter(|&i| recall[i] > LOW_RECALL.1).collect();
        let miss = recall.iter().filter(|r| **r < LOW_RECALL.0).count();
        let high_recall_precision = (!high.is_empty())
            .then(|| high.iter().map(|&i| precision[i]).sum::<f64>() / high.len() as f64);
        let graded = low + high.len();
        Self {
            tau,
            low_share: if graded == 0 { 0.0 } else { low as f64 / graded as f64 },
            low_recall_fraction: low as f64 / n,
            high_recall_fraction: high.len() as f64 / n,
            miss_fraction: miss as f64 / n,
            high_recall_precision,
            recall_bins,
            mask_ids,
            recall,
            precision,
        }
    }
}

/// Retrieval integrity at several thresholds. Each mask's "complete"
/// object is the Gaussian set of the cluster containing it; masks outside
/// every cluster, or whose cluster has no Gaussians, are skipped.
pub fn retrieval_sweep(
    fused: &FusedSemantics,
    masks: &[&MaskObservation],
    clusters: &[ObjectCluster],
    taus: &[f64],
) -> Vec<RetrievalReport> {
    let owner: HashMap<u32, &ObjectCluster> = clusters
        .iter()
        .flat_map(|c| c.members.iter().map(move |m| (*m, c)))
        .collect();
    let n = fused.features.len();
    // Per mask: cosine to every covered Gaussian plus object membership.
    let rows: Vec<(u32, Vec<(f64, bool)>, usize)> = masks
        .par_iter()
        .filter_map(|m| {
            let c = owner.get(&m.id)?;
            if c.gaussians.is_empty() {
                return None;
            }
            let mut inside = vec![false; n];
            c.gaussians.iter().for_each(|g| inside[*g as usize] = true);
            let v = normalized(&m.feature)?;
            let scores = fused
                .features
                .iter()
                .enumerate()
                .filter_map(|(g, l)| l.as_ref().map(|l| (dot(&v, l), inside[g])))
                .collect();
            Some((m.id, scores, c.gaussians.len()))
        })
        .collect();
    taus.iter()
        .map(|&tau| {
            let mut ids = Vec::with_capacity(rows.len());
            let mut recall = Vec::with_capacity(rows.len());
            let mut precision = Vec::with_capacity(rows.len());
            for (id, scores, object_size) in &rows {
                let retrieved = scores.iter().filter(|(s, _)| *s > tau).count();
                let hits = scores.iter().filter(|(s, inside)| *s > tau && *inside).count();
                ids.push(*id);
                recall.push(hits as f64 / *object_size as f64);
                precision.push(if retrieved == 0 { 0.0 } else { hits as f64 / retrieved as f64 });
            }
            RetrievalReport::from_scores(tau, ids, recall, precision)
        })
        .collect()
}

pub fn retrieval_integrity(
    fused: &FusedSemantics,
    masks: &[&MaskObservation],
    clusters: &[ObjectCluster],
    tau: f64,
) -> RetrievalReport {
    retrieval_sweep(fused, masks, clusters, &[tau]).remove(0)
}

/// Threshold sweep as CSV, one row per tau.
pub fn sweep_csv(reports: &[RetrievalReport]) -> String {
    let mut out = String::from(
        "tau,masks,low_share,low_recall,high_recall,miss,mean_recall,mean_precision,high_recall_precision\n",
    );
    for r in reports {
        let n = r.recall.len().max(1) as f64;
        let _ = writeln!(
            out,
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
            r.tau,
            r.recall.len(),
            r.low_share,
            r.low_recall_fraction,
            r.high_recall_fraction,
            r.miss_fraction,
            r.recall.iter().sum::<f64>() / n,
            r.precision.iter().sum::<f64>() / n,
            r.high_recall_precision.map_or(String::new(), |p| format!("{p:.6}")),
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::Gaussian;

    fn cam(size: usize) -> Camera {
        Camera::look_at([0.0, 0.0, -5.0], [0.0; 3], [0.0, 1.0, 0.0], 20.0, size, size)
    }

    fn unit(dim: usize, axis: usize) -> Vec<f64> {
        let mut v = vec![0.0; dim];
        v[axis] = 1.0;
        v
    }

    #[test]
    fn identical_features_put_intra_mass_at_one() {
        let a = unit(4, 0);
        let b = unit(4, 1);
        let groups = vec![vec![&a[..], &a[..], &a[..]], vec![&b[..], &b[..]]];
        let h = similarity_from_groups(&groups, 0);
        assert_eq!(h.intra.len(), 4);
        assert!(h.intra.iter().all(|s| *s == 1.0));
        assert_eq!(h.intra_counts[HISTOGRAM_BINS - 1], 4);
        // orthogonal objects: every inter pair is at 0
        assert!(h.inter.iter().all(|s| *s == 0.0));
        assert_eq!(h.overlap, 0.0);
    }

    #[test]
    fn antipodal_aspects_appear_in_intra_mass() {
        let a = unit(3, 0);
        let na: Vec<f64> = a.iter().map(|v| -v).collect();
        let b = unit(3, 1);
        let groups = vec![vec![&a[..], &na[..]], vec![&b[..], &b[..]]];
        let h = similarity_from_groups(&groups, 0);
        let mut intra = h.intra.clone();
        intra.sort_by(f64::total_cmp);
        assert_eq!(intra, vec![-1.0, 1.0]);
        assert_eq!(h.intra_counts[0], 1);
        assert_eq!(h.overlap, 0.5);
    }

    #[test]
    fn inter_sample_matches_intra_count() {
        let feats: Vec<Vec<f64>> = (0..30).map(|i| unit(8, i % 8)).collect();
        let groups: Vec<Vec<&[f64]>> = feats.chunks(3).map(|c| c.iter().map(|v| &v[..]).collect()).collect();
        let h = similarity_from_groups(&groups, 1);
        assert_eq!(h.intra.len(), 30);
        assert_eq!(h.inter.len(), 30);
        assert_eq!(h, similarity_from_groups(&groups, 1));
    }

    #[test]
    fn opaque_gaussian_scores_its_pixel_count() {
        let c = cam(20);
        // saturated footprint: alpha clamps to 1 across the covered pixels
        let scene = GaussianScene::new(vec![Gaussian::new([0.0; 3], 1.0, 1e4)]);
        let raster = project(&scene, &c).unwrap();
        let mut mask = BinaryMask::empty(20, 20);
        let covered: Vec<usize> = (0..400).filter(|&p| raster.pixels[p].is_covered()).take(10).collect();
        assert_eq!(covered.len(), 10);
        covered.iter().for_each(|&p| mask.set(p, true));
        let z = backproject_mask(&scene, &c, &mask).unwrap();
        assert!((z[0] - 10.0).abs() < 1e-12);
    }

    #[test]
    fn stacked_half_alphas_give_blending_weights() {
        let c = cam(9);
        let scene = GaussianScene::new(vec![
            Gaussian::new([0.0, 0.0, 0.0], 0.5, 0.5),
            Gaussian::new([0.0, 0.0, 1.0], 0.5, 0.5),
            Gaussian::new([3.0, 3.0, 0.0], 0.1, 0.9),
        ]);
        let raster = project(&scene, &c).unwrap();
        let centre = 4 * 9 + 4;
        let first = raster.pixels[centre].splats[0].alpha;
        let mut mask = BinaryMask::empty(9, 9);
        mask.set(centre, true);
        let z = backproject_mask(&scene, &c, &mask).unwrap();
        let second = raster.pixels[centre].splats[1].alpha;
        assert!((z[0] - first).abs() < 1e-12);
        assert!((z[1] - (1.0 - first) * second).abs() < 1e-12);
        assert_eq!(z[2], 0.0);
    }

    #[test]
    fn mask_resolution_is_checked() {
        let scene = GaussianScene::new(vec![Gaussian::new([0.0; 3], 1.0, 1.0)]);
        assert!(backproject_mask(&scene, &cam(8), &BinaryMask::empty(4, 4)).is_err());
    }

    fn observation(id: u32, view: usize, mask: BinaryMask, feature: Vec<f64>) -> MaskObservation {
        MaskObservation {
            id,
            view,
            level: 0,
            mask,
            feature,
            source: None,
        }
    }

    #[test]
    fn fused_feature_follows_mask_semantics() {
        let c = cam(20);
        let scene = GaussianScene::new(vec![
            Gaussian::new([0.0; 3], 1.0, 1.0),
            Gaussian::new([30.0, 0.0, 0.0], 0.1, 0.9),
        ]);
        let raster = project(&scene, &c).unwrap();
        let mut mask = BinaryMask::empty(20, 20);
        (0..400).filter(|&p| raster.pixels[p].is_covered()).for_each(|p| mask.set(p, true));
        let v = unit(3, 2);
        let m = observation(0, 0, mask.clone(), v.clone());
        let fused = fuse_semantics(&scene, &[c.clone()], &[&m]).unwrap();
        assert_eq!(fused.features[0].as_deref(), Some(&v[..]));
        assert_eq!(fused.features[1], None);
        assert_eq!(fused.covered(), 1);

        // equal coverage by two masks with different features
        let w = unit(3, 0);
        let m2 = observation(1, 1, mask, w.clone());
        let fused = fuse_semantics(&scene, &[c.clone(), c], &[&m, &m2]).unwrap();
        let l = fused.features[0].as_ref().unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((l[0] - h).abs() < 1e-12 && (l[2] - h).abs() < 1e-12);
    }

    #[test]
    fn retrieval_counts_recall_and_precision() {
        // four Gaussians, object = {0, 1}; mask feature e0
        let fused = FusedSemantics {
            features: vec![
                Some(unit(2, 0)),
                Some(vec![0.6, 0.8]),
                Some(unit(2, 0)),
                None,
            ],
        };
        let m = observation(7, 0, BinaryMask::empty(1, 1), unit(2, 0));
        let cluster = ObjectCluster {
            id: 0,
            level: 0,
            members: vec![7],
            prototype: vec![1.0],
            gaussians: vec![0, 1],
        };
        let reports = retrieval_sweep(&fused, &[&m], std::slice::from_ref(&cluster), &[0.5, 0.75, 1.0]);
        // tau 0.5: retrieves 0, 1, 2
        assert_eq!(reports[0].recall, vec![1.0]);
        assert!((reports[0].precision[0] - 2.0 / 3.0).abs() < 1e-12);
        // tau 0.75: cos 0.6 drops out
        assert_eq!(reports[1].recall, vec![0.5]);
        assert_eq!(reports[1].precision, vec![0.5]);
        assert_eq!(reports[1].low_recall_fraction, 1.0);
        assert_eq!(reports[1].low_share, 1.0);
        assert_eq!(reports[0].low_share, 0.0);
        // nothing strictly above 1
        assert_eq!(reports[2].recall, vec![0.0]);
        assert_eq!(reports[2].precision, vec![0.0]);
        assert_eq!(reports[2].miss_fraction, 1.0);
        assert!(sweep_csv(&reports).lines().count() == 4);
    }

    #[test]
    fn svg_and_csv_render() {
        let a = unit(2, 0);
        let groups = vec![vec![&a[..], &a[..]], vec![&a[..]]];
        let h = similarity_from_groups(&groups, 0);
        assert_eq!(h.to_csv().lines().count(), HISTOGRAM_BINS + 1);
        assert!(h.to_svg().starts_with("<svg"));
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(32))]
        #[test]
        fn backprojection_conserves_blending_weight(
            pts in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0, 0.05f64..0.6, 0.1f64..1.0), 1..12),
            bits in proptest::collection::vec(proptest::bool::ANY, 144),
        ) {
            let scene = GaussianScene::new(
                pts.iter().map(|(x, y, z, r, o)| Gaussian::new([*x, *y, *z], *r, *o)).collect(),
            );
            let c = cam(12);
            let mask = BinaryMask::new(12, 12, bits);
            let raster = project(&scene, &c).unwrap();
            let z = backproject_raster(&raster, &mask).unwrap();
            let expected: f64 = mask
                .on_pixels()
                .iter()
                .map(|&p| 1.0 - raster.pixels[p].transmittance)
                .sum();
            proptest::prop_assert!((z.iter().sum::<f64>() - expected).abs() < 1e-9);
        }
    }
}
