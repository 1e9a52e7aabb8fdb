//! Per-object semantic descriptors: adaptive-K clustering of an object's
//! multi-view mask features, pooling baselines, and reliability weights.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kmeans::{kmeans, silhouette, KMeans, DEFAULT_MAX_ITER, DEFAULT_RESTARTS};
use crate::linalg::{cosine, dot, mean_of, norm};
use crate::rng::{rng_for, tags};

pub const DEFAULT_K_MAX: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Descriptor {
    /// Unnormalized centroid.
    pub vector: Vec<f64>,
    pub weight: f64,
    /// Cosine to the object's global feature.
    pub consistency: f64,
    /// Centroid norm.
    pub compactness: f64,
}

impl Descriptor {
    pub fn unweighted(vector: Vec<f64>) -> Self {
        let compactness = norm(&vector);
        Self {
            vector,
            weight: 1.0,
            consistency: 1.0,
            compactness,
        }
    }

    pub fn with_weight(mut self, weight: f64) -> Self {
        self.weight = weight;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptorSet {
    pub object: u32,
    pub descriptors: Vec<Descriptor>,
    /// Chosen cluster count.
    pub k: usize,
    /// Silhouette score per K, starting at K = 1.
    pub silhouette: Vec<f64>,
    /// Mean member feature, set once weighted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub global: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepEntry {
    pub k: usize,
    pub score: f64,
    pub clustering: KMeans,
}

/// Clusterings and silhouette scores for K = 1..=min(k_max, n); K = 1
/// scores 0.
pub fn silhouette_sweep(features: &[Vec<f64>], k_max: usize, seed: u64) -> Result<Vec<SweepEntry>> {
    if features.is_empty() {
        return Err(Error::InvalidInput("no features to describe".into()));
    }
    let mut rng = rng_for(seed, tags::KMEANS, 0);
    let upper = k_max.max(1).min(features.len());
    let mut out = Vec::with_capacity(upper);
    for k in 1..=upper {
        let clustering = kmeans(features, k, &mut rng, DEFAULT_RESTARTS, DEFAULT_MAX_ITER)?;
        let score = if k == 1 {
            0.0
        } else {
            silhouette(features, &clustering.assignments)?
        };
        out.push(SweepEntry { k, score, clustering });
    }
    Ok(out)
}

/// Adaptive descriptor extraction: keep the clustering with the highest
/// silhouette, updating only on a strictly greater score.
pub fn extract_descriptors(features: &[Vec<f64>], k_max: usize, seed: u64) -> Result<DescriptorSet> {
    let sweep = silhouette_sweep(features, k_max, seed)?;
    let mut best = 0;
    for (i, e) in sweep.iter().enumerate() {
        if e.score > sweep[best].score {
            best = i;
        }
    }
    let chosen = &sweep[best];
    Ok(DescriptorSet {
        object: 0,
        descriptors: chosen
            .clustering
            .centroids
            .iter()
            .cloned()
            .map(Descriptor::unweighted)
            .collect(),
        k: chosen.k,
        silhouette: sweep.iter().map(|e| e.score).collect(),
        global: None,
    })
}

/// Descriptors from a single clustering with K clamped to `n`.
pub fn fixed_k_descriptors(features: &[Vec<f64>], k: usize, seed: u64) -> Result<DescriptorSet> {
    if features.is_empty() {
        return Err(Error::InvalidInput("no features to describe".into()));
    }
    let k = k.clamp(1, features.len());
    let mut rng = rng_for(seed, tags::KMEANS, 0);
    let clustering = kmeans(features, k, &mut rng, DEFAULT_RESTARTS, DEFAULT_MAX_ITER)?;
    Ok(DescriptorSet {
        object: 0,
        descriptors: clustering.centroids.into_iter().map(Descriptor::unweighted).collect(),
        k,
        silhouette: Vec::new(),
        global: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PoolMode {
    Avg,
    Max,
}

/// Pooling baselines: one mean descriptor, or every feature as its own
/// descriptor (the max is taken at query time).
pub fn pool_baselines(features: &[Vec<f64>], mode: PoolMode) -> Result<DescriptorSet> {
    let Some(first) = features.first() else {
        return Err(Error::InvalidInput("no features to describe".into()));
    };
    let vectors = match mode {
        PoolMode::Avg => vec![mean_of(features.iter().map(Vec::as_slice), first.len())],
        PoolMode::Max => features.to_vec(),
    };
    Ok(DescriptorSet {
        object: 0,
        k: vectors.len(),
        descriptors: vectors.into_iter().map(Descriptor::unweighted).collect(),
        silhouette: Vec::new(),
        global: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Weighting {
    /// Every descriptor weighs 1.
    None,
    /// Centroid norm only.
    Compactness,
    /// Cosine to the global feature only.
    Direction,
    /// Projection onto the unit global feature: norm times cosine.
    Full,
}

/// Attach weights relative to the object's global feature `global`.
pub fn weigh_descriptors(set: &DescriptorSet, global: &[f64], mode: Weighting) -> Result<DescriptorSet> {
    let gn = norm(global);
    if !(gn > 0.0) {
        return Err(Error::DegenerateGlobalFeature(set.object as usize));
    }
    let mut out = set.clone();
    for d in &mut out.descriptors {
        let dn = norm(&d.vector);
        d.compactness = dn;
        d.consistency = cosine(&d.vector, global);
        d.weight = if dn == 0.0 {
            0.0
        } else {
            match mode {
                Weighting::None => 1.0,
                Weighting::Compactness => dn,
                Weighting::Direction => d.consistency,
                Weighting::Full => dot(&d.vector, global) / gn,
            }
        };
    }
    out.global = Some(global.to_vec());
    Ok(out)
}

/// How descriptors are formed from an object's features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "k")]
pub enum Extraction {
    Adaptive,
    Fixed(usize),
    Avg,
    Max,
}

impl Extraction {
    pub fn label(&self) -> String {
        match self {
            Extraction::Adaptive => "adaptive".into(),
            Extraction::Fixed(k) => format!("fixed-{k}"),
            Extraction::Avg => "avg-pool".into(),
            Extraction::Max => "max-pool".into(),
        }
    }
}

/// Full per-object description: extraction, then weighting against the
/// mean feature. The k-means seed is derived from `seed` and the object id.
pub fn describe_object(
    object: u32,
    features: &[Vec<f64>],
    extraction: Extraction,
    weighting: Weighting,
    k_max: usize,
    seed: u64,
) -> Result<DescriptorSet> {
    let object_seed = crate::rng::derive_seed(seed, tags::KMEANS, u64::from(object));
    let mut set = match extraction {
        Extraction::Adaptive => extract_descriptors(features, k_max, object_seed)?,
        Extraction::Fixed(k) => fixed_k_descriptors(features, k, object_seed)?,
        Extraction::Avg => pool_baselines(features, PoolMode::Avg)?,
        Extraction::Max => pool_baselines(features, PoolMode::Max)?,
    };
    set.object = object;
    let dim = features[0].len();
    let global = mean_of(features.iter().map(Vec::as_slice), dim);
    weigh_descriptors(&set, &global, weighting)
}

/// Largest violation of `weight == cos(d, global) * |d|` over a weighted set.
pub fn weight_identity_error(set: &DescriptorSet) -> f64 {
    let Some(global) = &set.global else {
        return f64::INFINITY;
    };
    set.descriptors
        .iter()
        .map(|d| (d.weight - cosine(&d.vector, global) * norm(&d.vector)).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;
    use crate::synth::random_unit;
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn single_feature() {
        let s = extract_descriptors(&[vec![0.6, 0.8]], 20, 0).unwrap();
        assert_eq!(s.k, 1);
        assert_eq!(s.descriptors[0].vector, vec![0.6, 0.8]);
    }

    #[test]
    fn identical_features_pick_k1() {
        let f = vec![vec![0.0, 1.0]; 6];
        let s = extract_descriptors(&f, 5, 3).unwrap();
        assert_eq!(s.k, 1);
        assert!(s.silhouette.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn two_planted_aspects() {
        let mut rng = rng_for(9, 0, 0);
        let a = [vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0, 0.0]];
        let mut f = Vec::new();
        for v in &a {
            for _ in 0..20 {
                let noisy: Vec<f64> = v
                    .iter()
                    .map(|x| x + 0.01 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
                    .collect();
                f.push(crate::linalg::normalized(&noisy).unwrap());
            }
        }
        let s = extract_descriptors(&f, 10, 1).unwrap();
        assert_eq!(s.k, 2);
        for d in &s.descriptors {
            assert!(a.iter().any(|v| cosine(&d.vector, v) >= 0.99));
        }
        // brute-force oracle: the chosen K is the first argmax of the trace
        let best = s
            .silhouette
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |b, (i, &x)| if x > b.1 { (i, x) } else { b });
        assert_eq!(best.0 + 1, s.k);
    }

    #[test]
    fn weighting_examples() {
        let set = pool_baselines(&vec![vec![1.0, 0.0]; 3], PoolMode::Avg).unwrap();
        let w = weigh_descriptors(&set, &[1.0, 0.0], Weighting::Full).unwrap();
        assert_eq!(w.descriptors[0].weight, 1.0);
        let cancel = fixed_k_descriptors(&[vec![1.0, 0.0], vec![-1.0, 0.0]], 1, 0).unwrap();
        let w = weigh_descriptors(&cancel, &[0.0, 1.0], Weighting::Full).unwrap();
        assert_eq!(w.descriptors[0].weight, 0.0);
        // |d| = 0.8, cos = 0.9
        let d = vec![0.8 * 0.9, 0.8 * (1.0 - 0.81f64).sqrt()];
        let set = DescriptorSet {
            object: 0,
            descriptors: vec![Descriptor::unweighted(d)],
            k: 1,
            silhouette: vec![],
            global: None,
        };
        let w = weigh_descriptors(&set, &[2.0, 0.0], Weighting::Full).unwrap();
        assert!((w.descriptors[0].weight - 0.72).abs() < 1e-12);
        assert!(matches!(
            weigh_descriptors(&set, &[0.0, 0.0], Weighting::Full),
            Err(Error::DegenerateGlobalFeature(0))
        ));
    }

    #[test]
    fn pooling_shapes() {
        let f = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let avg = pool_baselines(&f, PoolMode::Avg).unwrap();
        assert_eq!(avg.descriptors[0].vector, vec![0.5, 0.5]);
        assert_eq!(pool_baselines(&f, PoolMode::Max).unwrap().descriptors.len(), 2);
        let three = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.6, 0.8]];
        assert_eq!(fixed_k_descriptors(&three, 5, 0).unwrap().k, 3);
    }

    proptest! {
        #[test]
        fn weight_identity_and_norm_bound(seed in 0u64..500, n in 1usize..25) {
            let mut rng = rng_for(seed, 99, 0);
            let f: Vec<Vec<f64>> = (0..n).map(|_| random_unit(&mut rng, 6)).collect();
            let set = describe_object(3, &f, Extraction::Adaptive, Weighting::Full, 8, seed).unwrap();
            prop_assert!(weight_identity_error(&set) <= 1e-9);
            for d in &set.descriptors {
                prop_assert!(norm(&d.vector) <= 1.0 + 1e-12);
            }
        }

        #[test]
        fn permutation_keeps_k_and_centroids(seed in 0u64..200) {
            let mut rng = rng_for(seed, 98, 0);
            let base = [random_unit(&mut rng, 5), random_unit(&mut rng, 5)];
            let mut f = Vec::new();
            for (i, b) in base.iter().enumerate() {
                for j in 0..6 {
                    let mut v = b.clone();
                    v[(i + j) % 5] += 0.02 * j as f64;
                    f.push(crate::linalg::normalized(&v).unwrap());
                }
            }
            let a = extract_descriptors(&f, 6, 11).unwrap();
            let mut g = f.clone();
            g.reverse();
            let b = extract_descriptors(&g, 6, 11).unwrap();
            prop_assert_eq!(a.k, b.k);
            let canon = |s: &DescriptorSet| {
                let mut c: Vec<Vec<f64>> = s.descriptors.iter().map(|d| d.vector.clone()).collect();
                c.sort_by(|x, y| x.partial_cmp(y).unwrap());
                c
            };
            for (x, y) in canon(&a).iter().zip(canon(&b).iter()) {
                for (u, v) in x.iter().zip(y) {
                    prop_assert!((u - v).abs() < 1e-9);
                }
            }
        }
    }
}
