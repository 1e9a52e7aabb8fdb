//! Open-vocabulary relevance: canonical-contrast scoring, weighted max over
//! descriptors, multi-level averaging and the 3D foreground post-process.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decompose::ObjectCluster;
use crate::descriptors::DescriptorSet;
use crate::error::{Error, Result};
use crate::linalg::{cosine, distance, norm, quantize_f32};

/// Environment variable holding the embedding service URL.
pub const ENCODER_URL_ENV: &str = "VIEWAGG_EMBED_URL";

/// Phrases encoded as the canonical set for free-text queries.
pub const CANONICAL_PHRASES: [&str; 4] = ["object", "thing", "texture", "stuff"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub name: String,
    pub vector: Vec<f64>,
    /// Object the query is planted on, for synthetic benchmarks; `None`
    /// marks a distractor.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub owner: Option<u32>,
}

/// Queries sharing one set of canonical comparison embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuerySet {
    pub queries: Vec<Query>,
    pub canonical: Vec<Vec<f64>>,
}

impl QuerySet {
    pub fn quantize(&mut self) {
        for q in &mut self.queries {
            quantize_f32(&mut q.vector);
        }
        for c in &mut self.canonical {
            quantize_f32(c);
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.canonical.is_empty() {
            return Err(Error::InvalidInput("canonical set is empty".into()));
        }
        for v in self.queries.iter().map(|q| &q.vector).chain(&self.canonical) {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: v.len(),
                    context: "query vector",
                });
            }
        }
        Ok(())
    }
}

/// Relevance of descriptor `d` to `q` against the canonical phrases:
/// `min_i exp(cos(d,q)) / (exp(cos(d,q)) + exp(cos(d,phi_i)))`.
pub fn rel(d: &[f64], q: &[f64], canonical: &[Vec<f64>]) -> f64 {
    let eq = cosine(d, q).exp();
    canonical
        .iter()
        .map(|phi| eq / (eq + cosine(d, phi).exp()))
        .fold(f64::INFINITY, f64::min)
}

/// Object relevance: the best weighted descriptor relevance; descriptors
/// with non-positive weight contribute 0.
pub fn object_rel(set: &DescriptorSet, q: &[f64], canonical: &[Vec<f64>]) -> f64 {
    set.descriptors
        .iter()
        .filter(|d| d.weight > 0.0)
        .map(|d| d.weight * rel(&d.vector, q, canonical))
        .fold(0.0, f64::max)
}

/// Highest cosine between any descriptor of the object and the query.
pub fn best_cosine(set: &DescriptorSet, q: &[f64]) -> f64 {
    set.descriptors
        .iter()
        .filter(|d| norm(&d.vector) > 0.0)
        .map(|d| cosine(&d.vector, q))
        .fold(f64::NEG_INFINITY, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentConfig {
    /// Objects whose best descriptor cosine to the query is below this are
    /// dropped.
    pub cosine_threshold: f64,
    pub foreground_threshold: f64,
    pub bilateral_k: usize,
    /// Spatial bandwidth; `None` uses the mean 16-NN distance of the scene.
    pub sigma_spatial: Option<f64>,
    pub sigma_range: f64,
    pub bilateral: bool,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        Self {
            cosine_threshold: 0.23,
            foreground_threshold: 0.6,
            bilateral_k: 16,
            sigma_spatial: None,
            sigma_range: 0.25,
            bilateral: true,
        }
    }
}

/// Clusters and descriptor sets of one granularity level; descriptor sets
/// are matched to clusters by object id.
#[derive(Debug, Clone, Copy)]
pub struct LevelInput<'a> {
    pub clusters: &'a [ObjectCluster],
    pub descriptors: &'a [DescriptorSet],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    /// Per level and object: REL, or `None` when the object was discarded.
    pub object_rel: Vec<Vec<Option<f64>>>,
    /// Per level, REL broadcast to Gaussians (0 for discarded objects).
    pub level_scores: Vec<Vec<f64>>,
    /// Final per-Gaussian relevance after normalization and filtering.
    pub relevance: Vec<f64>,
    pub foreground: Vec<u32>,
}

/// Full query pipeline over all levels.
///
/// Discarded objects score 0 and stay in the normalization and filtering
/// pools; they can never enter the foreground.
pub fn segment(
    positions: &[[f64; 3]],
    levels: &[LevelInput<'_>],
    q: &[f64],
    canonical: &[Vec<f64>],
    cfg: &SegmentConfig,
) -> Result<QueryResult> {
    if levels.is_empty() {
        return Err(Error::InvalidInput("no levels to query".into()));
    }
    if canonical.is_empty() {
        return Err(Error::InvalidInput("canonical set is empty".into()));
    }
    let n = positions.len();
    let mut object_scores = Vec::with_capacity(levels.len());
    let mut level_scores = Vec::with_capacity(levels.len());
    let mut kept = vec![false; n];
    for level in levels {
        let mut scores = vec![None; level.clusters.len()];
        let mut per_gaussian = vec![0.0; n];
        for set in level.descriptors {
            let cluster = level
                .clusters
                .iter()
                .position(|c| c.id == set.object)
                .ok_or_else(|| {
                    Error::InvalidInput(format!("descriptors for unknown object {}", set.object))
                })?;
            if best_cosine(set, q) < cfg.cosine_threshold {
                continue;
            }
            let r = object_rel(set, q, canonical);
            scores[cluster] = Some(r);
            for &g in &level.clusters[cluster].gaussians {
                let g = g as usize;
                if g >= n {
                    return Err(Error::InvalidInput(format!("gaussian index {g} out of range")));
                }
                per_gaussian[g] = r;
                kept[g] = true;
            }
        }
        object_scores.push(scores);
        level_scores.push(per_gaussian);
    }
    let avg: Vec<f64> = (0..n)
        .map(|g| level_scores.iter().map(|s| s[g]).sum::<f64>() / levels.len() as f64)
        .collect();
    let normalized = min_max(&avg);
    let relevance = if cfg.bilateral && n > 1 {
        let sigma_s = match cfg.sigma_spatial {
            Some(s) => s,
            None => mean_knn_distance(positions, 16),
        };
        if sigma_s > 0.0 {
            bilateral_filter_3d(positions, &normalized, cfg.bilateral_k, sigma_s, cfg.sigma_range)
        } else {
            normalized
        }
    } else {
        normalized
    };
    let foreground = (0..n)
        .filter(|&g| kept[g] && relevance[g] > cfg.foreground_threshold)
        .map(|g| g as u32)
        .collect();
    Ok(QueryResult {
        object_rel: object_scores,
        level_scores,
        relevance,
        foreground,
    })
}

/// Min-max normalization; a constant input maps to all zeros.
pub fn min_max(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

/// Indices of the `k` nearest other points of each point, nearest first,
/// ties broken by index.
pub fn knn(positions: &[[f64; 3]], k: usize) -> Vec<Vec<usize>> {
    positions
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let mut d: Vec<(f64, usize)> = positions
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(j, o)| (distance(p, o), j))
                .collect();
            let k = k.min(d.len());
            if k == 0 {
                return Vec::new();
            }
            let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            d.select_nth_unstable_by(k - 1, cmp);
            d.truncate(k);
            d.sort_by(cmp);
            d.into_iter().map(|(_, j)| j).collect()
        })
        .collect()
}

/// Mean over points of the mean distance to their `k` nearest neighbours.
pub fn mean_knn_distance(positions: &[[f64; 3]], k: usize) -> f64 {
    let nn = knn(positions, k);
    let per_point: Vec<f64> = nn
        .iter()
        .enumerate()
        .filter(|(_, js)| !js.is_empty())
        .map(|(i, js)| js.iter().map(|&j| distance(&positions[i], &positions[j])).sum::<f64>() / js.len() as f64)
        .collect();
    if per_point.is_empty() {
        0.0
    } else {
        per_point.iter().sum::<f64>() / per_point.len() as f64
    }
}

/// Each value becomes a normalized average over its `k` nearest points
/// (itself included) with spatial and range Gaussian weights.
pub fn bilateral_filter_3d(
    positions: &[[f64; 3]],
    relevance: &[f64],
    k: usize,
    sigma_s: f64,
    sigma_r: f64,
) -> Vec<f64> {
    assert_eq!(positions.len(), relevance.len());
    if k <= 1 {
        return relevance.to_vec();
    }
    let nn = knn(positions, k - 1);
    (0..positions.len())
        .into_par_iter()
        .map(|i| {
            let mut num = relevance[i];
            let mut den = 1.0;
            for &j in &nn[i] {
                let ds = distance(&positions[i], &positions[j]);
                let dr = relevance[i] - relevance[j];
                let w = (-ds * ds / (2.0 * sigma_s * sigma_s)).exp()
                    * (-dr * dr / (2.0 * sigma_r * sigma_r)).exp();
                num += w * relevance[j];
                den += w;
            }
            num / den
        })
        .collect()
}

/// Client for an HTTP text-embedding service: POST `{"text": ...}`,
/// response `{"vector": [...]}`.
#[derive(Debug, Clone)]
pub struct EmbeddingClient {
    url: String,
}

#[derive(Serialize)]
struct EncodeRequest<'a> {
    text: &'a str,
}

#[derive(Deserialize)]
struct EncodeResponse {
    vector: Vec<f64>,
}

impl EmbeddingClient {
    pub fn new(url: impl Into<String>) -> Self {
        Self { url: url.into() }
    }

    /// Client from the environment, or `NoEncoder` when unset.
    pub fn from_env() -> Result<Self> {
        match std::env::var(ENCODER_URL_ENV) {
            Ok(url) if !url.trim().is_empty() => Ok(Self::new(url)),
            _ => Err(Error::NoEncoder),
        }
    }

    pub fn encode(&self, text: &str) -> Result<Vec<f64>> {
        let mut resp = ureq::post(&self.url)
            .send_json(EncodeRequest { text })
            .map_err(|e| Error::Encoder(e.to_string()))?;
        let body: EncodeResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| Error::Encoder(e.to_string()))?;
        if body.vector.is_empty() || body.vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::Encoder("service returned an empty or non-finite vector".into()));
        }
        Ok(body.vector)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptors::Descriptor;
    use proptest::prelude::*;

    fn set(object: u32, descs: &[(Vec<f64>, f64)]) -> DescriptorSet {
        DescriptorSet {
            object,
            descriptors: descs
                .iter()
                .map(|(v, w)| Descriptor::unweighted(v.clone()).with_weight(*w))
                .collect(),
            k: descs.len(),
            silhouette: vec![],
            global: None,
        }
    }

    #[test]
    fn rel_symmetric_case_is_half() {
        let d = vec![1.0, 0.0, 0.0];
        let q = vec![0.0, 1.0, 0.0];
        let phi = vec![vec![0.0, 0.0, 1.0], vec![0.0, -1.0, 0.0]];
        assert_eq!(rel(&d, &q, &phi), 0.5);
    }

    #[test]
    fn rel_closed_forms() {
        let e = std::f64::consts::E;
        let r = rel(&[1.0, 0.0], &[1.0, 0.0], &[vec![0.0, 1.0]]);
        assert!((r - e / (e + 1.0)).abs() < 1e-12);
        // cos(d,q)=0.5, canonicals at 0.9 and 0.1
        let d = [1.0, 0.0, 0.0, 0.0];
        let unit = |c: f64, axis: usize| {
            let mut v = vec![c, 0.0, 0.0, 0.0];
            v[axis] = (1.0 - c * c).sqrt();
            v
        };
        let r = rel(&d, &unit(0.5, 1), &[unit(0.9, 2), unit(0.1, 3)]);
        let want = 0.5f64.exp() / (0.5f64.exp() + 0.9f64.exp());
        assert!((r - want).abs() < 1e-12);
        assert!((want - 0.401312).abs() < 1e-6);
    }

    #[test]
    fn object_rel_cases() {
        let q = vec![1.0, 0.0];
        let phi = vec![vec![0.0, 1.0]];
        let single = set(0, &[(vec![0.6, 0.8], 1.0)]);
        assert_eq!(object_rel(&single, &q, &phi), rel(&[0.6, 0.8], &q, &phi));
        let none = set(0, &[(vec![1.0, 0.0], 0.0), (vec![0.0, 1.0], -0.5)]);
        assert_eq!(object_rel(&none, &q, &phi), 0.0);
    }

    #[test]
    fn min_max_constant_is_zero() {
        assert_eq!(min_max(&[0.3, 0.3]), vec![0.0, 0.0]);
        assert_eq!(min_max(&[1.0, 3.0, 2.0]), vec![0.0, 1.0, 0.5]);
    }

    #[test]
    fn bilateral_identity_and_constant() {
        let pos: Vec<[f64; 3]> = (0..10).map(|i| [i as f64, 0.0, 0.0]).collect();
        let r: Vec<f64> = (0..10).map(|i| (i as f64 * 0.37).sin()).collect();
        assert_eq!(bilateral_filter_3d(&pos, &r, 1, 1.0, 0.25), r);
        let c = vec![0.4; 10];
        for v in bilateral_filter_3d(&pos, &c, 4, 1.0, 0.25) {
            assert!((v - 0.4).abs() < 1e-15);
        }
    }

    #[test]
    fn bilateral_attenuates_spike() {
        let pos: Vec<[f64; 3]> = (0..10).map(|i| [i as f64, 0.0, 0.0]).collect();
        let mut r = vec![0.0; 10];
        r[5] = 1.0;
        let out = bilateral_filter_3d(&pos, &r, 3, 1.0, 100.0);
        // oracle: neighbours of 5 are 4 and 6 at distance 1
        let w = (-0.5f64).exp() * (-1.0 / (2.0 * 100.0f64 * 100.0)).exp();
        let want = 1.0 / (1.0 + 2.0 * w);
        assert!((out[5] - want).abs() < 1e-12);
        assert!(out[5] < 1.0);
    }

    #[test]
    fn segment_picks_matching_object() {
        let mut positions = Vec::new();
        for o in 0..2 {
            for i in 0..20 {
                positions.push([o as f64 * 10.0 + (i % 5) as f64 * 0.1, (i / 5) as f64 * 0.1, 0.0]);
            }
        }
        let clusters: Vec<ObjectCluster> = (0..2)
            .map(|o| ObjectCluster {
                id: o,
                level: 0,
                members: vec![],
                prototype: vec![],
                gaussians: (o * 20..o * 20 + 20).collect(),
            })
            .collect();
        let q = vec![1.0, 0.0, 0.0];
        let sets = vec![set(0, &[(q.clone(), 1.0)]), set(1, &[(vec![0.0, 1.0, 0.0], 1.0)])];
        let canonical = vec![vec![0.0, 0.0, 1.0]];
        let level = LevelInput {
            clusters: &clusters,
            descriptors: &sets,
        };
        let cfg = SegmentConfig::default();
        let one = segment(&positions, &[level], &q, &canonical, &cfg).unwrap();
        assert_eq!(one.foreground, (0..20).collect::<Vec<u32>>());
        assert_eq!(one.object_rel[0][1], None);
        let three = segment(&positions, &[level, level, level], &q, &canonical, &cfg).unwrap();
        assert_eq!(three.relevance, one.relevance);
        assert_eq!(three.foreground, one.foreground);
    }

    #[test]
    fn no_encoder_without_env() {
        std::env::remove_var(ENCODER_URL_ENV);
        assert!(matches!(EmbeddingClient::from_env(), Err(Error::NoEncoder)));
    }

    proptest! {
        #[test]
        fn rel_in_open_unit_interval(
            d in proptest::collection::vec(-1.0f64..1.0, 4),
            q in proptest::collection::vec(-1.0f64..1.0, 4),
            c in proptest::collection::vec(-1.0f64..1.0, 4),
        ) {
            prop_assume!(norm(&d) > 1e-3);
            let r = rel(&d, &q, &[c]);
            prop_assert!(r > 0.0 && r < 1.0);
        }

        #[test]
        fn bilateral_stays_in_range(vals in proptest::collection::vec(0.0f64..1.0, 2..30)) {
            let pos: Vec<[f64; 3]> = (0..vals.len()).map(|i| [(i as f64).sqrt(), (i % 3) as f64, 0.0]).collect();
            let out = bilateral_filter_3d(&pos, &vals, 5, 0.7, 0.25);
            let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            for v in out {
                prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            }
        }

        #[test]
        fn object_rel_order_invariant(ws in proptest::collection::vec(0.0f64..1.0, 1..6), seed in 0u64..100) {
            let q = vec![1.0, 0.0, 0.0];
            let phi = vec![vec![0.0, 0.0, 1.0]];
            let descs: Vec<(Vec<f64>, f64)> = ws.iter().enumerate().map(|(i, &w)| {
                let a = (i as f64 + seed as f64) * 0.7;
                (vec![a.cos(), a.sin(), 0.3], w)
            }).collect();
            let mut rev = descs.clone();
            rev.reverse();
            prop_assert_eq!(object_rel(&set(0, &descs), &q, &phi), object_rel(&set(0, &rev), &q, &phi));
        }
    }
}
