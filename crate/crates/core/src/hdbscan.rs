//! HDBSCAN: mutual-reachability minimum spanning tree, single-linkage
//! hierarchy, condensed tree, excess-of-mass selection with optional
//! epsilon merging.
//!
//! Tree construction and selection follow the reference formulation used by
//! scikit-learn so labels can be compared point for point.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::linalg::{cosine, distance};

pub const NOISE: i32 = -1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    Euclidean,
    /// `1 - cos`, clamped to [0, 2].
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HdbscanConfig {
    pub min_cluster_size: usize,
    /// Neighbourhood size for core distances (self included); defaults to
    /// `min_cluster_size`.
    pub min_samples: Option<usize>,
    pub epsilon: f64,
    pub metric: Metric,
    pub allow_single_cluster: bool,
}

impl Default for HdbscanConfig {
    fn default() -> Self {
        Self {
            min_cluster_size: 5,
            min_samples: None,
            epsilon: 0.0,
            metric: Metric::Cosine,
            allow_single_cluster: false,
        }
    }
}

/// Cluster labels per point, `-1` for noise. Fewer points than the core
/// neighbourhood, or a single point, yield all noise.
pub fn hdbscan(points: &[Vec<f64>], cfg: &HdbscanConfig) -> Vec<i32> {
    let n = points.len();
    let dist = distance_matrix(points, cfg.metric);
    hdbscan_precomputed(&dist, n, cfg)
}

/// As [`hdbscan`] over a row-major `n x n` distance matrix.
pub fn hdbscan_precomputed(dist: &[f64], n: usize, cfg: &HdbscanConfig) -> Vec<i32> {
    assert_eq!(dist.len(), n * n, "distance matrix must be n x n");
    let min_samples = cfg.min_samples.unwrap_or(cfg.min_cluster_size).max(1);
    if n < 2 || n < min_samples {
        return vec![NOISE; n];
    }
    let core = core_distances(dist, n, min_samples);
    let mst = prim_mst(dist, &core, n);
    let linkage = single_linkage(mst, n);
    let condensed = condense_tree(&linkage, n, cfg.min_cluster_size.max(2));
    let stability = compute_stability(&condensed);
    let clusters = select_clusters(&condensed, stability, cfg.allow_single_cluster, cfg.epsilon);
    do_labelling(&condensed, &clusters, n, cfg.allow_single_cluster, cfg.epsilon)
}

pub fn distance_matrix(points: &[Vec<f64>], metric: Metric) -> Vec<f64> {
    let n = points.len();
    let mut out = vec![0.0; n * n];
    out.par_chunks_mut(n.max(1)).enumerate().for_each(|(i, row)| {
        for (j, v) in row.iter_mut().enumerate() {
            if i != j {
                *v = match metric {
                    Metric::Euclidean => distance(&points[i], &points[j]),
                    Metric::Cosine => (1.0 - cosine(&points[i], &points[j])).clamp(0.0, 2.0),
                };
            }
        }
    });
    out
}

fn core_distances(dist: &[f64], n: usize, min_samples: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let mut row = dist[i * n..(i + 1) * n].to_vec();
            let (_, kth, _) = row.select_nth_unstable_by(min_samples - 1, f64::total_cmp);
            *kth
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Edge {
    a: usize,
    b: usize,
    d: f64,
}

/// Prim's algorithm over implicit mutual-reachability distances, starting
/// at point 0, recording the true tree endpoint of each edge.
fn prim_mst(dist: &[f64], core: &[f64], n: usize) -> Vec<Edge> {
    let mut in_tree = vec![false; n];
    let mut min_reach = vec![f64::INFINITY; n];
    let mut sources = vec![1usize; n];
    let mut current = 0usize;
    let mut edges = Vec::with_capacity(n - 1);
    for _ in 0..n - 1 {
        in_tree[current] = true;
        let core_c = core[current];
        let mut best = f64::MAX;
        let mut source = 0usize;
        let mut new_node = 0usize;
        for j in 0..n {
            if in_tree[j] {
                continue;
            }
            let prev = min_reach[j];
            let prev_source = sources[j];
            let mr = core_c.max(core[j]).max(dist[current * n + j]);
            if mr < prev {
                min_reach[j] = mr;
                sources[j] = current;
                if mr < best {
                    best = mr;
                    source = current;
                    new_node = j;
                }
            } else if prev < best {
                best = prev;
                source = prev_source;
                new_node = j;
            }
        }
        edges.push(Edge {
            a: source,
            b: new_node,
            d: best,
        });
        current = new_node;
    }
    edges
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Merge {
    left: usize,
    right: usize,
    distance: f64,
    size: usize,
}

fn single_linkage(mut mst: Vec<Edge>, n: usize) -> Vec<Merge> {
    mst.sort_by(|x, y| x.d.total_cmp(&y.d));
    let mut parent: Vec<usize> = (0..2 * n - 1).collect();
    let mut size: Vec<usize> = (0..2 * n - 1).map(|i| usize::from(i < n)).collect();
    let mut next = n;
    let find = |parent: &mut Vec<usize>, mut x: usize| {
        let mut root = x;
        while parent[root] != root {
            root = parent[root];
        }
        while parent[x] != root {
            let up = parent[x];
            parent[x] = root;
            x = up;
        }
        root
    };
    mst.iter()
        .map(|e| {
            let a = find(&mut parent, e.a);
            let b = find(&mut parent, e.b);
            let merged = size[a] + size[b];
            parent[a] = next;
            parent[b] = next;
            size[next] = merged;
            next += 1;
            Merge {
                left: a,
                right: b,
                distance: e.d,
                size: merged,
            }
        })
        .collect()
}

/// One row of the condensed tree: `child` (a point or a cluster) leaves
/// `parent` at density `lambda`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Condensed {
    parent: usize,
    child: usize,
    lambda: f64,
    size: usize,
}

fn bfs_hierarchy(linkage: &[Merge], n: usize, root: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut queue = vec![root];
    while !queue.is_empty() {
        out.extend_from_slice(&queue);
        queue = queue
            .iter()
            .filter(|&&x| x >= n)
            .flat_map(|&x| {
                let m = &linkage[x - n];
                [m.left, m.right]
            })
            .collect();
    }
    out
}

fn condense_tree(linkage: &[Merge], n: usize, min_cluster_size: usize) -> Vec<Condensed> {
    let root = 2 * linkage.len();
    let mut relabel = vec![0usize; root + 1];
    relabel[root] = n;
    let mut next_label = n + 1;
    let mut ignore = vec![false; root + 1];
    let mut out = Vec::new();
    let count = |x: usize| if x >= n { linkage[x - n].size } else { 1 };
    for node in bfs_hierarchy(linkage, n, root) {
        if ignore[node] || node < n {
            continue;
        }
        let m = linkage[node - n];
        let lambda = if m.distance > 0.0 {
            1.0 / m.distance
        } else {
            f64::INFINITY
        };
        let (lc, rc) = (count(m.left), count(m.right));
        let parent = relabel[node];
        let spill = |sub_root: usize, out: &mut Vec<Condensed>, ignore: &mut Vec<bool>| {
            for sub in bfs_hierarchy(linkage, n, sub_root) {
                if sub < n {
                    out.push(Condensed {
                        parent,
                        child: sub,
                        lambda,
                        size: 1,
                    });
                }
                ignore[sub] = true;
            }
        };
        if lc >= min_cluster_size && rc >= min_cluster_size {
            for (child, c) in [(m.left, lc), (m.right, rc)] {
                relabel[child] = next_label;
                next_label += 1;
                out.push(Condensed {
                    parent,
                    child: relabel[child],
                    lambda,
                    size: c,
                });
            }
        } else if lc < min_cluster_size && rc < min_cluster_size {
            spill(m.left, &mut out, &mut ignore);
            spill(m.right, &mut out, &mut ignore);
        } else if lc < min_cluster_size {
            relabel[m.right] = parent;
            spill(m.left, &mut out, &mut ignore);
        } else {
            relabel[m.left] = parent;
            spill(m.right, &mut out, &mut ignore);
        }
    }
    out
}

fn compute_stability(tree: &[Condensed]) -> BTreeMap<usize, f64> {
    let smallest = tree.iter().map(|r| r.parent).min().unwrap_or(0);
    let largest_parent = tree.iter().map(|r| r.parent).max().unwrap_or(0);
    let largest = tree.iter().map(|r| r.child).max().unwrap_or(0).max(smallest);
    let mut births = vec![f64::NAN; largest + 1];
    for r in tree {
        births[r.child] = r.lambda;
    }
    births[smallest] = 0.0;
    let mut result: BTreeMap<usize, f64> = (smallest..=largest_parent).map(|c| (c, 0.0)).collect();
    for r in tree {
        *result.get_mut(&r.parent).expect("parent in range") += (r.lambda - births[r.parent]) * r.size as f64;
    }
    result
}

fn bfs_cluster_tree(cluster_tree: &[Condensed], root: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut queue = vec![root];
    while !queue.is_empty() {
        out.extend_from_slice(&queue);
        queue = cluster_tree
            .iter()
            .filter(|r| queue.contains(&r.parent))
            .map(|r| r.child)
            .collect();
    }
    out
}

fn select_clusters(
    condensed: &[Condensed],
    mut stability: BTreeMap<usize, f64>,
    allow_single: bool,
    epsilon: f64,
) -> BTreeSet<usize> {
    let mut node_list: Vec<usize> = stability.keys().rev().copied().collect();
    if !allow_single {
        node_list.pop();
    }
    let cluster_tree: Vec<Condensed> = condensed.iter().filter(|r| r.size > 1).copied().collect();
    let mut is_cluster: BTreeMap<usize, bool> = node_list.iter().map(|&c| (c, true)).collect();
    for &node in &node_list {
        let subtree: f64 = cluster_tree
            .iter()
            .filter(|r| r.parent == node)
            .map(|r| stability[&r.child])
            .sum();
        if subtree > stability[&node] {
            is_cluster.insert(node, false);
            stability.insert(node, subtree);
        } else {
            for sub in bfs_cluster_tree(&cluster_tree, node) {
                if sub != node {
                    is_cluster.insert(sub, false);
                }
            }
        }
    }
    if epsilon != 0.0 && !cluster_tree.is_empty() {
        let root = cluster_tree.iter().map(|r| r.parent).min().expect("non-empty");
        let eom: Vec<usize> = node_list.iter().copied().filter(|c| is_cluster[c]).collect();
        let selected: BTreeSet<usize> = if eom.len() == 1 && eom[0] == root {
            if allow_single {
                eom.into_iter().collect()
            } else {
                BTreeSet::new()
            }
        } else {
            epsilon_search(&eom.into_iter().collect(), &cluster_tree, epsilon, allow_single)
        };
        for (c, v) in is_cluster.iter_mut() {
            *v = selected.contains(c);
        }
    }
    is_cluster.into_iter().filter(|&(_, v)| v).map(|(c, _)| c).collect()
}

fn birth_lambda(cluster_tree: &[Condensed], node: usize) -> Option<f64> {
    cluster_tree.iter().find(|r| r.child == node).map(|r| r.lambda)
}

fn traverse_upwards(cluster_tree: &[Condensed], epsilon: f64, leaf: usize, allow_single: bool) -> usize {
    let root = cluster_tree.iter().map(|r| r.parent).min().expect("non-empty");
    let Some(parent) = cluster_tree.iter().find(|r| r.child == leaf).map(|r| r.parent) else {
        return leaf;
    };
    if parent == root {
        return if allow_single { parent } else { leaf };
    }
    let parent_eps = 1.0 / birth_lambda(cluster_tree, parent).expect("non-root has a birth");
    if parent_eps > epsilon {
        parent
    } else {
        traverse_upwards(cluster_tree, epsilon, parent, allow_single)
    }
}

/// Leaves born below distance `epsilon` are replaced by their nearest
/// ancestor born at or above it. Leaves are visited in ascending id order.
fn epsilon_search(
    leaves: &BTreeSet<usize>,
    cluster_tree: &[Condensed],
    epsilon: f64,
    allow_single: bool,
) -> BTreeSet<usize> {
    let mut selected = BTreeSet::new();
    let mut processed = BTreeSet::new();
    for &leaf in leaves {
        let Some(lambda) = birth_lambda(cluster_tree, leaf) else {
            selected.insert(leaf);
            continue;
        };
        if 1.0 / lambda < epsilon {
            if !processed.contains(&leaf) {
                let up = traverse_upwards(cluster_tree, epsilon, leaf, allow_single);
                selected.insert(up);
                for sub in bfs_cluster_tree(cluster_tree, up) {
                    if sub != up {
                        processed.insert(sub);
                    }
                }
            }
        } else {
            selected.insert(leaf);
        }
    }
    selected
}

fn do_labelling(
    condensed: &[Condensed],
    clusters: &BTreeSet<usize>,
    n: usize,
    allow_single: bool,
    epsilon: f64,
) -> Vec<i32> {
    let label_of: BTreeMap<usize, i32> = clusters.iter().enumerate().map(|(i, &c)| (c, i as i32)).collect();
    let root = condensed.iter().map(|r| r.parent).min().unwrap_or(n);
    let max_parent = condensed.iter().map(|r| r.parent).max().unwrap_or(n);
    // rows arrive parents-first, so attaching the child keeps the topmost
    // node as representative
    let mut up: Vec<usize> = (0..=max_parent.max(n)).collect();
    for r in condensed {
        if !clusters.contains(&r.child) && r.child < up.len() {
            up[r.child] = r.parent;
        }
    }
    let find = |mut x: usize| {
        while up[x] != x {
            x = up[x];
        }
        x
    };
    let root_threshold = if epsilon != 0.0 {
        1.0 / epsilon
    } else {
        condensed
            .iter()
            .filter(|r| r.parent == root)
            .map(|r| r.lambda)
            .fold(f64::NEG_INFINITY, f64::max)
    };
    (0..n)
        .map(|p| {
            let c = find(p);
            if c != root {
                return label_of[&c];
            }
            if clusters.len() == 1 && allow_single {
                let lambda = condensed.iter().find(|r| r.child == p).map_or(f64::NAN, |r| r.lambda);
                if lambda >= root_threshold {
                    return label_of.get(&root).copied().unwrap_or(NOISE);
                }
            }
            NOISE
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;
    use rand::seq::SliceRandom;
    use rand::Rng;

    fn blobs(seed: u64) -> Vec<Vec<f64>> {
        let mut rng = rng_for(seed, 0, 0);
        let mut pts = Vec::new();
        for c in [[0.0, 0.0], [8.0, 8.0]] {
            for _ in 0..30 {
                pts.push(vec![c[0] + rng.random_range(-1.0..1.0), c[1] + rng.random_range(-1.0..1.0)]);
            }
        }
        pts
    }

    fn euclid(mcs: usize) -> HdbscanConfig {
        HdbscanConfig {
            min_cluster_size: mcs,
            metric: Metric::Euclidean,
            ..HdbscanConfig::default()
        }
    }

    #[test]
    fn two_blobs() {
        let labels = hdbscan(&blobs(3), &euclid(5));
        assert!(labels.iter().all(|&l| l >= 0));
        assert!(labels[..30].iter().all(|&l| l == labels[0]));
        assert!(labels[30..].iter().all(|&l| l == labels[30]));
        assert_ne!(labels[0], labels[30]);
    }

    #[test]
    fn too_few_points_is_noise() {
        let pts = vec![vec![0.0], vec![1.0], vec![2.0]];
        assert_eq!(hdbscan(&pts, &euclid(5)), vec![NOISE; 3]);
        assert_eq!(hdbscan(&pts[..1], &euclid(2)), vec![NOISE]);
    }

    #[test]
    fn permutation_equivariance() {
        let pts = blobs(8);
        let labels = hdbscan(&pts, &euclid(5));
        let mut order: Vec<usize> = (0..pts.len()).collect();
        order.shuffle(&mut rng_for(1, 0, 0));
        let permuted: Vec<Vec<f64>> = order.iter().map(|&i| pts[i].clone()).collect();
        let plabels = hdbscan(&permuted, &euclid(5));
        for a in 0..pts.len() {
            for b in 0..pts.len() {
                let same = labels[order[a]] == labels[order[b]];
                assert_eq!(same, plabels[a] == plabels[b]);
            }
        }
    }

    #[test]
    fn mst_has_n_minus_one_edges_and_minimal_weight() {
        let pts = blobs(2);
        let n = pts.len();
        let d = distance_matrix(&pts, Metric::Euclidean);
        let core = core_distances(&d, n, 5);
        let edges = prim_mst(&d, &core, n);
        assert_eq!(edges.len(), n - 1);
        // oracle: Kruskal over the explicit mutual-reachability graph
        let mut all = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                all.push((core[i].max(core[j]).max(d[i * n + j]), i, j));
            }
        }
        all.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut comp: Vec<usize> = (0..n).collect();
        fn root(c: &mut Vec<usize>, mut x: usize) -> usize {
            while c[x] != x {
                x = c[x];
            }
            x
        }
        let mut total = 0.0;
        for (w, i, j) in all {
            let (a, b) = (root(&mut comp, i), root(&mut comp, j));
            if a != b {
                comp[a] = b;
                total += w;
            }
        }
        let prim: f64 = edges.iter().map(|e| e.d).sum();
        assert!((prim - total).abs() < 1e-9);
    }
}
