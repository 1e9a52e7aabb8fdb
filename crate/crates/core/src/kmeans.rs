//! Euclidean k-means (k-means++ seeding, Lloyd iterations, restarts) and the
//! silhouette score.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{distance, squared_distance};

pub const DEFAULT_RESTARTS: usize = 10;
pub const DEFAULT_MAX_ITER: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub sse: f64,
}

/// Best of `restarts` runs by strictly lower SSE.
pub fn kmeans(
    points: &[Vec<f64>],
    k: usize,
    rng: &mut ChaCha8Rng,
    restarts: usize,
    max_iter: usize,
) -> Result<KMeans> {
    if points.is_empty() {
        return Err(Error::InvalidInput("k-means on zero points".into()));
    }
    if k == 0 || k > points.len() {
        return Err(Error::InvalidInput(format!(
            "k-means needs 1 <= k <= n, got k={k}, n={}",
            points.len()
        )));
    }
    let mut best: Option<KMeans> = None;
    for _ in 0..restarts.max(1) {
        let run = lloyd(points, seed_plus_plus(points, k, rng), max_iter);
        if best.as_ref().is_none_or(|b| run.sse < b.sse) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn seed_plus_plus(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centers = vec![points[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| squared_distance(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 && target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            while d2[chosen] == 0.0 && chosen > 0 {
                chosen -= 1;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centers.push(points[idx].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(squared_distance(p, &centers[centers.len() - 1]));
        }
    }
    centers
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = squared_distance(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn lloyd(points: &[Vec<f64>], mut centroids: Vec<Vec<f64>>, max_iter: usize) -> KMeans {
    let k = centroids.len();
    let dim = points[0].len();
    let mut assignments: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
    for _ in 0..max_iter {
        repair_empty(points, &centroids, &mut assignments, k);
        centroids = means(points, &assignments, k, dim);
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
        if next == assignments {
            break;
        }
        assignments = next;
    }
    repair_empty(points, &centroids, &mut assignments, k);
    centroids = means(points, &assignments, k, dim);
    let sse = points
        .iter()
        .zip(&assignments)
        .map(|(p, &a)| squared_distance(p, &centroids[a]))
        .sum();
    KMeans {
        centroids,
        assignments,
        sse,
    }
}

/// Move the point farthest from its centroid, taken from a cluster with
/// more than one member, into each empty cluster.
fn repair_empty(points: &[Vec<f64>], centroids: &[Vec<f64>], assignments: &mut [usize], k: usize) {
    loop {
        let mut sizes = vec![0usize; k];
        for &a in assignments.iter() {
            sizes[a] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let mut far: Option<(usize, f64)> = None;
        for (i, p) in points.iter().enumerate() {
            let a = assignments[i];
            if sizes[a] < 2 {
                continue;
            }
            let d = squared_distance(p, &centroids[a]);
            if far.is_none_or(|(_, fd)| d > fd) {
                far = Some((i, d));
            }
        }
        match far {
            Some((i, _)) => assignments[i] = empty,
            None => return,
        }
    }
}

fn means(points: &[Vec<f64>], assignments: &[usize], k: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.iter().zip(assignments) {
        counts[a] += 1;
        sums[a].iter_mut().zip(p).for_each(|(s, x)| *s += x);
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        if c > 0 {
            s.iter_mut().for_each(|x| *x /= c as f64);
        }
    }
    sums
}

/// Mean silhouette with Euclidean distances. Singleton points score 0 and
/// `0/0` is taken as 0.
pub fn silhouette(points: &[Vec<f64>], assignments: &[usize]) -> Result<f64> {
    if points.len() != assignments.len() {
        return Err(Error::DimensionMismatch {
            expected: points.len(),
            actual: assignments.len(),
            context: "silhouette assignments",
        });
    }
    let k = assignments.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k];
    for &a in assignments {
        sizes[a] += 1;
    }
    let nonempty = sizes.iter().filter(|&&s| s > 0).count();
    if nonempty < 2 {
        return Err(Error::InvalidInput("silhouette needs at least two clusters".into()));
    }
    let n = points.len();
    let mut total = 0.0;
    for i in 0..n {
        let own = assignments[i];
        if sizes[own] == 1 {
            continue;
        }
        let mut sums = vec![0.0; k];
        for j in 0..n {
            if j != i {
                sums[assignments[j]] += distance(&points[i], &points[j]);
            }
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    Ok(total / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;

    #[test]
    fn k1_is_mean() {
        let pts = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 0.0]];
        let r = kmeans(&pts, 1, &mut rng_for(0, 0, 0), 3, 100).unwrap();
        assert!((r.centroids[0][0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((r.centroids[0][1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn antipodal_duplicates() {
        let pts = vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![-1.0, 0.0], vec![-1.0, 0.0]];
        let r = kmeans(&pts, 2, &mut rng_for(1, 0, 0), 10, 100).unwrap();
        let mut c = r.centroids.clone();
        c.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert_eq!(c, vec![vec![-1.0, 0.0], vec![1.0, 0.0]]);
        assert_eq!(r.sse, 0.0);
    }

    #[test]
    fn zero_points_or_bad_k() {
        let mut rng = rng_for(0, 0, 0);
        assert!(kmeans(&[], 1, &mut rng, 1, 10).is_err());
        assert!(kmeans(&[vec![0.0]], 2, &mut rng, 1, 10).is_err());
    }

    #[test]
    fn planted_blobs_sse_bound() {
        let mut rng = rng_for(5, 0, 0);
        let centers = [[0.0, 0.0], [5.0, 0.0], [0.0, 5.0]];
        let mut pts = Vec::new();
        let mut labels = Vec::new();
        for (c, center) in centers.iter().enumerate() {
            for _ in 0..15 {
                pts.push(vec![
                    center[0] + rng.random_range(-0.2..0.2),
                    center[1] + rng.random_range(-0.2..0.2),
                ]);
                labels.push(c);
            }
        }
        // oracle: SSE of the planted partition around its own means
        let planted_sse: f64 = (0..3)
            .map(|c| {
                let members: Vec<&Vec<f64>> =
                    pts.iter().zip(&labels).filter(|(_, &l)| l == c).map(|(p, _)| p).collect();
                let mx = members.iter().map(|p| p[0]).sum::<f64>() / members.len() as f64;
                let my = members.iter().map(|p| p[1]).sum::<f64>() / members.len() as f64;
                members.iter().map(|p| (p[0] - mx).powi(2) + (p[1] - my).powi(2)).sum::<f64>()
            })
            .sum();
        let r = kmeans(&pts, 3, &mut rng_for(6, 0, 0), 10, 100).unwrap();
        assert!(r.sse <= planted_sse + 1e-9);
    }

    #[test]
    fn silhouette_conventions() {
        let two = vec![vec![0.0], vec![1.0]];
        assert_eq!(silhouette(&two, &[0, 1]).unwrap(), 0.0);
        let same = vec![vec![0.5, 0.5]; 4];
        assert_eq!(silhouette(&same, &[0, 0, 1, 1]).unwrap(), 0.0);
        assert!(silhouette(&two, &[0, 0]).is_err());
    }

    #[test]
    fn silhouette_tight_pairs() {
        let pts = vec![vec![0.0, 0.0], vec![0.01, 0.0], vec![10.0, 0.0], vec![10.01, 0.0]];
        let s = silhouette(&pts, &[0, 0, 1, 1]).unwrap();
        // direct formula: a = 0.01, b ~ 10, s = 1 - a/b per point
        assert!((s - 1.0).abs() < 0.05);
    }
}
