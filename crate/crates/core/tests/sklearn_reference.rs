//! Label-level agreement with scikit-learn on frozen fixtures
//! (`fixtures/generate_reference.py`).

mod common;

use common::{agreement, reference};
use viewagg::hdbscan::{hdbscan, HdbscanConfig, Metric};
use viewagg::kmeans::silhouette;
use viewagg::metrics::adjusted_rand_index;

#[test]
fn hdbscan_matches_reference_labels() {
    for case in reference().hdbscan {
        let cfg = HdbscanConfig {
            min_cluster_size: case.min_cluster_size,
            min_samples: None,
            epsilon: case.epsilon,
            metric: Metric::Euclidean,
            allow_single_cluster: case.allow_single_cluster,
        };
        let ours = hdbscan(&case.points, &cfg);
        let a = agreement(&ours, &case.labels);
        let noise_flips = ours.iter().zip(&case.labels).filter(|(x, y)| (**x < 0) != (**y < 0)).count();
        println!("case {:>2}: agreement {a:.4}, noise flips {noise_flips}", case.seed);
        // tied mutual-reachability edges may be merged in a different order
        assert!(a >= 0.99, "seed {} agreement {a}", case.seed);
        assert!(noise_flips <= 1, "seed {} noise flips {noise_flips}", case.seed);
    }
}

#[test]
fn ari_matches_reference() {
    for case in reference().ari {
        let v = adjusted_rand_index(&case.a, &case.b);
        assert!((v - case.value).abs() < 1e-12, "{v} vs {}", case.value);
    }
}

#[test]
fn silhouette_matches_reference() {
    for case in reference().silhouette {
        let v = silhouette(&case.points, &case.labels).unwrap();
        assert!((v - case.value).abs() < 1e-12, "{v} vs {}", case.value);
    }
}
