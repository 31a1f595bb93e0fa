#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use relpcanet::dataset::{Dataset, Direction, EntityRecord, Indicator, IndicatorSchema};
use relpcanet::relarm::{ClusterState, FeatureSet};

pub fn ids(m: usize) -> Vec<String> {
    (0..m).map(|i| format!("e{i:02}")).collect()
}

pub fn schema(directions: &[Direction]) -> IndicatorSchema {
    IndicatorSchema::new(
        directions
            .iter()
            .enumerate()
            .map(|(k, &direction)| Indicator {
                name: format!("x{k}"),
                direction,
            })
            .collect(),
    )
    .unwrap()
}

pub fn dataset(directions: &[Direction], rows: Vec<Vec<f64>>, label: &str) -> Dataset {
    let records = ids(rows.len())
        .into_iter()
        .zip(rows)
        .map(|(entity_id, values)| EntityRecord {
            entity_id,
            group: "all".into(),
            values: values.into_iter().map(Some).collect(),
        })
        .collect();
    Dataset::new(schema(directions), records, label).unwrap()
}

/// Entity `i` has latent quality `i / (m - 1)`; every indicator tracks it with small
/// noise, so ground-truth order is ascending index (entity m-1 is best).
pub fn monotone_rows(m: usize, n: usize, noise: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..m)
        .map(|i| {
            let q = i as f64 / (m - 1) as f64;
            (0..n).map(|_| q + rng.random_range(-noise..=noise)).collect()
        })
        .collect()
}

/// Indicator rows from latent qualities `q`, all positive-direction.
pub fn rows_from_quality(q: &[f64], n: usize, noise: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    q.iter()
        .map(|&q| (0..n).map(|_| q + rng.random_range(-noise..=noise)).collect())
        .collect()
}

/// Five tiers of six entities each; tier t covers qualities around `t / 4`.
pub fn tiered_quality() -> Vec<f64> {
    (0..30)
        .map(|i| {
            let tier = (i / 6) as f64;
            let slot = (i % 6) as f64;
            tier / 4.0 + slot * 0.012
        })
        .collect()
}

/// Random state with exactly `k` non-empty clusters.
pub fn random_cluster_state(
    m: usize,
    k: usize,
    dim: usize,
    rng: &mut ChaCha8Rng,
) -> (ClusterState, FeatureSet, Vec<f64>) {
    assert!(m >= k);
    let mut labels: Vec<usize> = (0..m).map(|i| if i < k { i } else { rng.random_range(0..k) }).collect();
    for i in (1..m).rev() {
        labels.swap(i, rng.random_range(0..=i));
    }
    let vectors: Vec<Vec<f64>> = (0..m).map(|_| (0..dim).map(|_| rng.random::<f64>()).collect()).collect();
    let centers: Vec<Vec<f64>> = (0..k).map(|_| (0..dim).map(|_| rng.random::<f64>()).collect()).collect();
    let rating: Vec<f64> = (0..dim).map(|_| rng.random_range(0.1..1.0)).collect();
    let features = FeatureSet::new(ids(m), vectors).unwrap();
    let cs = ClusterState::build(&features, labels, centers, &rating).unwrap();
    (cs, features, rating)
}

/// Same state with entity `e` reassigned to cluster `q`.
pub fn relabel(cs: &ClusterState, features: &FeatureSet, rating: &[f64], e: usize, q: usize) -> ClusterState {
    let mut labels = cs.labels.clone();
    labels[e] = q;
    ClusterState::build(features, labels, cs.centers.clone(), rating).unwrap()
}

/// Kendall tau-a by direct pair enumeration.
pub fn kendall_tau(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len();
    let mut s = 0i64;
    for i in 0..n {
        for j in (i + 1)..n {
            s += sign(a[i] - a[j]) * sign(b[i] - b[j]);
        }
    }
    s as f64 / (n * (n - 1) / 2) as f64
}

fn sign(x: f64) -> i64 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}
